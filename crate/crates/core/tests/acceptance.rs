//! End-to-end acceptance checks, one PASS/FAIL line each. Runs without the
//! libtest harness so the lines always reach the output; exits non-zero if
//! any check fails.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skipfilt::autodiff::{GradCheck, Graph};
use skipfilt::dsp::{
    frame_signal, magnitude, stft_analysis, stft_synthesis, AudioBuffer, ComplexSpectrogram, MagnitudeSpectrogram,
    StftMeta, StftSettings,
};
use skipfilt::fixture::{synth_fixture, FixtureSpec};
use skipfilt::layers::{count_params, segment_forward, ModelHyper, ModelParams};
use skipfilt::metrics::{decompose, sir};
use skipfilt::segment::{context_trim, flatten, tensorize};
use skipfilt::separation::{
    apply_mask, separate, two_model_mask, FixedEstimate, MagnitudeEstimator, Strategy, Variant,
};
use skipfilt::train::{gkl, model_gradcheck, train, wiener_targets, Dataset, TrainConfig, TrainReport};
use skipfilt::Exec;

fn report(id: u32, name: &str, ok: bool, elapsed: Duration, limit: Duration, detail: String) -> bool {
    let in_time = elapsed < limit;
    let verdict = if ok && in_time { "PASS" } else { "FAIL" };
    println!(
        "[{verdict}] {id}. {name}: {detail} ({:.2} s, limit {} s)",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    ok && in_time
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn parameter_count_at_full_width() -> bool {
    let t = Instant::now();
    let closed = count_params(1025);
    let hyper = ModelHyper {
        bins: 1025,
        frames: 18,
        context: 3,
    };
    let allocated = ModelParams::zeros(hyper).unwrap().count();
    report(
        1,
        "parameter count",
        closed == 24_175_650 && allocated == closed,
        t.elapsed(),
        Duration::from_secs(1),
        format!("closed form {closed}, allocated tensors {allocated}"),
    )
}

fn toy_gradcheck() -> GradCheck {
    let hyper = ModelHyper {
        bins: 8,
        frames: 6,
        context: 1,
    };
    model_gradcheck(hyper, 2, 1e-4, 0).unwrap()
}

fn gradient_check_toy_model() -> bool {
    let t = Instant::now();
    let r = toy_gradcheck();
    report(
        2,
        "gradient check",
        r.max_rel_error < 1e-4 && r.checked == count_params(8),
        t.elapsed(),
        Duration::from_secs(60),
        format!("max relative error {:e} over {} parameters", r.max_rel_error, r.checked),
    )
}

fn stft_round_trip() -> bool {
    let t = Instant::now();
    let mut r = rng(11);
    let x: Vec<f64> = (0..88200).map(|_| r.random_range(-1.0..1.0)).collect();
    let buf = AudioBuffer::new(x.clone(), 44100).unwrap();
    let spec = stft_analysis(&frame_signal(&buf, 2048, 256).unwrap());
    let y = stft_synthesis(&spec, 44100).unwrap();
    let num: f64 = x.iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = x.iter().map(|a| a * a).sum();
    let err = (num / den).sqrt();
    report(
        3,
        "STFT round trip",
        y.len() == x.len() && err < 1e-6,
        t.elapsed(),
        Duration::from_secs(5),
        format!("relative L2 error {err:e}, {} frames", spec.frames()),
    )
}

fn mask_boundedness() -> bool {
    let t = Instant::now();
    let hyper = ModelHyper {
        bins: 6,
        frames: 6,
        context: 1,
    };
    let (mut worst_mask, mut worst_excess, mut min_mask) = (0.0f64, f64::NEG_INFINITY, f64::INFINITY);
    for draw in 0..1000u64 {
        let mut model = ModelParams::init(hyper, draw).unwrap();
        let mut r = rng(draw);
        r.set_stream(7);
        let names = ModelParams::tensor_names();
        for (name, p) in names.iter().zip(model.tensors_mut()) {
            if name.rsplit('.').next().unwrap().starts_with('b') {
                p.data_mut().iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
            }
        }
        let seg: Vec<f64> = (0..hyper.frames * hyper.bins)
            .map(|_| r.random_range(0.0..4.0))
            .collect();
        let mut g = Graph::new();
        let vars = model.register(&mut g);
        let out = segment_forward(&mut g, &vars, &seg).unwrap();
        let trimmed = context_trim(&seg, hyper.bins, hyper.context).unwrap();
        for &m in g.value(out.mask) {
            worst_mask = worst_mask.max(m);
            min_mask = min_mask.min(m);
        }
        for (f, x) in g.value(out.filtered).iter().zip(&trimmed) {
            worst_excess = worst_excess.max(f - x);
        }
    }
    report(
        4,
        "mask boundedness",
        min_mask >= 0.0 && worst_mask < 1.0 && worst_excess <= 0.0,
        t.elapsed(),
        Duration::from_secs(30),
        format!(
            "min mask {min_mask:.3e}, 1 - max mask {:.3e}, max(filtered - input) {worst_excess:.3e}",
            1.0 - worst_mask
        ),
    )
}

fn segmentation_round_trip() -> bool {
    let t = Instant::now();
    let mut r = rng(5);
    let mut failures = 0;
    for _ in 0..200 {
        let context = r.random_range(0..4usize);
        let frames = 2 * context + r.random_range(1..8usize);
        let m = r.random_range(1..60usize);
        let bins = r.random_range(1..6usize);
        let v: Vec<f64> = (0..m * bins).map(|_| r.random_range(0.0..1.0)).collect();
        let mag = MagnitudeSpectrogram::from_grid(v.clone(), m, bins).unwrap();
        let st = tensorize(&mag, frames, context).unwrap();
        let trimmed: Vec<Vec<f64>> = (0..st.len())
            .map(|b| context_trim(st.segment(b), bins, context).unwrap())
            .collect();
        let back = flatten(&trimmed, st.layout(), st.meta()).unwrap();
        if back.values() != v.as_slice() || back.frames() != m {
            failures += 1;
        }
    }
    report(
        5,
        "segmentation round trip",
        failures == 0,
        t.elapsed(),
        Duration::from_secs(10),
        format!("{failures} of 200 configurations differ"),
    )
}

/// Expanded-log form, accumulated term by term.
fn scalar_gkl(a: &[f64], b: &[f64]) -> f64 {
    let eps = 1e-12;
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * (a[i] + eps).ln();
        s -= a[i] * (b[i] + eps).ln();
        s += b[i] - a[i];
    }
    s
}

fn divergence_and_wiener_complement() -> bool {
    let t = Instant::now();
    let mut r = rng(6);
    let (mut worst_rel, mut worst_self, mut worst_sum) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let (frames, bins) = (r.random_range(1..20usize), r.random_range(1..40usize));
        let n = frames * bins;
        let a: Vec<f64> = (0..n).map(|_| r.random_range(0.0..3.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random_range(0.0..3.0)).collect();
        let got = gkl(&a, &b).unwrap();
        let want = scalar_gkl(&a, &b);
        worst_rel = worst_rel.max((got - want).abs() / want.abs().max(1e-300));
        worst_self = worst_self.max(gkl(&a, &a).unwrap().abs());

        let s1 = MagnitudeSpectrogram::from_grid(a.iter().map(|v| v + 0.01).collect(), frames, bins).unwrap();
        let s2 = MagnitudeSpectrogram::from_grid(b.iter().map(|v| v + 0.01).collect(), frames, bins).unwrap();
        let mix = MagnitudeSpectrogram::from_grid(vec![1.0; n], frames, bins).unwrap();
        let masks = wiener_targets(&[&s1, &s2], &mix, 1.0).unwrap();
        for (m1, m2) in masks[0].values().iter().zip(masks[1].values()) {
            worst_sum = worst_sum.max((m1 + m2 - 1.0).abs());
        }
    }
    report(
        6,
        "divergence oracle and mask complement",
        worst_rel <= 1e-10 && worst_self == 0.0 && worst_sum <= 1e-9,
        t.elapsed(),
        Duration::from_secs(10),
        format!("gkl rel error {worst_rel:e}, max |gkl(a,a)| {worst_self:e}, max |M1+M2-1| {worst_sum:e}"),
    )
}

struct OverfitOutcome {
    report: TrainReport,
    checkpoint_bytes: Vec<u8>,
    separated: Vec<f64>,
    sir_voice: f64,
    sir_mix: f64,
}

fn overfit_run() -> OverfitOutcome {
    let fixture = synth_fixture(&FixtureSpec::default()).unwrap();
    let stft = StftSettings { n_fft: 256, hop: 64 };
    let hyper = ModelHyper {
        bins: 129,
        frames: 10,
        context: 2,
    };
    let mut data = Dataset::new(hyper).unwrap();
    data.add_audio(&fixture.mixture, &fixture.voice, stft).unwrap();
    let config = TrainConfig {
        frames: 10,
        context: 2,
        max_epochs: 300,
        ..TrainConfig::default()
    };
    let report = train(&config, stft, &data, Exec::default()).unwrap();
    let model = &report.checkpoint.model;
    let strategy = Strategy::new(Variant::Single, None).unwrap();
    let out = separate(
        &strategy,
        &[model as &dyn MagnitudeEstimator],
        &fixture.mixture,
        stft,
        Exec::default(),
    )
    .unwrap();
    let sources = [fixture.voice.samples(), fixture.accompaniment.samples()];
    let sir_voice = sir(&decompose(out.samples(), &sources, 0).unwrap());
    let sir_mix = sir(&decompose(fixture.mixture.samples(), &sources, 0).unwrap());
    OverfitOutcome {
        checkpoint_bytes: report.checkpoint.to_bytes(),
        report,
        separated: out.into_samples(),
        sir_voice,
        sir_mix,
    }
}

fn first_overfit() -> &'static (OverfitOutcome, Duration) {
    static RUN: OnceLock<(OverfitOutcome, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let t = Instant::now();
        let o = overfit_run();
        (o, t.elapsed())
    })
}

fn overfit_separation() -> bool {
    let (o, elapsed) = first_overfit();
    let r = &o.report;
    let ratio = r.checkpoint.best_loss / r.history[0];
    let stopped_in_time = r.epochs_run <= r.best_epoch + 2;
    let ok = ratio <= 0.1 && o.sir_voice >= 10.0 && o.sir_voice - o.sir_mix >= 5.0 && stopped_in_time;
    report(
        7,
        "overfit separation",
        ok,
        *elapsed,
        Duration::from_secs(600),
        format!(
            "best/first loss {ratio:.4}, SIR {:.2} dB vs mixture {:.2} dB, best epoch {} of {} run",
            o.sir_voice, o.sir_mix, r.best_epoch, r.epochs_run
        ),
    )
}

fn two_model_wiener_with_oracle_estimates() -> bool {
    let t = Instant::now();
    let mut r = rng(8);
    let (frames, bins) = (40, 65);
    let meta = StftMeta {
        n_fft: 128,
        hop: 32,
        orig_len: 40 * 32,
    };
    let draw = |r: &mut ChaCha8Rng| -> Vec<Complex64> {
        (0..frames * bins)
            .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect()
    };
    let (s1, s2) = (draw(&mut r), draw(&mut r));
    let mix: Vec<Complex64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
    let mix = ComplexSpectrogram::new(mix, frames, meta).unwrap();
    let mag = |v: &[Complex64]| MagnitudeSpectrogram::new(v.iter().map(|c| c.norm()).collect(), frames, meta).unwrap();
    let (e1, e2) = (FixedEstimate(mag(&s1)), FixedEstimate(mag(&s2)));

    let strategy = Strategy::new(Variant::DualWiener, None).unwrap();
    let estimators: [&dyn MagnitudeEstimator; 2] = [&e1, &e2];
    let mask = strategy.mask(&estimators, &magnitude(&mix), Exec::default()).unwrap();
    let mut worst = 0.0f64;
    for i in 0..frames * bins {
        let (p1, p2) = (s1[i].norm_sqr(), s2[i].norm_sqr());
        worst = worst.max((mask.values()[i] - p1 / (p1 + p2)).abs());
    }
    let direct = two_model_mask(&e1.0, &e2.0, 2.0).unwrap();

    // The masked bin must be the bit-exact real rescaling of the mixture
    // bin; atan2 of the rescaled pair may still round differently by an ulp.
    let out = apply_mask(&mask, &mix).unwrap();
    let mut phase_dev = 0.0f64;
    let mut scaled_exactly = true;
    for ((o, m), &g) in out.values().iter().zip(mix.values()).zip(mask.values()) {
        scaled_exactly &= *o == m * g;
        if g > 0.0 {
            phase_dev = phase_dev.max((o.arg() - m.arg()).abs());
        }
    }
    report(
        8,
        "two-model Wiener algebra",
        strategy.alpha == 2.0 && worst <= 1e-9 && direct == mask && scaled_exactly && phase_dev <= 4.0 * f64::EPSILON,
        t.elapsed(),
        Duration::from_secs(10),
        format!(
            "max mask deviation {worst:e}, bins rescaled exactly {scaled_exactly}, max atan2 deviation {phase_dev:e}"
        ),
    )
}

fn seeded_runs_are_bit_identical() -> bool {
    let t = Instant::now();
    let (g1, g2) = (toy_gradcheck(), toy_gradcheck());
    let grad_same = g1.max_rel_error.to_bits() == g2.max_rel_error.to_bits() && g1.worst == g2.worst;

    let (first, _) = first_overfit();
    let second = overfit_run();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let ckpt_same = first.checkpoint_bytes == second.checkpoint_bytes;
    let report_same = bits(&first.report.history) == bits(&second.report.history)
        && first.report.best_epoch == second.report.best_epoch
        && bits(&first.separated) == bits(&second.separated)
        && first.sir_voice.to_bits() == second.sir_voice.to_bits();
    report(
        9,
        "seeded determinism",
        grad_same && ckpt_same && report_same,
        t.elapsed(),
        Duration::from_secs(1200),
        format!(
            "gradcheck identical {grad_same}, checkpoint identical {ckpt_same} ({} bytes), reports identical {report_same}",
            second.checkpoint_bytes.len()
        ),
    )
}

type Check = (u32, &'static str, fn() -> bool);

fn main() {
    let checks: [Check; 9] = [
        (1, "parameter count", parameter_count_at_full_width),
        (2, "gradient check", gradient_check_toy_model),
        (3, "STFT round trip", stft_round_trip),
        (4, "mask boundedness", mask_boundedness),
        (5, "segmentation round trip", segmentation_round_trip),
        (
            6,
            "divergence oracle and mask complement",
            divergence_and_wiener_complement,
        ),
        (7, "overfit separation", overfit_separation),
        (8, "two-model Wiener algebra", two_model_wiener_with_oracle_estimates),
        (9, "seeded determinism", seeded_runs_are_bit_identical),
    ];
    let mut failed = 0;
    for (id, name, check) in checks {
        match std::panic::catch_unwind(check) {
            Ok(true) => {}
            Ok(false) => failed += 1,
            Err(_) => {
                println!("[FAIL] {id}. {name}: panicked");
                failed += 1;
            }
        }
    }
    println!("acceptance: {} of {} passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
