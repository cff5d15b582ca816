//! Inference: magnitude estimation over all segments, α-power masks, the
//! single- and two-model strategies, and the ideal binary mask.

use std::fmt;
use std::str::FromStr;

use crate::dsp::{
    magnitude, stft, stft_synthesis, AudioBuffer, ComplexSpectrogram, MagnitudeSpectrogram, StftSettings,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::layers::ModelParams;
use crate::segment::{flatten, tensorize};

/// Guard added to every mask denominator.
pub const MASK_EPS: f64 = 1e-12;

/// Anything that maps a mixture magnitude to a source magnitude estimate.
pub trait MagnitudeEstimator: Sync {
    fn estimate(&self, mix: &MagnitudeSpectrogram, exec: Exec) -> Result<MagnitudeSpectrogram>;
}

impl MagnitudeEstimator for ModelParams {
    fn estimate(&self, mix: &MagnitudeSpectrogram, exec: Exec) -> Result<MagnitudeSpectrogram> {
        estimate_magnitude(self, mix, exec)
    }
}

/// Returns a fixed magnitude regardless of input; used for oracle runs.
#[derive(Debug, Clone)]
pub struct FixedEstimate(pub MagnitudeSpectrogram);

impl MagnitudeEstimator for FixedEstimate {
    fn estimate(&self, mix: &MagnitudeSpectrogram, _: Exec) -> Result<MagnitudeSpectrogram> {
        if self.0.values().len() != mix.values().len() {
            return Err(Error::ShapeMismatch("fixed estimate vs mixture".into()));
        }
        Ok(self.0.clone())
    }
}

/// Passes the mixture magnitude through unchanged.
#[derive(Debug, Clone, Copy)]
pub struct MixturePassthrough;

impl MagnitudeEstimator for MixturePassthrough {
    fn estimate(&self, mix: &MagnitudeSpectrogram, _: Exec) -> Result<MagnitudeSpectrogram> {
        Ok(mix.clone())
    }
}

/// Runs the model over every segment of `mix` and reassembles an M×N estimate.
pub fn estimate_magnitude(model: &ModelParams, mix: &MagnitudeSpectrogram, exec: Exec) -> Result<MagnitudeSpectrogram> {
    let h = model.hyper;
    if mix.bins() != h.bins {
        return Err(Error::ShapeMismatch(format!(
            "model has {} bins, mixture {}",
            h.bins,
            mix.bins()
        )));
    }
    let segs = tensorize(mix, h.frames, h.context)?;
    let outs = exec.map_range(segs.len(), |b| model.forward_segment(segs.segment(b)).map(|(_, e)| e));
    let outs = outs.into_iter().collect::<Result<Vec<_>>>()?;
    flatten(&outs, segs.layout(), mix.meta())
}

/// Non-negative M×N gain grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    values: Vec<f64>,
    frames: usize,
    bins: usize,
}

impl Mask {
    pub fn new(values: Vec<f64>, frames: usize, bins: usize) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {frames}x{bins} mask",
                values.len()
            )));
        }
        if values.iter().any(|&v| v.is_nan() || v < 0.0 || v.is_infinite()) {
            return Err(Error::NegativeEntry("mask"));
        }
        Ok(Self { values, frames, bins })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// (min, mean, max) over all entries.
    pub fn stats(&self) -> (f64, f64, f64) {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min, self.values.iter().sum::<f64>() / self.values.len() as f64, max)
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange(alpha))
    }
}

fn same_grid(a: &MagnitudeSpectrogram, b: &MagnitudeSpectrogram) -> Result<()> {
    if a.frames() != b.frames() || a.bins() != b.bins() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.frames(),
            a.bins(),
            b.frames(),
            b.bins()
        )));
    }
    Ok(())
}

/// est^α / (mix^α + ε).
pub fn alpha_mask(est: &MagnitudeSpectrogram, mix: &MagnitudeSpectrogram, alpha: f64) -> Result<Mask> {
    check_alpha(alpha)?;
    same_grid(est, mix)?;
    let v = est
        .values()
        .iter()
        .zip(mix.values())
        .map(|(e, m)| e.powf(alpha) / (m.powf(alpha) + MASK_EPS))
        .collect();
    Mask::new(v, est.frames(), est.bins())
}

/// est1^α / (est1^α + est2^α + ε).
pub fn two_model_mask(est1: &MagnitudeSpectrogram, est2: &MagnitudeSpectrogram, alpha: f64) -> Result<Mask> {
    check_alpha(alpha)?;
    same_grid(est1, est2)?;
    let v = est1
        .values()
        .iter()
        .zip(est2.values())
        .map(|(a, b)| {
            let pa = a.powf(alpha);
            pa / (pa + b.powf(alpha) + MASK_EPS)
        })
        .collect();
    Mask::new(v, est1.frames(), est1.bins())
}

/// Scales every complex bin by its mask gain, keeping phase.
pub fn apply_mask(mask: &Mask, spec: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if mask.frames != spec.frames() || mask.bins != spec.bins() {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs spectrogram {}x{}",
            mask.frames,
            mask.bins,
            spec.frames(),
            spec.bins()
        )));
    }
    let mut out = spec.clone();
    for (c, &g) in out.values_mut().iter_mut().zip(&mask.values) {
        *c *= g;
    }
    Ok(out)
}

/// 1 where source `j` exceeds the sum of all other sources, else 0.
pub fn ideal_binary_mask(sources: &[&MagnitudeSpectrogram], j: usize) -> Result<Mask> {
    if sources.len() < 2 {
        return Err(Error::InvalidParameter(
            "ideal binary mask needs at least two sources".into(),
        ));
    }
    if j >= sources.len() {
        return Err(Error::InvalidParameter(format!(
            "source index {j} of {}",
            sources.len()
        )));
    }
    for s in &sources[1..] {
        same_grid(sources[0], s)?;
    }
    let n = sources[0].values().len();
    let v = (0..n)
        .map(|i| {
            let own = sources[j].values()[i];
            let rest: f64 = sources
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != j)
                .map(|(_, s)| s.values()[i])
                .sum();
            if own > rest {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Mask::new(v, sources[0].frames(), sources[0].bins())
}

/// Which masking recipe turns model estimates into a source estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// One model; mask against the mixture magnitude.
    Single,
    /// Two models (target, complement); shared-denominator mask, α = 1.7.
    Dual,
    /// Two models with classical Wiener α = 2.
    DualWiener,
}

impl Variant {
    pub fn default_alpha(self) -> f64 {
        match self {
            Variant::Single | Variant::Dual => 1.7,
            Variant::DualWiener => 2.0,
        }
    }

    pub fn models(self) -> usize {
        match self {
            Variant::Single => 1,
            Variant::Dual | Variant::DualWiener => 2,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "gru-s" | "single" => Ok(Variant::Single),
            "d" | "gru-d" | "dual" => Ok(Variant::Dual),
            "dwf" | "gru-dwf" => Ok(Variant::DualWiener),
            _ => Err(Error::InvalidParameter(format!("unknown strategy {s:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Single => "GRU-S",
            Variant::Dual => "GRU-D",
            Variant::DualWiener => "GRU-DWF",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strategy {
    pub variant: Variant,
    pub alpha: f64,
}

impl Strategy {
    pub fn new(variant: Variant, alpha: Option<f64>) -> Result<Self> {
        let alpha = alpha.unwrap_or(variant.default_alpha());
        check_alpha(alpha)?;
        Ok(Self { variant, alpha })
    }

    /// Mask for the first estimator's source given the mixture magnitude.
    pub fn mask(&self, estimators: &[&dyn MagnitudeEstimator], mix: &MagnitudeSpectrogram, exec: Exec) -> Result<Mask> {
        if estimators.len() < self.variant.models() {
            return Err(match self.variant {
                Variant::Single => Error::InvalidParameter("strategy requires one checkpoint".into()),
                _ => Error::MissingSecondModel,
            });
        }
        let est1 = estimators[0].estimate(mix, exec)?;
        match self.variant {
            Variant::Single => alpha_mask(&est1, mix, self.alpha),
            Variant::Dual | Variant::DualWiener => {
                let est2 = estimators[1].estimate(mix, exec)?;
                two_model_mask(&est1, &est2, self.alpha)
            }
        }
    }
}

/// Mixture in, estimated source out, same length as the input.
pub fn separate(
    strategy: &Strategy,
    estimators: &[&dyn MagnitudeEstimator],
    x: &AudioBuffer,
    settings: StftSettings,
    exec: Exec,
) -> Result<AudioBuffer> {
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    Ok(separate_with_mask(strategy, estimators, x, settings, exec)?.0)
}

/// [`separate`], also returning the unclamped mask that was applied.
pub fn separate_with_mask(
    strategy: &Strategy,
    estimators: &[&dyn MagnitudeEstimator],
    x: &AudioBuffer,
    settings: StftSettings,
    exec: Exec,
) -> Result<(AudioBuffer, Mask)> {
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    let spec = stft(x, settings.n_fft, settings.hop)?;
    let mix = magnitude(&spec);
    let mask = strategy.mask(estimators, &mix, exec)?;
    let y = stft_synthesis(&apply_mask(&mask, &spec)?, x.sample_rate())?;
    Ok((y, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftMeta;
    use crate::layers::ModelHyper;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(v: Vec<f64>, frames: usize, bins: usize) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram::from_grid(v, frames, bins).unwrap()
    }

    fn random_grid(frames: usize, bins: usize, rng: &mut ChaCha8Rng) -> MagnitudeSpectrogram {
        grid(
            (0..frames * bins).map(|_| rng.random_range(0.0..2.0)).collect(),
            frames,
            bins,
        )
    }

    fn signal(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), 8000).unwrap()
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        (num / b.iter().map(|y| y * y).sum::<f64>()).sqrt()
    }

    #[test]
    fn estimate_shapes_and_zero_input() {
        let hyper = ModelHyper {
            bins: 9,
            frames: 6,
            context: 1,
        };
        let model = ModelParams::init(hyper, 1).unwrap();
        let zero = grid(vec![0.0; 20 * 9], 20, 9);
        let est = estimate_magnitude(&model, &zero, Exec::default()).unwrap();
        assert_eq!((est.frames(), est.bins()), (20, 9));
        assert!(est.values().iter().all(|&v| v == 0.0));
        let wrong = grid(vec![0.0; 20 * 5], 20, 5);
        assert!(estimate_magnitude(&model, &wrong, Exec::default()).is_err());
    }

    #[test]
    fn estimate_matches_per_segment_pipeline() {
        let hyper = ModelHyper {
            bins: 5,
            frames: 6,
            context: 1,
        };
        let model = ModelParams::init(hyper, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mix = random_grid(11, 5, &mut rng);
        let est = estimate_magnitude(&model, &mix, Exec::Sequential).unwrap();
        let segs = tensorize(&mix, 6, 1).unwrap();
        for b in 0..segs.len() {
            let (_, e) = model.forward_segment(segs.segment(b)).unwrap();
            for (t, row) in e.chunks(5).enumerate() {
                let m = b * 4 + t;
                if m < 11 {
                    assert_eq!(row, est.row(m));
                }
            }
        }
        assert_eq!(est, estimate_magnitude(&model, &mix, Exec::default()).unwrap());
    }

    #[test]
    fn alpha_mask_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mix = random_grid(3, 4, &mut rng);
        let m = alpha_mask(&mix, &mix, 1.7).unwrap();
        assert!(m.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
        let m = alpha_mask(&grid(vec![1.0], 1, 1), &grid(vec![2.0], 1, 1), 2.0).unwrap();
        assert!((m.values()[0] - 0.25).abs() < 1e-12);
        let z = MagnitudeSpectrogram::zeros_like(&mix);
        assert!(alpha_mask(&z, &mix, 1.0).unwrap().values().iter().all(|&v| v == 0.0));
        for bad in [0.0, -1.0, 2.5] {
            assert!(matches!(alpha_mask(&mix, &mix, bad), Err(Error::AlphaOutOfRange(_))));
        }
    }

    #[test]
    fn two_model_mask_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_grid(4, 3, &mut rng);
        let b = random_grid(4, 3, &mut rng);
        let half = two_model_mask(&a, &a, 1.7).unwrap();
        assert!(half.values().iter().all(|v| (v - 0.5).abs() < 1e-9));
        let z = MagnitudeSpectrogram::zeros_like(&a);
        let one = two_model_mask(&a, &z, 2.0).unwrap();
        assert!(one.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
        let m1 = two_model_mask(&a, &b, 1.7).unwrap();
        let m2 = two_model_mask(&b, &a, 1.7).unwrap();
        for (x, y) in m1.values().iter().zip(m2.values()) {
            assert!((x + y - 1.0).abs() < 1e-9);
        }
        assert!(two_model_mask(&a, &b, 3.0).is_err());
    }

    #[test]
    fn apply_mask_keeps_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let meta = StftMeta {
            n_fft: 4,
            hop: 1,
            orig_len: 3,
        };
        let vals: Vec<Complex64> = (0..9)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let y = ComplexSpectrogram::new(vals, 3, meta).unwrap();
        let ones = Mask::new(vec![1.0; 9], 3, 3).unwrap();
        assert_eq!(apply_mask(&ones, &y).unwrap(), y);
        let zeros = Mask::new(vec![0.0; 9], 3, 3).unwrap();
        assert!(apply_mask(&zeros, &y).unwrap().values().iter().all(|c| c.norm() == 0.0));
        let g = Mask::new((0..9).map(|_| rng.random_range(0.01..2.0)).collect(), 3, 3).unwrap();
        let out = apply_mask(&g, &y).unwrap();
        for (a, b) in out.values().iter().zip(y.values()) {
            assert!((a.arg() - b.arg()).abs() < 1e-12);
        }
        let wrong = Mask::new(vec![1.0; 6], 2, 3).unwrap();
        assert!(apply_mask(&wrong, &y).is_err());
    }

    #[test]
    fn ibm_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let other = random_grid(3, 3, &mut rng);
        let big = grid(other.values().iter().map(|v| 2.0 * v + 0.1).collect(), 3, 3);
        assert!(ideal_binary_mask(&[&big, &other], 0)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 1.0));
        let z = MagnitudeSpectrogram::zeros_like(&other);
        assert!(ideal_binary_mask(&[&z, &other], 0)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let a = random_grid(3, 3, &mut rng);
        let m = ideal_binary_mask(&[&a, &other], 0).unwrap();
        for ((x, y), v) in a.values().iter().zip(other.values()).zip(m.values()) {
            assert_eq!(*v, if x > y { 1.0 } else { 0.0 });
        }
        assert!(ideal_binary_mask(&[&a], 0).is_err());
    }

    #[test]
    fn ibm_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_grid(5, 4, &mut rng);
        let b = random_grid(5, 4, &mut rng);
        let m = ideal_binary_mask(&[&a, &b], 0).unwrap();
        let once: Vec<f64> = m.values().iter().zip(a.values()).map(|(g, v)| g * v).collect();
        let twice: Vec<f64> = m.values().iter().zip(&once).map(|(g, v)| g * v).collect();
        assert_eq!(once, twice);
    }

    #[test]
    fn zero_model_is_silent() {
        let x = signal(2000, 1);
        let st = StftSettings { n_fft: 64, hop: 16 };
        let model = ModelParams::zeros(ModelHyper {
            bins: 33,
            frames: 6,
            context: 1,
        })
        .unwrap();
        let s = Strategy::new(Variant::Single, None).unwrap();
        let y = separate(&s, &[&model], &x, st, Exec::default()).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(y.samples().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn passthrough_reconstructs_mixture() {
        let x = signal(4000, 2);
        let st = StftSettings { n_fft: 256, hop: 32 };
        let s = Strategy::new(Variant::Single, None).unwrap();
        let y = separate(&s, &[&MixturePassthrough], &x, st, Exec::default()).unwrap();
        assert!(rel_l2(y.samples(), x.samples()) < 1e-5);
    }

    #[test]
    fn dual_needs_two_models() {
        let x = signal(1000, 3);
        let st = StftSettings { n_fft: 64, hop: 16 };
        let s = Strategy::new(Variant::Dual, None).unwrap();
        assert!(matches!(
            separate(&s, &[&MixturePassthrough], &x, st, Exec::default()),
            Err(Error::MissingSecondModel)
        ));
        assert_eq!(Strategy::new(Variant::DualWiener, None).unwrap().alpha, 2.0);
        assert!(Strategy::new(Variant::Single, Some(2.1)).is_err());
        assert_eq!("dwf".parse::<Variant>().unwrap(), Variant::DualWiener);
        assert!("x".parse::<Variant>().is_err());
    }

    #[test]
    fn dwf_with_silent_complement_matches_single_passthrough() {
        let x = signal(3000, 4);
        let st = StftSettings { n_fft: 128, hop: 32 };
        let spec = stft(&x, st.n_fft, st.hop).unwrap();
        let mix = magnitude(&spec);
        let silent = FixedEstimate(MagnitudeSpectrogram::zeros_like(&mix));
        let dwf = Strategy::new(Variant::DualWiener, None).unwrap();
        let single = Strategy::new(Variant::Single, Some(2.0)).unwrap();
        let a = separate(&dwf, &[&MixturePassthrough, &silent], &x, st, Exec::default()).unwrap();
        let b = separate(&single, &[&MixturePassthrough], &x, st, Exec::default()).unwrap();
        assert!(rel_l2(a.samples(), b.samples()) < 1e-9);
    }
}
