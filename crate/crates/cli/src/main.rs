use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use skipfilt::audio::{wav_read_mono, wav_write};
use skipfilt::config::Settings;
use skipfilt::dsp::AudioBuffer;
use skipfilt::fixture::{synth_fixture, FixtureSpec};
use skipfilt::layers::{count_params, ModelHyper};
use skipfilt::metrics::{EvalReport, TrackInput};
use skipfilt::separation::{separate_with_mask, MagnitudeEstimator, Strategy, Variant};
use skipfilt::train::{model_gradcheck, train_with_progress, Checkpoint, Dataset};
use skipfilt::Exec;

#[derive(Parser)]
#[command(
    name = "skipfilt",
    version,
    about = "Singing-voice separation with skip-filtering GRUs"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of <track>/{mixture,target}.wav.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Estimate a source from a mixture WAV.
    Separate {
        #[arg(long, default_value = "s")]
        strategy: String,
        #[arg(long)]
        alpha: Option<f64>,
        /// Checkpoint; give twice for the two-model strategies (target first).
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score estimates <estimates>/<track>.wav against <references>/<track>/.
    Evaluate {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Text report destination.
        #[arg(long)]
        out: PathBuf,
        /// Optional tab-separated track/metric/value report.
        #[arg(long)]
        kv: Option<PathBuf>,
    },
    /// Compare backprop against finite differences at toy dimensions.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        bins: usize,
        #[arg(long, default_value_t = 6)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        context: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
    },
    /// Write mixture.wav, target.wav and accompaniment.wav.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        duration: f64,
    },
    /// Print the trainable parameter count.
    Params {
        #[arg(long)]
        bins: Option<usize>,
    },
}

fn settings(g: &Global) -> Result<Settings> {
    let mut s = match &g.config {
        Some(p) => Settings::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => Settings::default(),
    };
    s.apply_env()?;
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        s.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = g.seed {
        s.train.seed = seed;
    }
    Ok(s)
}

fn exec(g: &Global) -> Exec {
    if g.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn track_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("listing {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no track directories under {}", root.display());
    }
    Ok(dirs)
}

fn track_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn run_train(s: &mut Settings, data: &Path, out: &Path, exec: Exec) -> Result<()> {
    s.validate()?;
    let hyper = ModelHyper {
        bins: s.bins(),
        frames: s.train.frames,
        context: s.train.context,
    };
    let mut ds = Dataset::new(hyper)?;
    for dir in track_dirs(data)? {
        let mix = wav_read_mono(dir.join("mixture.wav"))?;
        let target = wav_read_mono(dir.join("target.wav"))?;
        ds.add_audio(&mix, &target, s.stft)
            .with_context(|| format!("track {}", dir.display()))?;
    }
    eprintln!("{} segments", ds.len());
    let report = train_with_progress(&s.train, s.stft, &ds, exec, |e| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  best {:.6} (epoch {})  grad norm {:.3}",
            e.epoch, e.loss, e.best_loss, e.best_epoch, e.mean_grad_norm
        );
    })?;
    report.checkpoint.save(out)?;
    println!(
        "best epoch {} of {}, loss {:.6}; wrote {}",
        report.best_epoch,
        report.epochs_run,
        report.checkpoint.best_loss,
        out.display()
    );
    Ok(())
}

fn run_separate(
    strategy: &str,
    alpha: Option<f64>,
    models: &[PathBuf],
    input: &Path,
    output: &Path,
    exec: Exec,
) -> Result<()> {
    let variant: Variant = strategy.parse()?;
    let strategy = Strategy::new(variant, alpha)?;
    if models.len() < variant.models() {
        return Err(skipfilt::Error::MissingSecondModel.into());
    }
    let ckpts = models
        .iter()
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let stft = ckpts[0].stft;
    if ckpts.iter().any(|c| c.stft != stft) {
        bail!("checkpoints were trained with different STFT settings");
    }
    let estimators: Vec<&dyn MagnitudeEstimator> = ckpts.iter().map(|c| &c.model as &dyn MagnitudeEstimator).collect();
    let x = wav_read_mono(input)?;
    let (y, mask) = separate_with_mask(&strategy, &estimators, &x, stft, exec)?;
    wav_write(output, &y)?;
    let (lo, mean, hi) = mask.stats();
    println!("mask min {lo:.4} mean {mean:.4} max {hi:.4}");
    println!("{variant} (alpha {}) wrote {}", strategy.alpha, output.display());
    Ok(())
}

fn run_evaluate(estimates: &Path, references: &Path, out: &Path, kv: Option<&Path>, exec: Exec) -> Result<()> {
    let mut inputs = Vec::new();
    for dir in track_dirs(references)? {
        let name = track_name(&dir);
        let mix = wav_read_mono(dir.join("mixture.wav"))?;
        let target = wav_read_mono(dir.join("target.wav"))?;
        let est = wav_read_mono(estimates.join(format!("{name}.wav")))?;
        let rest: Vec<f64> = mix.samples().iter().zip(target.samples()).map(|(m, t)| m - t).collect();
        inputs.push(TrackInput {
            track: name,
            estimate: est.into_samples(),
            sources: vec![target.into_samples(), rest],
            target: 0,
        });
    }
    let report = EvalReport::evaluate(&inputs, exec)?;
    let text = report.to_text();
    fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    if let Some(kv) = kv {
        fs::write(kv, report.to_kv()).with_context(|| format!("writing {}", kv.display()))?;
    }
    print!("{text}");
    Ok(())
}

fn run_synth(s: &Settings, out: &Path, duration: f64) -> Result<()> {
    let spec = FixtureSpec {
        sample_rate: s.sample_rate,
        duration_s: duration,
        seed: s.train.seed,
        ..FixtureSpec::default()
    };
    let f = synth_fixture(&spec)?;
    fs::create_dir_all(out)?;
    let files: [(&str, &AudioBuffer); 3] = [
        ("mixture.wav", &f.mixture),
        ("target.wav", &f.voice),
        ("accompaniment.wav", &f.accompaniment),
    ];
    for (name, buf) in files {
        wav_write(out.join(name), buf)?;
    }
    println!(
        "wrote {} samples at {} Hz to {}",
        f.mixture.len(),
        s.sample_rate,
        out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut s = settings(&cli.global)?;
    let exec = exec(&cli.global);
    match cli.command {
        Command::Train { data, out, max_epochs } => {
            if let Some(n) = max_epochs {
                s.train.max_epochs = n;
            }
            run_train(&mut s, &data, &out, exec)
        }
        Command::Separate {
            strategy,
            alpha,
            models,
            input,
            output,
        } => run_separate(&strategy, alpha, &models, &input, &output, exec),
        Command::Evaluate {
            estimates,
            references,
            out,
            kv,
        } => run_evaluate(&estimates, &references, &out, kv.as_deref(), exec),
        Command::Gradcheck {
            bins,
            frames,
            context,
            batch,
        } => {
            let hyper = ModelHyper { bins, frames, context };
            let r = model_gradcheck(hyper, batch, s.train.lambda_l2, s.train.seed)?;
            println!("max relative error {:e} over {} parameters", r.max_rel_error, r.checked);
            if r.max_rel_error >= 1e-4 {
                bail!("gradient check failed: {:e} >= 1e-4", r.max_rel_error);
            }
            Ok(())
        }
        Command::Synth { out, duration } => run_synth(&s, &out, duration),
        Command::Params { bins } => {
            println!("{}", count_params(bins.unwrap_or(s.bins())));
            Ok(())
        }
    }
}
