//! Training: losses, ground-truth preparation, Adam with global-norm
//! clipping, early stopping and checkpoints.

mod checkpoint;
mod config;
pub mod loss;
pub mod optim;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::TrainConfig;
pub use loss::{gkl, joint_loss, wiener_target, wiener_targets};
pub use optim::{clip_global_norm, global_norm, AdamState};

use crate::autodiff::{grad_check, GradCheck, Graph, Tensor, Var};
use crate::dsp::{self, magnitude, AudioBuffer, MagnitudeSpectrogram, StftSettings};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::layers::{segment_forward, ModelHyper, ModelParams, ModelVars};
use crate::segment::{context_trim, tensorize};

/// One training example: a T×N mixture segment and its T'×N target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSegment {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Segments drawn from one or more tracks, all with the same geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    hyper: ModelHyper,
    segments: Vec<TrainingSegment>,
}

impl Dataset {
    pub fn new(hyper: ModelHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            segments: Vec::new(),
        })
    }

    pub fn hyper(&self) -> ModelHyper {
        self.hyper
    }

    pub fn segments(&self) -> &[TrainingSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn push(&mut self, seg: TrainingSegment) -> Result<()> {
        let h = self.hyper;
        if seg.input.len() != h.frames * h.bins || seg.target.len() != h.trimmed() * h.bins {
            return Err(Error::ShapeMismatch("training segment geometry".into()));
        }
        self.segments.push(seg);
        Ok(())
    }

    /// Adds a track from time-domain audio. The training target is the
    /// α = 1 Wiener-filtered mixture for `target` against the residual
    /// `mixture - target`.
    pub fn add_audio(&mut self, mix: &AudioBuffer, target: &AudioBuffer, stft: StftSettings) -> Result<()> {
        if mix.len() != target.len() {
            return Err(Error::ShapeMismatch(format!(
                "mixture of {} samples vs target of {}",
                mix.len(),
                target.len()
            )));
        }
        let rest: Vec<f64> = mix.samples().iter().zip(target.samples()).map(|(m, t)| m - t).collect();
        let rest = AudioBuffer::new(rest, mix.sample_rate())?;
        let mag =
            |x: &AudioBuffer| -> Result<MagnitudeSpectrogram> { Ok(magnitude(&dsp::stft(x, stft.n_fft, stft.hop)?)) };
        let mix_mag = mag(mix)?;
        let (t_mag, r_mag) = (mag(target)?, mag(&rest)?);
        let wiener = wiener_target(&[&t_mag, &r_mag], &mix_mag, 0, 1.0)?;
        self.add_track(&mix_mag, &wiener)
    }

    /// Segments a track's mixture magnitude and its target magnitude.
    pub fn add_track(&mut self, mix: &MagnitudeSpectrogram, target: &MagnitudeSpectrogram) -> Result<()> {
        let h = self.hyper;
        if mix.bins() != h.bins || target.bins() != h.bins || mix.frames() != target.frames() {
            return Err(Error::ShapeMismatch(format!(
                "track {}x{} / {}x{} for model with {} bins",
                mix.frames(),
                mix.bins(),
                target.frames(),
                target.bins(),
                h.bins
            )));
        }
        let xs = tensorize(mix, h.frames, h.context)?;
        let ts = tensorize(target, h.frames, h.context)?;
        for b in 0..xs.len() {
            self.segments.push(TrainingSegment {
                input: xs.segment(b).to_vec(),
                target: context_trim(ts.segment(b), h.bins, h.context)?,
            });
        }
        Ok(())
    }
}

/// Loss and gradients (in [`ModelParams::tensors`] order) for one segment.
pub fn segment_gradients(model: &ModelParams, seg: &TrainingSegment, lambda: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let h = model.hyper;
    let mut g = Graph::new();
    let vars = model.register(&mut g);
    let out = segment_forward(&mut g, &vars, &seg.input)?;
    let target = g.constant_ref(&seg.target, h.trimmed(), h.bins)?;
    let loss = loss::joint_loss_graph(&mut g, target, out.filtered, out.enhanced, lambda)?;
    let value = g.scalar_value(loss);
    let mut grads = g.backward(loss)?;
    Ok((value, vars.all().into_iter().map(|v| grads.take(v)).collect()))
}

/// Batch-mean loss, batch-mean gradients, and per-segment losses.
///
/// Segments are processed independently under `exec`; the reduction runs in
/// batch order so the result does not depend on the execution mode.
pub fn batch_gradients(
    model: &ModelParams,
    batch: &[&TrainingSegment],
    lambda: f64,
    exec: Exec,
) -> Result<(f64, Vec<Vec<f64>>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let results = exec.map(batch, |s| segment_gradients(model, s, lambda));
    let mut losses = Vec::with_capacity(batch.len());
    let mut total: Option<Vec<Vec<f64>>> = None;
    for r in results {
        let (l, g) = r?;
        losses.push(l);
        match &mut total {
            None => total = Some(g),
            Some(t) => {
                for (acc, x) in t.iter_mut().zip(&g) {
                    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
    let k = 1.0 / batch.len() as f64;
    let mut grads = total.expect("non-empty batch");
    grads.iter_mut().flatten().for_each(|g| *g *= k);
    let mean = losses.iter().sum::<f64>() * k;
    Ok((mean, grads, losses))
}

/// Finite-difference check of the full training loss (forward pass plus
/// joint loss, averaged over `batch` random segments) against backprop, over
/// every model parameter.
pub fn model_gradcheck(hyper: ModelHyper, batch: usize, lambda: f64, seed: u64) -> Result<GradCheck> {
    hyper.validate()?;
    if batch == 0 {
        return Err(Error::EmptyDataset);
    }
    let model = ModelParams::init(hyper, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let segs: Vec<TrainingSegment> = (0..batch)
        .map(|_| TrainingSegment {
            input: (0..hyper.frames * hyper.bins)
                .map(|_| rng.random_range(0.1..1.0))
                .collect(),
            target: (0..hyper.trimmed() * hyper.bins)
                .map(|_| rng.random_range(0.05..0.8))
                .collect(),
        })
        .collect();
    let tensors: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
    grad_check(&tensors, 1e-5, |g, vars| {
        let mv = ModelVars::from_slice(vars, hyper)?;
        let mut total: Option<Var> = None;
        for s in &segs {
            let out = segment_forward(g, &mv, &s.input)?;
            let t = g.constant(s.target.clone(), hyper.trimmed(), hyper.bins)?;
            let l = loss::joint_loss_graph(g, t, out.filtered, out.enhanced, lambda)?;
            total = Some(match total {
                None => l,
                Some(acc) => g.add(acc, l)?,
            });
        }
        let total = total.expect("non-empty batch");
        g.scale(total, 1.0 / segs.len() as f64)
    })
}

/// Per-epoch progress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub best_loss: f64,
    pub best_epoch: usize,
    /// Mean pre-clip global gradient norm over the epoch's batches.
    pub mean_grad_norm: f64,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Best-loss parameters.
    pub checkpoint: Checkpoint,
    /// Mean per-segment loss of every epoch run.
    pub history: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

pub fn train(config: &TrainConfig, stft: StftSettings, data: &Dataset, exec: Exec) -> Result<TrainReport> {
    train_with_progress(config, stft, data, exec, |_| {})
}

/// Trains from a Glorot initialisation seeded by `config.seed`.
///
/// Each epoch visits every segment once in a seeded shuffled order, in
/// batches of `config.batch_size`. Training stops once the epoch loss has
/// failed to strictly improve on the best epoch for `config.patience`
/// consecutive epochs, or after `config.max_epochs`.
pub fn train_with_progress(
    config: &TrainConfig,
    stft: StftSettings,
    data: &Dataset,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hyper = data.hyper();
    if config.bins.is_some_and(|n| n != hyper.bins) || config.hidden.is_some_and(|n| n != hyper.bins) {
        return Err(Error::Config(format!(
            "config dims {:?}/{:?} disagree with data bins {}",
            config.bins, config.hidden, hyper.bins
        )));
    }
    if (config.frames, config.context) != (hyper.frames, hyper.context) {
        return Err(Error::Config("config T/L disagree with dataset segmentation".into()));
    }

    let mut model = ModelParams::init(hyper, config.seed)?;
    let mut adam = AdamState::new(model.tensors().iter().map(|t| t.len()));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut history = Vec::new();
    let mut stale = 0;
    let mut seg_losses = vec![0.0; data.len()];

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainingSegment> = chunk.iter().map(|&i| &data.segments[i]).collect();
            let (mean, mut grads, losses) = match batch_gradients(&model, &batch, config.lambda_l2, exec) {
                Err(Error::NonFinite(what)) => return Err(Error::Diverged { epoch, batch: bi, what }),
                r => r?,
            };
            if !mean.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    what: "loss",
                });
            }
            for (&i, l) in chunk.iter().zip(losses) {
                seg_losses[i] = l;
            }
            norm_sum += clip_global_norm(&mut grads, config.clip_norm);
            batches += 1;
            adam.update(&mut model.tensors_mut(), &grads, config.learning_rate)?;
        }
        // summed in segment order so the value does not depend on the shuffle
        let loss = seg_losses.iter().sum::<f64>() / data.len() as f64;
        history.push(loss);
        if loss < best.0 {
            best = (loss, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
        }
        on_epoch(&EpochStats {
            epoch,
            loss,
            best_loss: best.0,
            best_epoch: best.1,
            mean_grad_norm: norm_sum / batches as f64,
        });
        if stale >= config.patience {
            break;
        }
    }

    let (best_loss, best_epoch, best_model) = best;
    Ok(TrainReport {
        epochs_run: history.len(),
        history,
        best_epoch,
        checkpoint: Checkpoint {
            model: best_model,
            config: config.clone(),
            stft,
            epoch: best_epoch,
            best_loss,
        },
    })
}
