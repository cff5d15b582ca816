//! Synthetic voice-plus-accompaniment clips for desk-scale experiments.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub seed: u64,
    /// Voice fundamental in Hz.
    pub fundamental: f64,
    pub partials: usize,
    /// Peak vibrato excursion of the fundamental, Hz.
    pub vibrato_depth: f64,
    pub vibrato_rate: f64,
    /// Centre and quality factor of the noise band-pass.
    pub noise_center: f64,
    pub noise_q: f64,
    /// Impulses per second and their decay time constant in seconds.
    pub impulse_rate: f64,
    pub impulse_decay: f64,
    /// Accompaniment RMS relative to the voice RMS, dB.
    pub accompaniment_gain_db: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            duration_s: 4.0,
            seed: 0,
            fundamental: 220.0,
            partials: 6,
            vibrato_depth: 2.0,
            vibrato_rate: 5.0,
            noise_center: 1200.0,
            noise_q: 0.7,
            impulse_rate: 4.0,
            impulse_decay: 0.02,
            accompaniment_gain_db: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub mixture: AudioBuffer,
    pub voice: AudioBuffer,
    pub accompaniment: AudioBuffer,
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Standard RBJ band-pass biquad (constant 0 dB peak gain).
fn bandpass(x: &[f64], fs: f64, f0: f64, q: f64) -> Vec<f64> {
    let w0 = TAU * f0 / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&x0| {
            let y0 = b0 * x0 + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            y0
        })
        .collect()
}

pub fn synth_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    if spec.duration_s.is_nan() || spec.duration_s <= 0.0 || spec.duration_s.is_infinite() {
        return Err(Error::InvalidParameter("duration must be positive".into()));
    }
    if spec.sample_rate == 0 || spec.partials == 0 {
        return Err(Error::InvalidParameter(
            "sample rate and partial count must be positive".into(),
        ));
    }
    let fs = f64::from(spec.sample_rate);
    let n = (spec.duration_s * fs).round() as usize;
    if n == 0 {
        return Err(Error::EmptySignal);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: Vec<f64> = (0..spec.partials).map(|_| rng.random_range(0.0..TAU)).collect();

    // instantaneous fundamental phase, integrated in closed form
    let mut voice = vec![0.0; n];
    for (i, v) in voice.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let theta =
            TAU * spec.fundamental * t - spec.vibrato_depth / spec.vibrato_rate * (TAU * spec.vibrato_rate * t).cos();
        *v = (1..=spec.partials)
            .zip(&phases)
            .filter(|(k, _)| (*k as f64) * (spec.fundamental + spec.vibrato_depth) < fs / 2.0)
            .map(|(k, p)| (k as f64 * theta + p).sin() / k as f64)
            .sum();
    }

    let white: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut acc = bandpass(&white, fs, spec.noise_center, spec.noise_q);
    let noise_rms = rms(&acc).max(f64::MIN_POSITIVE);
    acc.iter_mut().for_each(|v| *v /= noise_rms);
    if spec.impulse_rate > 0.0 {
        let period = (fs / spec.impulse_rate).round().max(1.0) as usize;
        let decay = (spec.impulse_decay * fs).max(1.0);
        for (i, a) in acc.iter_mut().enumerate() {
            *a += 3.0 * (-((i % period) as f64) / decay).exp();
        }
    }

    let gain = rms(&voice) / rms(&acc).max(f64::MIN_POSITIVE) * 10f64.powf(spec.accompaniment_gain_db / 20.0);
    acc.iter_mut().for_each(|v| *v *= gain);
    // keep the mixture inside full scale
    let peak = voice.iter().zip(&acc).map(|(v, a)| (v + a).abs()).fold(0.0, f64::max);
    let norm = if peak > 0.0 { 0.9 / peak } else { 1.0 };
    voice.iter_mut().for_each(|v| *v *= norm);
    acc.iter_mut().for_each(|v| *v *= norm);
    let mix: Vec<f64> = voice.iter().zip(&acc).map(|(v, a)| v + a).collect();
    // re-derive so that mixture - voice - accompaniment is exactly zero
    let acc: Vec<f64> = mix.iter().zip(&voice).map(|(m, v)| m - v).collect();

    Ok(Fixture {
        mixture: AudioBuffer::new(mix, spec.sample_rate)?,
        voice: AudioBuffer::new(voice, spec.sample_rate)?,
        accompaniment: AudioBuffer::new(acc, spec.sample_rate)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{magnitude, stft};

    #[test]
    fn deterministic_under_seed() {
        let spec = FixtureSpec::default();
        assert_eq!(synth_fixture(&spec).unwrap(), synth_fixture(&spec).unwrap());
        let other = FixtureSpec {
            seed: 1,
            ..spec.clone()
        };
        assert_ne!(
            synth_fixture(&spec).unwrap().accompaniment,
            synth_fixture(&other).unwrap().accompaniment
        );
    }

    #[test]
    fn mixture_is_exact_sum() {
        let f = synth_fixture(&FixtureSpec::default()).unwrap();
        assert_eq!(f.mixture.len(), 32000);
        for i in 0..f.mixture.len() {
            let r = f.mixture.samples()[i] - f.voice.samples()[i] - f.accompaniment.samples()[i];
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn rms_balanced() {
        let f = synth_fixture(&FixtureSpec::default()).unwrap();
        let db = 20.0 * (rms(f.voice.samples()) / rms(f.accompaniment.samples())).log10();
        assert!(db.abs() < 3.0, "{db}");
        assert!(f.mixture.samples().iter().all(|v| v.abs() <= 0.9 + 1e-12));
    }

    #[test]
    fn voice_energy_at_harmonics() {
        let spec = FixtureSpec::default();
        let f = synth_fixture(&spec).unwrap();
        let fs = f64::from(spec.sample_rate);
        let mag = magnitude(&stft(&f.voice, 2048, 256).unwrap());
        let bin_hz = fs / 2048.0;
        let (mut total, mut harmonic) = (0.0, 0.0);
        for m in 0..mag.frames() {
            for (k, v) in mag.row(m).iter().enumerate() {
                let e = v * v;
                total += e;
                let freq = k as f64 * bin_hz;
                let near = (1..=spec.partials).any(|p| {
                    let p = p as f64;
                    (freq - p * spec.fundamental).abs() <= p * spec.vibrato_depth + 3.0 * bin_hz
                });
                if near {
                    harmonic += e;
                }
            }
        }
        assert!(harmonic / total >= 0.9, "{}", harmonic / total);
    }

    #[test]
    fn rejects_bad_duration() {
        let spec = FixtureSpec {
            duration_s: 0.0,
            ..FixtureSpec::default()
        };
        assert!(synth_fixture(&spec).is_err());
    }
}
