//! Flat `key = value` run configuration shared by every command.

use std::path::Path;

use crate::dsp::StftSettings;
use crate::error::{Error, Result};
use crate::separation::check_alpha;
use crate::train::TrainConfig;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "SKF_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub stft: StftSettings,
    /// Mask exponent for single-model separation.
    pub alpha: f64,
    pub sample_rate: u32,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            stft: StftSettings::default(),
            alpha: 1.7,
            sample_rate: 44100,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl Settings {
    /// Parses the text format. Blank lines and `#` comments are skipped;
    /// keys not set keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_fft" => self.stft.n_fft = parse(key, value)?,
            "hop" => self.stft.hop = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "sample_rate" => self.sample_rate = parse(key, value)?,
            _ => {
                if !self.train.set(key, value)? {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Applies `SKF_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.train.seed = parse(SEED_ENV, v)?;
        }
        Ok(())
    }

    /// N: explicit when configured, otherwise n_fft/2 + 1.
    pub fn bins(&self) -> usize {
        self.train.bins.unwrap_or(self.stft.bins())
    }

    pub fn validate(&self) -> Result<()> {
        if self.stft.n_fft < 2 || self.stft.hop == 0 || self.stft.hop > self.stft.n_fft {
            return Err(Error::Config(format!(
                "n_fft {} / hop {} out of range",
                self.stft.n_fft, self.stft.hop
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if self.bins() != self.stft.bins() {
            return Err(Error::Config(format!(
                "bins {} disagree with n_fft {} (expects {})",
                self.bins(),
                self.stft.n_fft,
                self.stft.bins()
            )));
        }
        check_alpha(self.alpha)?;
        self.train.validate()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "n_fft = {}\nhop = {}\nalpha = {}\nsample_rate = {}\n",
            self.stft.n_fft, self.stft.hop, self.alpha, self.sample_rate
        );
        for (k, v) in self.train.to_pairs() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
