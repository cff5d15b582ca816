use crate::error::{Error, Result};

/// Optimizer and model-shape settings for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub lambda_l2: f64,
    /// Epochs without strict improvement tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Frames per segment (T).
    pub frames: usize,
    /// Context frames per side (L).
    pub context: usize,
    /// Bin count (N); taken from the data when unset.
    pub bins: Option<usize>,
    /// Encoder/decoder width; must equal N when set.
    pub hidden: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            clip_norm: 0.35,
            lambda_l2: 1e-4,
            patience: 2,
            max_epochs: 100,
            seed: 0,
            frames: 18,
            context: 3,
            bins: None,
            hidden: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate >= 0.0),
            ("batch_size", self.batch_size > 0),
            ("clip_norm", self.clip_norm > 0.0),
            ("lambda_l2", self.lambda_l2 >= 0.0),
            ("patience", self.patience >= 1),
            ("max_epochs", self.max_epochs >= 1),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(Error::Config(format!("{name} out of range")));
        }
        if self.frames <= 2 * self.context {
            return Err(Error::ContextExceedsSegment {
                frames: self.frames,
                context: self.context,
            });
        }
        if let (Some(n), Some(h)) = (self.bins, self.hidden) {
            if n != h {
                return Err(Error::Config(format!(
                    "hidden width {h} must equal bins {n} (residual and mask shapes)"
                )));
            }
        }
        Ok(())
    }

    /// Sets one field from its key. Returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "lambda_l2" => self.lambda_l2 = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "frames" | "T" => self.frames = parse(key, value)?,
            "context" | "L" => self.context = parse(key, value)?,
            "bins" | "N" => self.bins = Some(parse(key, value)?),
            "hidden" => self.hidden = Some(parse(key, value)?),
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = vec![
            ("learning_rate", format!("{:e}", self.learning_rate)),
            ("batch_size", self.batch_size.to_string()),
            ("clip_norm", format!("{:e}", self.clip_norm)),
            ("lambda_l2", format!("{:e}", self.lambda_l2)),
            ("patience", self.patience.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("frames", self.frames.to_string()),
            ("context", self.context.to_string()),
        ];
        if let Some(n) = self.bins {
            v.push(("bins", n.to_string()));
        }
        if let Some(h) = self.hidden {
            v.push(("hidden", h.to_string()));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_values() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.clip_norm, 0.35);
        assert_eq!(c.lambda_l2, 1e-4);
        assert_eq!((c.frames, c.context, c.patience), (18, 3, 2));
        c.validate().unwrap();
    }

    #[test]
    fn pairs_round_trip() {
        let mut c = TrainConfig {
            learning_rate: 3.5e-4,
            bins: Some(65),
            hidden: Some(65),
            seed: 99,
            ..Default::default()
        };
        c.clip_norm = 0.123456789;
        let mut d = TrainConfig::default();
        for (k, v) in c.to_pairs() {
            assert!(d.set(k, &v).unwrap());
        }
        assert_eq!(c, d);
        assert!(!d.set("nope", "1").unwrap());
        assert!(d.set("batch_size", "x").is_err());
    }

    #[test]
    fn invalid_configs() {
        let c = TrainConfig {
            frames: 6,
            context: 3,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            bins: Some(8),
            hidden: Some(16),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            patience: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
