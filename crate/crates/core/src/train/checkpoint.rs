//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "SKF1" | u32 version | u32 len + UTF-8 key=value lines
//! | u64 epoch | f64 best_loss | u32 tensor count
//! | per tensor: u32 len + UTF-8 name, u32 rank, u64 dims.., f64 values..
//! ```

use std::path::Path;

use super::TrainConfig;
use crate::autodiff::Tensor;
use crate::dsp::StftSettings;
use crate::error::{Error, Result};
use crate::layers::{ModelHyper, ModelParams};

pub const MAGIC: &[u8; 4] = b"SKF1";
pub const FORMAT_VERSION: u32 = 1;

/// Persisted weights plus the settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub config: TrainConfig,
    pub stft: StftSettings,
    /// Epoch (1-based) the weights come from.
    pub epoch: usize,
    pub best_loss: f64,
}

impl Checkpoint {
    fn config_block(&self) -> String {
        let h = self.model.hyper;
        let mut s = String::new();
        for (k, v) in self.config.to_pairs() {
            s.push_str(&format!("{k}={v}\n"));
        }
        for (k, v) in [
            ("model.bins", h.bins),
            ("model.frames", h.frames),
            ("model.context", h.context),
            ("stft.n_fft", self.stft.n_fft),
            ("stft.hop", self.stft.hop),
        ] {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let block = self.config_block();
        out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        out.extend_from_slice(block.as_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.best_loss.to_le_bytes());
        let tensors = self.model.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in ModelParams::tensor_names().iter().zip(tensors) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let block =
            std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;

        let mut config = TrainConfig::default();
        let mut dims = [None::<usize>; 5];
        const DIM_KEYS: [&str; 5] = ["model.bins", "model.frames", "model.context", "stft.n_fft", "stft.hop"];
        for line in block.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
            if let Some(i) = DIM_KEYS.iter().position(|d| *d == k) {
                dims[i] = Some(v.parse().map_err(|_| Error::Checkpoint(format!("bad {k}")))?);
            } else if !config.set(k, v)? {
                return Err(Error::Checkpoint(format!("unknown config key {k}")));
            }
        }
        let [Some(bins), Some(frames), Some(context), Some(n_fft), Some(hop)] = dims else {
            return Err(Error::Checkpoint("missing model or stft dimensions".into()));
        };
        let epoch = r.u64()? as usize;
        let best_loss = r.f64()?;

        let count = r.u32()? as usize;
        let names = ModelParams::tensor_names();
        if count != names.len() {
            return Err(Error::Checkpoint(format!("{count} tensors, expected {}", names.len())));
        }
        let mut tensors = Vec::with_capacity(count);
        for want in &names {
            let len = r.u32()? as usize;
            let name = r.take(len)?;
            if name != want.as_bytes() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} where {want} expected",
                    String::from_utf8_lossy(name)
                )));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let model = ModelParams::from_tensors(ModelHyper { bins, frames, context }, tensors)?;
        Ok(Self {
            model,
            config,
            stft: StftSettings { n_fft, hop },
            epoch,
            best_loss,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
