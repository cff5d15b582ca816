//! WAV file I/O and channel downmixing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

/// Dequantization scale for 16-bit PCM.
const PCM16_SCALE: f64 = 32768.0;

/// De-interleaved audio with any channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannel {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl MultiChannel {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidParameter("at least one channel required".into()));
        }
        if channels.iter().any(|c| c.len() != channels[0].len()) {
            return Err(Error::ShapeMismatch("channels differ in length".into()));
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<AudioBuffer> for MultiChannel {
    fn from(buf: AudioBuffer) -> Self {
        let sample_rate = buf.sample_rate();
        Self {
            channels: vec![buf.into_samples()],
            sample_rate,
        }
    }
}

/// Per-sample mean over channels.
pub fn downmix(input: &MultiChannel) -> Result<AudioBuffer> {
    let k = input.channel_count() as f64;
    let mono = (0..input.len())
        .map(|i| input.channels.iter().map(|c| c[i]).sum::<f64>() / k)
        .collect();
    AudioBuffer::new(mono, input.sample_rate)
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads 16-bit PCM or 32-bit float WAV. Any read error discards the whole
/// buffer.
pub fn wav_read(path: impl AsRef<Path>) -> Result<MultiChannel> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        (fmt, bits) => {
            return Err(Error::Wav {
                path: path.to_path_buf(),
                source: hound::Error::FormatError(match fmt {
                    SampleFormat::Int if bits != 16 => "unsupported PCM bit depth (need 16)",
                    _ => "unsupported float bit depth (need 32)",
                }),
            })
        }
    };
    let n_ch = usize::from(spec.channels);
    if n_ch == 0 || !interleaved.len().is_multiple_of(n_ch) {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            source: hound::Error::FormatError("sample count not a multiple of channel count"),
        });
    }
    let frames = interleaved.len() / n_ch;
    let channels = (0..n_ch)
        .map(|c| (0..frames).map(|i| interleaved[i * n_ch + c]).collect())
        .collect();
    MultiChannel::new(channels, spec.sample_rate)
}

/// Reads a file and averages its channels.
pub fn wav_read_mono(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    downmix(&wav_read(path)?)
}

/// Writes mono 32-bit float WAV.
pub fn wav_write(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for &s in buf.samples() {
        w.write_sample(s as f32).map_err(wav_err(path))?;
    }
    w.finalize().map_err(wav_err(path))
}
