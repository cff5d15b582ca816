//! Framing, windowing, STFT analysis and overlap-add synthesis.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Floor applied to the accumulated squared-window sum during synthesis.
pub const WINDOW_SUM_FLOOR: f64 = 1e-12;

/// Mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Transform settings shared by every spectrogram derived from one signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftMeta {
    pub n_fft: usize,
    pub hop: usize,
    pub orig_len: usize,
}

impl StftMeta {
    /// Number of non-redundant frequency bins.
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Analysis parameters chosen by the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftSettings {
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for StftSettings {
    fn default() -> Self {
        Self { n_fft: 2048, hop: 256 }
    }
}

impl StftSettings {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Windowed frames, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    data: Vec<f64>,
    frames: usize,
    meta: StftMeta,
}

impl FrameMatrix {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn meta(&self) -> StftMeta {
        self.meta
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let n = self.meta.n_fft;
        &self.data[m * n..(m + 1) * n]
    }
}

/// M×N complex grid, row-major over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    values: Vec<Complex64>,
    frames: usize,
    meta: StftMeta,
}

impl ComplexSpectrogram {
    pub fn new(values: Vec<Complex64>, frames: usize, meta: StftMeta) -> Result<Self> {
        check_grid(values.len(), frames, meta)?;
        Ok(Self { values, frames, meta })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.meta.bins()
    }

    pub fn meta(&self) -> StftMeta {
        self.meta
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        let n = self.bins();
        &self.values[m * n..(m + 1) * n]
    }

    pub fn conj(&self) -> Self {
        Self {
            values: self.values.iter().map(|c| c.conj()).collect(),
            ..*self
        }
    }
}

/// M×N grid of non-negative reals, row-major over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    values: Vec<f64>,
    frames: usize,
    meta: StftMeta,
}

impl MagnitudeSpectrogram {
    pub fn new(values: Vec<f64>, frames: usize, meta: StftMeta) -> Result<Self> {
        check_grid(values.len(), frames, meta)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("magnitude spectrogram"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::NegativeEntry("magnitude spectrogram"));
        }
        Ok(Self { values, frames, meta })
    }

    /// Grid with arbitrary bin count and no transform behind it.
    pub fn from_grid(values: Vec<f64>, frames: usize, bins: usize) -> Result<Self> {
        let meta = StftMeta {
            n_fft: 2 * bins.saturating_sub(1),
            hop: 1,
            orig_len: frames,
        };
        if meta.bins() != bins {
            return Err(Error::InvalidParameter(format!("bin count {bins} has no even n_fft")));
        }
        Self::new(values, frames, meta)
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            values: vec![0.0; other.values.len()],
            ..*other
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.meta.bins()
    }

    pub fn meta(&self) -> StftMeta {
        self.meta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let n = self.bins();
        &self.values[m * n..(m + 1) * n]
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            frames: self.frames,
            meta: self.meta,
        }
    }
}

fn check_grid(len: usize, frames: usize, meta: StftMeta) -> Result<()> {
    if frames == 0 {
        return Err(Error::InvalidParameter("spectrogram needs at least one frame".into()));
    }
    if len != frames * meta.bins() {
        return Err(Error::ShapeMismatch(format!(
            "{len} values for {frames}x{} grid",
            meta.bins()
        )));
    }
    Ok(())
}

/// Periodic Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    let step = std::f64::consts::TAU / n as f64;
    (0..n).map(|i| 0.54 - 0.46 * (step * i as f64).cos()).collect()
}

/// Slices `x` into `ceil(len/hop)` Hamming-windowed frames of `n_fft` samples.
pub fn frame_signal(x: &AudioBuffer, n_fft: usize, hop: usize) -> Result<FrameMatrix> {
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    if n_fft == 0 || hop == 0 || hop > n_fft {
        return Err(Error::InvalidParameter(format!(
            "need n_fft >= 1 and 1 <= hop <= n_fft, got n_fft={n_fft} hop={hop}"
        )));
    }
    let len = x.len();
    let frames = len.div_ceil(hop);
    let window = hamming(n_fft);
    let mut data = vec![0.0; frames * n_fft];
    for (m, frame) in data.chunks_exact_mut(n_fft).enumerate() {
        let start = m * hop;
        let end = (start + n_fft).min(len);
        for ((dst, &s), &w) in frame.iter_mut().zip(&x.samples()[start..end]).zip(&window) {
            *dst = s * w;
        }
    }
    Ok(FrameMatrix {
        data,
        frames,
        meta: StftMeta {
            n_fft,
            hop,
            orig_len: len,
        },
    })
}

/// DFT of every frame, keeping bins `0..=n_fft/2`.
pub fn stft_analysis(frames: &FrameMatrix) -> ComplexSpectrogram {
    let n_fft = frames.meta.n_fft;
    let bins = frames.meta.bins();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Vec::with_capacity(frames.frames * bins);
    for m in 0..frames.frames {
        for (b, &s) in buf.iter_mut().zip(frames.row(m)) {
            *b = Complex64::new(s, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        values.extend_from_slice(&buf[..bins]);
    }
    ComplexSpectrogram {
        values,
        frames: frames.frames,
        meta: frames.meta,
    }
}

/// Inverse DFT per frame, synthesis windowing, overlap-add and
/// squared-window normalization, truncated to the original length.
pub fn stft_synthesis(spec: &ComplexSpectrogram, sample_rate: u32) -> Result<AudioBuffer> {
    let StftMeta { n_fft, hop, orig_len } = spec.meta;
    if hop == 0 || hop > n_fft {
        return Err(Error::NonInvertible(format!("hop {hop} with n_fft {n_fft}")));
    }
    let bins = spec.bins();
    let window = hamming(n_fft);
    let total = (spec.frames - 1) * hop + n_fft;
    let mut out = vec![0.0; total.max(orig_len)];
    let mut wsum = vec![0.0; out.len()];
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let scale = 1.0 / n_fft as f64;
    for m in 0..spec.frames {
        let row = spec.row(m);
        buf[..bins].copy_from_slice(row);
        for k in bins..n_fft {
            buf[k] = buf[n_fft - k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = m * hop;
        for (i, (c, &w)) in buf.iter().zip(&window).enumerate() {
            out[start + i] += c.re * scale * w;
            wsum[start + i] += w * w;
        }
    }
    if let Some(n) = wsum[..orig_len].iter().position(|&w| w < WINDOW_SUM_FLOOR) {
        return Err(Error::NonInvertible(format!("zero window sum at sample {n}")));
    }
    out.truncate(orig_len);
    for (o, w) in out.iter_mut().zip(&wsum) {
        *o /= w.max(WINDOW_SUM_FLOOR);
    }
    AudioBuffer::new(out, sample_rate)
}

/// Element-wise complex modulus.
pub fn magnitude(spec: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    MagnitudeSpectrogram {
        values: spec.values.iter().map(|c| c.norm()).collect(),
        frames: spec.frames,
        meta: spec.meta,
    }
}

/// Frame, window, and analyse in one call.
pub fn stft(x: &AudioBuffer, n_fft: usize, hop: usize) -> Result<ComplexSpectrogram> {
    Ok(stft_analysis(&frame_signal(x, n_fft, hop)?))
}
