//! Overlapping context segments over the frames of a magnitude spectrogram.
//!
//! The spectrogram is left-padded with `L` zero frames and cut into segments
//! of `T` frames whose starts advance by `T - 2L`. Trimming `L` frames from
//! each side of every segment then tiles the original frames exactly once.

use crate::dsp::{MagnitudeSpectrogram, StftMeta};
use crate::error::{Error, Result};

/// Segment geometry for one spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentLayout {
    /// Frames per segment (T).
    pub frames: usize,
    /// Context frames discarded on each side (L).
    pub context: usize,
    /// Frames of the original spectrogram (M).
    pub orig_frames: usize,
    /// Frequency bins (N).
    pub bins: usize,
}

impl SegmentLayout {
    pub fn new(frames: usize, context: usize, orig_frames: usize, bins: usize) -> Result<Self> {
        check_context(frames, context)?;
        Ok(Self {
            frames,
            context,
            orig_frames,
            bins,
        })
    }

    /// Frames kept after trimming, T' = T - 2L. Also the segment hop.
    pub fn trimmed(&self) -> usize {
        self.frames - 2 * self.context
    }

    /// B = ceil(M / (T - 2L)).
    pub fn segments(&self) -> usize {
        self.orig_frames.div_ceil(self.trimmed())
    }

    /// Start of segment `b` (0-based) in the padded frame sequence.
    pub fn start(&self, b: usize) -> usize {
        b * self.trimmed()
    }
}

fn check_context(frames: usize, context: usize) -> Result<()> {
    if frames <= 2 * context {
        return Err(Error::ContextExceedsSegment { frames, context });
    }
    Ok(())
}

/// B×T×N tensor of overlapping magnitude segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTensor {
    data: Vec<f64>,
    layout: SegmentLayout,
    meta: StftMeta,
}

impl SegmentTensor {
    pub fn layout(&self) -> SegmentLayout {
        self.layout
    }

    pub fn meta(&self) -> StftMeta {
        self.meta
    }

    pub fn len(&self) -> usize {
        self.layout.segments()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Segment `b` as a row-major T×N slice.
    pub fn segment(&self, b: usize) -> &[f64] {
        let size = self.layout.frames * self.layout.bins;
        &self.data[b * size..(b + 1) * size]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Builds the segment tensor from a magnitude spectrogram.
pub fn tensorize(mag: &MagnitudeSpectrogram, frames: usize, context: usize) -> Result<SegmentTensor> {
    let layout = SegmentLayout::new(frames, context, mag.frames(), mag.bins())?;
    let n = layout.bins;
    let b_count = layout.segments();
    let mut data = vec![0.0; b_count * frames * n];
    for (b, seg) in data.chunks_exact_mut(frames * n).enumerate() {
        let start = layout.start(b);
        for (t, row) in seg.chunks_exact_mut(n).enumerate() {
            // padded index p maps to original frame p - L
            let p = start + t;
            if p < context || p - context >= layout.orig_frames {
                continue;
            }
            row.copy_from_slice(mag.row(p - context));
        }
    }
    Ok(SegmentTensor {
        data,
        layout,
        meta: mag.meta(),
    })
}

/// Drops `L` rows from each end of a T×N segment.
pub fn context_trim(segment: &[f64], bins: usize, context: usize) -> Result<Vec<f64>> {
    if bins == 0 || !segment.len().is_multiple_of(bins) {
        return Err(Error::ShapeMismatch(format!(
            "segment of {} values is not a multiple of {bins} bins",
            segment.len()
        )));
    }
    let frames = segment.len() / bins;
    check_context(frames, context)?;
    Ok(segment[context * bins..(frames - context) * bins].to_vec())
}

/// Concatenates per-segment T'×N estimates back into an M×N spectrogram.
pub fn flatten(estimates: &[Vec<f64>], layout: SegmentLayout, meta: StftMeta) -> Result<MagnitudeSpectrogram> {
    let seg_len = layout.trimmed() * layout.bins;
    if let Some(bad) = estimates.iter().find(|e| e.len() != seg_len) {
        return Err(Error::ShapeMismatch(format!(
            "segment estimate has {} values, expected {seg_len}",
            bad.len()
        )));
    }
    let have = estimates.len() * layout.trimmed();
    if have < layout.orig_frames {
        return Err(Error::InsufficientCoverage {
            have,
            need: layout.orig_frames,
        });
    }
    let mut values: Vec<f64> = estimates.iter().flatten().copied().collect();
    values.truncate(layout.orig_frames * layout.bins);
    if meta.bins() == layout.bins {
        MagnitudeSpectrogram::new(values, layout.orig_frames, meta)
    } else {
        MagnitudeSpectrogram::from_grid(values, layout.orig_frames, layout.bins)
    }
}
