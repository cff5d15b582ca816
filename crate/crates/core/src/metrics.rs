//! SDR and SIR from a zero-lag orthogonal decomposition of the estimate.
//!
//! The estimate is split into its projection on the target source, the rest
//! of its projection on the span of all sources (interference), and the
//! residual (artifacts). Unlike the campaign toolkit, no distortion filter
//! is allowed, so values here are not comparable to published BSS Eval
//! numbers.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Magnitude cap for degenerate ratios, in dB.
pub const DB_CAP: f64 = 100.0;

/// Sources whose residual after orthogonalization falls below this fraction
/// of their own norm are treated as linearly dependent and skipped.
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
    pub artifacts: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Splits `estimate` against `sources`, with `sources[j]` the target.
pub fn decompose(estimate: &[f64], sources: &[&[f64]], j: usize) -> Result<Decomposition> {
    if j >= sources.len() {
        return Err(Error::InvalidParameter(format!(
            "source index {j} of {}",
            sources.len()
        )));
    }
    if let Some(s) = sources.iter().find(|s| s.len() != estimate.len()) {
        return Err(Error::ShapeMismatch(format!(
            "source of {} samples vs estimate of {}",
            s.len(),
            estimate.len()
        )));
    }
    if energy(sources[j]) == 0.0 {
        return Err(Error::ZeroEnergyTarget);
    }

    // orthonormal basis with the target direction first
    let order = std::iter::once(j).chain((0..sources.len()).filter(|&k| k != j));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(sources.len());
    for k in order {
        let mut v = sources[k].to_vec();
        let norm0 = energy(&v).sqrt();
        for q in &basis {
            let c = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
        let norm = energy(&v).sqrt();
        if norm <= DEPENDENCE_TOL * norm0 || norm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }

    let n = estimate.len();
    let mut target = vec![0.0; n];
    let mut interference = vec![0.0; n];
    for (i, q) in basis.iter().enumerate() {
        let c = dot(estimate, q);
        let dst = if i == 0 { &mut target } else { &mut interference };
        dst.iter_mut().zip(q).for_each(|(d, y)| *d += c * y);
    }
    let artifacts = estimate
        .iter()
        .zip(&target)
        .zip(&interference)
        .map(|((e, t), i)| e - t - i)
        .collect();
    Ok(Decomposition {
        target,
        interference,
        artifacts,
    })
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        return -DB_CAP;
    }
    if den == 0.0 {
        return DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

/// 10·log10(‖s_target‖² / ‖e_interf + e_artif‖²).
pub fn sdr(d: &Decomposition) -> f64 {
    let dist: f64 = d
        .interference
        .iter()
        .zip(&d.artifacts)
        .map(|(i, a)| (i + a) * (i + a))
        .sum();
    ratio_db(energy(&d.target), dist)
}

/// 10·log10(‖s_target‖² / ‖e_interf‖²).
pub fn sir(d: &Decomposition) -> f64 {
    ratio_db(energy(&d.target), energy(&d.interference))
}

/// Median and quartiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Order statistics with linear interpolation between ranks.
pub fn aggregate(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("aggregate of an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(Summary {
        median: quantile(&v, 0.5),
        q1: quantile(&v, 0.25),
        q3: quantile(&v, 0.75),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackScore {
    pub track: String,
    pub sdr: f64,
    pub sir: f64,
}

/// One track to score: the estimate and every true source, target at `target`.
#[derive(Debug, Clone)]
pub struct TrackInput {
    pub track: String,
    pub estimate: Vec<f64>,
    pub sources: Vec<Vec<f64>>,
    pub target: usize,
}

pub fn score_track(input: &TrackInput) -> Result<TrackScore> {
    let refs: Vec<&[f64]> = input.sources.iter().map(Vec::as_slice).collect();
    let d = decompose(&input.estimate, &refs, input.target)?;
    Ok(TrackScore {
        track: input.track.clone(),
        sdr: sdr(&d),
        sir: sir(&d),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tracks: Vec<TrackScore>,
    pub sdr: Summary,
    pub sir: Summary,
}

impl EvalReport {
    pub fn from_scores(tracks: Vec<TrackScore>) -> Result<Self> {
        let sdr: Vec<f64> = tracks.iter().map(|t| t.sdr).collect();
        let sir: Vec<f64> = tracks.iter().map(|t| t.sir).collect();
        Ok(Self {
            sdr: aggregate(&sdr)?,
            sir: aggregate(&sir)?,
            tracks,
        })
    }

    /// Scores every track, in parallel where enabled.
    pub fn evaluate(inputs: &[TrackInput], exec: Exec) -> Result<Self> {
        let scores = exec.map(inputs, score_track).into_iter().collect::<Result<Vec<_>>>()?;
        Self::from_scores(scores)
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>10} {:>10}", "track", "SDR(dB)", "SIR(dB)");
        for t in &self.tracks {
            let _ = writeln!(s, "{:<24} {:>10.3} {:>10.3}", t.track, t.sdr, t.sir);
        }
        let rows = [
            ("median", self.sdr.median, self.sir.median),
            ("q1", self.sdr.q1, self.sir.q1),
            ("q3", self.sdr.q3, self.sir.q3),
        ];
        for (name, a, b) in rows {
            let _ = writeln!(s, "{name:<24} {a:>10.3} {b:>10.3}");
        }
        s
    }

    /// One `track<TAB>metric<TAB>value` line per metric; summaries use the
    /// track name `*`.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for t in &self.tracks {
            let _ = writeln!(s, "{}\tsdr\t{:e}", t.track, t.sdr);
            let _ = writeln!(s, "{}\tsir\t{:e}", t.track, t.sir);
        }
        for (m, sm) in [("sdr", &self.sdr), ("sir", &self.sir)] {
            let _ = writeln!(s, "*\t{m}_median\t{:e}", sm.median);
            let _ = writeln!(s, "*\t{m}_q1\t{:e}", sm.q1);
            let _ = writeln!(s, "*\t{m}_q3\t{:e}", sm.q3);
        }
        s
    }
}
