//! Generalized KL divergence, the joint training objective, and α-Wiener
//! ground-truth preparation.

use crate::autodiff::{Graph, Var};
use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};

/// Offset keeping logs and divisions finite at zero magnitudes.
pub const EPS: f64 = 1e-12;

fn check_pair(target: &[f64], estimate: &[f64]) -> Result<()> {
    if target.len() != estimate.len() {
        return Err(Error::ShapeMismatch(format!(
            "gkl: {} vs {} values",
            target.len(),
            estimate.len()
        )));
    }
    if target.iter().any(|&v| v < 0.0) {
        return Err(Error::NegativeEntry("gkl target"));
    }
    if estimate.iter().any(|&v| v < 0.0) {
        return Err(Error::NegativeEntry("gkl estimate"));
    }
    Ok(())
}

/// Σ a·ln((a+ε)/(b+ε)) − a + b.
pub fn gkl(target: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(target, estimate)?;
    Ok(target
        .iter()
        .zip(estimate)
        .map(|(&a, &b)| a * ((a + EPS) / (b + EPS)).ln() - a + b)
        .sum())
}

/// gkl + gkl + λ‖enhanced‖².
pub fn joint_loss(target: &[f64], filtered: &[f64], enhanced: &[f64], lambda: f64) -> Result<f64> {
    let sq: f64 = enhanced.iter().map(|v| v * v).sum();
    Ok(gkl(target, filtered)? + gkl(target, enhanced)? + lambda * sq)
}

/// Graph form of [`gkl`] with a constant target.
pub fn gkl_graph(g: &mut Graph<'_>, target: Var, estimate: Var) -> Result<Var> {
    // Σ [a ln(a+ε) − a] does not depend on the estimate
    let offset: f64 = g.value(target).iter().map(|&a| a * (a + EPS).ln() - a).sum();
    let offset = g.constant(vec![offset], 1, 1)?;
    let log_b = g.log_eps(estimate)?;
    let cross = g.hadamard(target, log_b)?;
    let cross = g.sum_all(cross)?;
    let mass = g.sum_all(estimate)?;
    let d = g.sub(mass, cross)?;
    g.add(d, offset)
}

/// Graph form of [`joint_loss`].
pub fn joint_loss_graph(g: &mut Graph<'_>, target: Var, filtered: Var, enhanced: Var, lambda: f64) -> Result<Var> {
    let a = gkl_graph(g, target, filtered)?;
    let b = gkl_graph(g, target, enhanced)?;
    let sq = g.hadamard(enhanced, enhanced)?;
    let sq = g.sum_all(sq)?;
    let pen = g.scale(sq, lambda)?;
    let s = g.add(a, b)?;
    g.add(s, pen)
}

/// `|S_j|^α / (Σ_k |S_k|^α + ε) ⊙ |mix|` for every source j.
pub fn wiener_targets(
    sources: &[&MagnitudeSpectrogram],
    mix: &MagnitudeSpectrogram,
    alpha: f64,
) -> Result<Vec<MagnitudeSpectrogram>> {
    if sources.is_empty() {
        return Err(Error::InvalidParameter(
            "wiener target needs at least one source".into(),
        ));
    }
    if let Some(s) = sources.iter().find(|s| s.values().len() != mix.values().len()) {
        return Err(Error::ShapeMismatch(format!(
            "source grid {}x{} vs mixture {}x{}",
            s.frames(),
            s.bins(),
            mix.frames(),
            mix.bins()
        )));
    }
    let powered: Vec<Vec<f64>> = sources
        .iter()
        .map(|s| s.values().iter().map(|v| v.powf(alpha)).collect())
        .collect();
    let denom: Vec<f64> = (0..mix.values().len())
        .map(|i| powered.iter().map(|p| p[i]).sum::<f64>() + EPS)
        .collect();
    Ok(powered
        .iter()
        .map(|p| {
            let v = p
                .iter()
                .zip(&denom)
                .zip(mix.values())
                .map(|((p, d), m)| p / d * m)
                .collect();
            mix.with_values(v)
        })
        .collect())
}

/// Target for source `j` alone; see [`wiener_targets`].
pub fn wiener_target(
    sources: &[&MagnitudeSpectrogram],
    mix: &MagnitudeSpectrogram,
    j: usize,
    alpha: f64,
) -> Result<MagnitudeSpectrogram> {
    let mut all = wiener_targets(sources, mix, alpha)?;
    if j >= all.len() {
        return Err(Error::InvalidParameter(format!("source index {j} of {}", all.len())));
    }
    Ok(all.swap_remove(j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(v: Vec<f64>, frames: usize, bins: usize) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram::from_grid(v, frames, bins).unwrap()
    }

    #[test]
    fn gkl_values() {
        assert_eq!(gkl(&[1.0, 2.0, 0.0], &[1.0, 2.0, 0.0]).unwrap(), 0.0);
        assert!((gkl(&[2.0], &[1.0]).unwrap() - 0.386294361119890).abs() < 1e-9);
        assert!((gkl(&[0.0], &[1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(gkl(&[-1.0], &[1.0]).is_err());
        assert!(gkl(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gkl_non_negative_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..3.0)).collect();
            let b: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..3.0)).collect();
            assert!(gkl(&a, &b).unwrap() >= -1e-9);
        }
    }

    #[test]
    fn joint_loss_terms() {
        let t = [1.0, 2.0, 3.0];
        assert!((joint_loss(&t, &t, &t, 1e-4).unwrap() - 1e-4 * 14.0).abs() < 1e-15);
        assert_eq!(joint_loss(&t, &t, &t, 0.0).unwrap(), 0.0);
        let f = [0.5, 1.0, 2.5];
        let e = [1.5, 2.5, 2.0];
        let want = gkl(&t, &f).unwrap() + gkl(&t, &e).unwrap() + 0.1 * (2.25 + 6.25 + 4.0);
        assert!((joint_loss(&t, &f, &e, 0.1).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn graph_loss_matches_value_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..2.0)).collect();
        let f = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(0.1..2.0)).collect()).unwrap();
        let e = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(0.1..2.0)).collect()).unwrap();
        let mut g = Graph::new();
        let tv = g.constant(target.clone(), 3, 4).unwrap();
        let (fv, ev) = (g.param(&f), g.param(&e));
        let l = joint_loss_graph(&mut g, tv, fv, ev, 1e-2).unwrap();
        let want = joint_loss(&target, f.data(), e.data(), 1e-2).unwrap();
        assert!((g.scalar_value(l) - want).abs() < 1e-12 * want.abs().max(1.0));

        let r = grad_check(&[f, e], 1e-6, |g, p| {
            let tv = g.constant(target.clone(), 3, 4)?;
            joint_loss_graph(g, tv, p[0], p[1], 1e-2)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn wiener_cases() {
        let mix = grid(vec![1.0, 2.0, 4.0, 0.0], 2, 2);
        let single = wiener_target(&[&mix], &mix, 0, 1.0).unwrap();
        for (a, b) in single.values().iter().zip(mix.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        let half = grid(vec![0.5, 1.0, 2.0, 0.0], 2, 2);
        let t = wiener_target(&[&half, &half], &mix, 0, 1.0).unwrap();
        for (a, b) in t.values().iter().zip(mix.values()) {
            assert!((a - b / 2.0).abs() < 1e-9);
        }
        assert!(wiener_targets(&[], &mix, 1.0).is_err());
    }

    #[test]
    fn wiener_three_sources_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk = |rng: &mut ChaCha8Rng| grid((0..6).map(|_| rng.random_range(0.0..1.0)).collect(), 3, 2);
        let s: Vec<MagnitudeSpectrogram> = (0..3).map(|_| mk(&mut rng)).collect();
        let mix = mk(&mut rng);
        let refs: Vec<&MagnitudeSpectrogram> = s.iter().collect();
        let alpha = 1.3;
        let t = wiener_target(&refs, &mix, 1, alpha).unwrap();
        for i in 0..6 {
            let num = s[1].values()[i].powf(alpha);
            let den: f64 = s.iter().map(|x| x.values()[i].powf(alpha)).sum();
            let want = num / (den + EPS) * mix.values()[i];
            assert!((t.values()[i] - want).abs() < 1e-12);
        }
    }
}
