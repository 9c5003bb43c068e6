//! Independent reference implementations backing the acceptance suite.
//!
//! Everything here is written directly from the mathematical definitions
//! and shares no code with the library: quadratic-cost pairwise AUROC,
//! shifted-exponential scores, explicit hinge sums, elementwise Langevin
//! and SAM arithmetic, and central finite differences. Agreement between
//! these and the optimized library paths is what the oracle criteria
//! certify.

use rand::Rng;

/// Relative error with a unit floor, so tiny values compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Maximum class posterior of one logit row.
pub fn softmax_score(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / sum
}

/// Row logsumexp of one logit row, the negated marginal energy.
pub fn energy_score(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Hybrid hinge sum: square hinge above `m_in` for ID rows, linear hinge
/// below `m_out` for OOD rows.
pub fn margin_sum(energies: &[f64], is_ood: &[bool], m_in: f64, m_out: f64) -> f64 {
    let mut total = 0.0;
    for (&e, &ood) in energies.iter().zip(is_ood) {
        if ood {
            total += f64::max(m_out - e, 0.0);
        } else {
            total += f64::max(e - m_in, 0.0).powi(2);
        }
    }
    total
}

/// One Langevin update `x - (ε²/2)·∇E + ε·z`, elementwise.
pub fn sgld_step(x: &[f64], grad: &[f64], eps: f64, noise: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(grad)
        .zip(noise)
        .map(|((&x, &g), &z)| x - eps * eps / 2.0 * g + eps * z)
        .collect()
}

/// SAM ascent direction `ρ·g/‖g‖₂`, zero for a vanishing gradient.
pub fn sam_perturbation(grads: &[f64], rho: f64) -> Vec<f64> {
    let norm = grads.iter().map(|&g| g * g).sum::<f64>().sqrt();
    if rho == 0.0 || norm < 1e-12 {
        return vec![0.0; grads.len()];
    }
    grads.iter().map(|&g| rho * g / norm).collect()
}

/// AUROC by counting every (ID, OOD) pair; ties count half.
pub fn auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in id {
        for &b in ood {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() as f64 * ood.len() as f64)
}

/// FPR on OOD scores at the ID threshold retaining `tpr`: δ is the sorted
/// ID score at index `floor((1 - tpr)·(n - 1))` and false positives are
/// OOD scores at or above δ.
pub fn fpr_at_tpr(id: &[f64], ood: &[f64], tpr: f64) -> f64 {
    let mut sorted = id.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((1.0 - tpr) * (sorted.len() - 1) as f64).floor() as usize;
    let delta = sorted[idx.min(sorted.len() - 1)];
    ood.iter().filter(|&&s| s >= delta).count() as f64 / ood.len() as f64
}

/// Uniform draws in `[lo, hi)`.
pub fn rand_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + rng.random::<f64>() * (hi - lo)).collect()
}
