//! OOD scores, threshold calibration, and open-set prediction.
//!
//! Both scores are oriented so that higher means more in-distribution: the
//! softmax score is the maximum class posterior, the energy score is
//! `logsumexp` of the logits (the negated marginal energy). The rejection
//! threshold δ is the `(1 - target_tpr)` lower quantile of ID validation
//! scores, so at least `target_tpr` of ID samples score at or above δ.
//! Open-set prediction rejects to the extra class index K when the score
//! falls strictly below δ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::class_posteriors;
use crate::numeric;
use crate::tensor::Tensor;

/// Minimum number of ID validation scores accepted for calibration.
pub const MIN_CALIBRATION_SAMPLES: usize = 20;

/// Which score a threshold applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Softmax,
    Energy,
}

impl ScoreKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreKind::Softmax => "softmax",
            ScoreKind::Energy => "energy",
        }
    }
}

/// A calibrated rejection threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub delta: f64,
    pub score_kind: ScoreKind,
    pub target_tpr: f64,
}

/// Scores and predictions for one sample, tagged with its true origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub softmax_score: f64,
    pub energy_score: f64,
    pub argmax_class: usize,
    pub is_ood: bool,
}

/// Maximum class posterior per row; in `[1/K, 1]`.
pub fn softmax_score(logits: &Tensor) -> Result<Vec<f64>> {
    let posts = class_posteriors(logits)?;
    let (n, _) = posts.dims2()?;
    Ok((0..n)
        .map(|i| posts.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Row `logsumexp` of the logits, the negated marginal energy.
pub fn energy_score(logits: &Tensor) -> Result<Vec<f64>> {
    let (n, k) = logits.dims2()?;
    if k == 0 {
        return Err(Error::Contract("logit matrix has zero classes".into()));
    }
    Ok((0..n).map(|i| numeric::logsumexp(logits.row(i))).collect())
}

/// Scores every row of a logit matrix against its origin flag.
pub fn score_samples(logits: &Tensor, is_ood: &[bool]) -> Result<Vec<ScoredSample>> {
    let (n, _) = logits.dims2()?;
    if is_ood.len() != n {
        return Err(Error::Contract(format!(
            "{n} logit rows but {} origin flags",
            is_ood.len()
        )));
    }
    let softmax = softmax_score(logits)?;
    let energy = energy_score(logits)?;
    Ok((0..n)
        .map(|i| ScoredSample {
            softmax_score: softmax[i],
            energy_score: energy[i],
            argmax_class: numeric::argmax(logits.row(i)),
            is_ood: is_ood[i],
        })
        .collect())
}

/// Calibrates δ as the `(1 - target_tpr)` lower quantile of ID validation
/// scores. Needs at least [`MIN_CALIBRATION_SAMPLES`] scores.
pub fn calibrate_threshold(
    id_val_scores: &[f64],
    score_kind: ScoreKind,
    target_tpr: f64,
) -> Result<Threshold> {
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::Config(format!(
            "target TPR must be in (0, 1], got {target_tpr}"
        )));
    }
    if id_val_scores.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::Data(format!(
            "threshold calibration needs at least {MIN_CALIBRATION_SAMPLES} ID validation scores, got {}",
            id_val_scores.len()
        )));
    }
    if id_val_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data(
            "non-finite score in threshold calibration".into(),
        ));
    }
    let sorted = numeric::sorted_copy(id_val_scores);
    let delta = numeric::quantile_lower(&sorted, 1.0 - target_tpr);
    Ok(Threshold {
        delta,
        score_kind,
        target_tpr,
    })
}

/// Open-set prediction per row: the argmax class when the row's score is
/// at or above δ, otherwise the reject class K. Argmax ties resolve to the
/// lowest class index.
pub fn predict_open_set(logits: &Tensor, threshold: &Threshold) -> Result<Vec<usize>> {
    let (n, k) = logits.dims2()?;
    let scores = match threshold.score_kind {
        ScoreKind::Softmax => softmax_score(logits)?,
        ScoreKind::Energy => energy_score(logits)?,
    };
    Ok((0..n)
        .map(|i| {
            if scores[i] < threshold.delta {
                k
            } else {
                numeric::argmax(logits.row(i))
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::testkit::assert_close;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(n: usize, k: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(n, k, (0..n * k).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect())
            .unwrap()
    }

    #[test]
    fn softmax_score_known_values() {
        let logits = Tensor::matrix(1, 5, vec![2.0; 5]).unwrap();
        assert_close(softmax_score(&logits).unwrap()[0], 0.2, 1e-12);

        let logits = Tensor::matrix(1, 3, vec![10.0, 0.0, 0.0]).unwrap();
        assert_close(softmax_score(&logits).unwrap()[0], 0.999_909_208_384_341_8, 1e-9);
    }

    #[test]
    fn softmax_score_is_shift_invariant_and_bounded() {
        let logits = random_logits(40, 4, 1);
        let scores = softmax_score(&logits).unwrap();
        let shifted =
            Tensor::matrix(40, 4, logits.data().iter().map(|v| v + 3.7).collect()).unwrap();
        let scores2 = softmax_score(&shifted).unwrap();
        for (a, b) in scores.iter().zip(&scores2) {
            assert_close(*a, *b, 1e-12);
        }
        for s in scores {
            assert!((0.25..=1.0).contains(&s));
        }
    }

    #[test]
    fn energy_score_known_values_and_shift() {
        let logits = Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        let scores = energy_score(&logits).unwrap();
        assert_close(scores[0], 3f64.ln(), 1e-12);
        assert_close(scores[1], 3.407_605_964_444_381, 1e-12);

        let shifted =
            Tensor::matrix(2, 3, logits.data().iter().map(|v| v + 2.0).collect()).unwrap();
        let scores2 = energy_score(&shifted).unwrap();
        for (a, b) in scores.iter().zip(&scores2) {
            assert_close(b - a, 2.0, 1e-12);
        }
    }

    #[test]
    fn energy_score_exceeds_max_logit() {
        let logits = random_logits(50, 3, 2);
        let scores = energy_score(&logits).unwrap();
        for (i, s) in scores.iter().enumerate() {
            let max = logits.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(*s > max);
        }
    }

    #[test]
    fn calibration_matches_quantile_oracle() {
        let scores: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let t = calibrate_threshold(&scores, ScoreKind::Energy, 0.95).unwrap();
        assert_eq!(t.delta, 5.0);
        let kept = scores.iter().filter(|&&s| s >= t.delta).count();
        assert!(kept >= 95);

        let flat = vec![7.5; 30];
        let t = calibrate_threshold(&flat, ScoreKind::Softmax, 0.95).unwrap();
        assert_eq!(t.delta, 7.5);

        let t = calibrate_threshold(&scores, ScoreKind::Energy, 1.0).unwrap();
        assert_eq!(t.delta, 1.0);
    }

    #[test]
    fn calibration_rejects_small_samples() {
        let scores = vec![1.0; 19];
        assert!(matches!(
            calibrate_threshold(&scores, ScoreKind::Energy, 0.95),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn rejection_rate_respects_quantile_bound() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..137).map(|_| rng.random::<f64>() * 10.0).collect();
            let t = calibrate_threshold(&scores, ScoreKind::Energy, 0.95).unwrap();
            let rejected = scores.iter().filter(|&&s| s < t.delta).count() as f64;
            let bound = 1.0 - t.target_tpr + 1.0 / scores.len() as f64;
            assert!(rejected / scores.len() as f64 <= bound);
        }
    }

    #[test]
    fn boundary_score_is_accepted() {
        let logits = Tensor::matrix(2, 2, vec![1.0, 0.0, 5.0, 0.0]).unwrap();
        let scores = energy_score(&logits).unwrap();
        let t = Threshold {
            delta: scores[0],
            score_kind: ScoreKind::Energy,
            target_tpr: 0.95,
        };
        let labels = predict_open_set(&logits, &t).unwrap();
        assert_eq!(labels, vec![0, 0]);

        let all_reject = Threshold {
            delta: f64::INFINITY,
            score_kind: ScoreKind::Energy,
            target_tpr: 0.95,
        };
        let labels = predict_open_set(&logits, &all_reject).unwrap();
        assert_eq!(labels, vec![2, 2]);
    }

    #[test]
    fn argmax_agrees_between_scores_and_logits() {
        let params = ModelParams::init_mlp(&[2, 8, 4], 33).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::matrix(
            30,
            2,
            (0..60).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect(),
        )
        .unwrap();
        let logits = params.logits(&x).unwrap();
        let samples = score_samples(&logits, &vec![false; 30]).unwrap();
        let posts = class_posteriors(&logits).unwrap();
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.argmax_class, numeric::argmax(posts.row(i)));
            assert_close(s.softmax_score, posts.row(i)[s.argmax_class], 1e-12);
        }
    }

    #[test]
    fn single_class_softmax_score_is_constant_one() {
        let logits = Tensor::matrix(3, 1, vec![-5.0, 0.0, 9.0]).unwrap();
        for s in softmax_score(&logits).unwrap() {
            assert_eq!(s, 1.0);
        }
        // Rejection can then only come from the energy path.
        let t = Threshold {
            delta: 0.5,
            score_kind: ScoreKind::Softmax,
            target_tpr: 0.95,
        };
        assert_eq!(predict_open_set(&logits, &t).unwrap(), vec![0, 0, 0]);
    }
}
