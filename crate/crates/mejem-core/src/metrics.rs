//! Evaluation metrics: AUROC, FPR at fixed TPR, closed-set precision, and
//! score histograms.
//!
//! Scores are oriented higher-is-more-in-distribution, with ID as the
//! positive class. AUROC uses the Mann-Whitney rank statistic with ½
//! credit for ties; FPR@TPR shares the quantile rule of threshold
//! calibration so reported numbers and deployed thresholds agree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// Headline OOD metrics for one (score kind, OOD dataset) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodMetrics {
    pub auroc: f64,
    pub fpr95: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl OodMetrics {
    pub fn compute(id_scores: &[f64], ood_scores: &[f64]) -> Result<OodMetrics> {
        Ok(OodMetrics {
            auroc: auroc(id_scores, ood_scores)?,
            fpr95: fpr_at_tpr(id_scores, ood_scores, 0.95)?,
            n_id: id_scores.len(),
            n_ood: ood_scores.len(),
        })
    }
}

/// Probability that a random ID score exceeds a random OOD score, ties ½.
///
/// Computed via midranks of the pooled sample in `O(n log n)`.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores("auroc", id_scores, ood_scores)?;
    let n_id = id_scores.len();
    let n_ood = ood_scores.len();
    let mut pooled: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    // Midranks: every member of a tie run gets the run's average 1-based rank.
    let mut id_rank_sum = 0.0;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start;
        while end + 1 < pooled.len() && pooled[end + 1].0 == pooled[start].0 {
            end += 1;
        }
        let midrank = (start + end + 2) as f64 / 2.0;
        for item in &pooled[start..=end] {
            if item.1 {
                id_rank_sum += midrank;
            }
        }
        start = end + 1;
    }

    let u = id_rank_sum - (n_id * (n_id + 1)) as f64 / 2.0;
    Ok(u / (n_id as f64 * n_ood as f64))
}

/// False-positive rate on OOD scores at the threshold that keeps `tpr` of
/// the ID scores: δ is the `(1 - tpr)` lower quantile of ID scores and the
/// result is the fraction of OOD scores at or above δ.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<f64> {
    check_scores("fpr_at_tpr", id_scores, ood_scores)?;
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(Error::Config(format!("TPR must be in (0, 1], got {tpr}")));
    }
    let sorted = numeric::sorted_copy(id_scores);
    let delta = numeric::quantile_lower(&sorted, 1.0 - tpr);
    let false_positives = ood_scores.iter().filter(|&&s| s >= delta).count();
    Ok(false_positives as f64 / ood_scores.len() as f64)
}

/// Fraction of exact prediction matches.
pub fn closed_set_precision<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!(
            "{} predictions but {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Metric("precision of an empty batch".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Histogram request: bin count over the pooled score range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_count: usize,
}

impl Default for HistogramSpec {
    fn default() -> HistogramSpec {
        HistogramSpec { bin_count: 50 }
    }
}

/// Binned ID/OOD score counts over shared edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bin_count + 1` ascending edges spanning the pooled range.
    pub edges: Vec<f64>,
    pub count_id: Vec<u64>,
    pub count_ood: Vec<u64>,
}

/// Bins both score lists over the pooled min/max range. The maximum score
/// lands in the last bin; a degenerate (constant) range puts everything in
/// bin zero.
pub fn histogram(id_scores: &[f64], ood_scores: &[f64], spec: &HistogramSpec) -> Result<Histogram> {
    if spec.bin_count == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    check_scores("histogram", id_scores, ood_scores)?;
    let pooled = id_scores.iter().chain(ood_scores);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &s in pooled {
        lo = lo.min(s);
        hi = hi.max(s);
    }

    let bins = spec.bin_count;
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let bin_of = |s: f64| -> usize {
        if width == 0.0 {
            return 0;
        }
        (((s - lo) / width) as usize).min(bins - 1)
    };

    let mut count_id = vec![0u64; bins];
    let mut count_ood = vec![0u64; bins];
    for &s in id_scores {
        count_id[bin_of(s)] += 1;
    }
    for &s in ood_scores {
        count_ood[bin_of(s)] += 1;
    }
    Ok(Histogram {
        edges,
        count_id,
        count_ood,
    })
}

fn check_scores(op: &str, id_scores: &[f64], ood_scores: &[f64]) -> Result<()> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::Metric(format!(
            "{op} needs non-empty ID and OOD score lists ({} ID, {} OOD)",
            id_scores.len(),
            ood_scores.len()
        )));
    }
    if id_scores
        .iter()
        .chain(ood_scores)
        .any(|s| !s.is_finite())
    {
        return Err(Error::Metric(format!("{op} received a non-finite score")));
    }
    Ok(())
}
