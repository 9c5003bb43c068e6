//! Synthetic dataset generation, feature-CSV ingestion, and normalization.
//!
//! The synthetic benchmark lives in a low-dimensional feature space: ID
//! classes are isotropic Gaussians centered on a circle, auxiliary
//! training outliers fill a surrounding box with an exclusion disk around
//! the ID mass, and evaluation OOD samples sit on a distant noisy ring.
//! Auxiliary and evaluation outliers are deliberately different
//! distributions: the margin must generalize to outliers it never saw.
//!
//! All generators are pure functions of their arguments; equal seeds give
//! byte-equal outputs. The CSV format (`feature_0,...,feature_{d-1},label`
//! with label -1 reserved for outliers) round-trips `f64` values exactly.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Label reserved for unlabeled outlier rows.
pub const OUTLIER_LABEL: i64 = -1;

/// Which role a batch plays in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    IdTrain,
    IdVal,
    IdTest,
    AuxOod,
    OodTest,
}

impl Split {
    /// True for the in-distribution splits that carry class labels.
    pub fn is_id(&self) -> bool {
        matches!(self, Split::IdTrain | Split::IdVal | Split::IdTest)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Split::IdTrain => "id_train",
            Split::IdVal => "id_val",
            Split::IdTest => "id_test",
            Split::AuxOod => "aux_ood",
            Split::OodTest => "ood_test",
        }
    }
}

/// A feature matrix with labels and a split tag. ID splits carry labels in
/// `[0, K)`; outlier splits carry [`OUTLIER_LABEL`] everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBatch {
    pub features: Tensor,
    pub labels: Vec<i64>,
    pub split: Split,
}

impl LabeledBatch {
    /// Builds a batch and checks the split-label invariants that do not
    /// need the class count: finite features, matching label length,
    /// outlier labels on outlier splits, non-negative labels on ID splits.
    pub fn new(features: Tensor, labels: Vec<i64>, split: Split) -> Result<LabeledBatch> {
        let (n, _) = features.dims2()?;
        if labels.len() != n {
            return Err(Error::Data(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Data("non-finite feature value".into()));
        }
        for (row, &label) in labels.iter().enumerate() {
            match (split.is_id(), label) {
                (true, l) if l < 0 => {
                    return Err(Error::Data(format!(
                        "ID split {} has outlier label {l} at row {row}",
                        split.name()
                    )))
                }
                (false, l) if l != OUTLIER_LABEL => {
                    return Err(Error::Data(format!(
                        "outlier split {} has class label {l} at row {row}",
                        split.name()
                    )))
                }
                _ => {}
            }
        }
        Ok(LabeledBatch {
            features,
            labels,
            split,
        })
    }

    /// Full validation against a class count.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.split.is_id() {
            for (row, &label) in self.labels.iter().enumerate() {
                if label < 0 || label as usize >= num_classes {
                    return Err(Error::Data(format!(
                        "label {label} at row {row} is outside 0..{num_classes}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// New batch holding the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Result<LabeledBatch> {
        let d = self.dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.len() {
                return Err(Error::Contract(format!(
                    "row {r} out of range 0..{}",
                    self.len()
                )));
            }
            data.extend_from_slice(self.features.row(r));
            labels.push(self.labels[r]);
        }
        Ok(LabeledBatch {
            features: Tensor::matrix(rows.len(), d, data)?,
            labels,
            split: self.split,
        })
    }

    /// Per-dimension feature range, for the SGLD initialization box.
    pub fn feature_range(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.is_empty() {
            return Err(Error::Data("cannot take the range of an empty batch".into()));
        }
        let d = self.dim();
        let mut low = vec![f64::INFINITY; d];
        let mut high = vec![f64::NEG_INFINITY; d];
        for i in 0..self.len() {
            for (j, &v) in self.features.row(i).iter().enumerate() {
                low[j] = low[j].min(v);
                high[j] = high[j].max(v);
            }
        }
        Ok((low, high))
    }
}

// ── Generators ──

/// ID mixture: class `c` is an isotropic Gaussian with standard deviation
/// `std` centered at `mean_radius·(cos 2πc/k, sin 2πc/k)` on the first two
/// axes (remaining coordinates are zero-mean noise). Rows are class-major.
pub fn gen_gaussian_mixture(
    k: usize,
    n_per_class: usize,
    dim: usize,
    mean_radius: f64,
    std: f64,
    seed: u64,
    split: Split,
) -> Result<LabeledBatch> {
    if k < 2 || n_per_class == 0 {
        return Err(Error::Config(format!(
            "mixture needs k ≥ 2 and n_per_class ≥ 1, got k = {k}, n_per_class = {n_per_class}"
        )));
    }
    if dim < 2 {
        return Err(Error::Config(format!(
            "mixture needs dimension ≥ 2, got {dim}"
        )));
    }
    if !split.is_id() {
        return Err(Error::Contract(format!(
            "mixture batches are in-distribution, requested split {}",
            split.name()
        )));
    }
    if !(std >= 0.0 && mean_radius.is_finite()) {
        return Err(Error::Config(format!(
            "invalid mixture geometry: radius {mean_radius}, std {std}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(k * n_per_class * dim);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for c in 0..k {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
        let (cx, cy) = (mean_radius * angle.cos(), mean_radius * angle.sin());
        for _ in 0..n_per_class {
            let start = data.len();
            for _ in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                data.push(std * z);
            }
            data[start] += cx;
            data[start + 1] += cy;
            labels.push(c as i64);
        }
    }
    LabeledBatch::new(Tensor::matrix(k * n_per_class, dim, data)?, labels, split)
}

/// Evaluation OOD: points uniform on the circle of the given radius (first
/// two axes) plus isotropic Gaussian noise.
pub fn gen_ring_ood(
    n: usize,
    dim: usize,
    radius: f64,
    noise_std: f64,
    seed: u64,
) -> Result<LabeledBatch> {
    if n == 0 {
        return Err(Error::Config("ring OOD set needs at least one point".into()));
    }
    if dim < 2 {
        return Err(Error::Config(format!("ring needs dimension ≥ 2, got {dim}")));
    }
    if !(radius > 0.0 && noise_std >= 0.0) {
        return Err(Error::Config(format!(
            "invalid ring geometry: radius {radius}, noise std {noise_std}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let angle = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        let start = data.len();
        for _ in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            data.push(noise_std * z);
        }
        data[start] += radius * angle.cos();
        data[start + 1] += radius * angle.sin();
    }
    LabeledBatch::new(
        Tensor::matrix(n, dim, data)?,
        vec![OUTLIER_LABEL; n],
        Split::OodTest,
    )
}

/// Auxiliary training outliers: rejection-sampled uniform points in the
/// `[-box_halfwidth, box_halfwidth]` box whose distance from the origin
/// exceeds `exclusion_radius`. Aborts when fewer than 1% of draws are
/// accepted (the box and disk are mismatched).
pub fn gen_aux_outliers(
    n: usize,
    dim: usize,
    box_halfwidth: f64,
    exclusion_radius: f64,
    seed: u64,
) -> Result<LabeledBatch> {
    if n == 0 {
        return Err(Error::Config("auxiliary set needs at least one point".into()));
    }
    if dim == 0 {
        return Err(Error::Config("auxiliary set needs dimension ≥ 1".into()));
    }
    if !(box_halfwidth > exclusion_radius && exclusion_radius >= 0.0) {
        return Err(Error::Config(format!(
            "auxiliary box halfwidth {box_halfwidth} must exceed exclusion radius {exclusion_radius}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_attempts = 100 * n;
    let mut attempts = 0;
    let mut data = Vec::with_capacity(n * dim);
    let mut point = vec![0.0; dim];
    let mut accepted = 0;
    while accepted < n {
        if attempts >= max_attempts {
            return Err(Error::Config(format!(
                "auxiliary rejection sampling accepted {accepted} of {attempts} draws \
                 (rate below 1%); shrink the exclusion radius or grow the box"
            )));
        }
        attempts += 1;
        for v in point.iter_mut() {
            *v = (2.0 * rng.random::<f64>() - 1.0) * box_halfwidth;
        }
        let dist_sq: f64 = point.iter().map(|v| v * v).sum();
        if dist_sq > exclusion_radius * exclusion_radius {
            data.extend_from_slice(&point);
            accepted += 1;
        }
    }
    LabeledBatch::new(
        Tensor::matrix(n, dim, data)?,
        vec![OUTLIER_LABEL; n],
        Split::AuxOod,
    )
}

// ── CSV ingestion ──

/// Reads a feature CSV with header `feature_0,...,feature_{d-1},label`.
/// Labels must fit the requested split: `[0, k)` on ID splits, -1 on
/// outlier splits.
pub fn load_feature_csv(path: &Path, k: usize, split: Split) -> Result<LabeledBatch> {
    let text = std::fs::read_to_string(path)?;
    let shown = path.display().to_string();
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: shown.clone(),
        line: 1,
        msg: "empty file, expected a header row".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.len().saturating_sub(1);
    let mut expected: Vec<String> = (0..d).map(|i| format!("feature_{i}")).collect();
    expected.push("label".into());
    if d == 0 || cols != expected {
        return Err(Error::Parse {
            path: shown,
            line: 1,
            msg: format!("header must be feature_0,...,feature_{{d-1}},label, got {header:?}"),
        });
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != d + 1 {
            return Err(Error::Parse {
                path: shown,
                line: lineno,
                msg: format!("expected {} columns, found {}", d + 1, cells.len()),
            });
        }
        for cell in &cells[..d] {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                path: shown.clone(),
                line: lineno,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: shown,
                    line: lineno,
                    msg: format!("non-finite feature value {cell:?}"),
                });
            }
            data.push(value);
        }
        let label: i64 = cells[d].parse().map_err(|_| Error::Parse {
            path: shown.clone(),
            line: lineno,
            msg: format!("not an integer label: {:?}", cells[d]),
        })?;
        let valid = if split.is_id() {
            label >= 0 && (label as usize) < k
        } else {
            label == OUTLIER_LABEL
        };
        if !valid {
            return Err(Error::Parse {
                path: shown,
                line: lineno,
                msg: format!(
                    "label {label} invalid for split {} with {k} classes",
                    split.name()
                ),
            });
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Data(format!("{shown} contains a header but no rows")));
    }
    let n = labels.len();
    LabeledBatch::new(Tensor::matrix(n, d, data)?, labels, split)
}

/// Writes a batch in the same CSV dialect. Floats are printed with 17
/// significant digits, which round-trips `f64` exactly.
pub fn write_feature_csv(path: &Path, batch: &LabeledBatch) -> Result<()> {
    let d = batch.dim();
    let mut out = String::new();
    for j in 0..d {
        let _ = write!(out, "feature_{j},");
    }
    out.push_str("label\n");
    for i in 0..batch.len() {
        for v in batch.features.row(i) {
            let _ = write!(out, "{v:.16e},");
        }
        let _ = writeln!(out, "{}", batch.labels[i]);
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ── Normalization ──

/// Per-dimension mean/std estimated from the ID training split only and
/// applied identically everywhere. Standard deviations are population
/// estimates floored at 1e-8, so constant columns map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    pub const STD_FLOOR: f64 = 1e-8;

    /// Fits on the ID training split; any other split is a contract
    /// violation (statistics must not leak from evaluation data).
    pub fn fit(batch: &LabeledBatch) -> Result<Normalizer> {
        if batch.split != Split::IdTrain {
            return Err(Error::Contract(format!(
                "normalizer must be fit on id_train, got {}",
                batch.split.name()
            )));
        }
        if batch.is_empty() {
            return Err(Error::Data("cannot fit a normalizer on an empty batch".into()));
        }
        let (n, d) = batch.features.dims2()?;
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (j, &v) in batch.features.row(i).iter().enumerate() {
                mean[j] += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for (j, &v) in batch.features.row(i).iter().enumerate() {
                var[j] += (v - mean[j]) * (v - mean[j]);
            }
        }
        let std = var
            .iter()
            .map(|&v| (v / n as f64).sqrt().max(Self::STD_FLOOR))
            .collect();
        Ok(Normalizer { mean, std })
    }

    /// Applies `(x - mean) / std` columnwise to any split.
    pub fn apply(&self, batch: &LabeledBatch) -> Result<LabeledBatch> {
        let (n, d) = batch.features.dims2()?;
        if d != self.mean.len() {
            return Err(Error::Dim {
                op: "normalize",
                lhs: batch.features.shape().to_vec(),
                rhs: vec![self.mean.len()],
            });
        }
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for (j, &v) in batch.features.row(i).iter().enumerate() {
                data.push((v - self.mean[j]) / self.std[j]);
            }
        }
        LabeledBatch::new(Tensor::matrix(n, d, data)?, batch.labels.clone(), batch.split)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_counts_and_determinism() {
        let a = gen_gaussian_mixture(3, 100, 2, 4.0, 1.0, 42, Split::IdTrain).unwrap();
        assert_eq!(a.len(), 300);
        for c in 0..3 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 100);
        }
        let b = gen_gaussian_mixture(3, 100, 2, 4.0, 1.0, 42, Split::IdTrain).unwrap();
        assert_eq!(a, b);
        let c = gen_gaussian_mixture(3, 100, 2, 4.0, 1.0, 43, Split::IdTrain).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mixture_class_means_sit_near_their_centers() {
        let n = 2000;
        let std = 1.0;
        let batch = gen_gaussian_mixture(3, n, 2, 4.0, std, 7, Split::IdTrain).unwrap();
        let (mut mx, mut my) = (0.0, 0.0);
        for i in 0..n {
            assert_eq!(batch.labels[i], 0);
            mx += batch.features.row(i)[0];
            my += batch.features.row(i)[1];
        }
        let bound = 3.0 * std / (n as f64).sqrt();
        assert!((mx / n as f64 - 4.0).abs() < bound);
        assert!((my / n as f64 - 0.0).abs() < bound);
    }

    #[test]
    fn mixture_validates_arguments() {
        assert!(gen_gaussian_mixture(1, 10, 2, 4.0, 1.0, 0, Split::IdTrain).is_err());
        assert!(gen_gaussian_mixture(3, 0, 2, 4.0, 1.0, 0, Split::IdTrain).is_err());
        assert!(gen_gaussian_mixture(3, 10, 1, 4.0, 1.0, 0, Split::IdTrain).is_err());
        assert!(gen_gaussian_mixture(3, 10, 2, 4.0, 1.0, 0, Split::AuxOod).is_err());
    }

    #[test]
    fn ring_geometry_and_labels() {
        let exact = gen_ring_ood(200, 2, 8.0, 0.0, 5).unwrap();
        for i in 0..200 {
            let row = exact.features.row(i);
            let dist = (row[0] * row[0] + row[1] * row[1]).sqrt();
            assert!((dist - 8.0).abs() < 1e-9);
            assert_eq!(exact.labels[i], OUTLIER_LABEL);
        }
        assert_eq!(exact.split, Split::OodTest);

        let n = 5000;
        let noisy = gen_ring_ood(n, 2, 8.0, 0.5, 6).unwrap();
        let (mut mx, mut my) = (0.0, 0.0);
        for i in 0..n {
            mx += noisy.features.row(i)[0];
            my += noisy.features.row(i)[1];
        }
        let bound = 3.0 * 8.0 / (n as f64).sqrt();
        assert!((mx / n as f64).abs() < bound);
        assert!((my / n as f64).abs() < bound);
    }

    #[test]
    fn aux_outliers_respect_the_exclusion_disk() {
        let batch = gen_aux_outliers(3000, 2, 12.0, 7.0, 11).unwrap();
        for i in 0..3000 {
            let row = batch.features.row(i);
            let dist = (row[0] * row[0] + row[1] * row[1]).sqrt();
            assert!(dist > 7.0);
            assert!(row.iter().all(|v| v.abs() <= 12.0));
        }
        assert_eq!(batch.split, Split::AuxOod);

        // No exclusion: a plain uniform box.
        let plain = gen_aux_outliers(100, 2, 2.0, 0.0, 1).unwrap();
        assert_eq!(plain.len(), 100);
    }

    #[test]
    fn aux_acceptance_rate_matches_area_ratio() {
        // Fraction of uniform box draws outside the disk ≈ 1 - πr²/(4w²).
        let (w, r) = (12.0, 7.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut accepted = 0;
        let draws = 10_000;
        for _ in 0..draws {
            let x = (2.0 * rng.random::<f64>() - 1.0) * w;
            let y = (2.0 * rng.random::<f64>() - 1.0) * w;
            if x * x + y * y > r * r {
                accepted += 1;
            }
        }
        let want = 1.0 - std::f64::consts::PI * r * r / (4.0 * w * w);
        let got = accepted as f64 / draws as f64;
        assert!((got - want).abs() < 0.05 * want, "{got} vs {want}");
    }

    #[test]
    fn aux_sampling_aborts_on_hopeless_geometry() {
        // In one dimension the exclusion "disk" is an interval, so a box
        // barely wider than it accepts almost nothing.
        let err = gen_aux_outliers(100, 1, 7.0001, 7.0, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        // Box not strictly wider than the exclusion radius.
        assert!(gen_aux_outliers(100, 2, 7.0, 7.0, 0).is_err());
        assert!(gen_aux_outliers(100, 2, 7.0, 7.5, 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.csv");
        let batch = gen_gaussian_mixture(3, 20, 2, 4.0, 1.0, 9, Split::IdTest).unwrap();
        write_feature_csv(&path, &batch).unwrap();
        let back = load_feature_csv(&path, 3, Split::IdTest).unwrap();
        assert_eq!(back.labels, batch.labels);
        for (a, b) in back.features.data().iter().zip(batch.features.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");

        std::fs::write(&path, "feature_0,feature_1,label\n1.0,2.0,0\n3.0,1\n").unwrap();
        match load_feature_csv(&path, 3, Split::IdTrain).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected Parse error, got {other:?}"),
        }

        std::fs::write(&path, "feature_0,feature_1,label\n1.0,2.0,7\n").unwrap();
        match load_feature_csv(&path, 5, Split::IdTrain).unwrap_err() {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("label 7"));
            }
            other => panic!("expected Parse error, got {other:?}"),
        }

        std::fs::write(&path, "feature_0,feature_1,label\n1.0,abc,0\n").unwrap();
        assert!(matches!(
            load_feature_csv(&path, 3, Split::IdTrain),
            Err(Error::Parse { line: 2, .. })
        ));

        std::fs::write(&path, "x,y,label\n1.0,2.0,0\n").unwrap();
        assert!(matches!(
            load_feature_csv(&path, 3, Split::IdTrain),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn batch_invariants_are_enforced() {
        let features = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(LabeledBatch::new(features.clone(), vec![0], Split::IdTrain).is_err());
        assert!(LabeledBatch::new(features.clone(), vec![0, -1], Split::IdTrain).is_err());
        assert!(LabeledBatch::new(features.clone(), vec![-1, 0], Split::AuxOod).is_err());
        let nan = Tensor::matrix(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(LabeledBatch::new(nan, vec![0], Split::IdTrain).is_err());

        let ok = LabeledBatch::new(features, vec![0, 2], Split::IdTrain).unwrap();
        assert!(ok.validate(3).is_ok());
        assert!(ok.validate(2).is_err());
    }

    #[test]
    fn normalizer_standardizes_its_fitting_batch() {
        let batch = gen_gaussian_mixture(3, 500, 2, 4.0, 1.0, 13, Split::IdTrain).unwrap();
        let norm = Normalizer::fit(&batch).unwrap();
        let out = norm.apply(&batch).unwrap();
        let (n, d) = out.features.dims2().unwrap();
        for j in 0..d {
            let mean: f64 = (0..n).map(|i| out.features.row(i)[j]).sum::<f64>() / n as f64;
            let var: f64 = (0..n)
                .map(|i| (out.features.row(i)[j] - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn normalizer_refuses_non_training_splits() {
        let batch = gen_gaussian_mixture(3, 30, 2, 4.0, 1.0, 13, Split::IdTest).unwrap();
        assert!(matches!(
            Normalizer::fit(&batch),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn normalizer_flattens_constant_columns() {
        let features = Tensor::matrix(3, 2, vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]).unwrap();
        let batch = LabeledBatch::new(features, vec![0, 1, 0], Split::IdTrain).unwrap();
        let norm = Normalizer::fit(&batch).unwrap();
        let out = norm.apply(&batch).unwrap();
        for i in 0..3 {
            assert_eq!(out.features.row(i)[0], 0.0);
        }
    }

    #[test]
    fn normalization_is_affine_equivariant() {
        // Fitting on a·X + b and normalizing it equals normalizing X with
        // X's own fit, for positive a.
        let base = gen_gaussian_mixture(2, 200, 2, 3.0, 1.0, 21, Split::IdTrain).unwrap();
        let (a, b) = (2.5, -4.0);
        let scaled_features = Tensor::matrix(
            base.len(),
            2,
            base.features.data().iter().map(|&v| a * v + b).collect(),
        )
        .unwrap();
        let scaled = LabeledBatch::new(scaled_features, base.labels.clone(), Split::IdTrain).unwrap();

        let out_base = Normalizer::fit(&base).unwrap().apply(&base).unwrap();
        let out_scaled = Normalizer::fit(&scaled).unwrap().apply(&scaled).unwrap();
        for (x, y) in out_base
            .features
            .data()
            .iter()
            .zip(out_scaled.features.data())
        {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
