//! Shared dense kernels: matmul, row softmax/logsumexp, norms, quantiles.
//!
//! Everything operates on flat row-major `f64` slices so the tape, the
//! scorer, and the metrics all reduce to the same arithmetic.

// ── Matrix products ──

/// `out = a @ b` with `a: [n, k]`, `b: [k, m]`, `out: [n, m]`.
///
/// The i-k-j loop order keeps the inner loop contiguous in both `b` and
/// `out`, which the compiler autovectorizes.
pub(crate) fn matmul(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    out.fill(0.0);
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for j in 0..m {
                out_row[j] += aip * b_row[j];
            }
        }
    }
}

/// `da += dc @ b^T` with `dc: [n, m]`, `b: [k, m]`, `da: [n, k]`.
pub(crate) fn acc_matmul_nt(da: &mut [f64], dc: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let dc_row = &dc[i * m..(i + 1) * m];
        let da_row = &mut da[i * k..(i + 1) * k];
        for p in 0..k {
            let b_row = &b[p * m..(p + 1) * m];
            let mut acc = 0.0;
            for j in 0..m {
                acc += dc_row[j] * b_row[j];
            }
            da_row[p] += acc;
        }
    }
}

/// `db += a^T @ dc` with `a: [n, k]`, `dc: [n, m]`, `db: [k, m]`.
pub(crate) fn acc_matmul_tn(db: &mut [f64], a: &[f64], dc: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let dc_row = &dc[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let db_row = &mut db[p * m..(p + 1) * m];
            for j in 0..m {
                db_row[j] += aip * dc_row[j];
            }
        }
    }
}

// ── Row reductions ──

/// Numerically stable `log(sum(exp(xs)))`.
pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Writes `softmax(xs)` into `out` (same length).
pub(crate) fn softmax_into(out: &mut [f64], xs: &[f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Index of the largest element; ties resolve to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Euclidean norm.
pub(crate) fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

// ── Order statistics ──

/// Lower-interpolation quantile of an ascending-sorted slice: the element at
/// index `floor(q * (n - 1))`.
pub(crate) fn quantile_lower(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let idx = (q * (sorted.len() - 1) as f64).floor() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Sorts a copy of `xs` ascending (total order; inputs are finite).
pub(crate) fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    out.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in sort"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [[1,2],[3,4]] @ [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        matmul(&mut out, &a, &b, 2, 2, 2);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_grad_kernels_match_definition() {
        let a = [1.0, -2.0, 0.5, 3.0, 0.0, -1.0]; // [2, 3]
        let b = [2.0, 1.0, -1.0, 0.5, 4.0, -2.0]; // [3, 2]
        let dc = [1.0, 2.0, 3.0, 4.0]; // [2, 2]

        let mut da = [0.0; 6];
        acc_matmul_nt(&mut da, &dc, &b, 2, 3, 2);
        for i in 0..2 {
            for p in 0..3 {
                let want: f64 = (0..2).map(|j| dc[i * 2 + j] * b[p * 2 + j]).sum();
                assert_eq!(da[i * 3 + p], want);
            }
        }

        let mut db = [0.0; 6];
        acc_matmul_tn(&mut db, &a, &dc, 2, 3, 2);
        for p in 0..3 {
            for j in 0..2 {
                let want: f64 = (0..2).map(|i| a[i * 3 + p] * dc[i * 2 + j]).sum();
                assert_eq!(db[p * 2 + j], want);
            }
        }
    }

    #[test]
    fn logsumexp_matches_naive_and_survives_large_inputs() {
        let xs = [1.0f64, 2.0, 3.0];
        let naive: f64 = xs.iter().map(|&x| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&xs) - naive).abs() < 1e-12);

        let big = [1000.0, 1000.0];
        assert!((logsumexp(&big) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn softmax_sums_to_one() {
        let xs = [10.0, 0.0, 0.0];
        let mut out = [0.0; 3];
        softmax_into(&mut out, &xs);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out[0] > 0.999);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
    }

    #[test]
    fn quantile_uses_floor_index() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        // q = 0.05 over 100 points: index floor(0.05 * 99) = 4, value 5.
        assert_eq!(quantile_lower(&xs, 0.05), 5.0);
        assert_eq!(quantile_lower(&xs, 0.0), 1.0);
        assert_eq!(quantile_lower(&xs, 1.0), 100.0);
    }
}
