//! Small helpers shared by the in-crate unit tests.

/// Relative error with an absolute floor: `|a - b| / max(1, |a|, |b|)`.
pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Asserts `rel_err(a, b) < tol` with a readable failure message.
pub(crate) fn assert_close(a: f64, b: f64, tol: f64) {
    assert!(
        rel_err(a, b) < tol,
        "values differ: {a} vs {b} (rel err {}, tol {tol})",
        rel_err(a, b)
    );
}
