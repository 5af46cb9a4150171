//! Pivoted 2x2 solves for the coefficient systems.

use crate::error::{Result, SolverError};

/// Below this the row-equilibrated determinant is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-14;

/// Solves `A u = rhs` by row scaling and partial pivoting.
///
/// Returns the solution together with `det(A)`. The singularity test uses the
/// determinant of the row-equilibrated matrix, which is scale invariant.
pub fn solve2(a: [[f64; 2]; 2], rhs: [f64; 2], system: &'static str) -> Result<([f64; 2], f64)> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let s0 = a[0][0].abs().max(a[0][1].abs());
    let s1 = a[1][0].abs().max(a[1][1].abs());
    if !(s0 > 0.0 && s1 > 0.0) || !det.is_finite() {
        return Err(SolverError::SingularSystem { system, det });
    }
    let m = [
        [a[0][0] / s0, a[0][1] / s0, rhs[0] / s0],
        [a[1][0] / s1, a[1][1] / s1, rhs[1] / s1],
    ];
    let scaled_det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if scaled_det.abs() < SINGULAR_TOL {
        return Err(SolverError::SingularSystem { system, det });
    }
    let (p, q) = if m[0][0].abs() >= m[1][0].abs() { (m[0], m[1]) } else { (m[1], m[0]) };
    let l = q[0] / p[0];
    let u11 = q[1] - l * p[1];
    let r1 = q[2] - l * p[2];
    let x1 = r1 / u11;
    let x0 = (p[2] - p[1] * x1) / p[0];
    if !(x0.is_finite() && x1.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    Ok(([x0, x1], det))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cramer(a: [[f64; 2]; 2], r: [f64; 2]) -> [f64; 2] {
        let d = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        [(r[0] * a[1][1] - a[0][1] * r[1]) / d, (a[0][0] * r[1] - r[0] * a[1][0]) / d]
    }

    #[test]
    fn matches_cramer() {
        let a = [[2.0, 1.0], [1.0, 3.0]];
        let (u, det) = solve2(a, [3.0, 5.0], "t").unwrap();
        let c = cramer(a, [3.0, 5.0]);
        assert!((u[0] - c[0]).abs() < 1e-15 && (u[1] - c[1]).abs() < 1e-15);
        assert_eq!(det, 5.0);
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let (u, _) = solve2([[0.0, 1.0], [1.0, 0.0]], [2.0, 3.0], "t").unwrap();
        assert_eq!(u, [3.0, 2.0]);
    }

    #[test]
    fn badly_scaled_rows_are_not_singular() {
        let (u, _) = solve2([[1e-200, 2e-200], [3e150, 1e150]], [1e-200, 1e150], "t").unwrap();
        let c = cramer([[1.0, 2.0], [3.0, 1.0]], [1.0, 1.0]);
        assert!((u[0] - c[0]).abs() < 1e-14 && (u[1] - c[1]).abs() < 1e-14);
    }

    #[test]
    fn singular_detected() {
        let e = solve2([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0], "sys").unwrap_err();
        assert!(matches!(e, SolverError::SingularSystem { system: "sys", .. }));
        assert!(solve2([[0.0, 0.0], [1.0, 1.0]], [0.0, 1.0], "sys").is_err());
    }
}
