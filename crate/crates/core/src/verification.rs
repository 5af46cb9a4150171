//! Certification of a solved band against the HJB conditions and the structural sign properties.

use rayon::prelude::*;
use serde::Serialize;

use crate::inner::InnerSolution;
use crate::model::{min_gamma_upper_bound, ModelParams};
use crate::quadrature::integral_ih_quadrature;

pub const DEFAULT_GRID: usize = 2001;
pub const HJB_TOL: f64 = 1e-6;
pub const SMOOTH_FIT_TOL: f64 = 1e-6;
pub const QUADRATURE_TOL: f64 = 1e-7;
const VALUE_SLACK: f64 = 1e-9;

/// `R(x) = x^2 + sigma^2/2 H'(x) + a*(x) H(x) - lambda*(x) (I H)(x) / mu - gamma`.
pub fn hjb_residual(params: &ModelParams, sol: &InnerSolution, x: f64) -> f64 {
    let p = params;
    let h = &sol.h;
    let a_star = p.b + p.sigma * sol.worst_case_drift(x) + p.r / p.mu;
    x * x + 0.5 * p.sigma * p.sigma * h.slope(x) + a_star * h.value(x)
        - sol.worst_case_intensity(x) * h.integral_ih(x) / p.mu
        - sol.gamma
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub hjb_interior_max_abs: f64,
    pub hjb_exterior_min: f64,
    pub smooth_fit_max_abs: f64,
    pub quadrature_max_abs: f64,
    pub gradient_band_ok: bool,
    pub monotone_ok: bool,
    pub kappa_sign_ok: bool,
    pub lambda_sign_ok: bool,
    pub bound_ok: bool,
    pub detsign_ok: bool,
    pub barrier_signs_ok: bool,
    pub grid_size: usize,
    pub passed: bool,
}

impl VerificationReport {
    fn decide(&self) -> bool {
        self.hjb_interior_max_abs < HJB_TOL
            && self.hjb_exterior_min > -HJB_TOL
            && self.smooth_fit_max_abs < SMOOTH_FIT_TOL
            && self.quadrature_max_abs <= QUADRATURE_TOL
            && self.gradient_band_ok
            && self.monotone_ok
            && self.kappa_sign_ok
            && self.lambda_sign_ok
            && self.bound_ok
            && self.detsign_ok
    }
}

struct GridPoint {
    x: f64,
    h: f64,
    slope: f64,
    ih: f64,
    residual: f64,
    quad_err: f64,
}

/// Uniform grid over `[x_low - 5/mu, x_high + 5/mu]`.
pub fn scan_grid(sol: &InnerSolution, grid_size: usize) -> Vec<f64> {
    let n = grid_size.max(2);
    let th = &sol.thresholds;
    let lo = th.x_low - 5.0 / sol.h.mu;
    let hi = th.x_high + 5.0 / sol.h.mu;
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Number of strict sign changes in `values`, zeros skipped.
fn sign_changes(values: impl Iterator<Item = f64>) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for v in values {
        if v == 0.0 {
            continue;
        }
        if last != 0.0 && (v > 0.0) != (last > 0.0) {
            count += 1;
        }
        last = v;
    }
    count
}

pub fn verify(params: &ModelParams, sol: &InnerSolution, grid_size: usize) -> VerificationReport {
    let th = sol.thresholds;
    let xs = scan_grid(sol, grid_size);
    let cell = xs[1] - xs[0];
    let pts: Vec<GridPoint> = xs
        .par_iter()
        .map(|&x| {
            let ih = sol.h.integral_ih(x);
            GridPoint {
                x,
                h: sol.h.value(x),
                slope: sol.h.slope(x),
                ih,
                residual: hjb_residual(params, sol, x),
                quad_err: (ih - integral_ih_quadrature(&sol.h, x, 1e-11)).abs(),
            }
        })
        .collect();

    let inside = |x: f64| th.x_low < x && x < th.x_high;
    let band: Vec<&GridPoint> = pts.iter().filter(|g| inside(g.x)).collect();

    let hjb_interior_max_abs = band.iter().fold(0.0f64, |m, g| m.max(g.residual.abs()));
    let hjb_exterior_min = pts
        .iter()
        .filter(|g| !inside(g.x))
        .fold(f64::INFINITY, |m, g| m.min(g.residual));
    let quadrature_max_abs = pts.iter().fold(0.0f64, |m, g| m.max(g.quad_err));

    let gradient_band_ok = band
        .iter()
        .all(|g| g.h >= -params.c_u - VALUE_SLACK && g.h <= params.c_d + VALUE_SLACK);
    let monotone_ok = band.iter().all(|g| g.slope > 0.0) && band.windows(2).all(|w| w[1].h > w[0].h);

    let kappa_sign_ok = params.delta == 0.0
        || pts.iter().filter(|g| (g.x - th.x_kappa).abs() > cell).all(|g| {
            if g.x < th.x_kappa {
                g.h < 0.0
            } else {
                g.h > 0.0
            }
        });
    let lambda_sign_ok = params.eps == 0.0
        || (sign_changes(pts.iter().map(|g| g.ih)) <= 1
            && pts.iter().filter(|g| (g.x - th.x_lambda).abs() > cell).all(|g| {
                if g.x < th.x_lambda {
                    g.ih < 0.0
                } else {
                    g.ih > 0.0
                }
            }));

    let smooth_fit_max_abs = sol.residual_norm();
    let mut report = VerificationReport {
        hjb_interior_max_abs,
        hjb_exterior_min,
        smooth_fit_max_abs,
        quadrature_max_abs,
        gradient_band_ok,
        monotone_ok,
        kappa_sign_ok,
        lambda_sign_ok,
        bound_ok: sol.gamma <= min_gamma_upper_bound(params) + VALUE_SLACK,
        detsign_ok: sol.determinants.signs_ok(),
        barrier_signs_ok: th.x_low <= 0.0 && 0.0 < th.x_high,
        grid_size: pts.len(),
        passed: false,
    };
    report.passed = report.decide();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::inner_solve;
    use crate::outer::{solve_nonrobust, solve_robust};

    #[test]
    fn baseline_passes() {
        let p = ModelParams::baseline();
        let sol = solve_robust(&p, None).unwrap().solution;
        let rep = verify(&p, &sol, DEFAULT_GRID);
        assert!(rep.passed, "{rep:?}");
        assert!(rep.barrier_signs_ok);
    }

    #[test]
    fn exterior_residual_matches_cost_gap() {
        let p = ModelParams::baseline();
        let sol = solve_robust(&p, None).unwrap().solution;
        let xl = sol.thresholds.x_low;
        let x = xl - 1.0;
        assert!((hjb_residual(&p, &sol, x) - (x * x - xl * xl)).abs() < 1e-9);
        assert!(hjb_residual(&p, &sol, sol.thresholds.x_high + 2.0 / p.mu) >= 0.0);
    }

    #[test]
    fn shifted_barrier_fails() {
        let p = ModelParams::baseline();
        let mut th = solve_robust(&p, None).unwrap().solution.thresholds;
        th.x_high += 0.2;
        let bad = inner_solve(&p, &th).unwrap();
        let rep = verify(&p, &bad, DEFAULT_GRID);
        assert!(!rep.passed);
        assert!(rep.smooth_fit_max_abs > SMOOTH_FIT_TOL);
        assert!(rep.hjb_interior_max_abs > HJB_TOL);
    }

    #[test]
    fn benchmark_solution_passes() {
        let p = ModelParams::baseline();
        let sol = solve_nonrobust(&p).unwrap().solution;
        let rep = verify(&sol.params, &sol, DEFAULT_GRID);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn sign_change_counter() {
        assert_eq!(sign_changes([-1.0, -0.5, 0.0, 0.3, 1.0].into_iter()), 1);
        assert_eq!(sign_changes([1.0, -1.0, 1.0].into_iter()), 2);
        assert_eq!(sign_changes([0.0, 0.0].into_iter()), 0);
    }
}
