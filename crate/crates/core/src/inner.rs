//! Inner solve: coefficients and ergodic value for a fixed threshold quadruple.
//!
//! The first system fixes `H_1` and `gamma` jointly. `gamma` depends affinely
//! on the interval-1 coefficients through the value of `H_1'` at the lower
//! barrier, so it is eliminated before the 2x2 solve. The remaining systems
//! then see `gamma` as known.

use serde::Serialize;

use crate::error::{Result, SolverError, Warning};
use crate::linalg::solve2;
use crate::model::{gamma_star, worst_case_drift, worst_case_intensity, ModelParams, Regime, Thresholds};
use crate::ode::{build_interval, AnchoredCoefficients, IntervalSystem};

/// One interval of the piecewise representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Piece {
    pub system: IntervalSystem,
    pub u: AnchoredCoefficients,
}

/// `H = V'` on the whole line: constant `-cU` below the band, `cD` above it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseH {
    pub c_u: f64,
    pub c_d: f64,
    pub mu: f64,
    pub x_low: f64,
    pub x_high: f64,
    pub gamma: f64,
    pub pieces: Vec<Piece>,
}

impl PiecewiseH {
    fn piece_at(&self, x: f64) -> Option<&Piece> {
        if x < self.x_low || x > self.x_high {
            return None;
        }
        self.pieces
            .iter()
            .find(|p| x <= p.system.hi)
            .or(self.pieces.last())
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.piece_at(x) {
            Some(p) => p.system.eval_h(&p.u, self.gamma, x),
            None if x < self.x_low => -self.c_u,
            None => self.c_d,
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        match self.piece_at(x) {
            Some(p) => p.system.eval_h_prime(&p.u, self.gamma, x),
            None => 0.0,
        }
    }

    pub fn curvature(&self, x: f64) -> f64 {
        match self.piece_at(x) {
            Some(p) => p.system.eval_h_second(&p.u, self.gamma, x),
            None => 0.0,
        }
    }

    /// Closed-form `(I H)(x) = int_{-inf}^0 H(x + y) mu e^{mu y} dy`.
    pub fn integral_ih(&self, x: f64) -> f64 {
        if x <= self.x_low {
            return -self.c_u;
        }
        let mut total = -self.c_u * (self.mu * (self.x_low - x)).exp();
        for p in &self.pieces {
            let a = p.system.lo;
            let b = p.system.hi.min(x);
            if b <= a {
                break;
            }
            total += piece_ih(p, self.gamma, a, b, x);
        }
        if x > self.x_high {
            total += -self.c_d * (-self.mu * (x - self.x_high)).exp_m1();
        }
        total
    }
}

fn piece_ih(p: &Piece, gamma: f64, a: f64, b: f64, x: f64) -> f64 {
    let w = p.system.basis_ih(a, b, x);
    p.u.minus * w[0] + p.u.plus * w[1] + p.system.poly_ih(gamma, a, b, x)
}

/// Determinants of the coefficient systems, columns ordered `(-, +)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Determinants {
    pub theta1: f64,
    pub theta2: Option<f64>,
    pub theta3: Option<f64>,
}

impl Determinants {
    /// `theta1 < 0`, `theta2 < 0`, `theta3 > 0` for those present.
    pub fn signs_ok(&self) -> bool {
        self.theta1 < 0.0 && self.theta2.is_none_or(|t| t < 0.0) && self.theta3.is_none_or(|t| t > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerSolution {
    pub params: ModelParams,
    pub thresholds: Thresholds,
    pub regime: Regime,
    pub gamma: f64,
    pub h: PiecewiseH,
    pub determinants: Determinants,
    pub residuals: [f64; 4],
    pub warnings: Vec<Warning>,
}

impl InnerSolution {
    /// Coefficients per interval; interval 3 is zero in Regime 2.
    pub fn coefficients(&self) -> [AnchoredCoefficients; 3] {
        let mut out = [AnchoredCoefficients::default(); 3];
        for (slot, p) in out.iter_mut().zip(&self.h.pieces) {
            *slot = p.u;
        }
        out
    }

    pub fn residual_norm(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn worst_case_drift(&self, x: f64) -> f64 {
        worst_case_drift(x, &self.thresholds, &self.params)
    }

    pub fn worst_case_intensity(&self, x: f64) -> f64 {
        worst_case_intensity(x, &self.thresholds, &self.params)
    }

    pub fn integral_ih(&self, x: f64) -> f64 {
        self.h.integral_ih(x)
    }
}

/// Result of the joint `(u_1, gamma)` solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct System1 {
    pub u: AnchoredCoefficients,
    pub gamma: f64,
    pub theta: f64,
}

/// `gamma = g0 + g[0] u- + g[1] u+`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaAffine {
    pub g0: f64,
    pub g: [f64; 2],
    /// `1 - sigma^2/2 w'(x_low)` for the `gamma` weight `w`; divided out of `g0` and `g`.
    pub s: f64,
}

impl GammaAffine {
    pub fn eval(&self, u: &AnchoredCoefficients) -> f64 {
        self.g0 + self.g[0] * u.minus + self.g[1] * u.plus
    }
}

/// `gamma = sigma^2/2 H_1'(x_low) + gamma_*`, solved for `gamma` as an affine map of `u`.
pub fn gamma_affine(params: &ModelParams, sys: &IntervalSystem, x_low: f64) -> GammaAffine {
    let half_s2 = 0.5 * params.sigma * params.sigma;
    let s = 1.0 - half_s2 * sys.gamma_weight_prime(x_low);
    let d = sys.basis_prime(x_low);
    GammaAffine {
        g0: (gamma_star(params, x_low) + half_s2 * sys.q_prime(x_low)) / s,
        g: [half_s2 * d[0] / s, half_s2 * d[1] / s],
        s,
    }
}

/// Solves two value rows `H(x_j) = t_j` on `sys` together with the `gamma` formula at `x_low`.
pub fn solve_value_rows_with_gamma(
    params: &ModelParams,
    sys: &IntervalSystem,
    x_low: f64,
    rows: [(f64, f64); 2],
    name: &'static str,
) -> Result<System1> {
    let ga = gamma_affine(params, sys, x_low);
    let mut a = [[0.0; 2]; 2];
    let mut rhs = [0.0; 2];
    for (j, &(x, t)) in rows.iter().enumerate() {
        let phi = sys.basis(x);
        let g = sys.gamma_weight(x);
        a[j] = [phi[0] + g * ga.g[0], phi[1] + g * ga.g[1]];
        rhs[j] = t - sys.q(x) - g * ga.g0;
    }
    let (u, det) = solve2(a, rhs, name)?;
    let u = AnchoredCoefficients::new(u[0], u[1]);
    // determinant of the system with gamma kept as a third unknown, the same for every particular branch
    Ok(System1 {
        u,
        gamma: ga.eval(&u),
        theta: det * ga.s,
    })
}

/// Rows `H_1(x_low) = -cU`, `H_1(x_kappa) = 0` plus the `gamma` formula.
pub fn solve_system1(params: &ModelParams, sys1: &IntervalSystem, th: &Thresholds) -> Result<System1> {
    solve_value_rows_with_gamma(
        params,
        sys1,
        th.x_low,
        [(th.x_low, -params.c_u), (th.x_kappa, 0.0)],
        "system 1",
    )
}

fn value_row(sys: &IntervalSystem, gamma: f64, x: f64, target: f64) -> ([f64; 2], f64) {
    let zero = AnchoredCoefficients::default();
    (sys.basis(x), target - sys.eval_h(&zero, gamma, x))
}

fn solved(a: [[f64; 2]; 2], rhs: [f64; 2], name: &'static str) -> Result<(AnchoredCoefficients, f64)> {
    let (u, det) = solve2(a, rhs, name)?;
    Ok((AnchoredCoefficients::new(u[0], u[1]), det))
}

/// Rows `H_2(x_kappa) = 0` and `(I H)(x_lambda) = 0` (Regime 1).
pub fn solve_system2(
    params: &ModelParams,
    piece1: &Piece,
    sys2: &IntervalSystem,
    th: &Thresholds,
    gamma: f64,
) -> Result<(AnchoredCoefficients, f64)> {
    let (r0, t0) = value_row(sys2, gamma, th.x_kappa, 0.0);
    let xl = th.x_lambda;
    let i0 = -params.c_u * (params.mu * (th.x_low - xl)).exp();
    let i1 = piece_ih(piece1, gamma, th.x_low, th.x_kappa, xl);
    let i2_poly = sys2.poly_ih(gamma, th.x_kappa, xl, xl);
    let r1 = sys2.basis_ih(th.x_kappa, xl, xl);
    solved([r0, r1], [t0, -(i0 + i1 + i2_poly)], "system 2")
}

/// Rows `H_3(x_high) = cD` and `H_3(x_lambda) = H_2(x_lambda)` (Regime 1).
pub fn solve_system3(
    params: &ModelParams,
    piece2: &Piece,
    sys3: &IntervalSystem,
    th: &Thresholds,
    gamma: f64,
) -> Result<(AnchoredCoefficients, f64)> {
    let (r0, t0) = value_row(sys3, gamma, th.x_high, params.c_d);
    let h2 = piece2.system.eval_h(&piece2.u, gamma, th.x_lambda);
    let (r1, t1) = value_row(sys3, gamma, th.x_lambda, h2);
    solved([r0, r1], [t0, t1], "system 3")
}

/// Rows `H_2(x_kappa) = 0` and `H_2(x_high) = cD` (Regime 2, interval 2 ends at the upper barrier).
pub fn solve_regime2(
    params: &ModelParams,
    sys2: &IntervalSystem,
    th: &Thresholds,
    gamma: f64,
) -> Result<(AnchoredCoefficients, f64)> {
    let (r0, t0) = value_row(sys2, gamma, th.x_kappa, 0.0);
    let (r1, t1) = value_row(sys2, gamma, th.x_high, params.c_d);
    solved([r0, r1], [t0, t1], "regime 2 system")
}

fn slope(p: &Piece, gamma: f64, x: f64) -> f64 {
    p.system.eval_h_prime(&p.u, gamma, x)
}

/// Full inner solve at a threshold quadruple; the regime follows from `x_lambda` vs `x_high`.
pub fn inner_solve(params: &ModelParams, th: &Thresholds) -> Result<InnerSolution> {
    th.check_ordered()?;
    let regime = th.regime();
    let mut warnings = Vec::new();

    let sys1 = build_interval(params, th, 1, regime, &mut warnings)?;
    let s1 = solve_system1(params, &sys1, th)?;
    let gamma = s1.gamma;
    let p1 = Piece { system: sys1, u: s1.u };
    let sys2 = build_interval(params, th, 2, regime, &mut warnings)?;

    let (pieces, determinants, residuals) = match regime {
        Regime::Regime1 => {
            let (u2, theta2) = solve_system2(params, &p1, &sys2, th, gamma)?;
            let p2 = Piece { system: sys2, u: u2 };
            let sys3 = build_interval(params, th, 3, regime, &mut warnings)?;
            let (u3, theta3) = solve_system3(params, &p2, &sys3, th, gamma)?;
            let p3 = Piece { system: sys3, u: u3 };
            let res = [
                slope(&p1, gamma, th.x_low),
                slope(&p3, gamma, th.x_high),
                slope(&p1, gamma, th.x_kappa) - slope(&p2, gamma, th.x_kappa),
                slope(&p2, gamma, th.x_lambda) - slope(&p3, gamma, th.x_lambda),
            ];
            let det = Determinants {
                theta1: s1.theta,
                theta2: Some(theta2),
                theta3: Some(theta3),
            };
            (vec![p1, p2, p3], det, res)
        }
        Regime::Regime2 => {
            let (u2, theta2) = solve_regime2(params, &sys2, th, gamma)?;
            let p2 = Piece { system: sys2, u: u2 };
            let res = [
                slope(&p1, gamma, th.x_low),
                slope(&p2, gamma, th.x_high),
                slope(&p1, gamma, th.x_kappa) - slope(&p2, gamma, th.x_kappa),
                0.0,
            ];
            let det = Determinants {
                theta1: s1.theta,
                theta2: Some(theta2),
                theta3: None,
            };
            (vec![p1, p2], det, res)
        }
    };

    let h = PiecewiseH {
        c_u: params.c_u,
        c_d: params.c_d,
        mu: params.mu,
        x_low: th.x_low,
        x_high: th.x_high,
        gamma,
        pieces,
    };
    let mut residuals = residuals;
    if regime == Regime::Regime2 {
        residuals[3] = h.integral_ih(th.x_lambda);
    }
    if residuals.iter().any(|r| !r.is_finite()) || !gamma.is_finite() {
        return Err(SolverError::NonFinite);
    }
    Ok(InnerSolution {
        params: *params,
        thresholds: *th,
        regime,
        gamma,
        h,
        determinants,
        residuals,
        warnings,
    })
}

/// The four residual components at `th`.
pub fn residuals(params: &ModelParams, th: &Thresholds) -> Result<[f64; 4]> {
    Ok(inner_solve(params, th)?.residuals)
}

/// Single-interval solve with no distortion on the band `[x_low, x_high]`.
pub fn nonrobust_inner(params: &ModelParams, x_low: f64, x_high: f64) -> Result<(Piece, f64, f64)> {
    if !(x_low < x_high) || !x_low.is_finite() || !x_high.is_finite() {
        return Err(SolverError::domain("x_low must be < x_high"));
    }
    let bench = params.benchmark();
    let mut warnings = Vec::new();
    let sys = IntervalSystem::from_ode(1, &bench, 0.0, bench.r, x_low, x_high, &mut warnings);
    let s = solve_value_rows_with_gamma(
        &bench,
        &sys,
        x_low,
        [(x_low, -bench.c_u), (x_high, bench.c_d)],
        "non-robust system",
    )?;
    Ok((Piece { system: sys, u: s.u }, s.gamma, s.theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline_th() -> Thresholds {
        Thresholds::new(-0.8, -0.2, 0.3, 0.9)
    }

    #[test]
    fn back_substitution_regime1() {
        let p = ModelParams::baseline();
        let th = baseline_th();
        let s = inner_solve(&p, &th).unwrap();
        assert_eq!(s.regime, Regime::Regime1);
        let [p1, p2, p3] = [s.h.pieces[0], s.h.pieces[1], s.h.pieces[2]];
        let g = s.gamma;
        assert!((p1.system.eval_h(&p1.u, g, th.x_low) + p.c_u).abs() < 1e-10);
        assert!(p1.system.eval_h(&p1.u, g, th.x_kappa).abs() < 1e-10);
        assert!(p2.system.eval_h(&p2.u, g, th.x_kappa).abs() < 1e-10);
        assert!(s.h.integral_ih(th.x_lambda).abs() < 1e-10);
        assert!((p3.system.eval_h(&p3.u, g, th.x_high) - p.c_d).abs() < 1e-10);
        let h2 = p2.system.eval_h(&p2.u, g, th.x_lambda);
        assert!((p3.system.eval_h(&p3.u, g, th.x_lambda) - h2).abs() < 1e-10);
        assert!(s.determinants.signs_ok(), "{:?}", s.determinants);
    }

    #[test]
    fn gamma_formula_identity() {
        let p = ModelParams::baseline();
        let th = baseline_th();
        let s = inner_solve(&p, &th).unwrap();
        let lhs = s.residuals[0];
        let rhs = 2.0 * (s.gamma - gamma_star(&p, th.x_low)) / (p.sigma * p.sigma);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gamma_is_affine_in_u1() {
        let p = ModelParams::baseline();
        let th = baseline_th();
        let mut w = Vec::new();
        let sys = build_interval(&p, &th, 1, Regime::Regime1, &mut w).unwrap();
        let ga = gamma_affine(&p, &sys, th.x_low);
        let pts = [(0.1, 0.2), (0.5, -0.3), (-1.0, 2.0)];
        for (m, pl) in pts {
            let u = AnchoredCoefficients::new(m, pl);
            let gamma = ga.eval(&u);
            let direct = 0.5 * p.sigma * p.sigma * sys.eval_h_prime(&u, gamma, th.x_low) + gamma_star(&p, th.x_low);
            assert!((gamma - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn theta1_sign_with_regular_particular() {
        let p = ModelParams {
            b: 1.6592824984286336,
            delta: 0.5200020637436018,
            r: 0.26130141788491856,
            eps: 0.5092611402188459,
            sigma: 2.7467969804539205,
            mu: 4.0472001936406,
            c_u: 2.155744281486346,
            c_d: 2.042145977444358,
        };
        let th = Thresholds::new(0.43750724227116944, 3.0788757808874774, 4.338457072608803, 3.1681964070493835);
        let sys = build_interval(&p, &th, 1, Regime::Regime1, &mut Vec::new()).unwrap();
        assert!(matches!(sys.particular, crate::ode::Particular::Regular { .. }));
        assert!(gamma_affine(&p, &sys, th.x_low).s < 0.0);
        let s = inner_solve(&p, &th).unwrap();
        assert!(s.determinants.theta1 < 0.0, "{:?}", s.determinants);
    }

    #[test]
    fn regime2_branch() {
        let p = ModelParams::baseline();
        let th = Thresholds::new(-0.8, -0.2, 1.9, 0.9);
        let s = inner_solve(&p, &th).unwrap();
        assert_eq!(s.regime, Regime::Regime2);
        assert_eq!(s.h.pieces.len(), 2);
        assert_eq!(s.coefficients()[2], AnchoredCoefficients::default());
        let p2 = s.h.pieces[1];
        assert!(p2.system.eval_h(&p2.u, s.gamma, th.x_kappa).abs() < 1e-10);
        assert!((p2.system.eval_h(&p2.u, s.gamma, th.x_high) - p.c_d).abs() < 1e-10);
        assert_eq!(s.h.value(th.x_high + 0.5), p.c_d);
        assert!(s.determinants.theta3.is_none());
        assert!((s.residuals[3] - s.h.integral_ih(th.x_lambda)).abs() == 0.0);
    }

    #[test]
    fn tails_of_integral() {
        let s = inner_solve(&ModelParams::baseline(), &baseline_th()).unwrap();
        assert_eq!(s.h.integral_ih(-0.8), -1.0);
        assert_eq!(s.h.integral_ih(-5.0), -1.0);
        assert!((s.h.integral_ih(60.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_h_integrates_to_constant() {
        let h = PiecewiseH {
            c_u: -0.4,
            c_d: 0.4,
            mu: 1.3,
            x_low: 0.0,
            x_high: 0.0,
            gamma: 0.0,
            pieces: Vec::new(),
        };
        // empty band with equal tails: H = 0.4 everywhere
        for x in [-1.0, 0.5, 2.0] {
            assert!((h.integral_ih(x) - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn unordered_thresholds_rejected() {
        let th = Thresholds::new(0.0, -1.0, 1.0, 2.0);
        assert!(inner_solve(&ModelParams::baseline(), &th).is_err());
    }

    #[test]
    fn nonrobust_back_substitution() {
        let (piece, gamma, theta) = nonrobust_inner(&ModelParams::baseline(), -0.7, 0.8).unwrap();
        assert!((piece.system.eval_h(&piece.u, gamma, -0.7) + 1.0).abs() < 1e-10);
        assert!((piece.system.eval_h(&piece.u, gamma, 0.8) - 1.0).abs() < 1e-10);
        assert!(theta < 0.0);
        assert_eq!(piece.system.kappa, 0.0);
        assert_eq!(piece.system.lambda, 1.0);
    }
}
