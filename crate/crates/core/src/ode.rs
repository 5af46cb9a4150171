//! Per-interval ODE data and the anchored exponential representation of `H`.
//!
//! On each interval the derivative `H = V'` solves
//! `a3 H'' + a2 H' + a1 H + mu x^2 + 2x - mu gamma = 0`
//! with constant coefficients fixed by the active distortion pair. Solutions are
//! written as `u- phi-(x) + u+ phi+(x) + q(x) + gamma g(x)` where
//! `phi(x) = exp(-rho (x - anchor))` and `q + gamma g` is a particular polynomial.

use serde::Serialize;

use crate::error::{push_unique, Result, SolverError, Warning};
use crate::model::{ModelParams, Regime, Thresholds};
use crate::stable::exp_affine_integral;

/// Relative size of `a1` under which the cubic particular solution is used.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Root gap under which a near-double-root warning is raised.
pub const DOUBLE_ROOT_TOL: f64 = 1e-8;
/// `|mu - rho|` under which a near-resonance warning is raised.
pub const RESONANCE_TOL: f64 = 1e-8;
/// Largest `|rho-| (hi - lo)` for which the regular particular solution is used.
const REGULAR_SPAN: f64 = 1.0;
/// Quadratic-branch coefficient size above which the regular form replaces it.
const REGULAR_TRIGGER: f64 = 1e3;

/// Particular solution family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Particular {
    /// `c2 x^2 + c1 x + d0 + (mu / a1) gamma`.
    Quadratic { c2: f64, c1: f64, d0: f64 },
    /// `c3 x^3 + c2 x^2 + c1 x + (mu / a2) gamma x`, used when `a1` vanishes.
    Cubic { c3: f64, c2: f64, c1: f64 },
    /// `y(x) = int_c^x e^{-rho (x - s)} g(s) ds` with `rho = rho-` small and
    /// `g = f / (a3 (D + rho+))` quadratic in `s - c`.
    ///
    /// Differs from the quadratic branch by a multiple of `phi-`, but stays
    /// bounded as `a1 -> 0` where the quadratic coefficients blow up like `1/a1^3`.
    Regular { center: f64, rho: f64, g: [f64; 3], g_gamma: f64 },
}

/// `phi_n(z) = sum_j z^j / (j + n)!` for `n = 1, 2, 3`, by series (`|z| <= 1` here).
fn phi_functions(z: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (n, slot) in out.iter_mut().enumerate() {
        let mut term = 1.0;
        for k in 1..=(n + 1) {
            term /= k as f64;
        }
        let mut sum = 0.0;
        for j in 0..30 {
            sum += term;
            term *= z / (j + n + 2) as f64;
            if term.abs() < 1e-18 * sum.abs() {
                sum += term;
                break;
            }
        }
        *slot = sum;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalSystem {
    pub index: usize,
    pub kappa: f64,
    pub lambda: f64,
    pub mu: f64,
    pub a3: f64,
    pub a2: f64,
    pub a1: f64,
    /// Effective drift `b + sigma kappa + r / mu`.
    pub a_star: f64,
    pub rho_minus: f64,
    pub rho_plus: f64,
    pub particular: Particular,
    pub lo: f64,
    pub hi: f64,
    pub anchor_minus: f64,
    pub anchor_plus: f64,
}

/// Scaled homogeneous coefficients of one interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AnchoredCoefficients {
    pub minus: f64,
    pub plus: f64,
}

impl AnchoredCoefficients {
    pub fn new(minus: f64, plus: f64) -> Self {
        AnchoredCoefficients { minus, plus }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.minus, self.plus]
    }
}

fn anchor(rho: f64, lo: f64, hi: f64) -> f64 {
    if rho >= 0.0 {
        lo
    } else {
        hi
    }
}

fn horner(c: &[f64; 4], x: f64) -> f64 {
    ((c[3] * x + c[2]) * x + c[1]) * x + c[0]
}

fn derivative(c: &[f64; 4]) -> [f64; 4] {
    [c[1], 2.0 * c[2], 3.0 * c[3], 0.0]
}

impl IntervalSystem {
    /// Builds the ODE data for drift distortion `kappa` and jump intensity `lambda` on `[lo, hi]`.
    pub fn from_ode(
        index: usize,
        params: &ModelParams,
        kappa: f64,
        lambda: f64,
        lo: f64,
        hi: f64,
        warnings: &mut Vec<Warning>,
    ) -> Self {
        let p = params;
        let a3 = 0.5 * p.sigma * p.sigma;
        let a_star = p.b + p.sigma * kappa + p.r / p.mu;
        let a2 = a_star + 0.5 * p.mu * p.sigma * p.sigma;
        let a1 = p.mu * a_star - lambda;
        let disc = a2 * a2 - 4.0 * a3 * a1;
        let sq = disc.max(0.0).sqrt();
        // the larger-magnitude root is computed directly, the other from Vieta
        let (rho_plus, rho_minus) = if a2 >= 0.0 {
            let rp = (a2 + sq) / (2.0 * a3);
            (rp, a1 / (a3 * rp))
        } else {
            let rm = (a2 - sq) / (2.0 * a3);
            (a1 / (a3 * rm), rm)
        };
        if rho_plus - rho_minus < DOUBLE_ROOT_TOL {
            push_unique(
                warnings,
                Warning::NearDoubleRoot {
                    interval: index,
                    gap: rho_plus - rho_minus,
                },
            );
        }
        for rho in [rho_minus, rho_plus] {
            if (p.mu - rho).abs() < RESONANCE_TOL {
                push_unique(
                    warnings,
                    Warning::NearResonance {
                        interval: index,
                        rho,
                        mu: p.mu,
                    },
                );
            }
        }
        if a1.abs() < DEGENERACY_TOL * a2.abs().max(1.0) {
            push_unique(warnings, Warning::DegenerateCoefficient { interval: index, a1 });
        }
        let mut sys = IntervalSystem {
            index,
            kappa,
            lambda,
            mu: p.mu,
            a3,
            a2,
            a1,
            a_star,
            rho_minus,
            rho_plus,
            particular: Particular::Quadratic { c2: 0.0, c1: 0.0, d0: 0.0 },
            lo,
            hi,
            anchor_minus: anchor(rho_minus, lo, hi),
            anchor_plus: anchor(rho_plus, lo, hi),
        };
        sys.particular = sys.select_particular(p.mu);
        sys
    }

    fn select_particular(&self, mu: f64) -> Particular {
        let (a3, a2, a1) = (self.a3, self.a2, self.a1);
        if a1.abs() < DEGENERACY_TOL * a2.abs().max(1.0) {
            let c3 = -mu / (3.0 * a2);
            let c2 = -(6.0 * a3 * c3 + 2.0) / (2.0 * a2);
            let c1 = -2.0 * a3 * c2 / a2;
            return Particular::Cubic { c3, c2, c1 };
        }
        let c2 = -mu / a1;
        let c1 = 2.0 * (mu * a2 - a1) / (a1 * a1);
        let d0 = (2.0 * a1 * a2 + 2.0 * mu * a1 * a3 - 2.0 * mu * a2 * a2) / (a1 * a1 * a1);
        let scale = self.lo.abs().max(self.hi.abs()).max(1.0);
        let size = d0.abs().max(c1.abs() * scale).max(c2.abs() * scale * scale);
        let rho = self.rho_minus;
        let rp = self.rho_plus;
        if size > REGULAR_TRIGGER
            && rp > 0.0
            && rho.abs() * (self.hi - self.lo) <= REGULAR_SPAN
            && rho.abs() <= 0.5 * mu
        {
            let c = 0.5 * (self.lo + self.hi);
            // forcing -(mu x^2 + 2x) in powers of t = x - c, then (D + rho+)^{-1} / a3
            let f = [-(mu * c * c + 2.0 * c), -(2.0 * mu * c + 2.0), -mu];
            let g = [
                (f[0] / rp - f[1] / (rp * rp) + 2.0 * f[2] / (rp * rp * rp)) / a3,
                (f[1] / rp - 2.0 * f[2] / (rp * rp)) / a3,
                f[2] / rp / a3,
            ];
            return Particular::Regular {
                center: c,
                rho,
                g,
                g_gamma: mu / (a3 * rp),
            };
        }
        Particular::Quadratic { c2, c1, d0 }
    }

    /// Same coefficients, new endpoints and anchors.
    pub fn with_bounds(&self, lo: f64, hi: f64) -> Self {
        let mut sys = IntervalSystem {
            lo,
            hi,
            anchor_minus: anchor(self.rho_minus, lo, hi),
            anchor_plus: anchor(self.rho_plus, lo, hi),
            ..*self
        };
        sys.particular = sys.select_particular(self.mu);
        sys
    }

    pub fn is_cubic(&self) -> bool {
        matches!(self.particular, Particular::Cubic { .. })
    }

    /// Polynomial particular solution `q + gamma g` in ascending powers of `x`.
    fn poly_coeffs(&self, gamma: f64) -> Option<[f64; 4]> {
        match self.particular {
            Particular::Quadratic { c2, c1, d0 } => Some([d0 + gamma * self.mu / self.a1, c1, c2, 0.0]),
            Particular::Cubic { c3, c2, c1 } => Some([0.0, c1 + gamma * self.mu / self.a2, c2, c3]),
            Particular::Regular { .. } => None,
        }
    }

    /// Value and first two derivatives of the particular solution.
    pub fn particular_at(&self, gamma: f64, x: f64) -> [f64; 3] {
        match self.particular {
            Particular::Regular { center, rho, g, g_gamma } => {
                let t = x - center;
                let gg = [g[0] + gamma * g_gamma, g[1], g[2]];
                let ph = phi_functions(-rho * t);
                let y = t * (gg[0] * ph[0] + t * (gg[1] * ph[1] + 2.0 * t * gg[2] * ph[2]));
                let src = gg[0] + t * (gg[1] + t * gg[2]);
                let y1 = src - rho * y;
                let y2 = gg[1] + 2.0 * t * gg[2] - rho * y1;
                [y, y1, y2]
            }
            _ => {
                let c = self.poly_coeffs(gamma).unwrap_or_default();
                let d = derivative(&c);
                [horner(&c, x), horner(&d, x), horner(&derivative(&d), x)]
            }
        }
    }

    /// `gamma`-free particular part.
    pub fn q(&self, x: f64) -> f64 {
        self.particular_at(0.0, x)[0]
    }

    pub fn q_prime(&self, x: f64) -> f64 {
        self.particular_at(0.0, x)[1]
    }

    /// Function multiplying `gamma` in `H`; the constant `mu / a1` in the quadratic branch.
    pub fn gamma_weight(&self, x: f64) -> f64 {
        self.particular_at(1.0, x)[0] - self.particular_at(0.0, x)[0]
    }

    pub fn gamma_weight_prime(&self, x: f64) -> f64 {
        match self.particular {
            Particular::Quadratic { .. } => 0.0,
            Particular::Cubic { .. } => self.mu / self.a2,
            Particular::Regular { center, rho, g_gamma, .. } => {
                let t = x - center;
                g_gamma * (1.0 - rho * t * phi_functions(-rho * t)[0])
            }
        }
    }

    /// `[phi-(x), phi+(x)]`.
    pub fn basis(&self, x: f64) -> [f64; 2] {
        [
            (-self.rho_minus * (x - self.anchor_minus)).exp(),
            (-self.rho_plus * (x - self.anchor_plus)).exp(),
        ]
    }

    pub fn basis_prime(&self, x: f64) -> [f64; 2] {
        let b = self.basis(x);
        [-self.rho_minus * b[0], -self.rho_plus * b[1]]
    }

    pub fn eval_h(&self, u: &AnchoredCoefficients, gamma: f64, x: f64) -> f64 {
        let b = self.basis(x);
        u.minus * b[0] + u.plus * b[1] + self.particular_at(gamma, x)[0]
    }

    pub fn eval_h_prime(&self, u: &AnchoredCoefficients, gamma: f64, x: f64) -> f64 {
        let b = self.basis_prime(x);
        u.minus * b[0] + u.plus * b[1] + self.particular_at(gamma, x)[1]
    }

    pub fn eval_h_second(&self, u: &AnchoredCoefficients, gamma: f64, x: f64) -> f64 {
        let b = self.basis(x);
        let rm = self.rho_minus;
        let rp = self.rho_plus;
        u.minus * rm * rm * b[0]
            + u.plus * rp * rp * b[1]
            + self.particular_at(gamma, x)[2]
    }

    /// `[mu int_a^b phi(z) e^{mu (z - x)} dz]` for both basis functions.
    pub fn basis_ih(&self, a: f64, b: f64, x: f64) -> [f64; 2] {
        let len = b - a;
        let one = |rho: f64, xa: f64| {
            let fa = -rho * (a - xa) + self.mu * (a - x);
            let fb = -rho * (b - xa) + self.mu * (b - x);
            self.mu * exp_affine_integral(fa, fb, len)
        };
        [one(self.rho_minus, self.anchor_minus), one(self.rho_plus, self.anchor_plus)]
    }

    /// `mu int_a^b P(z) e^{mu (z - x)} dz` for the particular solution `P`.
    pub fn poly_ih(&self, gamma: f64, a: f64, b: f64, x: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match self.particular {
            Particular::Regular { center, rho, g, g_gamma } => {
                // integrate by parts using y' = g - rho y
                let mu = self.mu;
                let src = [g[0] + gamma * g_gamma, g[1], g[2], 0.0];
                let ig = poly_exp_integral(&src, mu, a - center, b - center, x - center);
                let ya = self.particular_at(gamma, a)[0];
                let yb = self.particular_at(gamma, b)[0];
                let boundary = yb * (mu * (b - x)).exp() - ya * (mu * (a - x)).exp();
                (boundary - ig / mu) / (1.0 - rho / mu)
            }
            _ => poly_exp_integral(&self.poly_coeffs(gamma).unwrap_or_default(), self.mu, a, b, x),
        }
    }

    /// ODE left-hand side at `x`; zero for an exact solution.
    pub fn ode_residual(&self, u: &AnchoredCoefficients, gamma: f64, x: f64) -> f64 {
        let h = self.eval_h(u, gamma, x);
        let h1 = self.eval_h_prime(u, gamma, x);
        let h2 = self.eval_h_second(u, gamma, x);
        let a1 = if self.is_cubic() { 0.0 } else { self.a1 };
        self.a3 * h2 + self.a2 * h1 + a1 * h + self.mu * x * x + 2.0 * x - self.mu * gamma
    }
}

/// `mu int_a^b P(z) e^{mu (z - x)} dz` via the antiderivative `e^{mu(z-x)} sum_k (-1)^k P^(k)(z) / mu^k`.
pub fn poly_exp_integral(c: &[f64; 4], mu: f64, a: f64, b: f64, x: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let anti = |z: f64| {
        let mut p = *c;
        let mut sum = 0.0;
        let mut scale = 1.0;
        for _ in 0..4 {
            sum += scale * horner(&p, z);
            p = derivative(&p);
            scale *= -1.0 / mu;
        }
        sum
    };
    (mu * (b - x)).exp() * anti(b) - (mu * (a - x)).exp() * anti(a)
}

/// Distortion pair `(kappa, lambda)` active on interval `i`.
pub fn interval_distortion(params: &ModelParams, i: usize) -> (f64, f64) {
    let p = params;
    match i {
        1 => (-p.delta, p.r * (1.0 + p.eps)),
        2 => (p.delta, p.r * (1.0 + p.eps)),
        _ => (p.delta, p.r * (1.0 - p.eps)),
    }
}

/// Endpoints of interval `i` for the given regime.
pub fn interval_bounds(th: &Thresholds, i: usize, regime: Regime) -> Result<(f64, f64)> {
    match (i, regime) {
        (1, _) => Ok((th.x_low, th.x_kappa)),
        (2, Regime::Regime1) => Ok((th.x_kappa, th.x_lambda)),
        (2, Regime::Regime2) => Ok((th.x_kappa, th.x_high)),
        (3, Regime::Regime1) => Ok((th.x_lambda, th.x_high)),
        (3, Regime::Regime2) => Err(SolverError::domain("interval 3 is absent in Regime 2")),
        _ => Err(SolverError::domain(format!("interval index {i} out of range"))),
    }
}

pub fn build_interval(
    params: &ModelParams,
    th: &Thresholds,
    i: usize,
    regime: Regime,
    warnings: &mut Vec<Warning>,
) -> Result<IntervalSystem> {
    let (lo, hi) = interval_bounds(th, i, regime)?;
    let (kappa, lambda) = interval_distortion(params, i);
    Ok(IntervalSystem::from_ode(i, params, kappa, lambda, lo, hi, warnings))
}
