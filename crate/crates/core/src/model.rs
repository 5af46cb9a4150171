//! Problem parameters, threshold bookkeeping and the closed-form bounds.
//!
//! Jumps are negative exponential with rate `mu`, the drift is constant and the
//! running cost is `c(x) = x^2`. The bound helpers (`intervention_rate_bound`,
//! `gamma_upper_bound`, `min_gamma_upper_bound`) are pure arithmetic and do not
//! validate: they also accept the `r = 0` and `eps = 1` limits.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

/// The eight scalars defining one problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub b: f64,
    pub delta: f64,
    pub r: f64,
    pub eps: f64,
    pub sigma: f64,
    pub mu: f64,
    #[serde(rename = "cU")]
    pub c_u: f64,
    #[serde(rename = "cD")]
    pub c_d: f64,
}

impl ModelParams {
    /// Baseline parameters: `b=0, delta=1, r=1, eps=0.5, sigma=mu=cU=cD=1`.
    pub fn baseline() -> Self {
        ModelParams {
            b: 0.0,
            delta: 1.0,
            r: 1.0,
            eps: 0.5,
            sigma: 1.0,
            mu: 1.0,
            c_u: 1.0,
            c_d: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.b, self.delta, self.r, self.eps, self.sigma, self.mu, self.c_u, self.c_d,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::domain("parameters must be finite"));
        }
        if self.sigma <= 0.0 {
            return Err(SolverError::domain("sigma must be > 0"));
        }
        if self.r <= 0.0 {
            return Err(SolverError::domain("r must be > 0"));
        }
        if self.mu <= 0.0 {
            return Err(SolverError::domain("mu must be > 0"));
        }
        if self.c_u <= 0.0 {
            return Err(SolverError::domain("cU must be > 0"));
        }
        if self.c_d <= 0.0 {
            return Err(SolverError::domain("cD must be > 0"));
        }
        if self.delta < 0.0 {
            return Err(SolverError::domain("delta must be >= 0"));
        }
        if self.eps < 0.0 {
            return Err(SolverError::domain("eps must be >= 0"));
        }
        if self.eps >= 1.0 {
            return Err(SolverError::domain("eps must be < 1"));
        }
        Ok(())
    }

    /// `E[Y] = -1/mu`.
    pub fn jump_mean(&self) -> f64 {
        -1.0 / self.mu
    }

    /// `E[|Y|] = 1/mu`.
    pub fn jump_abs_mean(&self) -> f64 {
        1.0 / self.mu
    }

    /// `E[Y^2] = 2/mu^2`.
    pub fn jump_second_moment(&self) -> f64 {
        2.0 / (self.mu * self.mu)
    }

    /// The benchmark model: same parameters with both ambiguity radii set to zero.
    pub fn benchmark(&self) -> Self {
        ModelParams {
            delta: 0.0,
            eps: 0.0,
            ..*self
        }
    }

    /// Sets a parameter by its sweep name; `inv_mu` sets `mu = 1/value`.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        let mut p = *self;
        match name {
            "b" => p.b = value,
            "delta" => p.delta = value,
            "r" => p.r = value,
            "eps" => p.eps = value,
            "sigma" => p.sigma = value,
            "mu" => p.mu = value,
            "inv_mu" => {
                if value <= 0.0 {
                    return Err(SolverError::domain("inv_mu must be > 0"));
                }
                p.mu = 1.0 / value
            }
            "cU" => p.c_u = value,
            "cD" => p.c_d = value,
            other => return Err(SolverError::domain(format!("unknown parameter '{other}'"))),
        }
        Ok(p)
    }

    /// `K_1 = |b| + sigma*delta + eps*r*E|Y|`.
    fn rate_constant(&self) -> f64 {
        self.b.abs() + self.sigma * self.delta + self.eps * self.r * self.jump_abs_mean()
    }

    /// `K_2 = sigma^2 + r(1+eps)E[Y^2]`.
    fn rate_scale(&self) -> f64 {
        self.sigma * self.sigma + self.r * (1.0 + self.eps) * self.jump_second_moment()
    }
}

/// Ordered barriers and ambiguity switch points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub x_low: f64,
    pub x_kappa: f64,
    pub x_lambda: f64,
    pub x_high: f64,
}

impl Thresholds {
    pub fn new(x_low: f64, x_kappa: f64, x_lambda: f64, x_high: f64) -> Self {
        Thresholds {
            x_low,
            x_kappa,
            x_lambda,
            x_high,
        }
    }

    /// `x_low < x_kappa < x_high` and `x_kappa < x_lambda`, all finite.
    pub fn is_ordered(&self) -> bool {
        let finite = [self.x_low, self.x_kappa, self.x_lambda, self.x_high]
            .iter()
            .all(|v| v.is_finite());
        finite
            && self.x_low < self.x_kappa
            && self.x_kappa < self.x_high
            && self.x_kappa < self.x_lambda
    }

    pub fn check_ordered(&self) -> Result<()> {
        if self.is_ordered() {
            Ok(())
        } else {
            Err(SolverError::domain(format!(
                "thresholds not ordered: {:?}",
                [self.x_low, self.x_kappa, self.x_lambda, self.x_high]
            )))
        }
    }

    pub fn regime(&self) -> Regime {
        if self.x_lambda < self.x_high {
            Regime::Regime1
        } else {
            Regime::Regime2
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_low, self.x_kappa, self.x_lambda, self.x_high]
    }

    pub fn width(&self) -> f64 {
        self.x_high - self.x_low
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `x_lambda < x_high`: three intervals inside the band.
    Regime1,
    /// `x_lambda >= x_high`: the low-intensity region lies outside the band.
    Regime2,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Regime1 => f.write_str("Regime1"),
            Regime::Regime2 => f.write_str("Regime2"),
        }
    }
}

/// Long-run intervention-rate bound `K(x1, x2)` for the reflecting band `[x1, x2]`.
pub fn intervention_rate_bound(params: &ModelParams, x1: f64, x2: f64) -> Result<f64> {
    if !(x1 < x2) {
        return Err(SolverError::domain("x1 must be < x2"));
    }
    Ok(params.rate_constant() + params.rate_scale() / (x2 - x1))
}

/// Upper bound `Gamma(x1, x2) = max c + (cU + cD) K(x1, x2)` on the ergodic value.
pub fn gamma_upper_bound(params: &ModelParams, x1: f64, x2: f64) -> Result<f64> {
    let k = intervention_rate_bound(params, x1, x2)?;
    Ok((x1 * x1).max(x2 * x2) + (params.c_u + params.c_d) * k)
}

/// Closed-form minimum of `Gamma` over all bands.
pub fn min_gamma_upper_bound(params: &ModelParams) -> f64 {
    let cost = params.c_u + params.c_d;
    cost * params.rate_constant() + 3.0 * (cost * params.rate_scale() / 4.0).powf(2.0 / 3.0)
}

/// Width `L* = (2 (cU + cD) K_2)^{1/3}` of the band minimizing `Gamma`.
pub fn optimal_bound_width(params: &ModelParams) -> f64 {
    (2.0 * (params.c_u + params.c_d) * params.rate_scale()).cbrt()
}

/// Outcome of the parametric Regime-1 test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Regime1Check {
    /// `min Gamma < cD (delta sigma + b + r/mu)`.
    pub main: bool,
    /// The simpler test in terms of `K1_hat, K2_hat, K3_hat`.
    pub simple: bool,
}

pub fn regime1_sufficient(params: &ModelParams) -> Regime1Check {
    let p = params;
    let main = min_gamma_upper_bound(p) < p.c_d * (p.delta * p.sigma + p.b + p.r / p.mu);

    let cost = p.c_u + p.c_d;
    let k1 = p.c_d - cost * p.eps;
    let k2 = p.c_u * (p.b + p.delta * p.sigma) + 3.0 * (cost * p.sigma * p.sigma / 4.0).powf(2.0 / 3.0);
    let k3 = 3.0 * (cost / 4.0).powf(2.0 / 3.0) * (2.0 * (1.0 + p.eps) / p.mu).powf(2.0 / 3.0);
    let simple = p.b >= 0.0
        && p.eps < p.c_d / cost
        && k1 > 0.0
        && (p.r / p.mu).cbrt() > (2.0 * k3 / k1).max((2.0 * k2 / k1).cbrt());

    Regime1Check { main, simple }
}

/// Worst-case drift distortion: `+delta` on `[x_kappa, inf)`, `-delta` below.
pub fn worst_case_drift(x: f64, th: &Thresholds, params: &ModelParams) -> f64 {
    if x >= th.x_kappa {
        params.delta
    } else {
        -params.delta
    }
}

/// Worst-case jump intensity: `r(1+eps)` on `(-inf, x_lambda]`, `r(1-eps)` above.
pub fn worst_case_intensity(x: f64, th: &Thresholds, params: &ModelParams) -> f64 {
    if x <= th.x_lambda {
        params.r * (1.0 + params.eps)
    } else {
        params.r * (1.0 - params.eps)
    }
}

/// `gamma_* = cU (delta sigma - b + eps r / mu) + x_low^2`.
pub fn gamma_star(params: &ModelParams, x_low: f64) -> f64 {
    let p = params;
    p.c_u * (p.delta * p.sigma - p.b + p.eps * p.r / p.mu) + x_low * x_low
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_jump(b: f64, delta: f64, sigma: f64) -> ModelParams {
        ModelParams {
            b,
            delta,
            r: 0.0,
            eps: 0.0,
            sigma,
            mu: 1.0,
            c_u: 1.0,
            c_d: 1.0,
        }
    }

    #[test]
    fn validation() {
        assert!(ModelParams::baseline().validate().is_ok());
        let p = ModelParams {
            eps: 1.0,
            ..ModelParams::baseline()
        };
        assert_eq!(p.validate(), Err(SolverError::domain("eps must be < 1")));
        let p = ModelParams {
            sigma: 0.0,
            ..ModelParams::baseline()
        };
        assert_eq!(p.validate(), Err(SolverError::domain("sigma must be > 0")));
        let p = ModelParams {
            delta: -0.1,
            ..ModelParams::baseline()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn jump_moments() {
        let p = ModelParams {
            mu: 2.0,
            ..ModelParams::baseline()
        };
        assert_eq!(p.jump_mean(), -0.5);
        assert_eq!(p.jump_abs_mean(), 0.5);
        assert_eq!(p.jump_second_moment(), 0.5);
    }

    #[test]
    fn rate_bound_hand_values() {
        let k = intervention_rate_bound(&no_jump(0.0, 0.0, 1.0), -1.0, 1.0).unwrap();
        assert!((k - 0.5).abs() < 1e-15);

        let p = ModelParams {
            b: 0.0,
            delta: 0.0,
            r: 1.0,
            eps: 1.0,
            sigma: 1.0,
            mu: 1.0,
            c_u: 1.0,
            c_d: 1.0,
        };
        let k = intervention_rate_bound(&p, 0.0, 1.0).unwrap();
        assert!((k - 6.0).abs() < 1e-15);

        let k = intervention_rate_bound(&no_jump(1.0, 1.0, 2.0), 0.0, 2.0).unwrap();
        assert!((k - 5.0).abs() < 1e-15);

        assert!(intervention_rate_bound(&ModelParams::baseline(), 1.0, 1.0).is_err());
    }

    #[test]
    fn gamma_bound_hand_values() {
        let g = gamma_upper_bound(&no_jump(0.0, 0.0, 1.0), -1.0, 1.0).unwrap();
        assert!((g - 2.0).abs() < 1e-15);
        assert!(gamma_upper_bound(&no_jump(0.0, 0.0, 1.0), 0.3, 0.3).is_err());
    }

    #[test]
    fn min_gamma_closed_form() {
        let p = no_jump(0.0, 0.0, 1.0);
        let expected = 3.0 * (0.5f64).powf(2.0 / 3.0);
        assert!((min_gamma_upper_bound(&p) - expected).abs() < 1e-15);
        assert!((expected - 1.889882).abs() < 1e-6);

        // the minimizing band is centred at zero with width L*
        for p in [ModelParams::baseline(), no_jump(0.0, 0.0, 1.0), no_jump(3.0, 2.0, 0.5)] {
            let l = optimal_bound_width(&p);
            let g = gamma_upper_bound(&p, -l / 2.0, l / 2.0).unwrap();
            assert!((g - min_gamma_upper_bound(&p)).abs() < 1e-12 * g.max(1.0));
        }
    }

    #[test]
    fn regime1_test_cases() {
        // b >= 0, small eps and r large enough for the simpler test
        let mut p = ModelParams {
            b: 0.5,
            eps: 0.1,
            ..ModelParams::baseline()
        };
        p.r = 1.0;
        while !regime1_sufficient(&p).simple {
            p.r *= 2.0;
            assert!(p.r < 1e12);
        }
        assert_eq!(regime1_sufficient(&p), Regime1Check { main: true, simple: true });

        let p = ModelParams {
            b: -50.0,
            delta: 0.0,
            r: 0.1,
            ..ModelParams::baseline()
        };
        assert!(p.c_d * (p.delta * p.sigma + p.b + p.r / p.mu) <= 0.0);
        assert!(!regime1_sufficient(&p).main);
    }

    #[test]
    fn bang_bang_ties() {
        let p = ModelParams::baseline();
        let th = Thresholds::new(-1.0, 0.0, 0.5, 1.0);
        assert_eq!(worst_case_drift(0.0, &th, &p), 1.0);
        assert_eq!(worst_case_drift(-1.0, &th, &p), -1.0);
        assert_eq!(worst_case_intensity(0.5, &th, &p), 1.5);
        assert_eq!(worst_case_intensity(1.5, &th, &p), 0.5);

        let flat = ModelParams {
            delta: 0.0,
            eps: 0.0,
            ..p
        };
        for x in [-3.0, 0.0, 0.2, 4.0] {
            assert_eq!(worst_case_drift(x, &th, &flat).abs(), 0.0);
            assert_eq!(worst_case_intensity(x, &th, &flat), flat.r);
        }
    }

    #[test]
    fn gamma_star_values() {
        let p = ModelParams::baseline();
        assert!((gamma_star(&p, -0.5) - 1.75).abs() < 1e-15);
        let flat = ModelParams {
            delta: 0.0,
            eps: 0.0,
            ..p
        };
        assert_eq!(gamma_star(&flat, 0.0), 0.0);
    }

    #[test]
    fn json_keys() {
        let s = serde_json::to_string(&ModelParams::baseline()).unwrap();
        for key in ["\"b\"", "\"delta\"", "\"r\"", "\"eps\"", "\"sigma\"", "\"mu\"", "\"cU\"", "\"cD\""] {
            assert!(s.contains(key), "{s}");
        }
        let back: ModelParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ModelParams::baseline());
    }

    #[test]
    fn with_param_inverse_mu() {
        let p = ModelParams::baseline().with_param("inv_mu", 0.5).unwrap();
        assert_eq!(p.mu, 2.0);
        assert!(ModelParams::baseline().with_param("zeta", 1.0).is_err());
    }
}
