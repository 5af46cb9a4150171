//! Monte Carlo simulation of the band-reflected jump-diffusion.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SolverError};
use crate::model::{ModelParams, Thresholds};

/// Bridge crossings less likely than `exp(-2 * BRIDGE_CUTOFF)` are skipped.
const BRIDGE_CUTOFF: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub t: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub burn_in_fraction: f64,
    pub x0: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { t: 1e4, dt: 1e-3, n_paths: 64, seed: 0, burn_in_fraction: 0.2, x0: 0.0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::Config("dt must be > 0".into()));
        }
        if !(self.t.is_finite() && self.t >= self.dt) {
            return Err(SolverError::Config("horizon must be finite and >= dt".into()));
        }
        if self.n_paths == 0 {
            return Err(SolverError::Config("n_paths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(SolverError::Config("burn_in_fraction must lie in [0, 1)".into()));
        }
        if !self.x0.is_finite() {
            return Err(SolverError::Config("x0 must be finite".into()));
        }
        Ok(())
    }

    fn steps(&self) -> (usize, usize) {
        let n = (self.t / self.dt).round().max(1.0) as usize;
        let burn = ((self.burn_in_fraction * n as f64).round() as usize).min(n - 1);
        (n, burn)
    }
}

/// Distortion policy applied along the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distortion {
    /// Benchmark model: `kappa = 0`, `lambda = r`.
    None,
    /// `kappa = -delta` below `x_kappa`, `+delta` above; `lambda = r(1+eps)` up to `x_lambda`, `r(1-eps)` above.
    BangBang { x_kappa: f64, x_lambda: f64 },
}

impl Distortion {
    pub fn from_thresholds(th: &Thresholds) -> Self {
        Distortion::BangBang { x_kappa: th.x_kappa, x_lambda: th.x_lambda }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEstimate {
    pub cost_rate_mean: f64,
    pub cost_rate_stderr: f64,
    pub up_rate: f64,
    pub down_rate: f64,
    pub path_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathPoint {
    pub t: f64,
    pub x: f64,
    pub u: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathRecord {
    pub points: Vec<PathPoint>,
}

impl PathRecord {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "x", "u", "d"])?;
        for p in &self.points {
            wr.write_record([p.t.to_string(), p.x.to_string(), p.u.to_string(), p.d.to_string()])?;
        }
        wr.flush()
    }
}

/// Parameter checks for simulation; unlike the solver, `r = 0` (no jumps) is allowed.
fn validate_params(p: &ModelParams) -> Result<()> {
    let all = [p.b, p.delta, p.r, p.eps, p.sigma, p.mu, p.c_u, p.c_d];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Config("parameters must be finite".into()));
    }
    if p.sigma <= 0.0 || p.mu <= 0.0 {
        return Err(SolverError::Config("sigma and mu must be > 0".into()));
    }
    if p.r < 0.0 || p.delta < 0.0 || p.c_u < 0.0 || p.c_d < 0.0 {
        return Err(SolverError::Config("r, delta, cU, cD must be >= 0".into()));
    }
    if !(0.0..=1.0).contains(&p.eps) {
        return Err(SolverError::Config("eps must lie in [0, 1]".into()));
    }
    Ok(())
}

struct Stepper {
    b: f64,
    sigma: f64,
    delta: f64,
    comp: f64,
    lam_low: f64,
    lam_high: f64,
    dt: f64,
    sqdt: f64,
    var: f64,
    lo: f64,
    hi: f64,
    mu: f64,
    x_kappa: f64,
    x_lambda: f64,
}

impl Stepper {
    fn new(p: &ModelParams, band: (f64, f64), distortion: Distortion, cfg: &SimConfig) -> Result<Self> {
        validate_params(p)?;
        cfg.validate()?;
        let (lo, hi) = band;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(SolverError::Config("band must satisfy x_low < x_high".into()));
        }
        let lam_max = p.r * (1.0 + p.eps);
        if lam_max > 0.0 && cfg.dt > 0.1 / lam_max {
            return Err(SolverError::Config(format!("dt must be <= {:e} for this jump rate", 0.1 / lam_max)));
        }
        let (delta, lam_low, lam_high, x_kappa, x_lambda) = match distortion {
            Distortion::None => (0.0, p.r, p.r, lo, hi),
            Distortion::BangBang { x_kappa, x_lambda } => {
                (p.delta, p.r * (1.0 + p.eps), p.r * (1.0 - p.eps), x_kappa, x_lambda)
            }
        };
        Ok(Stepper {
            b: p.b,
            sigma: p.sigma,
            delta,
            comp: p.r / p.mu,
            lam_low,
            lam_high,
            dt: cfg.dt,
            sqdt: cfg.dt.sqrt(),
            var: p.sigma * p.sigma * cfg.dt,
            lo,
            hi,
            mu: p.mu,
            x_kappa,
            x_lambda,
        })
    }

    /// Advances one step; returns the new state and the (up, down) pushes.
    fn step<R: Rng>(&self, x: f64, rng: &mut R) -> (f64, f64, f64) {
        let kappa = if x >= self.x_kappa { self.delta } else { -self.delta };
        let lam = if x <= self.x_lambda { self.lam_low } else { self.lam_high };
        let z: f64 = rng.sample(StandardNormal);
        let mut y = x + (self.b + self.sigma * kappa + self.comp) * self.dt + self.sigma * self.sqdt * z;
        let (mut up, mut down) = (0.0, 0.0);

        if lam > 0.0 && rng.random::<f64>() < lam * self.dt {
            let e: f64 = rng.sample(Exp1);
            y -= e / self.mu;
        } else if x - self.lo <= self.hi - x {
            up = self.bridge_push(x - self.lo, y - self.lo, rng);
            y += up;
        } else {
            down = self.bridge_push(self.hi - x, self.hi - y, rng);
            y -= down;
        }

        if y < self.lo {
            up += self.lo - y;
            y = self.lo;
        } else if y > self.hi {
            down += y - self.hi;
            y = self.hi;
        }
        (y, up, down)
    }

    /// Reflection needed to keep a Brownian bridge from `a >= 0` to `c` above zero.
    fn bridge_push<R: Rng>(&self, a: f64, c: f64, rng: &mut R) -> f64 {
        if c > 0.0 && a * c > BRIDGE_CUTOFF * self.var {
            return 0.0;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        let m = 0.5 * (a + c - ((a - c) * (a - c) - 2.0 * self.var * u.ln()).sqrt());
        (-m).max(0.0)
    }
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct PathTotals {
    cost_rate: f64,
    up_rate: f64,
    down_rate: f64,
}

fn run_path(st: &Stepper, cfg: &SimConfig, c_u: f64, c_d: f64, index: u64) -> PathTotals {
    let mut rng = path_rng(cfg.seed, index);
    let (n, burn) = cfg.steps();
    let mut x = cfg.x0.clamp(st.lo, st.hi);
    let (mut cost, mut up, mut down) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (y, du, dd) = st.step(x, &mut rng);
        if k >= burn {
            cost += x * x * st.dt;
            up += du;
            down += dd;
        }
        x = y;
    }
    let span = (n - burn) as f64 * st.dt;
    PathTotals {
        cost_rate: (cost + c_u * up + c_d * down) / span,
        up_rate: up / span,
        down_rate: down / span,
    }
}

/// Estimates the long-run average cost of reflecting at `band` under `distortion`.
pub fn simulate_band(
    params: &ModelParams,
    band: (f64, f64),
    distortion: Distortion,
    cfg: &SimConfig,
) -> Result<SimEstimate> {
    let st = Stepper::new(params, band, distortion, cfg)?;
    let totals: Vec<PathTotals> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| run_path(&st, cfg, params.c_u, params.c_d, i))
        .collect();
    let n = totals.len() as f64;
    let mean = |f: fn(&PathTotals) -> f64| totals.iter().map(f).sum::<f64>() / n;
    let cost_rate_mean = mean(|p| p.cost_rate);
    let cost_rate_stderr = if totals.len() > 1 {
        let ss: f64 = totals.iter().map(|p| (p.cost_rate - cost_rate_mean).powi(2)).sum();
        (ss / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(SimEstimate {
        cost_rate_mean,
        cost_rate_stderr,
        up_rate: mean(|p| p.up_rate),
        down_rate: mean(|p| p.down_rate),
        path_count: totals.len(),
    })
}

/// Records `(t, X_t, U_t, D_t)` at every step of path 0 up to `t_max`.
pub fn sample_path(
    params: &ModelParams,
    band: (f64, f64),
    distortion: Distortion,
    cfg: &SimConfig,
    t_max: f64,
) -> Result<PathRecord> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(SolverError::Config("t_max must be > 0".into()));
    }
    let cfg = SimConfig { t: t_max.max(cfg.dt), ..*cfg };
    let st = Stepper::new(params, band, distortion, &cfg)?;
    let mut rng = path_rng(cfg.seed, 0);
    let (n, _) = cfg.steps();
    let mut x = cfg.x0.clamp(st.lo, st.hi);
    let (mut u, mut d) = (0.0, 0.0);
    let mut points = Vec::with_capacity(n + 1);
    points.push(PathPoint { t: 0.0, x, u, d });
    for k in 1..=n {
        let (y, du, dd) = st.step(x, &mut rng);
        x = y;
        u += du;
        d += dd;
        points.push(PathPoint { t: k as f64 * cfg.dt, x, u, d });
    }
    Ok(PathRecord { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brownian() -> ModelParams {
        ModelParams { b: 0.0, delta: 0.0, r: 0.0, eps: 0.0, sigma: 1.0, mu: 1.0, c_u: 1.0, c_d: 1.0 }
    }

    #[test]
    fn reflected_brownian_oracle() {
        let cfg = SimConfig { t: 2000.0, dt: 1e-3, n_paths: 16, seed: 7, ..SimConfig::default() };
        let est = simulate_band(&brownian(), (-1.0, 1.0), Distortion::None, &cfg).unwrap();
        let expected = 1.0 / 3.0 + 0.5;
        assert!(
            (est.cost_rate_mean - expected).abs() < 3.0 * est.cost_rate_stderr,
            "{est:?}"
        );
        assert!((est.up_rate - 0.25).abs() < 0.02 && (est.down_rate - 0.25).abs() < 0.02);
    }

    #[test]
    fn narrow_band_costs_more() {
        let cfg = SimConfig { t: 200.0, dt: 1e-3, n_paths: 4, seed: 1, ..SimConfig::default() };
        let wide = simulate_band(&brownian(), (-1.0, 1.0), Distortion::None, &cfg).unwrap();
        let narrow = simulate_band(&brownian(), (-0.01, 0.01), Distortion::None, &cfg).unwrap();
        assert!(narrow.cost_rate_mean > wide.cost_rate_mean);
    }

    #[test]
    fn path_confined_and_monotone() {
        let p = ModelParams::baseline();
        let cfg = SimConfig { dt: 1e-3, seed: 3, ..SimConfig::default() };
        let dist = Distortion::BangBang { x_kappa: -0.5, x_lambda: 0.0 };
        let rec = sample_path(&p, (-1.2, 0.6), dist, &cfg, 8.0).unwrap();
        assert_eq!(rec.points.len(), 8001);
        for w in rec.points.windows(2) {
            assert!((-1.2..=0.6).contains(&w[1].x));
            assert!(w[1].u >= w[0].u && w[1].d >= w[0].d);
            assert!(w[1].u == w[0].u || w[1].d == w[0].d);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let p = ModelParams::baseline();
        let cfg = SimConfig { t: 5.0, dt: 1e-3, n_paths: 3, seed: 11, ..SimConfig::default() };
        let a = sample_path(&p, (-1.0, 1.0), Distortion::None, &cfg, 5.0).unwrap();
        let b = sample_path(&p, (-1.0, 1.0), Distortion::None, &cfg, 5.0).unwrap();
        assert_eq!(a, b);
        let ea = simulate_band(&p, (-1.0, 1.0), Distortion::None, &cfg).unwrap();
        let eb = simulate_band(&p, (-1.0, 1.0), Distortion::None, &cfg).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn path_streams_independent_of_path_count() {
        let p = ModelParams::baseline();
        let one = SimConfig { t: 10.0, dt: 1e-3, n_paths: 1, seed: 5, ..SimConfig::default() };
        let st = Stepper::new(&p, (-1.0, 1.0), Distortion::None, &one).unwrap();
        let a = run_path(&st, &one, 1.0, 1.0, 0).cost_rate;
        let many = simulate_band(&p, (-1.0, 1.0), Distortion::None, &SimConfig { n_paths: 1, ..one }).unwrap();
        assert_eq!(a, many.cost_rate_mean);
    }

    #[test]
    fn config_errors() {
        let p = ModelParams::baseline();
        let bad = [
            SimConfig { dt: 0.0, ..SimConfig::default() },
            SimConfig { n_paths: 0, ..SimConfig::default() },
            SimConfig { burn_in_fraction: 1.0, ..SimConfig::default() },
            SimConfig { dt: 0.2, ..SimConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(
                simulate_band(&p, (-1.0, 1.0), Distortion::None, &cfg),
                Err(SolverError::Config(_))
            ));
        }
        assert!(simulate_band(&p, (1.0, -1.0), Distortion::None, &SimConfig::default()).is_err());
    }
}
