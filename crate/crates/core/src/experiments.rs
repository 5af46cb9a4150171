//! Comparative-statics sweeps and the misspecification-cost grid.

use std::io::Write;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SolverError, Warning};
use crate::inner::InnerSolution;
use crate::model::{ModelParams, Regime, Thresholds};
use crate::outer::{solve_nonrobust, solve_robust, worstcase_value_from, worstcase_value_of_policy, SolveReport};

/// Names accepted by [`ModelParams::with_param`] in sweeps.
pub const SWEEP_PARAMS: [&str; 8] = ["b", "delta", "r", "eps", "sigma", "inv_mu", "cU", "cD"];

/// Largest intensity fraction used in place of `eps = 1`.
pub const EPS_EDGE: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ModelParams,
    pub param_name: String,
    pub grid: Vec<f64>,
}

impl SweepSpec {
    /// `points` equally spaced values from `from` to `to`.
    pub fn linspace(base: ModelParams, param_name: &str, from: f64, to: f64, points: usize) -> Result<Self> {
        if points == 0 {
            return Err(SolverError::domain("points must be >= 1"));
        }
        let grid = if points == 1 {
            vec![from]
        } else {
            (0..points)
                .map(|k| from + (to - from) * k as f64 / (points - 1) as f64)
                .collect()
        };
        let spec = SweepSpec {
            base,
            param_name: param_name.to_string(),
            grid,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !SWEEP_PARAMS.contains(&self.param_name.as_str()) {
            return Err(SolverError::domain(format!(
                "unknown sweep parameter '{}' (expected one of {})",
                self.param_name,
                SWEEP_PARAMS.join(", ")
            )));
        }
        if self.grid.is_empty() {
            return Err(SolverError::domain("grid must be nonempty"));
        }
        let inc = self.grid.windows(2).all(|w| w[0] < w[1]);
        let dec = self.grid.windows(2).all(|w| w[0] > w[1]);
        if !(inc || dec) {
            return Err(SolverError::domain("grid must be strictly monotone"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub x_low: f64,
    pub x_kappa: f64,
    pub x_lambda: f64,
    pub x_high: f64,
    pub gamma: f64,
    pub regime: Option<Regime>,
    pub converged: bool,
    pub warnings: Vec<Warning>,
}

/// Robust solve from `init`, retrying from the default initializer on failure.
pub fn solve_with_fallback(params: &ModelParams, init: Option<Thresholds>) -> Result<SolveReport> {
    match solve_robust(params, init) {
        Ok(r) => Ok(r),
        Err(e) if init.is_some() => {
            info!("warm start failed ({e}); retrying from the default initializer");
            solve_robust(params, None)
        }
        Err(e) => Err(e),
    }
}

/// Runs a sweep and keeps the solution of every converged row.
pub fn run_sweep_solutions(spec: &SweepSpec) -> Result<Vec<(SweepRow, Option<InnerSolution>)>> {
    spec.validate()?;
    let mut prev: Option<Thresholds> = None;
    let mut out = Vec::with_capacity(spec.grid.len());
    for &value in &spec.grid {
        let outcome = spec
            .base
            .with_param(&spec.param_name, value)
            .and_then(|p| solve_with_fallback(&p, prev));
        let row = match outcome {
            Ok(rep) => {
                let s = rep.solution;
                prev = Some(s.thresholds);
                let th = s.thresholds;
                let row = SweepRow {
                    param: spec.param_name.clone(),
                    value,
                    x_low: th.x_low,
                    x_kappa: th.x_kappa,
                    x_lambda: th.x_lambda,
                    x_high: th.x_high,
                    gamma: s.gamma,
                    regime: Some(s.regime),
                    converged: true,
                    warnings: rep.warnings,
                };
                (row, Some(s))
            }
            Err(e) => {
                warn!("{} = {value}: {e}", spec.param_name);
                let row = SweepRow {
                    param: spec.param_name.clone(),
                    value,
                    x_low: f64::NAN,
                    x_kappa: f64::NAN,
                    x_lambda: f64::NAN,
                    x_high: f64::NAN,
                    gamma: f64::NAN,
                    regime: None,
                    converged: false,
                    warnings: Vec::new(),
                };
                (row, None)
            }
        };
        out.push(row);
    }
    Ok(out)
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    Ok(run_sweep_solutions(spec)?.into_iter().map(|(r, _)| r).collect())
}

pub const SWEEP_HEADER: [&str; 9] = [
    "param", "value", "x_low", "x_kappa", "x_lambda", "x_high", "gamma", "regime", "converged",
];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> std::io::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SWEEP_HEADER)?;
    for r in rows {
        wr.write_record([
            r.param.clone(),
            r.value.to_string(),
            r.x_low.to_string(),
            r.x_kappa.to_string(),
            r.x_lambda.to_string(),
            r.x_high.to_string(),
            r.gamma.to_string(),
            r.regime.map(|g| g.to_string()).unwrap_or_default(),
            r.converged.to_string(),
        ])?;
    }
    wr.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RmcStatus {
    Ok,
    /// `eps >= 1` was evaluated at [`EPS_EDGE`].
    Approximate,
    Unavailable,
}

impl std::fmt::Display for RmcStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RmcStatus::Ok => "ok",
            RmcStatus::Approximate => "approximate",
            RmcStatus::Unavailable => "unavailable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmcCell {
    pub b: f64,
    pub delta: f64,
    pub eps: f64,
    pub gamma_robust: f64,
    pub gamma_nr_wc: f64,
    pub rmc_pct: f64,
    pub status: RmcStatus,
    /// Robust thresholds, used to warm-start neighbouring cells.
    #[serde(skip)]
    pub robust_thresholds: Option<Thresholds>,
}

impl RmcCell {
    fn unavailable(p: &ModelParams, eps: f64) -> Self {
        RmcCell {
            b: p.b,
            delta: p.delta,
            eps,
            gamma_robust: f64::NAN,
            gamma_nr_wc: f64::NAN,
            rmc_pct: f64::NAN,
            status: RmcStatus::Unavailable,
            robust_thresholds: None,
        }
    }
}

/// `100 (gamma_nr_wc - gamma_r) / gamma_r`.
pub fn rmc_percent(gamma_robust: f64, gamma_nr_wc: f64) -> f64 {
    (gamma_nr_wc - gamma_robust) / gamma_robust * 100.0
}

/// Relative misspecification cost of the benchmark-optimal band.
pub fn compute_rmc(params: &ModelParams) -> Result<RmcCell> {
    compute_rmc_from(params, None)
}

pub fn compute_rmc_from(params: &ModelParams, init: Option<Thresholds>) -> Result<RmcCell> {
    params.validate()?;
    let nr = solve_nonrobust(params)?;
    if params.delta == 0.0 && params.eps == 0.0 {
        let g = nr.solution.gamma;
        return Ok(RmcCell {
            b: params.b,
            delta: 0.0,
            eps: 0.0,
            gamma_robust: g,
            gamma_nr_wc: g,
            rmc_pct: 0.0,
            status: RmcStatus::Ok,
            robust_thresholds: Some(nr.solution.thresholds),
        });
    }
    let robust = solve_with_fallback(params, init)?;
    let band = nr.solution.thresholds;
    let wc = worstcase_value_of_policy(params, band.x_low, band.x_high).or_else(|e| {
        info!("policy evaluation from benchmark zeros failed ({e}); retrying from robust switch points");
        let r = robust.solution.thresholds;
        let w = band.x_high - band.x_low;
        let xk = r.x_kappa.clamp(band.x_low + 1e-3 * w, band.x_high - 1e-3 * w);
        let xl = r.x_lambda.max(xk + 1e-3 * w);
        worstcase_value_from(params, &Thresholds::new(band.x_low, xk, xl, band.x_high))
    })?;
    let gr = robust.solution.gamma;
    Ok(RmcCell {
        b: params.b,
        delta: params.delta,
        eps: params.eps,
        gamma_robust: gr,
        gamma_nr_wc: wc.gamma,
        rmc_pct: rmc_percent(gr, wc.gamma),
        status: RmcStatus::Ok,
        robust_thresholds: Some(robust.solution.thresholds),
    })
}

/// RMC over the grid `delta_grid x eps_grid`, row-major in `delta`.
///
/// Rows run in parallel; cells within a row are warm-started from the left.
/// Values `eps >= 1` are evaluated at [`EPS_EDGE`] and flagged approximate.
pub fn rmc_table(base: &ModelParams, delta_grid: &[f64], eps_grid: &[f64]) -> Vec<RmcCell> {
    let rows: Vec<Vec<RmcCell>> = delta_grid
        .par_iter()
        .map(|&delta| {
            let mut prev = None;
            eps_grid
                .iter()
                .map(|&eps| {
                    let (eval_eps, status) = if eps >= 1.0 {
                        (EPS_EDGE, RmcStatus::Approximate)
                    } else {
                        (eps, RmcStatus::Ok)
                    };
                    let p = ModelParams {
                        delta,
                        eps: eval_eps,
                        ..*base
                    };
                    match compute_rmc_from(&p, prev) {
                        Ok(mut cell) => {
                            prev = cell.robust_thresholds;
                            cell.eps = eps;
                            cell.status = status;
                            cell
                        }
                        Err(e) => {
                            warn!("rmc cell delta = {delta}, eps = {eps}: {e}");
                            RmcCell::unavailable(&p, eps)
                        }
                    }
                })
                .collect()
        })
        .collect();
    rows.into_iter().flatten().collect()
}

pub const RMC_HEADER: [&str; 7] = ["b", "delta", "eps", "gamma_robust", "gamma_nr_wc", "rmc_pct", "status"];

pub fn write_rmc_csv<W: Write>(cells: &[RmcCell], w: W) -> std::io::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(RMC_HEADER)?;
    for c in cells {
        wr.write_record([
            c.b.to_string(),
            c.delta.to_string(),
            c.eps.to_string(),
            c.gamma_robust.to_string(),
            c.gamma_nr_wc.to_string(),
            c.rmc_pct.to_string(),
            c.status.to_string(),
        ])?;
    }
    wr.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid_validation() {
        let b = ModelParams::baseline();
        assert!(SweepSpec::linspace(b, "zeta", 0.0, 1.0, 3).is_err());
        assert!(SweepSpec::linspace(b, "b", 0.0, 1.0, 0).is_err());
        let s = SweepSpec {
            base: b,
            param_name: "b".into(),
            grid: vec![0.0, 1.0, 0.5],
        };
        assert!(s.validate().is_err());
        let s = SweepSpec::linspace(b, "sigma", 1.0, 2.0, 5).unwrap();
        assert_eq!(s.grid, vec![1.0, 1.25, 1.5, 1.75, 2.0]);
    }

    #[test]
    fn rmc_zero_without_ambiguity() {
        let p = ModelParams {
            delta: 0.0,
            eps: 0.0,
            ..ModelParams::baseline()
        };
        let c = compute_rmc(&p).unwrap();
        assert_eq!(c.gamma_robust, c.gamma_nr_wc);
        assert_eq!(c.rmc_pct, 0.0);
    }

    #[test]
    fn invalid_cell_is_unavailable() {
        let base = ModelParams::baseline();
        let cells = rmc_table(&base, &[-1.0], &[0.2]);
        assert_eq!(cells[0].status, RmcStatus::Unavailable);
        assert!(cells[0].rmc_pct.is_nan());
    }

    #[test]
    fn sweep_csv_header() {
        let mut buf = Vec::new();
        write_sweep_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), SWEEP_HEADER.join(",") + "\n");
        let mut buf = Vec::new();
        write_rmc_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), RMC_HEADER.join(",") + "\n");
    }
}
