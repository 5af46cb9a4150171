//! Flat JSON artifacts for parameters and solutions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::inner::{inner_solve, InnerSolution};
use crate::model::{ModelParams, Thresholds};
use crate::outer::SolveReport;

/// One-level JSON record of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
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
    pub x_low: f64,
    pub x_kappa: f64,
    pub x_lambda: f64,
    pub x_high: f64,
    pub gamma: f64,
    pub regime: String,
    pub u1_minus: f64,
    pub u1_plus: f64,
    pub u2_minus: f64,
    pub u2_plus: f64,
    pub u3_minus: f64,
    pub u3_plus: f64,
    pub theta1: f64,
    pub theta2: Option<f64>,
    pub theta3: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub regime_switches: usize,
    pub warnings: Vec<String>,
}

impl SolutionFile {
    pub fn from_report(report: &SolveReport) -> Self {
        let s = &report.solution;
        let p = s.params;
        let th = s.thresholds;
        let u = s.coefficients();
        SolutionFile {
            b: p.b,
            delta: p.delta,
            r: p.r,
            eps: p.eps,
            sigma: p.sigma,
            mu: p.mu,
            c_u: p.c_u,
            c_d: p.c_d,
            x_low: th.x_low,
            x_kappa: th.x_kappa,
            x_lambda: th.x_lambda,
            x_high: th.x_high,
            gamma: s.gamma,
            regime: s.regime.to_string(),
            u1_minus: u[0].minus,
            u1_plus: u[0].plus,
            u2_minus: u[1].minus,
            u2_plus: u[1].plus,
            u3_minus: u[2].minus,
            u3_plus: u[2].plus,
            theta1: s.determinants.theta1,
            theta2: s.determinants.theta2,
            theta3: s.determinants.theta3,
            converged: report.converged,
            iterations: report.iterations,
            residual_norm: report.final_residual_norm,
            regime_switches: report.regime_switches,
            warnings: report.warnings.iter().map(|w| w.to_string()).collect(),
        }
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            b: self.b,
            delta: self.delta,
            r: self.r,
            eps: self.eps,
            sigma: self.sigma,
            mu: self.mu,
            c_u: self.c_u,
            c_d: self.c_d,
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds::new(self.x_low, self.x_kappa, self.x_lambda, self.x_high)
    }

    /// Rebuilds the full piecewise solution from the stored parameters and thresholds.
    pub fn rebuild(&self) -> Result<InnerSolution> {
        let params = self.params();
        params.validate()?;
        inner_solve(&params, &self.thresholds())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| SolverError::Config(format!("{}: {e}", path.display())))
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| SolverError::Config(format!("{}: {e}", path.display())))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let p: ModelParams = parse(&read(path)?, path)?;
    p.validate()?;
    Ok(p)
}

pub fn load_solution(path: &Path) -> Result<SolutionFile> {
    parse(&read(path)?, path)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    fs::write(path, to_json(value))
}
