//! Outer root search over the thresholds.
//!
//! Thresholds are searched in log-gap coordinates so every iterate is ordered.
//! The root finder is a good-Broyden method seeded with a forward-difference
//! Jacobian and guarded by step halving.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Result, SolverError, Warning};
use crate::inner::{inner_solve, nonrobust_inner, Determinants, InnerSolution, Piece, PiecewiseH};
use crate::model::{optimal_bound_width, ModelParams, Regime, Thresholds};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const FD_STEP: f64 = 1e-7;

/// `(x_low, log(x_kappa - x_low), log(x_lambda - x_kappa), log(x_high - x_kappa))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapVector(pub [f64; 4]);

pub fn to_gaps(th: &Thresholds) -> Result<GapVector> {
    th.check_ordered()?;
    Ok(GapVector([
        th.x_low,
        (th.x_kappa - th.x_low).ln(),
        (th.x_lambda - th.x_kappa).ln(),
        (th.x_high - th.x_kappa).ln(),
    ]))
}

pub fn from_gaps(z: &GapVector) -> Thresholds {
    let [z1, z2, z3, z4] = z.0;
    let x_kappa = z1 + z2.exp();
    Thresholds::new(z1, x_kappa, x_kappa + z3.exp(), x_kappa + z4.exp())
}

/// Settings for [`broyden_root`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootResult {
    pub z: Vec<f64>,
    pub residual: Vec<f64>,
    pub iterations: usize,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn eval<F>(f: &mut F, z: &DVector<f64>) -> Option<DVector<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    match f(z.as_slice()) {
        Ok(r) if r.iter().all(|x| x.is_finite()) => Some(DVector::from_vec(r)),
        _ => None,
    }
}

fn fd_jacobian<F>(f: &mut F, z: &DVector<f64>, fz: &DVector<f64>) -> Option<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = z.len();
    let mut j = DMatrix::zeros(fz.len(), n);
    for k in 0..n {
        let h = FD_STEP * z[k].abs().max(1.0);
        let mut zp = z.clone();
        zp[k] += h;
        // fall back to a backward difference when the forward point is infeasible
        let col = match eval(f, &zp) {
            Some(fp) => (fp - fz) / h,
            None => {
                zp[k] = z[k] - h;
                (fz - eval(f, &zp)?) / h
            }
        };
        j.set_column(k, &col);
    }
    Some(j)
}

/// Finds a root of `f` from `z0`. Convergence means the infinity norm of the residual is below `tol`.
pub fn broyden_root<F>(mut f: F, z0: &[f64], opts: RootOptions) -> Result<RootResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut z = DVector::from_column_slice(z0);
    let mut fz = eval(&mut f, &z).ok_or(SolverError::NonFinite)?;
    let fail = |it: usize, z: &DVector<f64>, fz: &DVector<f64>| SolverError::NoConvergence {
        iterations: it,
        best_residual: inf_norm(fz),
        best: z.as_slice().to_vec(),
    };
    let mut jac = fd_jacobian(&mut f, &z, &fz).ok_or_else(|| fail(0, &z, &fz))?;
    let mut fresh = true;

    for it in 0..opts.max_iter {
        let norm = inf_norm(&fz);
        debug!("broyden iter {it}: |F| = {norm:e}");
        if norm < opts.tol {
            return Ok(RootResult {
                z: z.as_slice().to_vec(),
                residual: fz.as_slice().to_vec(),
                iterations: it,
            });
        }
        let step = jac.clone().lu().solve(&(-&fz)).filter(|s| s.iter().all(|v| v.is_finite()));
        let Some(step) = step else {
            if fresh {
                return Err(fail(it, &z, &fz));
            }
            jac = fd_jacobian(&mut f, &z, &fz).ok_or_else(|| fail(it, &z, &fz))?;
            fresh = true;
            continue;
        };

        let norm2 = fz.norm();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let zn = &z + &step * t;
            if let Some(fnew) = eval(&mut f, &zn) {
                if fnew.norm() <= norm2 {
                    accepted = Some((zn, fnew));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((zn, fnew)) => {
                let s = &zn - &z;
                let y = &fnew - &fz;
                let ss = s.dot(&s);
                if ss > 0.0 {
                    let corr = (y - &jac * &s) / ss;
                    jac += corr * s.transpose();
                }
                z = zn;
                fz = fnew;
                fresh = false;
                // a heavily damped step means the secant model has gone stale
                if t < 0.01 {
                    jac = fd_jacobian(&mut f, &z, &fz).ok_or_else(|| fail(it, &z, &fz))?;
                    fresh = true;
                }
            }
            None if fresh => return Err(fail(it + 1, &z, &fz)),
            None => {
                jac = fd_jacobian(&mut f, &z, &fz).ok_or_else(|| fail(it, &z, &fz))?;
                fresh = true;
            }
        }
    }
    if inf_norm(&fz) < opts.tol {
        return Ok(RootResult {
            z: z.as_slice().to_vec(),
            residual: fz.as_slice().to_vec(),
            iterations: opts.max_iter,
        });
    }
    Err(fail(opts.max_iter, &z, &fz))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub solution: InnerSolution,
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
    pub regime_switches: usize,
    pub warnings: Vec<Warning>,
}

/// Starting quadruple from the width minimizing the closed-form bound.
pub fn default_init(params: &ModelParams) -> Result<Thresholds> {
    let l = optimal_bound_width(params);
    let x_low = -l / 2.0 - (params.b / 4.0).max(0.0);
    let th = Thresholds::new(x_low, x_low + 0.3 * l, x_low + 0.6 * l, x_low + l);
    if th.is_ordered() {
        Ok(th)
    } else {
        Err(SolverError::Initialization(format!("default initializer gave {:?}", th.as_array())))
    }
}

/// Robust free-boundary solve.
pub fn solve_robust(params: &ModelParams, init: Option<Thresholds>) -> Result<SolveReport> {
    solve_robust_with(params, init, RootOptions::default())
}

pub fn solve_robust_with(params: &ModelParams, init: Option<Thresholds>, opts: RootOptions) -> Result<SolveReport> {
    params.validate()?;
    match init {
        Some(th) if th.is_ordered() => robust_from(params, th, opts).or_else(|e| regime_constrained(params, th, opts).map_err(|_| e)),
        Some(th) => Err(SolverError::Initialization(format!(
            "initial thresholds not ordered: {:?}",
            th.as_array()
        ))),
        None => {
            let first = default_init(params)?;
            robust_from(params, first, opts).or_else(|e| {
                info!("default start failed ({e}); restarting from the benchmark solution");
                match benchmark_init(params) {
                    Ok(th) => robust_from(params, th, opts).or_else(|_| {
                        regime_constrained(params, th, opts).or_else(|_| regime_constrained(params, first, opts))
                    }),
                    Err(_) => regime_constrained(params, first, opts),
                }
                .map_err(|_| e)
            })
        }
    }
}

/// Searches each regime separately, so the fourth residual keeps one meaning throughout.
fn regime_constrained(params: &ModelParams, th0: Thresholds, opts: RootOptions) -> Result<SolveReport> {
    let (first, second): (fn(_, _, _) -> _, fn(_, _, _) -> _) = match th0.regime() {
        Regime::Regime1 => (solve_regime1_only, solve_regime2_only),
        Regime::Regime2 => (solve_regime2_only, solve_regime1_only),
    };
    first(params, th0, opts).or_else(|e| {
        debug!("regime-constrained search failed ({e}); trying the other regime");
        second(params, th0, opts)
    })
}

fn report_from(params: &ModelParams, th: Thresholds, iterations: usize, opts: RootOptions) -> Result<SolveReport> {
    let solution = inner_solve(params, &th)?;
    let norm = solution.residual_norm();
    if !(norm < opts.tol) {
        return Err(SolverError::NoConvergence {
            iterations,
            best_residual: norm,
            best: th.as_array().to_vec(),
        });
    }
    Ok(SolveReport {
        iterations,
        final_residual_norm: norm,
        converged: true,
        regime_switches: 0,
        warnings: solution.warnings.clone(),
        solution,
    })
}

/// Regime 1 only: `x_lambda = x_kappa + (x_high - x_kappa) logistic(w3)`.
pub fn solve_regime1_only(params: &ModelParams, th0: Thresholds, opts: RootOptions) -> Result<SolveReport> {
    th0.check_ordered()?;
    let span = th0.x_high - th0.x_kappa;
    let frac = ((th0.x_lambda - th0.x_kappa) / span).clamp(0.05, 0.95);
    let to_th = |z: &[f64]| {
        let xk = z[0] + z[1].exp();
        let xh = xk + z[3].exp();
        Thresholds::new(z[0], xk, xk + (xh - xk) * logistic(z[2]), xh)
    };
    let z0 = [th0.x_low, (th0.x_kappa - th0.x_low).ln(), logit(frac), span.ln()];
    let root = broyden_root(|z: &[f64]| Ok(crate::inner::residuals(params, &to_th(z))?.to_vec()), &z0, opts)?;
    report_from(params, to_th(&root.z), root.iterations, opts)
}

/// Regime 2 only: `H` does not depend on `x_lambda`, which is recovered afterwards
/// as the zero of `I H` above the band.
pub fn solve_regime2_only(params: &ModelParams, th0: Thresholds, opts: RootOptions) -> Result<SolveReport> {
    th0.check_ordered()?;
    let to_th = |z: &[f64]| {
        let xk = z[0] + z[1].exp();
        let xh = xk + z[2].exp();
        Thresholds::new(z[0], xk, xh + 1.0, xh)
    };
    let z0 = [th0.x_low, (th0.x_kappa - th0.x_low).ln(), (th0.x_high - th0.x_kappa).ln()];
    let root = broyden_root(
        |z: &[f64]| Ok(crate::inner::residuals(params, &to_th(z))?[..3].to_vec()),
        &z0,
        opts,
    )?;
    let th = to_th(&root.z);
    let at_top = inner_solve(params, &th)?.h.integral_ih(th.x_high);
    if at_top > 0.0 {
        return Err(SolverError::domain("intensity switch falls inside the band; not a Regime 2 solution"));
    }
    // above the band I H(x) = cD + (I H(x_high) - cD) e^{-mu (x - x_high)}
    let x_lambda = th.x_high + ((params.c_d - at_top) / params.c_d).ln() / params.mu;
    report_from(
        params,
        Thresholds::new(th.x_low, th.x_kappa, x_lambda, th.x_high),
        root.iterations,
        opts,
    )
}

/// Starting quadruple from the benchmark band and the zeros of its `H` and `I H`.
pub fn benchmark_init(params: &ModelParams) -> Result<Thresholds> {
    let s = solve_nonrobust(params)?.solution.thresholds;
    let th = Thresholds::new(s.x_low, s.x_kappa, s.x_lambda.max(s.x_kappa + 1e-3 * s.width()), s.x_high);
    if th.is_ordered() {
        Ok(th)
    } else {
        Err(SolverError::Initialization(format!("benchmark start gave {:?}", th.as_array())))
    }
}

fn robust_from(params: &ModelParams, th0: Thresholds, opts: RootOptions) -> Result<SolveReport> {
    let z0 = to_gaps(&th0)?;
    let mut last_regime = th0.regime();
    let mut switches = 0;
    let root = broyden_root(
        |z: &[f64]| {
            let th = from_gaps(&GapVector([z[0], z[1], z[2], z[3]]));
            let r = crate::inner::residuals(params, &th)?;
            if th.regime() != last_regime {
                switches += 1;
                last_regime = th.regime();
            }
            Ok(r.to_vec())
        },
        &z0.0,
        opts,
    )?;
    let th = from_gaps(&GapVector([root.z[0], root.z[1], root.z[2], root.z[3]]));
    let solution = inner_solve(params, &th)?;
    info!(
        "robust solve: {} iterations, gamma = {}, regime {}",
        root.iterations, solution.gamma, solution.regime
    );
    Ok(SolveReport {
        iterations: root.iterations,
        final_residual_norm: solution.residual_norm(),
        converged: true,
        regime_switches: switches,
        warnings: solution.warnings.clone(),
        solution,
    })
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Packages the undistorted single-interval solution on `[x_low, x_high]`.
///
/// The reported `x_kappa` and `x_lambda` are the zeros of `H` and of `I H`.
pub fn nonrobust_solution(params: &ModelParams, x_low: f64, x_high: f64) -> Result<InnerSolution> {
    let (piece, gamma, theta): (Piece, f64, f64) = nonrobust_inner(params, x_low, x_high)?;
    let bench = params.benchmark();
    let h = PiecewiseH {
        c_u: bench.c_u,
        c_d: bench.c_d,
        mu: bench.mu,
        x_low,
        x_high,
        gamma,
        pieces: vec![piece],
    };
    let x_kappa = bisect(|x| h.value(x), x_low, x_high);
    let mut top = x_high + 1.0 / bench.mu;
    while h.integral_ih(top) <= 0.0 {
        top += 1.0 / bench.mu;
    }
    let x_lambda = bisect(|x| h.integral_ih(x), x_low, top);
    let thresholds = Thresholds::new(x_low, x_kappa, x_lambda, x_high);
    let residuals = [h.slope(x_low), h.slope(x_high), 0.0, 0.0];
    Ok(InnerSolution {
        params: bench,
        thresholds,
        regime: thresholds.regime(),
        gamma,
        h,
        determinants: Determinants {
            theta1: theta,
            theta2: None,
            theta3: None,
        },
        residuals,
        warnings: Vec::new(),
    })
}

/// Optimal band for the benchmark model (no drift or intensity distortion).
pub fn solve_nonrobust(params: &ModelParams) -> Result<SolveReport> {
    let bench = params.benchmark();
    bench.validate()?;
    let l = optimal_bound_width(&bench);
    let x0 = -l / 2.0 - (bench.b / 4.0).max(0.0);
    let root = broyden_root(
        |z: &[f64]| {
            let (piece, gamma, _) = nonrobust_inner(&bench, z[0], z[0] + z[1].exp())?;
            let s = &piece.system;
            Ok(vec![
                s.eval_h_prime(&piece.u, gamma, z[0]),
                s.eval_h_prime(&piece.u, gamma, z[0] + z[1].exp()),
            ])
        },
        &[x0, l.ln()],
        RootOptions::default(),
    )?;
    let solution = nonrobust_solution(&bench, root.z[0], root.z[0] + root.z[1].exp())?;
    Ok(SolveReport {
        iterations: root.iterations,
        final_residual_norm: solution.residual_norm(),
        converged: true,
        regime_switches: 0,
        warnings: Vec::new(),
        solution,
    })
}

/// Worst-case ergodic cost of the fixed band `[x_low, x_high]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyValue {
    pub gamma: f64,
    pub solution: InnerSolution,
    pub iterations: usize,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(w: f64) -> f64 {
    1.0 / (1.0 + (-w).exp())
}

/// Solves for the switch points of nature's best response to a fixed band.
///
/// Unknowns are `(x_kappa, x_lambda)` with residuals the derivative match at
/// `x_kappa` and the intensity condition at `x_lambda`.
pub fn worstcase_value_of_policy(params: &ModelParams, x_low: f64, x_high: f64) -> Result<PolicyValue> {
    params.validate()?;
    if !(x_low < x_high) {
        return Err(SolverError::domain("x_low must be < x_high"));
    }
    let start = nonrobust_solution(params, x_low, x_high)?.thresholds;
    worstcase_from(params, x_low, x_high, start.x_kappa, start.x_lambda)
}

fn worstcase_from(params: &ModelParams, x_low: f64, x_high: f64, x_kappa: f64, x_lambda: f64) -> Result<PolicyValue> {
    let width = x_high - x_low;
    let frac = ((x_kappa - x_low) / width).clamp(1e-6, 1.0 - 1e-6);
    let gap = (x_lambda - x_kappa).max(1e-6 * width);
    let to_th = |w: &[f64]| {
        let xk = x_low + width * logistic(w[0]);
        Thresholds::new(x_low, xk, xk + w[1].exp(), x_high)
    };
    let root = broyden_root(
        |w: &[f64]| {
            let r = crate::inner::residuals(params, &to_th(w))?;
            Ok(vec![r[2], r[3]])
        },
        &[logit(frac), gap.ln()],
        RootOptions::default(),
    )?;
    let solution = inner_solve(params, &to_th(&root.z))?;
    Ok(PolicyValue {
        gamma: solution.gamma,
        solution,
        iterations: root.iterations,
    })
}

/// Recovers the switch points when the band is already optimal, starting from known thresholds.
pub fn worstcase_value_from(params: &ModelParams, th: &Thresholds) -> Result<PolicyValue> {
    params.validate()?;
    th.check_ordered()?;
    worstcase_from(params, th.x_low, th.x_high, th.x_kappa, th.x_lambda)
}

/// True when the regime tag matches the threshold order.
pub fn regime_consistent(sol: &InnerSolution) -> bool {
    (sol.regime == Regime::Regime1) == (sol.thresholds.x_lambda < sol.thresholds.x_high)
}
