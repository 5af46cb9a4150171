use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn, LevelFilter};

use robust_ergodic::experiments::{rmc_table, run_sweep, write_rmc_csv, write_sweep_csv, SweepSpec};
use robust_ergodic::io::{load_params, load_solution, to_json, write_json, SolutionFile};
use robust_ergodic::outer::solve_robust;
use robust_ergodic::simulate::{sample_path, simulate_band, Distortion, SimConfig};
use robust_ergodic::verification::verify;
use robust_ergodic::{SolverError, Thresholds};

#[derive(Parser, Debug)]
#[command(name = "robust-ergodic", version, about = "Robust ergodic singular control solver")]
struct Cli {
    /// Worker threads for sweep and rmc (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for the optimal band and the worst-case switch points.
    Solve {
        #[arg(long)]
        params: PathBuf,
        /// Initial thresholds x_low,x_kappa,x_lambda,x_high.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        init: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warm-started one-parameter sweep.
    Sweep {
        #[arg(long)]
        params: PathBuf,
        /// One of b, delta, r, eps, sigma, inv_mu, cU, cD.
        #[arg(long)]
        param: String,
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative misspecification cost over a delta x eps grid.
    Rmc {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        delta_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        eps_grid: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo cost rate of a solved band under the worst-case distortions.
    Simulate {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value_t = 1e4)]
        t: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 64)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        burn_in: f64,
        /// Write one sample path as CSV.
        #[arg(long)]
        path_out: Option<PathBuf>,
        /// Horizon of the sample path.
        #[arg(long, default_value_t = 8.0)]
        path_t: f64,
        /// Write the estimate as JSON (printed to stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a solution file.
    Verify {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value_t = 2001)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Solver(String),
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn init_logging() {
    let level = match std::env::var("SOLVER_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("info") => LevelFilter::Info,
        Ok("debug") => LevelFilter::Debug,
        _ => LevelFilter::Warn,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn params_from(path: &Path) -> Result<robust_ergodic::ModelParams, Failure> {
    load_params(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Solve { params, init, out } => {
            let p = params_from(&params)?;
            let init = match init.as_deref() {
                None => None,
                Some(&[a, b, c, d]) => Some(Thresholds::new(a, b, c, d)),
                Some(_) => return Err(Failure::Usage("--init needs four comma-separated values".into())),
            };
            let report = solve_robust(&p, init)?;
            for w in &report.warnings {
                warn!("{w}");
            }
            let th = report.solution.thresholds;
            info!("gamma = {}, thresholds = {:?}", report.solution.gamma, th.as_array());
            write_json(&out, &SolutionFile::from_report(&report))?;
        }
        Command::Sweep { params, param, from, to, points, out } => {
            let p = params_from(&params)?;
            let spec = SweepSpec::linspace(p, &param, from, to, points).map_err(|e| Failure::Usage(e.to_string()))?;
            let rows = run_sweep(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
            let failed = rows.iter().filter(|r| !r.converged).count();
            if failed > 0 {
                warn!("{failed} of {} sweep points did not converge", rows.len());
            }
            write_sweep_csv(&rows, create(&out)?)?;
        }
        Command::Rmc { params, delta_grid, eps_grid, out } => {
            let p = params_from(&params)?;
            let cells = rmc_table(&p, &delta_grid, &eps_grid);
            write_rmc_csv(&cells, create(&out)?)?;
        }
        Command::Simulate { solution, t, dt, paths, seed, burn_in, path_out, path_t, out } => {
            let file = load_solution(&solution)?;
            let p = file.params();
            let th = file.thresholds();
            let band = (th.x_low, th.x_high);
            let dist = Distortion::from_thresholds(&th);
            let cfg = SimConfig { t, dt, n_paths: paths, seed, burn_in_fraction: burn_in, x0: 0.0 };
            let est = simulate_band(&p, band, dist, &cfg)?;
            if let Some(path) = path_out {
                sample_path(&p, band, dist, &cfg, path_t)?.write_csv(create(&path)?)?;
            }
            match out {
                Some(path) => write_json(&path, &est)?,
                None => print!("{}", to_json(&est)),
            }
        }
        Command::Verify { solution, grid, out } => {
            let file = load_solution(&solution)?;
            let sol = file.rebuild()?;
            let report = verify(&sol.params, &sol, grid);
            write_json(&out, &report)?;
            if report.passed {
                println!("PASS");
            } else {
                println!("FAIL");
                return Err(Failure::Solver("verification failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("usage: robust-ergodic <solve|sweep|rmc|simulate|verify> [OPTIONS]; see --help");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
