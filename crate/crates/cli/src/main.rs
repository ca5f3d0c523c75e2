use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fracreg::experiments::{
    emit, run, write_csv, write_json, ErrorReport, ExperimentConfig, ExperimentKind, Format, NonlinearityConfig,
    ProblemConfig,
};
use fracreg::mild_solver::{Profile, DEFAULT_MAX_ITER, DEFAULT_TOL};
use fracreg::mittag_leffler::{ml, ml_series, MlQuery};
use fracreg::noise_model::NoiseSharing;
use fracreg::regularizer::{RateParams, TruncationScale};

#[derive(Parser)]
#[command(name = "fracreg", version, about = "Regularized backward fractional elliptic solver and experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate E_{beta,gamma}(z); prints `value,est_abs_err`.
    MlEval {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        z: f64,
        /// Force the power series with this tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Noise-only data through the unregularized solver.
    Illposed(Common),
    /// Convergence table of the regularized solution.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        norm: Option<Norm>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        /// Evaluation times, comma separated.
        #[arg(long, value_delimiter = ',')]
        t_eval: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        truncation_scale: Option<Scale>,
        #[arg(long)]
        pilot_seed: Option<u64>,
    },
    /// Monte-Carlo MISE of truncated noisy data against its exact value.
    MiseCheck {
        #[command(flatten)]
        common: Common,
        /// Number of observed modes (default: the a-priori rule).
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Norm {
    L2,
    Hq,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Cutoff,
    Eigenvalue,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    /// Number of Dirichlet-Laplacian modes.
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    eps_grid: Option<Vec<f64>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Time steps on [0, a].
    #[arg(long)]
    steps: Option<usize>,
    /// Rate parameters b, m, k, gamma, d, mu.
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    d: Option<u32>,
    #[arg(long)]
    mu: Option<f64>,
    /// Truth u0 coefficients, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    truth_u0: Option<Vec<f64>>,
    /// Truth u1 coefficients, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    truth_u1: Option<Vec<f64>>,
    /// Use the same noise stream for both observed fields.
    #[arg(long)]
    shared_noise: bool,
    /// Output file; CSV on stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format (default: from the file extension, else csv).
    #[arg(long, value_enum)]
    format: Option<OutFormat>,
}

fn defaults(kind: ExperimentKind) -> ExperimentConfig {
    let (a, nonlinearity, eps_grid, replicates, modes) = match kind {
        ExperimentKind::IllPosedDemo => (0.5, NonlinearityConfig::Gbar, vec![1e-1, 1e-2, 1e-3, 1e-4], 64, 16),
        ExperimentKind::MiseCheck => (1.0, NonlinearityConfig::Zero, vec![1e-1, 1e-2, 1e-3], 1000, 32),
        _ => (
            1.0,
            NonlinearityConfig::Zero,
            (0..=12).map(|i| 10f64.powf(-6.0 - i as f64 / 4.0)).collect(),
            200,
            32,
        ),
    };
    let rate = match kind {
        ExperimentKind::ConvergenceL2 | ExperimentKind::ConvergenceHq => RateParams {
            b: 1.0,
            m: 8.0,
            k: 1.0,
            gamma: 5.0,
            d: 1,
            mu: 1.0,
        },
        _ => RateParams {
            b: 1.0,
            m: 1.0,
            k: 1.0,
            gamma: 2.0,
            d: 1,
            mu: 1.0,
        },
    };
    ExperimentConfig {
        kind,
        eps_grid,
        replicates,
        seed: 0,
        problem: ProblemConfig {
            beta: 1.5,
            a,
            modes,
            nonlinearity,
        },
        rate,
        truth: Profile::Explicit {
            u0: vec![1.0, 0.25, 1.0 / 9.0, 1.0 / 16.0],
            u1: vec![0.5, 0.0, 0.0, 0.0],
        },
        steps: if matches!(kind, ExperimentKind::ConvergenceL2 | ExperimentKind::ConvergenceHq) { 100 } else { 64 },
        t_eval: vec![0.05, 0.1],
        q: 0.0,
        r: 0.1,
        observed_modes: None,
        noise_sharing: NoiseSharing::Independent,
        pilot_seed: None,
        truncation_scale: TruncationScale::Cutoff,
        picard_tol: DEFAULT_TOL,
        max_iter: DEFAULT_MAX_ITER,
    }
}

impl Common {
    fn base(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => defaults(kind),
        };
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.beta => cfg.problem.beta);
        set!(self.a => cfg.problem.a);
        set!(self.modes => cfg.problem.modes);
        set!(self.eps_grid => cfg.eps_grid);
        set!(self.replicates => cfg.replicates);
        set!(self.seed => cfg.seed);
        set!(self.steps => cfg.steps);
        set!(self.b => cfg.rate.b);
        set!(self.m => cfg.rate.m);
        set!(self.k => cfg.rate.k);
        set!(self.gamma => cfg.rate.gamma);
        set!(self.d => cfg.rate.d);
        set!(self.mu => cfg.rate.mu);
        if self.truth_u0.is_some() || self.truth_u1.is_some() {
            let u0 = self.truth_u0.clone().unwrap_or_default();
            let u1 = self.truth_u1.clone().unwrap_or_else(|| vec![0.0; u0.len()]);
            cfg.truth = Profile::Explicit { u0, u1 };
        }
        if self.shared_noise {
            cfg.noise_sharing = NoiseSharing::Shared;
        }
        Ok(cfg)
    }

    fn format(&self) -> Format {
        match self.format {
            Some(OutFormat::Json) => Format::Json,
            Some(OutFormat::Csv) => Format::Csv,
            None => match self.out.as_ref().and_then(|p| p.extension()) {
                Some(ext) if ext == "json" => Format::Json,
                _ => Format::Csv,
            },
        }
    }
}

fn check_kind(cfg: &ExperimentConfig, allowed: &[ExperimentKind]) -> Result<()> {
    if !allowed.contains(&cfg.kind) {
        bail!("config kind {:?} does not match this subcommand", cfg.kind);
    }
    Ok(())
}

enum Outcome {
    Ok,
    ChecksFailed,
}

fn finish(report: &ErrorReport, common: &Common) -> Result<Outcome> {
    let format = common.format();
    match &common.out {
        Some(path) => emit(report, path, format).with_context(|| format!("writing {}", path.display()))?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            match format {
                Format::Csv => write_csv(report, &mut lock)?,
                Format::Json => write_json(report, &mut lock)?,
            }
            lock.flush()?;
        }
    }
    for s in &report.summary {
        match s.predicted_slope {
            Some(p) => eprintln!("t = {}: fitted log-log slope {:.4} (predicted {:.4})", s.t, s.fitted_slope, p),
            None => eprintln!("t = {}: fitted log-log slope {:.4}", s.t, s.fitted_slope),
        }
    }
    let mut failed = false;
    for c in report.failed() {
        eprintln!("check failed: {}: {}", c.name, c.detail);
        failed = true;
    }
    Ok(if failed { Outcome::ChecksFailed } else { Outcome::Ok })
}

fn execute(cli: Cli) -> Result<Outcome> {
    match cli.cmd {
        Command::MlEval { beta, gamma, z, tol } => {
            let q = MlQuery::new(beta, gamma, z)?;
            let v = match tol {
                Some(t) => ml_series(&q, t)?,
                None => ml(&q)?,
            };
            println!("value,est_abs_err");
            println!("{},{}", v.value, v.est_abs_err);
            Ok(Outcome::Ok)
        }
        Command::Illposed(common) => {
            let cfg = common.base(ExperimentKind::IllPosedDemo)?;
            check_kind(&cfg, &[ExperimentKind::IllPosedDemo])?;
            finish(&run(&cfg)?, &common)
        }
        Command::Converge {
            common,
            norm,
            q,
            r,
            t_eval,
            truncation_scale,
            pilot_seed,
        } => {
            let kind = match norm {
                Some(Norm::Hq) => ExperimentKind::ConvergenceHq,
                _ => ExperimentKind::ConvergenceL2,
            };
            let mut cfg = common.base(kind)?;
            check_kind(&cfg, &[ExperimentKind::ConvergenceL2, ExperimentKind::ConvergenceHq])?;
            if let Some(n) = norm {
                cfg.kind = match n {
                    Norm::L2 => ExperimentKind::ConvergenceL2,
                    Norm::Hq => ExperimentKind::ConvergenceHq,
                };
            }
            if let Some(q) = q {
                cfg.q = q;
            }
            if let Some(r) = r {
                cfg.r = r;
            }
            if let Some(t) = t_eval {
                cfg.t_eval = t;
            }
            if let Some(s) = truncation_scale {
                cfg.truncation_scale = match s {
                    Scale::Cutoff => TruncationScale::Cutoff,
                    Scale::Eigenvalue => TruncationScale::Eigenvalue,
                };
            }
            if pilot_seed.is_some() {
                cfg.pilot_seed = pilot_seed;
            }
            finish(&run(&cfg)?, &common)
        }
        Command::MiseCheck { common, n } => {
            let mut cfg = common.base(ExperimentKind::MiseCheck)?;
            check_kind(&cfg, &[ExperimentKind::MiseCheck])?;
            if n.is_some() {
                cfg.observed_modes = n;
            }
            finish(&run(&cfg)?, &common)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            let invariant = e
                .downcast_ref::<fracreg::Error>()
                .is_some_and(|e| matches!(e, fracreg::Error::InvariantViolated(_)));
            ExitCode::from(if invariant { 2 } else { 1 })
        }
    }
}
