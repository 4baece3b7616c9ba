use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use rpareto::diagnostics::{binned_table, pairwise_diagnostics};
use rpareto::fit::{
    averaged_censored_fit, default_rel_step, default_starts, empirical_quantile, godambe,
    jackknife_se, optimize, select_exceedances, transform_margins, unit_frechet_to_pareto, Dataset,
    FitOptions, FreeParams,
};
use rpareto::io;
use rpareto::mvn_qmc::{mvn_cdf, QmcConfig};
use rpareto::objectives::Objective;
use rpareto::risk::RiskFunctional;
use rpareto::simulate::{simulate_maxstable_approx, simulate_pareto, SimulationConfig};
use rpareto::variogram::{Location, VariogramParams};

mod report;

use report::FitReport;

/// Site count above which censored fits are slow.
const CENSORED_SITE_WARNING: usize = 500;

#[derive(Parser)]
#[command(
    name = "rpareto",
    version,
    about = "Brown-Resnick r-Pareto simulation and inference"
)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate Pareto or max-stable fields at the given sites.
    Simulate(SimulateArgs),
    /// Fit the dependence model to exceedances of observed data.
    Fit(FitArgs),
    /// Compare fitted and empirical conditional exceedance probabilities.
    Diagnose(DiagnoseArgs),
    /// Multivariate normal probability by randomized lattice rules.
    Mvnprob(MvnArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Pareto,
    Maxstable,
}

/// How observations are mapped to unit Pareto margins.
#[derive(Clone, Copy, ValueEnum, Default)]
enum Margins {
    /// Empirical rank transform.
    #[default]
    Empirical,
    /// Data already have unit Pareto margins.
    Pareto,
    /// Data have unit Fréchet margins.
    Frechet,
}

impl Margins {
    fn apply(self, data: &Dataset) -> rpareto::Result<Dataset> {
        match self {
            Self::Empirical => transform_margins(data),
            Self::Pareto => Ok(data.clone()),
            Self::Frechet => Ok(unit_frechet_to_pareto(data)),
        }
    }
}

#[derive(Args)]
struct VariogramArgs {
    #[arg(long)]
    kappa: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Drop the factor one half from the semi-variogram.
    #[arg(long)]
    no_half_factor: bool,
}

impl VariogramArgs {
    fn params(&self) -> anyhow::Result<VariogramParams> {
        let p = VariogramParams::isotropic(self.kappa, self.tau)
            .with_anisotropy(self.eta, self.a)
            .with_half_factor(!self.no_half_factor);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    model: Model,
    #[command(flatten)]
    variogram: VariogramArgs,
    #[arg(long)]
    sites: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative cutoff of the max-stable Poisson series.
    #[arg(long, default_value_t = 1e-4)]
    truncation: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sites: PathBuf,
    /// spectral, censored, gradscore:w1 or gradscore:w2.
    #[arg(long)]
    objective: String,
    /// sum, powsum:P, smoothmax, max or site:ID.
    #[arg(long, default_value = "sum")]
    risk: String,
    #[arg(long, default_value_t = 0.99)]
    quantile: f64,
    #[arg(long, default_value_t = 4)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 499)]
    qmc_p: usize,
    #[arg(long, default_value_t = 10)]
    qmc_shifts: usize,
    /// Independent censored fits to average.
    #[arg(long, default_value_t = 1)]
    pbar: usize,
    /// Jackknife blocks for standard errors.
    #[arg(long)]
    jackknife: Option<usize>,
    /// Also estimate the rotation and stretch.
    #[arg(long)]
    anisotropic: bool,
    /// Objective evaluations allowed per start.
    #[arg(long)]
    max_evals: Option<usize>,
    /// Skip the sandwich information estimate.
    #[arg(long)]
    no_godambe: bool,
    #[arg(long)]
    no_half_factor: bool,
    #[arg(long, value_enum, default_value_t = Margins::Empirical)]
    margins: Margins,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sites: PathBuf,
    /// Fit report written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long, default_value = "sum")]
    risk: String,
    #[arg(long, default_value_t = 0.99)]
    quantile: f64,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, value_enum, default_value_t = Margins::Empirical)]
    margins: Margins,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MvnArgs {
    /// Covariance matrix as headerless CSV.
    #[arg(long)]
    sigma: PathBuf,
    /// Upper integration limits as one CSV row or column.
    #[arg(long)]
    upper: PathBuf,
    #[arg(long, default_value_t = 499)]
    p: usize,
    #[arg(long, default_value_t = 10)]
    shifts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure with its exit status.
enum Failure {
    Input(anyhow::Error),
    Fit(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        match e.downcast_ref::<rpareto::Error>() {
            Some(rpareto::Error::NonConvergence { .. })
            | Some(rpareto::Error::InsufficientExceedances { .. }) => Failure::Fit(e),
            _ => Failure::Input(e),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Mvnprob(a) => cmd_mvnprob(&a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Fit(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn read_sites(path: &Path) -> anyhow::Result<Vec<Location>> {
    io::read_locations_file(path).with_context(|| format!("reading sites from {}", path.display()))
}

fn read_data(path: &Path, sites: &[Location]) -> anyhow::Result<Dataset> {
    io::read_dataset_file(path, sites)
        .with_context(|| format!("reading data from {}", path.display()))
}

/// Parses a risk name; `site:` takes a site id, or an index when no id matches.
fn parse_risk(s: &str, sites: &[Location]) -> anyhow::Result<RiskFunctional> {
    if let Some(id) = s.trim().strip_prefix("site:") {
        if let Some(index) = sites.iter().position(|l| l.id == id) {
            return Ok(RiskFunctional::Site { index });
        }
        let index: usize = id.parse().map_err(|_| anyhow!("unknown site `{id}`"))?;
        if index >= sites.len() {
            bail!("site index {index} out of range for {} sites", sites.len());
        }
        return Ok(RiskFunctional::Site { index });
    }
    Ok(s.parse()?)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<ExitCode, Failure> {
    let params = a.variogram.params()?;
    let sites = read_sites(&a.sites)?;
    let mut cfg = SimulationConfig::new(params, sites.clone(), a.n, a.seed);
    cfg.truncation = a.truncation;
    let (out, margins) = match a.model {
        Model::Pareto => (simulate_pareto(&cfg)?, "pareto"),
        Model::Maxstable => (simulate_maxstable_approx(&cfg)?, "frechet"),
    };
    let data = Dataset::new(sites.iter().map(|s| s.id.clone()).collect(), out.samples)?;
    let meta = json!({
        "model": match a.model { Model::Pareto => "pareto", Model::Maxstable => "maxstable" },
        "margins": margins,
        "n": a.n,
        "seed": a.seed,
        "params": params,
        "truncation": a.truncation,
        "drift": cfg.drift,
        "sites": a.sites,
        "rejected": out.rejected,
    });
    io::write_samples(&a.out, &data, &meta)
        .with_context(|| format!("writing {}", a.out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(a: &FitArgs) -> Result<ExitCode, Failure> {
    let started = Instant::now();
    let sites = read_sites(&a.sites)?;
    let data = read_data(&a.data, &sites)?;
    let risk = parse_risk(&a.risk, &sites)?;
    let mut objective: Objective = a.objective.parse()?;
    let qmc = QmcConfig::new(a.qmc_p, a.qmc_shifts, a.seed);
    if let Objective::Censored { .. } = objective {
        qmc.validate()?;
        objective = Objective::Censored { qmc };
        if sites.len() > CENSORED_SITE_WARNING {
            log::warn!(
                "censored likelihood on {} sites; expect long run times",
                sites.len()
            );
            eprintln!(
                "warning: censored likelihood on {} sites; expect long run times",
                sites.len()
            );
        }
    }
    if !(0.0..1.0).contains(&a.quantile) {
        return Err(Failure::Input(anyhow!("quantile must lie in [0, 1)")));
    }
    let normalized = a.margins.apply(&data)?;
    let exc = select_exceedances(&normalized, &risk, a.quantile)?;
    objective.check(&exc)?;
    let free = if a.anisotropic {
        FreeParams::Anisotropic
    } else {
        FreeParams::Isotropic
    };
    let mut opts = FitOptions::for_objective(&objective).with_free(free);
    if let Some(m) = a.max_evals {
        opts.nelder_mead.max_evals = m;
    }
    let starts: Vec<VariogramParams> = default_starts(&sites, a.starts, a.seed, free)
        .into_iter()
        .map(|p| p.with_half_factor(!a.no_half_factor))
        .collect();

    let fitted = if objective.is_censored() && a.pbar >= 2 {
        averaged_censored_fit(&objective, &sites, &exc, a.pbar, &starts, &opts)
    } else {
        optimize(&objective, &sites, &exc, &starts, &opts)
    };
    let mut report = FitReport::new(a, &objective, &risk, &exc, qmc);
    let mut fit = match fitted {
        Ok(f) => f,
        Err(rpareto::Error::NonConvergence { message, starts }) => {
            report.fail(&message, starts, started.elapsed().as_secs_f64());
            report.write(&a.out)?;
            return Err(Failure::Fit(anyhow!(
                "optimization did not converge: {message}"
            )));
        }
        Err(e) => return Err(e.into()),
    };

    if fit.converged && !a.no_godambe {
        let step = default_rel_step(&objective);
        match godambe(&objective, &sites, &exc, &fit.theta_hat, free, step) {
            Ok(g) => {
                if fit.se.is_none() {
                    fit.se = Some(g.se.clone());
                    report.se_method = Some("godambe".into());
                }
                fit.godambe = Some(g);
            }
            Err(e) => {
                log::warn!("sandwich information unavailable: {e}");
                report.notes.push(format!("godambe: {e}"));
            }
        }
    }
    if fit.se.is_some() && report.se_method.is_none() {
        report.se_method = Some("replicates".into());
    }
    if let (Some(blocks), true) = (a.jackknife, fit.converged) {
        let jk = jackknife_se(&objective, &sites, &exc, &fit.theta_hat, blocks, &opts)?;
        for (b, msg) in &jk.failures {
            report.notes.push(format!("jackknife block {b}: {msg}"));
        }
        fit.se = Some(jk.se);
        report.se_method = Some("jackknife".into());
    }
    let converged = fit.converged;
    report.finish(&fit, started.elapsed().as_secs_f64());
    report.write(&a.out)?;
    if converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: no optimization start converged; report written");
        Ok(ExitCode::from(3))
    }
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<ExitCode, Failure> {
    let sites = read_sites(&a.sites)?;
    let data = read_data(&a.data, &sites)?;
    let risk = parse_risk(&a.risk, &sites)?;
    let normalized = a.margins.apply(&data)?;
    let exc = select_exceedances(&normalized, &risk, a.quantile)?;
    let params = report::read_params(&a.fit)?;
    let site_u: Vec<f64> = (0..normalized.n_sites())
        .map(|j| empirical_quantile(&normalized.column(j), a.quantile))
        .collect();
    let pairs = pairwise_diagnostics(&params, &sites, &normalized.rows, &risk, &exc.u, &site_u)?;
    let table = binned_table(&pairs, a.bins);
    let mut w =
        csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    w.write_record(["distance", "pi_model", "pi_empirical", "n_pairs_events"])?;
    for b in &table {
        w.write_record([
            b.distance.to_string(),
            b.pi_model.to_string(),
            if b.pi_empirical.is_nan() {
                String::new()
            } else {
                b.pi_empirical.to_string()
            },
            b.n_pairs_events.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_mvnprob(a: &MvnArgs) -> Result<ExitCode, Failure> {
    let rows = io::read_matrix(io::open(&a.sigma)?)?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Failure::Input(anyhow!(
            "covariance must be a square matrix"
        )));
    }
    let sigma = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let upper = io::read_vector(io::open(&a.upper)?)?;
    let cfg = QmcConfig::new(a.p, a.shifts, a.seed);
    let est = mvn_cdf(&upper, &sigma, &cfg)?;
    println!("value {:.12}", est.value);
    println!("probable_error {:.6e}", est.probable_error);
    Ok(ExitCode::SUCCESS)
}
