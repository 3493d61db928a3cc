use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use ggllvm::diagnostics::{chi_square_uniform, dunn_smyth_residuals, ks_test_normal, qq_data, DEFAULT_ENVELOPE_DRAWS};
use ggllvm::estimator::{fit_glamle, FitOptions, SigmaStructure};
use ggllvm::io::{self, ChainFile, FitFile, IngestOptions, PlanFile, TruthFile};
use ggllvm::laplace::GradientMode;
use ggllvm::mcmc::{run_mwg, McmcConfig};
use ggllvm::model::{Assumption, Family, ModelSpec, MultiviewData};
use ggllvm::quadrature::{compare_layers, DEFAULT_ORDER};
use ggllvm::simulate::{run_monte_carlo, simulate_replicate, McPlan};
use ggllvm::Error;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

#[derive(Debug, Parser)]
#[command(name = "ggllvm", version, about = "Latent variable models for multiview networks")]
pub struct Cli {
    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a multiview network and its generating parameters.
    Simulate(SimulateArgs),
    /// Fit a model to an edge list.
    Fit(FitArgs),
    /// Compare Laplace and quadrature log densities per layer.
    Oracle(OracleArgs),
    /// Run a Monte Carlo study from a plan file.
    Montecarlo(MonteCarloArgs),
    /// Dunn–Smyth residuals and QQ envelope for a fit.
    Diagnose(DiagnoseArgs),
    /// Bayesian fit by Metropolis-within-Gibbs.
    Mcmc(McmcArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Bernoulli,
    Poisson,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Bernoulli => Family::Bernoulli,
            FamilyArg::Poisson => Family::Poisson,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AssumptionArg {
    A2,
    A2prime,
}

impl From<AssumptionArg> for Assumption {
    fn from(a: AssumptionArg) -> Self {
        match a {
            AssumptionArg::A2 => Assumption::A2,
            AssumptionArg::A2prime => Assumption::A2Prime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Laplace,
    Mcmc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GradientArg {
    Analytic,
    Fd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SigmaArg {
    Diagonal,
    Full,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long)]
    layers: usize,
    #[arg(long)]
    factors: usize,
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long, value_enum, default_value = "a2")]
    assumption: AssumptionArg,
    #[arg(long)]
    directed: bool,
    #[arg(long)]
    no_intercept: bool,
    /// Standard deviation of the generated loadings.
    #[arg(long, default_value_t = 1.0)]
    loading_sd: f64,
    /// Diagonal of the latent covariance under a2prime.
    #[arg(long, value_delimiter = ',')]
    sigma_diag: Option<Vec<f64>>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    factors: usize,
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long, value_enum, default_value = "a2")]
    assumption: AssumptionArg,
    #[arg(long, value_enum, default_value = "laplace")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "analytic")]
    gradient: GradientArg,
    /// Compute the sandwich covariance.
    #[arg(long)]
    vcov: bool,
    #[arg(long)]
    no_intercept: bool,
    /// Treat the edge list as undirected regardless of its header.
    #[arg(long)]
    undirected: bool,
    #[arg(long, value_enum, default_value = "diagonal")]
    sigma_structure: SigmaArg,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    fit: PathBuf,
    /// Gauss–Hermite points per axis.
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Overrides `n_replicates` from the plan.
    #[arg(long)]
    replicates: Option<usize>,
    /// Overrides `generator_seed` from the plan.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ENVELOPE_DRAWS)]
    envelope_draws: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    qq: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McmcArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    factors: usize,
    #[arg(long)]
    undirected: bool,
    #[arg(long, default_value_t = 20_000)]
    iters: usize,
    #[arg(long, default_value_t = 5_000)]
    burn: usize,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    #[arg(long, default_value_t = 1.0)]
    proposal_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pi: Option<PathBuf>,
}

fn create(path: &Path) -> Result<File, Failure> {
    File::create(path).map_err(|e| usage(format!("cannot create {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| usage(format!("cannot open {}: {e}", path.display())))
}

fn read_data(path: &Path, family: Family, undirected: bool) -> Result<MultiviewData, Failure> {
    let opts = IngestOptions {
        family,
        directed: undirected.then_some(false),
    };
    io::read_edge_list(open(path)?, &opts).map_err(|e| match e {
        Error::Parse { .. } => usage(format!("{}: {e}", path.display())),
        e => e.into(),
    })
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Oracle(a) => oracle(a),
        Command::Montecarlo(a) => montecarlo(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Mcmc(a) => mcmc(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let spec = ModelSpec {
        family: a.family.into(),
        q: a.factors,
        include_intercept: !a.no_intercept,
        assumption: a.assumption.into(),
        directed: a.directed,
        n_nodes: a.nodes,
    };
    let mut plan = McPlan::new(spec.clone(), a.layers, 1, a.seed);
    plan.loading_sd = a.loading_sd;
    plan.sigma_diag = a.sigma_diag;
    plan.tracked_dyads.clear();
    let rep = simulate_replicate(&plan, 0)?;
    io::write_edge_list(&rep.data, create(&a.out)?)?;
    if let Some(path) = &a.truth {
        io::write_json(&TruthFile::new(&rep.truth, &spec, a.seed, &rep.data), create(path)?)?;
    }
    Ok(())
}

fn fit(a: FitArgs) -> Result<(), Failure> {
    let family: Family = a.family.into();
    let data = read_data(&a.data, family, a.undirected)?;
    let spec = ModelSpec {
        family,
        q: a.factors,
        include_intercept: !a.no_intercept,
        assumption: a.assumption.into(),
        directed: data.directed,
        n_nodes: data.n_nodes(),
    };
    if a.method == MethodArg::Mcmc {
        let config = McmcConfig {
            seed: a.seed,
            ..McmcConfig::default()
        };
        let sample = run_mwg(&data, &spec, &config)?;
        io::write_json(&ChainFile::new(&sample, &spec, &data), create(&a.out)?)?;
        return Ok(());
    }
    let opts = FitOptions {
        outer_tol: a.tol,
        max_outer_iters: a.max_iters,
        gradient: match a.gradient {
            GradientArg::Analytic => GradientMode::Analytic,
            GradientArg::Fd => GradientMode::FiniteDifference,
        },
        seed: a.seed,
        compute_vcov: a.vcov,
        sigma_structure: match a.sigma_structure {
            SigmaArg::Diagonal => SigmaStructure::Diagonal,
            SigmaArg::Full => SigmaStructure::Full,
        },
        ..FitOptions::default()
    };
    let result = fit_glamle(&data, &spec, &opts)?;
    io::write_json(&FitFile::from_fit(&result, &data), create(&a.out)?)?;
    if let Some(e) = &result.vcov_error {
        log::warn!("covariance not available: {e}");
    }
    if !result.converged {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!(
                "fit did not converge ({:?}, gradient norm {:.3e}); result written to {}",
                result.status,
                result.grad_norm,
                a.out.display()
            ),
        });
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<(), Failure> {
    let fit: FitFile = io::read_versioned_json(open(&a.fit)?)?;
    let fit = fit.to_fit()?;
    let data = read_data(&a.data, fit.spec.family, !fit.spec.directed)?;
    let rows = compare_layers(&fit.alpha_hat, &fit.sigma_hat, &data, &fit.spec, &fit.inner, a.order)?;
    io::write_oracle_table(&rows, &data, create(&a.out)?)?;
    Ok(())
}

fn montecarlo(a: MonteCarloArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.plan).map_err(|e| usage(format!("cannot read {}: {e}", a.plan.display())))?;
    let mut file = PlanFile::parse(&text)?;
    if let Some(r) = a.replicates {
        file.n_replicates = r;
    }
    if let Some(s) = a.seed {
        file.generator_seed = s;
    }
    let (plan, opts) = file.into_parts()?;
    let rows = run_monte_carlo(&plan, &opts)?;
    io::write_metric_table(&rows, &plan.tracked_dyads, create(&a.out)?)?;
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> Result<(), Failure> {
    let fit: FitFile = io::read_versioned_json(open(&a.fit)?)?;
    let fit = fit.to_fit()?;
    let data = read_data(&a.data, fit.spec.family, !fit.spec.directed)?;
    let set = dunn_smyth_residuals(&fit, &data, a.seed)?;
    io::write_residual_table(&set, &data, create(&a.out)?)?;
    if let Some(path) = &a.qq {
        let qq = qq_data(&set.residuals, a.envelope_draws, a.seed)?;
        io::write_qq_table(&qq, create(path)?)?;
    }
    let (d, p) = ks_test_normal(&set.residuals)?;
    let (chi2, chi2_p) = chi_square_uniform(&set.uniforms, 20)?;
    println!("ks_statistic={d:.6} ks_p_value={p:.6} chi2_uniform={chi2:.6} chi2_p_value={chi2_p:.6}");
    Ok(())
}

fn mcmc(a: McmcArgs) -> Result<(), Failure> {
    let data = read_data(&a.data, Family::Bernoulli, a.undirected)?;
    let spec = ModelSpec {
        family: Family::Bernoulli,
        q: a.factors,
        include_intercept: false,
        assumption: Assumption::A2,
        directed: data.directed,
        n_nodes: data.n_nodes(),
    };
    let config = McmcConfig {
        n_iterations: a.iters,
        burn_in: a.burn,
        thin: a.thin,
        proposal_sd: a.proposal_sd,
        seed: a.seed,
    };
    let sample = run_mwg(&data, &spec, &config)?;
    io::write_json(&ChainFile::new(&sample, &spec, &data), create(&a.out)?)?;
    if let Some(path) = &a.pi {
        io::write_mean_table(&sample.pi_mean, &data, "pi_mean", create(path)?)?;
    }
    Ok(())
}
