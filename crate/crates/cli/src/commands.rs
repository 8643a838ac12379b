//! Argument definitions and the simulate, fit, path and select commands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use subtype_lasso::cond_logit::{MatchedProblem, Strategy};
use subtype_lasso::multinom::{Formulation, MultinomProblem};
use subtype_lasso::select::{
    fit_path, lambda_grid, select_bic, select_cv, CvOptions, MatchedModel, Model, MultinomModel,
    Problem, SelectionResult, DEFAULT_GRID_COUNT, DEFAULT_GRID_RATIO,
};
use subtype_lasso::simgen::{gen_matched, gen_unmatched, Setting, SimConfig};
use subtype_lasso::solver::SolverOptions;

use crate::error::{CliError, CliResult};
use crate::io::{self, read_dataset, write_json, Dataset, TruthJson};
use crate::manifest::{sha256_hex, ManifestBuilder, RunManifest};
use crate::model::{parse_strategy, standardize, ExportFit, FitJson, ModelChoice};
use crate::replicate::ReplicateArgs;
use crate::verify::VerifyArgs;

#[derive(Debug, Parser)]
#[command(name = "subtype-lasso", version, about = "Sparse conditional and multinomial logistic regression for case-control data with case subtypes")]
pub struct Cli {
    /// Worker threads for replicate and verify (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Fit one strategy at one penalty level.
    Fit(FitArgs),
    /// Fit one strategy over a decreasing penalty grid.
    Path(PathArgs),
    /// Choose the penalty by BIC or cross-validation and refit.
    Select(SelectArgs),
    /// Run seeded simulation replicates and summarize the metrics.
    Replicate(ReplicateArgs),
    /// Run the numerical identity checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingArg {
    Matched,
    Unmatched,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Matched => Setting::Matched,
            SettingArg::Unmatched => Setting::Unmatched,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// KKT residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 50_000)]
    pub max_iter: usize,
}

impl SolverArgs {
    pub fn options(&self) -> CliResult<SolverOptions> {
        if !(self.tol > 0.0) {
            return Err(CliError::Usage("--tol must be positive".into()));
        }
        Ok(SolverOptions { tol: self.tol, max_iter: self.max_iter, ..SolverOptions::default() })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "matched")]
    pub setting: SettingArg,
    /// Heterogeneity configuration, 1 to 4.
    #[arg(long, default_value_t = 1)]
    pub config: u8,
    /// Signal strength.
    #[arg(long, default_value_t = 2.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Observations (unmatched only; matched size follows from --strata).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Categories including controls (unmatched only).
    #[arg(long)]
    pub k: Option<usize>,
    /// Pairs per subtype, comma separated (matched only).
    #[arg(long, value_delimiter = ',')]
    pub strata: Option<Vec<usize>>,
    /// Number of active covariates (default min(10, p/2)).
    #[arg(long)]
    pub j1: Option<usize>,
    /// Configuration 2: independent signs for unperturbed entries.
    #[arg(long)]
    pub independent_base_signs: bool,
    /// Output prefix: writes PREFIX.csv, PREFIX.truth.json and
    /// PREFIX.manifest.json.
    #[arg(long, default_value = "simulated")]
    pub out: PathBuf,
}

impl SimulateArgs {
    pub fn config(&self) -> CliResult<SimConfig> {
        let mut cfg = match self.setting {
            SettingArg::Matched => {
                if self.k.is_some() {
                    return Err(CliError::Usage("matched designs take --strata instead of --k".into()));
                }
                let mut cfg = SimConfig::matched(self.config, self.delta, self.seed);
                if let Some(s) = &self.strata {
                    cfg.strata_sizes = s.clone();
                    cfg.k = s.len() + 1;
                    cfg.n = 2 * s.iter().sum::<usize>();
                }
                if let Some(n) = self.n {
                    if n != cfg.n {
                        return Err(CliError::Usage(format!(
                            "matched designs have n = 2 x pairs = {}; set --strata instead of --n",
                            cfg.n
                        )));
                    }
                }
                cfg
            }
            SettingArg::Unmatched => {
                if self.strata.is_some() {
                    return Err(CliError::Usage("--strata applies to matched designs only".into()));
                }
                let mut cfg = SimConfig::unmatched(self.config, self.delta, self.seed);
                cfg.n = self.n.unwrap_or(cfg.n);
                cfg.k = self.k.unwrap_or(cfg.k);
                cfg
            }
        };
        if let Some(p) = self.p {
            cfg = cfg.with_p(p);
        }
        if let Some(j1) = self.j1 {
            cfg.j1_size = j1;
        }
        cfg.independent_base_signs = self.independent_base_signs;
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Sidecar manifest for files that cannot embed one.
#[derive(Serialize)]
struct Sidecar<'a> {
    outputs: std::collections::BTreeMap<String, String>,
    manifest: &'a RunManifest,
}

fn write_sidecar(path: &Path, outputs: &[&Path], manifest: &RunManifest) -> CliResult<()> {
    let mut digests = std::collections::BTreeMap::new();
    for p in outputs {
        digests.insert(p.display().to_string(), sha256_hex(&std::fs::read(p)?));
    }
    write_json(&Sidecar { outputs: digests, manifest }, Some(path))
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = args.config()?;
    let builder = ManifestBuilder::new("simulate", args)?.seed(cfg.seed);
    let csv_path = with_suffix(&args.out, ".csv");
    let truth_path = with_suffix(&args.out, ".truth.json");
    let mut out = io::create(&csv_path)?;
    let truth = match cfg.setting {
        Setting::Matched => {
            let (d, truth) = gen_matched(&cfg, &mut cfg.rng())?;
            io::write_matched(&d, &mut out)?;
            truth
        }
        Setting::Unmatched => {
            let (d, truth) = gen_unmatched(&cfg, &mut cfg.rng())?;
            io::write_unmatched(&d, &mut out)?;
            truth
        }
    };
    drop(out);
    write_json(&TruthJson::new(&cfg, &truth), Some(&truth_path))?;
    write_sidecar(
        &with_suffix(&args.out, ".manifest.json"),
        &[&csv_path, &truth_path],
        &builder.finish(),
    )?;
    log::info!("wrote {} and {}", csv_path.display(), truth_path.display());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Matched or unmatched CSV file.
    #[arg(long)]
    pub data: PathBuf,
    /// indep, pooled, ref or datashared (matched); ref, sym or datashared
    /// (unmatched).
    #[arg(long, default_value = "datashared")]
    pub strategy: String,
    /// Reference stratum or category, 1-based.
    #[arg(long = "ref")]
    pub reference: Option<usize>,
    /// Sharing weights per stratum for matched datashared, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    /// Scale covariates to unit variance before fitting; coefficients are
    /// reported on the original scale.
    #[arg(long)]
    pub standardize: bool,
    /// Fit unmatched models without intercepts.
    #[arg(long)]
    pub no_intercept: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Loaded data, the chosen model and the standardization scales.
pub struct Prepared {
    pub data: Dataset,
    pub model: ModelChoice,
    pub scale: Option<ndarray::Array1<f64>>,
    pub opts: SolverOptions,
    pub manifest: ManifestBuilder,
}

pub fn prepare(command: &str, args: &DataArgs, extra: impl Serialize) -> CliResult<Prepared> {
    let opts = args.solver.options()?;
    let manifest = ManifestBuilder::new(command, serde_json::json!({ "data": args, "options": extra }))?
        .input(&args.data)?;
    let data = read_dataset(&args.data, !args.no_intercept)?;
    let model = parse_strategy(&args.strategy, args.reference, args.tau.as_deref(), data.shape())?;
    let (data, scale) = if args.standardize {
        let (d, s) = standardize(data)?;
        (d, Some(s))
    } else {
        (data, None)
    };
    Ok(Prepared { data, model, scale, opts, manifest })
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: DataArgs,
    /// Penalty level.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Penalty as a fraction of lambda_max.
    #[arg(long, conflicts_with = "lambda")]
    pub lambda_frac: Option<f64>,
    /// Print lambda_max and exit.
    #[arg(long)]
    pub lambda_max_only: bool,
}

#[derive(Serialize)]
pub struct FitOutput {
    pub lambda_max: f64,
    pub fit: FitJson,
    pub manifest: RunManifest,
}

fn lambda_max_of(p: &Prepared) -> CliResult<f64> {
    Ok(match (&p.data, &p.model) {
        (Dataset::Matched(d), ModelChoice::Matched(s)) => MatchedProblem::new(d, s.clone())?.lambda_max(&p.opts)?,
        (Dataset::Unmatched(d), ModelChoice::Unmatched(f)) => MultinomProblem::new(d, *f)?.lambda_max(&p.opts)?,
        _ => unreachable!("strategy parsed for this dataset"),
    })
}

fn check_lambda(model: &ModelChoice, lambda: f64) -> CliResult<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(CliError::Usage("lambda must be finite and non-negative".into()));
    }
    if lambda == 0.0 {
        match model {
            ModelChoice::Unmatched(Formulation::SparseSym) => return Err(subtype_lasso::Error::Unidentifiable.into()),
            ModelChoice::Unmatched(Formulation::DataSharedRef) | ModelChoice::Matched(Strategy::DataShared(_)) => {
                return Err(CliError::Usage("the data-shared decomposition needs lambda > 0".into()))
            }
            _ => {}
        }
    }
    Ok(())
}

pub enum FitResult {
    LambdaMax(f64),
    Fit(Box<FitOutput>),
}

/// Runs the fit command; non-convergence is left to the caller, which
/// reports it after writing the output.
pub fn run_fit(args: &FitArgs) -> CliResult<FitResult> {
    let p = prepare("fit", &args.common, serde_json::json!({
        "lambda": args.lambda, "lambda_frac": args.lambda_frac, "lambda_max_only": args.lambda_max_only,
    }))?;
    let lmax = lambda_max_of(&p)?;
    if args.lambda_max_only {
        return Ok(FitResult::LambdaMax(lmax));
    }
    let lambda = match (args.lambda, args.lambda_frac) {
        (Some(l), None) => l,
        (None, Some(f)) => f * lmax,
        _ => return Err(CliError::Usage("give exactly one of --lambda, --lambda-frac or --lambda-max-only".into())),
    };
    check_lambda(&p.model, lambda)?;
    let scale = p.scale.as_ref();
    let fit = match (&p.data, &p.model) {
        (Dataset::Matched(d), ModelChoice::Matched(s)) => {
            MatchedProblem::new(d, s.clone())?.solve(lambda, None, &p.opts)?.1.export(scale)
        }
        (Dataset::Unmatched(d), ModelChoice::Unmatched(f)) => {
            MultinomProblem::new(d, *f)?.solve(lambda, None, &p.opts)?.1.export(scale)
        }
        _ => unreachable!("strategy parsed for this dataset"),
    };
    Ok(FitResult::Fit(Box::new(FitOutput { lambda_max: lmax, fit, manifest: p.manifest.finish() })))
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    match run_fit(args)? {
        FitResult::LambdaMax(l) => {
            println!("{l}");
            Ok(())
        }
        FitResult::Fit(out) => {
            write_json(&*out, args.common.out.as_deref())?;
            if out.fit.converged {
                Ok(())
            } else {
                Err(CliError::Convergence(format!(
                    "solver stopped after {} iterations with KKT residual {:.3e}",
                    out.fit.iterations, out.fit.kkt_residual
                )))
            }
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Number of grid points.
    #[arg(long, default_value_t = DEFAULT_GRID_COUNT)]
    pub grid_count: usize,
    /// Smallest lambda as a fraction of lambda_max.
    #[arg(long, default_value_t = DEFAULT_GRID_RATIO)]
    pub grid_ratio: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PathArgs {
    #[command(flatten)]
    pub common: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Solve every point from zero instead of warm starts.
    #[arg(long)]
    pub cold: bool,
}

#[derive(Serialize)]
pub struct PathPointJson {
    pub lambda: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub support_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitJson>,
}

#[derive(Serialize)]
pub struct PathOutput {
    pub strategy: String,
    pub lambda_max: f64,
    pub grid_ratio: f64,
    pub warm_started: bool,
    pub points: Vec<PathPointJson>,
    pub manifest: RunManifest,
}

fn path_points<P: Problem>(
    problem: &P,
    grid: &GridArgs,
    cold: bool,
    opts: &SolverOptions,
    scale: Option<&ndarray::Array1<f64>>,
) -> CliResult<(f64, bool, Vec<PathPointJson>)>
where
    P::Fit: ExportFit,
{
    let g = lambda_grid(problem, grid.grid_count, grid.grid_ratio, opts)?;
    let path = fit_path(problem, &g, !cold, opts);
    let points = path
        .points
        .iter()
        .map(|pt| PathPointJson {
            lambda: pt.lambda,
            objective: pt.objective,
            kkt_residual: pt.kkt_residual,
            iterations: pt.iterations,
            converged: pt.converged,
            support_size: pt.support_size,
            error: pt.error.clone(),
            fit: pt.fit.as_ref().map(|f| f.export(scale)),
        })
        .collect();
    Ok((g.anchor(), path.warm_started, points))
}

pub fn run_path(args: &PathArgs) -> CliResult<PathOutput> {
    let p = prepare("path", &args.common, serde_json::json!({ "grid": args.grid, "cold": args.cold }))?;
    let scale = p.scale.as_ref();
    let (lambda_max, warm_started, points) = match (&p.data, &p.model) {
        (Dataset::Matched(d), ModelChoice::Matched(s)) => {
            path_points(&MatchedProblem::new(d, s.clone())?, &args.grid, args.cold, &p.opts, scale)?
        }
        (Dataset::Unmatched(d), ModelChoice::Unmatched(f)) => {
            path_points(&MultinomProblem::new(d, *f)?, &args.grid, args.cold, &p.opts, scale)?
        }
        _ => unreachable!("strategy parsed for this dataset"),
    };
    Ok(PathOutput {
        strategy: p.model.name(),
        lambda_max,
        grid_ratio: args.grid.grid_ratio,
        warm_started,
        points,
        manifest: p.manifest.finish(),
    })
}

pub fn cmd_path(args: &PathArgs) -> CliResult<()> {
    let out = run_path(args)?;
    write_json(&out, args.common.out.as_deref())?;
    let failed = out.points.iter().filter(|p| !p.converged || p.error.is_some()).count();
    if failed > 0 {
        return Err(CliError::Convergence(format!("{failed} path points did not converge")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Bic,
    Cv,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value = "bic")]
    pub method: MethodArg,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
pub struct RefitJson {
    /// Selected raw solver coordinates, 0-based.
    pub support: Vec<usize>,
    pub total_nll: f64,
    pub ridge_fallback: bool,
    pub converged: bool,
}

#[derive(Serialize)]
pub struct SelectionJson {
    pub method: &'static str,
    pub strategy: String,
    pub lambdas: Vec<f64>,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    pub criterion: Vec<f64>,
    pub support_sizes: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fold_curves: Vec<Vec<f64>>,
    pub penalized_fit: FitJson,
    pub final_fit: FitJson,
    pub refit: RefitJson,
}

impl SelectionJson {
    pub fn new<F: ExportFit>(strategy: String, s: &SelectionResult<F>, scale: Option<&ndarray::Array1<f64>>) -> Self {
        Self {
            method: s.method.name(),
            strategy,
            lambdas: s.grid.values().to_vec(),
            chosen_index: s.chosen_index,
            chosen_lambda: s.chosen_lambda,
            criterion: s.criterion.clone(),
            support_sizes: s.support_sizes.clone(),
            fold_curves: s.fold_curves.clone(),
            penalized_fit: s.penalized_fit.export(scale),
            final_fit: s.final_fit.export(scale),
            refit: RefitJson {
                support: s.refit.support.clone(),
                total_nll: s.refit.total_nll,
                ridge_fallback: s.refit.ridge_fallback,
                converged: s.refit.converged,
            },
        }
    }
}

#[derive(Serialize)]
pub struct SelectOutput {
    #[serde(flatten)]
    pub selection: SelectionJson,
    pub manifest: RunManifest,
}

/// Selection by the requested method for any model family.
pub fn select_with<M: Model>(
    model: &M,
    data: &M::Data,
    method: MethodArg,
    cv: &CvOptions,
    opts: &SolverOptions,
) -> CliResult<SelectionResult<<M::Problem as Problem>::Fit>> {
    Ok(match method {
        MethodArg::Bic => {
            let problem = model.problem(data)?;
            let grid = lambda_grid(&problem, cv.grid_count, cv.grid_ratio, opts)?;
            let path = fit_path(&problem, &grid, true, opts);
            select_bic(&problem, &path, opts)?
        }
        MethodArg::Cv => select_cv(model, data, cv, opts)?,
    })
}

pub fn run_select(args: &SelectArgs) -> CliResult<SelectOutput> {
    let extra = serde_json::json!({ "grid": args.grid, "method": args.method, "folds": args.folds, "seed": args.seed });
    let p = prepare("select", &args.common, extra)?;
    let p = Prepared { manifest: p.manifest.seed(args.seed), ..p };
    let cv = CvOptions {
        folds: args.folds,
        seed: args.seed,
        grid_count: args.grid.grid_count,
        grid_ratio: args.grid.grid_ratio,
    };
    let scale = p.scale.as_ref();
    let name = p.model.name();
    let selection = match (&p.data, &p.model) {
        (Dataset::Matched(d), ModelChoice::Matched(s)) => {
            let sel = select_with(&MatchedModel(s.clone()), d, args.method, &cv, &p.opts)?;
            SelectionJson::new(name, &sel, scale)
        }
        (Dataset::Unmatched(d), ModelChoice::Unmatched(f)) => {
            let sel = select_with(&MultinomModel(*f), d, args.method, &cv, &p.opts)?;
            SelectionJson::new(name, &sel, scale)
        }
        _ => unreachable!("strategy parsed for this dataset"),
    };
    Ok(SelectOutput { selection, manifest: p.manifest.finish() })
}

pub fn cmd_select(args: &SelectArgs) -> CliResult<()> {
    let out = run_select(args)?;
    write_json(&out, args.common.out.as_deref())
}

/// Thread pool honoring `--threads`.
pub fn thread_pool(threads: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        b = b.num_threads(t);
    }
    b.build().map_err(|e| CliError::Usage(e.to_string()))
}

pub fn run(cli: Cli) -> CliResult<()> {
    let pool = thread_pool(cli.threads)?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Path(a) => cmd_path(a),
        Command::Select(a) => cmd_select(a),
        Command::Replicate(a) => crate::replicate::cmd_replicate(a),
        Command::Verify(a) => crate::verify::cmd_verify(a),
    })
}
