//! Seeded simulation replicates: generate, select, evaluate, summarize.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use subtype_lasso::metrics::{AccuracyMode, MetricsReport};
use subtype_lasso::select::{CvOptions, MatchedModel, MultinomModel};
use subtype_lasso::simgen::{
    child_seed, gen_truth, sample_matched, sample_unmatched, Setting, SimConfig,
};
use subtype_lasso::solver::SolverOptions;

use crate::commands::{select_with, GridArgs, MethodArg, SettingArg, SolverArgs};
use crate::error::{CliError, CliResult};
use crate::io::create;
use crate::manifest::{sha256_hex, ManifestBuilder};
use crate::model::{nonzeros, parse_strategy, ExportFit, ModelChoice, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyArg {
    Entrywise,
    PerCovariate,
}

impl From<AccuracyArg> for AccuracyMode {
    fn from(a: AccuracyArg) -> Self {
        match a {
            AccuracyArg::Entrywise => AccuracyMode::Entrywise,
            AccuracyArg::PerCovariate => AccuracyMode::PerCovariate,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplicateArgs {
    #[arg(long, value_enum, default_value = "matched")]
    pub setting: SettingArg,
    /// Heterogeneity configurations, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,4")]
    pub configs: Vec<u8>,
    /// Signal strengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub deltas: Vec<f64>,
    /// Strategies, comma separated (default: indep,datashared for matched
    /// data, ref,sym,datashared for unmatched data).
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<String>>,
    /// Replicates per cell.
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Selection method (default: cv for matched, bic for unmatched data).
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Covariates (default: 100 matched, 20 unmatched).
    #[arg(long)]
    pub p: Option<usize>,
    /// Observations (unmatched only).
    #[arg(long)]
    pub n: Option<usize>,
    /// Pairs per subtype (matched only), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub strata: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "entrywise")]
    pub accuracy: AccuracyArg,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Summary CSV (default: standard output); a manifest is written next
    /// to it as FILE.manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ReplicateArgs {
    fn strategies(&self) -> Vec<String> {
        self.strategies.clone().unwrap_or_else(|| {
            let names: &[&str] = match self.setting {
                SettingArg::Matched => &["indep", "datashared"],
                SettingArg::Unmatched => &["ref", "sym", "datashared"],
            };
            names.iter().map(|s| s.to_string()).collect()
        })
    }

    fn method(&self) -> MethodArg {
        self.method.unwrap_or(match self.setting {
            SettingArg::Matched => MethodArg::Cv,
            SettingArg::Unmatched => MethodArg::Bic,
        })
    }

    /// Simulation design of one cell, seeded per replicate later.
    pub fn sim_config(&self, config: u8, delta: f64, seed: u64) -> CliResult<SimConfig> {
        let mut cfg = match self.setting {
            SettingArg::Matched => {
                if self.n.is_some() {
                    return Err(CliError::Usage("matched designs take --strata instead of --n".into()));
                }
                let mut cfg = SimConfig::matched(config, delta, seed);
                if let Some(s) = &self.strata {
                    cfg.strata_sizes = s.clone();
                    cfg.k = s.len() + 1;
                    cfg.n = 2 * s.iter().sum::<usize>();
                }
                cfg
            }
            SettingArg::Unmatched => {
                if self.strata.is_some() {
                    return Err(CliError::Usage("--strata applies to matched designs only".into()));
                }
                let mut cfg = SimConfig::unmatched(config, delta, seed);
                cfg.n = self.n.unwrap_or(cfg.n);
                cfg
            }
        };
        if let Some(p) = self.p {
            cfg = cfg.with_p(p);
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Seed of replicate `r` in the cell `(config, delta)`; shared by every
/// strategy so that strategies are compared on the same data.
pub fn replicate_seed(seed: u64, config: u8, delta: f64, r: usize) -> u64 {
    child_seed(child_seed(child_seed(seed, config as u64), delta.to_bits()), r as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub config: u8,
    pub delta: f64,
    pub strategy: String,
    pub replicate: usize,
    pub seed: u64,
    pub outcome: Result<Outcome, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub lambda: f64,
    pub support: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMean {
    pub config: u8,
    pub delta: f64,
    pub strategy: String,
    pub completed: usize,
    pub requested: usize,
    pub acc_s: f64,
    pub acc_h: f64,
    pub pred_err: f64,
    pub mean_deviance: Option<f64>,
    pub support: f64,
}

impl CellMean {
    pub fn is_complete(&self) -> bool {
        self.completed == self.requested
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateSummary {
    pub setting: SettingArg,
    pub rows: Vec<ReplicateRow>,
    pub means: Vec<CellMean>,
}

impl ReplicateSummary {
    pub fn mean(&self, config: u8, delta: f64, strategy: &str) -> Option<&CellMean> {
        self.means
            .iter()
            .find(|m| m.config == config && m.delta == delta && m.strategy == strategy)
    }

    /// Per-replicate rows followed by per-cell means.
    pub fn to_csv(&self) -> CliResult<String> {
        let setting = match self.setting {
            SettingArg::Matched => "matched",
            SettingArg::Unmatched => "unmatched",
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "kind", "setting", "config", "delta", "strategy", "replicate", "seed", "completed", "lambda",
            "support", "acc_s", "acc_h", "pred_err", "mean_deviance", "status",
        ];
        let csv_err = |e: csv::Error| CliError::Data(e.to_string());
        w.write_record(header).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            let mut rec = vec![
                "replicate".to_string(),
                setting.to_string(),
                r.config.to_string(),
                r.delta.to_string(),
                r.strategy.clone(),
                r.replicate.to_string(),
                r.seed.to_string(),
            ];
            match &r.outcome {
                Ok(o) => rec.extend([
                    "1".to_string(),
                    o.lambda.to_string(),
                    o.support.to_string(),
                    o.metrics.acc_s.to_string(),
                    o.metrics.acc_h.to_string(),
                    o.metrics.pred_err.to_string(),
                    opt(o.metrics.mean_deviance),
                    "ok".to_string(),
                ]),
                Err(e) => {
                    rec.extend(["0".to_string()]);
                    rec.extend(std::iter::repeat_n(String::new(), 6));
                    rec.push(format!("failed: {e}"));
                }
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        for m in &self.means {
            let has = m.completed > 0;
            let val = |v: f64| if has { v.to_string() } else { String::new() };
            w.write_record([
                "mean".to_string(),
                setting.to_string(),
                m.config.to_string(),
                m.delta.to_string(),
                m.strategy.clone(),
                String::new(),
                String::new(),
                m.completed.to_string(),
                String::new(),
                val(m.support),
                val(m.acc_s),
                val(m.acc_h),
                val(m.pred_err),
                if has { opt(m.mean_deviance) } else { String::new() },
                if m.is_complete() { "complete".into() } else { "incomplete".into() },
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

struct Task {
    config: u8,
    delta: f64,
    replicate: usize,
    strategy: String,
}

fn run_task(args: &ReplicateArgs, task: &Task, opts: &SolverOptions) -> CliResult<Outcome> {
    let seed = replicate_seed(args.seed, task.config, task.delta, task.replicate);
    let cfg = args.sim_config(task.config, task.delta, seed)?;
    let test_cfg = SimConfig { seed: child_seed(seed, 1), ..cfg.clone() };
    let cv = CvOptions {
        folds: args.folds,
        seed: child_seed(seed, 2),
        grid_count: args.grid.grid_count,
        grid_ratio: args.grid.grid_ratio,
    };
    let mode = args.accuracy.into();
    let shape = match cfg.setting {
        Setting::Matched => Shape::Matched { strata: cfg.k - 1 },
        Setting::Unmatched => Shape::Unmatched { categories: cfg.k },
    };
    let mut rng = cfg.rng();
    let truth = gen_truth(&cfg, &mut rng)?;
    match parse_strategy(&task.strategy, None, None, shape)? {
        ModelChoice::Matched(s) => {
            let train = sample_matched(&cfg, &truth, &mut rng)?;
            let test = sample_matched(&test_cfg, &truth, &mut test_cfg.rng())?;
            let sel = select_with(&MatchedModel(s), &train, args.method(), &cv, opts)?;
            let delta = sel.final_fit.delta();
            Ok(Outcome {
                lambda: sel.chosen_lambda,
                support: nonzeros(&delta),
                metrics: MetricsReport::matched(delta.view(), truth.delta_star.view(), &test, mode)?,
            })
        }
        ModelChoice::Unmatched(f) => {
            let train = sample_unmatched(&cfg, &truth, &mut rng)?;
            let test = sample_unmatched(&test_cfg, &truth, &mut test_cfg.rng())?;
            let sel = select_with(&MultinomModel(f), &train, args.method(), &cv, opts)?;
            let fit = &sel.final_fit;
            Ok(Outcome {
                lambda: sel.chosen_lambda,
                support: nonzeros(&fit.delta()),
                metrics: MetricsReport::unmatched(fit, truth.delta_star.view(), &test, mode)?,
            })
        }
    }
}

/// Runs every (configuration, delta, replicate, strategy) task on the current
/// rayon pool. Results do not depend on the number of threads.
pub fn run_replicates(args: &ReplicateArgs) -> CliResult<ReplicateSummary> {
    if args.replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    let opts = args.solver.options()?;
    let strategies = args.strategies();
    let mut tasks = Vec::new();
    for &config in &args.configs {
        for &delta in &args.deltas {
            let cfg = args.sim_config(config, delta, args.seed)?;
            let shape = match cfg.setting {
                Setting::Matched => Shape::Matched { strata: cfg.k - 1 },
                Setting::Unmatched => Shape::Unmatched { categories: cfg.k },
            };
            for s in &strategies {
                parse_strategy(s, None, None, shape)?;
            }
            for replicate in 0..args.replicates {
                for s in &strategies {
                    tasks.push(Task { config, delta, replicate, strategy: s.clone() });
                }
            }
        }
    }
    let rows: Vec<ReplicateRow> = tasks
        .par_iter()
        .map(|t| {
            let outcome = run_task(args, t, &opts).map_err(|e| {
                log::warn!(
                    "config {} delta {} replicate {} {}: {e}",
                    t.config, t.delta, t.replicate, t.strategy
                );
                e.to_string()
            });
            ReplicateRow {
                config: t.config,
                delta: t.delta,
                strategy: t.strategy.clone(),
                replicate: t.replicate,
                seed: replicate_seed(args.seed, t.config, t.delta, t.replicate),
                outcome,
            }
        })
        .collect();

    let mut means = Vec::new();
    for &config in &args.configs {
        for &delta in &args.deltas {
            for s in &strategies {
                let ok: Vec<&Outcome> = rows
                    .iter()
                    .filter(|r| r.config == config && r.delta == delta && &r.strategy == s)
                    .filter_map(|r| r.outcome.as_ref().ok())
                    .collect();
                let n = ok.len().max(1) as f64;
                let avg = |f: &dyn Fn(&Outcome) -> f64| ok.iter().map(|o| f(o)).sum::<f64>() / n;
                means.push(CellMean {
                    config,
                    delta,
                    strategy: s.clone(),
                    completed: ok.len(),
                    requested: args.replicates,
                    acc_s: avg(&|o| o.metrics.acc_s),
                    acc_h: avg(&|o| o.metrics.acc_h),
                    pred_err: avg(&|o| o.metrics.pred_err),
                    mean_deviance: ok
                        .iter()
                        .all(|o| o.metrics.mean_deviance.is_some())
                        .then(|| avg(&|o| o.metrics.mean_deviance.unwrap_or(0.0))),
                    support: avg(&|o| o.support as f64),
                });
            }
        }
    }
    Ok(ReplicateSummary { setting: args.setting, rows, means })
}

pub fn cmd_replicate(args: &ReplicateArgs) -> CliResult<()> {
    let manifest = ManifestBuilder::new("replicate", args)?.seed(args.seed);
    let summary = run_replicates(args)?;
    let csv = summary.to_csv()?;
    match &args.out {
        Some(path) => {
            use std::io::Write;
            let mut f = create(path)?;
            f.write_all(csv.as_bytes())?;
            f.flush()?;
            let mut sidecar = path.as_os_str().to_owned();
            sidecar.push(".manifest.json");
            crate::io::write_json(
                &serde_json::json!({
                    "outputs": { path.display().to_string(): sha256_hex(csv.as_bytes()) },
                    "manifest": manifest.finish(),
                }),
                Some(&PathBuf::from(sidecar)),
            )?;
        }
        None => print!("{csv}"),
    }
    let incomplete = summary.means.iter().filter(|m| !m.is_complete()).count();
    if incomplete > 0 {
        log::warn!("{incomplete} cells have failed replicates");
    }
    Ok(())
}
