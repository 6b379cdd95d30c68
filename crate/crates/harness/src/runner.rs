//! Runs the (seed, valuator) matrix of an experiment.

use std::time::Instant;

use dataval::dataset::{
    inject_feature_noise, inject_label_noise, load_csv, split_by_count, synth_blobs, synth_friedman,
};
use dataval::evaluation::{detect, point_addition_curve, point_removal_curve, CurveResult};
use dataval::learners::LearnerSpec;
use dataval::marginal::run_tmc;
use dataval::rng::derive_seed;
use dataval::utility::BoundUtility;
use dataval::valuators::{self, AmeConfig, LavaConfig, LavaCost, ValueVector};
use dataval::{Dataset, Metric, NoiseRecord, SplitIndices, Task, UtilitySpec};
use rayon::prelude::*;

use crate::config::{
    DatasetConfig, ExperimentConfig, LavaCostKind, NoiseKindConfig, OobBase, TaskKind,
    ValuatorConfig,
};
use crate::error::Result;
use crate::report::{CurveRow, ErrorRow, EvalReport, SummaryRow, ValueRow};

/// One seed's noisy dataset and its ground truth.
struct Prepared {
    ds: Dataset,
    split: SplitIndices,
    noise: Option<NoiseRecord>,
}

fn base_dataset(cfg: &ExperimentConfig, seed: u64) -> dataval::Result<Dataset> {
    let total = cfg.split.total();
    let stream = derive_seed(seed, "dataset", 0);
    match &cfg.dataset {
        DatasetConfig::Blobs {
            n,
            dim,
            classes,
            sep,
        } => synth_blobs(n.unwrap_or(total), *dim, *classes, *sep, stream),
        DatasetConfig::Friedman { n } => synth_friedman(n.unwrap_or(total), stream),
        DatasetConfig::Csv { .. } => unreachable!("csv datasets are loaded once"),
    }
}

fn prepare(
    cfg: &ExperimentConfig,
    loaded: Option<&Dataset>,
    seed: u64,
) -> dataval::Result<Prepared> {
    let ds = match loaded {
        Some(ds) => ds.clone(),
        None => base_dataset(cfg, seed)?,
    };
    let split = split_by_count(
        &ds,
        cfg.split.train,
        cfg.split.valid,
        cfg.split.test,
        derive_seed(seed, "split", 0),
    )?;
    let noise_seed = derive_seed(seed, "noise", 0);
    let (ds, noise) = match cfg.noise.kind {
        NoiseKindConfig::LabelFlip => {
            let (ds, rec) = inject_label_noise(&ds, &split, cfg.noise.rate, noise_seed)?;
            (ds, Some(rec))
        }
        NoiseKindConfig::FeatureGauss => {
            let (ds, rec) =
                inject_feature_noise(&ds, &split, cfg.noise.rate, cfg.noise.sigma, noise_seed)?;
            (ds, Some(rec))
        }
        NoiseKindConfig::None => (ds, None),
    };
    Ok(Prepared { ds, split, noise })
}

fn metric_for(cfg: &ExperimentConfig, ds: &Dataset) -> Metric {
    cfg.metric.unwrap_or(match ds.task() {
        Task::Classification => Metric::Accuracy,
        Task::Regression => Metric::NegMse,
    })
}

/// Default neighbour count: 10% of the training set, at least one.
fn default_k(m: usize) -> usize {
    (m / 10).max(1)
}

fn compute_values(
    cfg: &ExperimentConfig,
    v: &ValuatorConfig,
    p: &Prepared,
    seed: u64,
) -> dataval::Result<ValueVector> {
    let m = p.split.train.len();
    let metric = metric_for(cfg, &p.ds);
    let spec = UtilitySpec::validation(metric, cfg.learner, default_k(m), &p.ds, &p.split)?;
    let u = || BoundUtility::new(&spec, &p.ds, &p.split);
    let mut out = match v {
        ValuatorConfig::Loo { .. } => valuators::loo(&u()?)?,
        ValuatorConfig::DataShapley { .. } => {
            let start = Instant::now();
            let acc = run_tmc(&u()?, &cfg.convergence, seed)?;
            let mut out = valuators::data_shapley(&acc)?;
            out.meta.wall_time_s = start.elapsed().as_secs_f64();
            out
        }
        ValuatorConfig::BetaShapley { alpha, beta, .. } => {
            let start = Instant::now();
            let acc = run_tmc(&u()?, &cfg.convergence, seed)?;
            let mut out = valuators::beta_shapley(&acc, *alpha, *beta)?;
            out.meta.wall_time_s = start.elapsed().as_secs_f64();
            out
        }
        ValuatorConfig::DataBanzhaf { n_subsets, .. } => {
            valuators::data_banzhaf(&u()?, *n_subsets, seed)?
        }
        ValuatorConfig::InfluenceSubset { n_subsets, .. } => {
            valuators::influence_subset(&u()?, *n_subsets, seed)?
        }
        ValuatorConfig::Ame { n_subsets, .. } => {
            let ame_cfg = AmeConfig {
                n_subsets: *n_subsets,
                ..Default::default()
            };
            valuators::ame(&u()?, &ame_cfg, seed)?
        }
        ValuatorConfig::KnnShapley { k, .. } => {
            valuators::knn_shapley(&p.ds, &p.split, k.unwrap_or(default_k(m)))?
        }
        ValuatorConfig::VolumeShapley { .. } => {
            valuators::volume_shapley(&p.ds, &p.split, &cfg.convergence, seed)?
        }
        ValuatorConfig::Lava {
            cost,
            label_weight,
            epsilon_scale,
            ..
        } => {
            let mut lava_cfg = LavaConfig::default();
            if cost == &Some(LavaCostKind::Fixed) || label_weight.is_some() {
                lava_cfg.cost = LavaCost::Fixed {
                    label_weight: *label_weight,
                };
            }
            if let Some(e) = epsilon_scale {
                lava_cfg.epsilon_scale = *e;
            }
            valuators::lava(&p.ds, &p.split, &lava_cfg)?
        }
        ValuatorConfig::DataOob {
            n_estimators, base, ..
        } => {
            let learner = match base.unwrap_or(OobBase::Tree) {
                OobBase::Tree => LearnerSpec::Tree(v.oob_tree()),
                OobBase::Learner => cfg.learner,
            };
            valuators::data_oob(&p.ds, &p.split, *n_estimators, &learner, seed)?
        }
        ValuatorConfig::Random { .. } => valuators::random_baseline(m, seed)?,
    };
    out.algorithm = v.label().to_string();
    Ok(out)
}

fn run_curve(
    cfg: &ExperimentConfig,
    p: &Prepared,
    values: &[f64],
    task: TaskKind,
) -> dataval::Result<CurveResult> {
    let metric = metric_for(cfg, &p.ds);
    let spec = UtilitySpec::test(
        metric,
        cfg.learner,
        default_k(p.split.train.len()),
        &p.ds,
        &p.split,
    )?;
    let u = BoundUtility::new(&spec, &p.ds, &p.split)?;
    match task {
        TaskKind::Removal => point_removal_curve(values, &u, cfg.curve_step),
        _ => point_addition_curve(values, &u, cfg.curve_step),
    }
}

struct Cell<'a> {
    seed: u64,
    valuator: &'a ValuatorConfig,
}

fn run_cell(cfg: &ExperimentConfig, p: &Prepared, cell: &Cell<'_>) -> EvalReport {
    let label = cell.valuator.label();
    let mut report = EvalReport::default();
    let error = |task: TaskKind, message: String| ErrorRow {
        experiment_id: cfg.name.clone(),
        valuator: label.to_string(),
        seed: cell.seed,
        task: task.as_str().to_string(),
        message,
    };
    let value_seed = derive_seed(cell.seed, &format!("{label}/values"), 0);
    let start = Instant::now();
    let values = match compute_values(cfg, cell.valuator, p, value_seed) {
        Ok(v) => v,
        Err(e) => {
            report.errors = cfg.tasks.iter().map(|&t| error(t, e.to_string())).collect();
            return report;
        }
    };
    let runtime = start.elapsed().as_secs_f64();
    report.warnings = values
        .meta
        .warnings
        .iter()
        .map(|w| format!("{label} seed {}: {w}", cell.seed))
        .collect();

    let mask = p
        .noise
        .as_ref()
        .map(|r| r.mask(values.len()))
        .unwrap_or_else(|| vec![false; values.len()]);
    report.values = values
        .values
        .iter()
        .enumerate()
        .map(|(i, &value)| ValueRow {
            experiment_id: cfg.name.clone(),
            valuator: label.to_string(),
            seed: cell.seed,
            point_index: i,
            value,
            is_noisy: mask[i],
        })
        .collect();

    let (noise_kind, noise_rate) = match &p.noise {
        Some(r) => (r.kind.as_str(), r.rate),
        None => ("none", 0.0),
    };
    let row = |task: TaskKind, metric_name: String, metric_value: f64| SummaryRow {
        experiment_id: cfg.name.clone(),
        dataset: p.ds.name.clone(),
        valuator: label.to_string(),
        seed: cell.seed,
        noise_kind: noise_kind.to_string(),
        noise_rate,
        task: task.as_str().to_string(),
        metric_name,
        metric_value,
        runtime_s: runtime,
    };
    for &task in &cfg.tasks {
        match task {
            TaskKind::Detect => {
                let Some(record) = &p.noise else {
                    report
                        .errors
                        .push(error(task, "detection needs a noise injection".into()));
                    continue;
                };
                let detect_seed = derive_seed(cell.seed, &format!("{label}/detect"), 0);
                match detect(&values.values, &record.positions, detect_seed) {
                    Ok(d) => report.summary.push(row(task, "f1".into(), d.f1)),
                    Err(e) => report.errors.push(error(task, e.to_string())),
                }
            }
            TaskKind::Removal | TaskKind::Addition => match run_curve(cfg, p, &values.values, task)
            {
                Ok(c) => {
                    let metric = metric_for(cfg, &p.ds);
                    report.summary.push(row(
                        task,
                        format!("mean_test_{}", metric.as_str()),
                        c.summary,
                    ));
                    report
                        .curves
                        .extend(c.grid.iter().map(|&(k, performance)| CurveRow {
                            experiment_id: cfg.name.clone(),
                            valuator: label.to_string(),
                            seed: cell.seed,
                            direction: c.direction.as_str().to_string(),
                            k,
                            performance,
                        }));
                }
                Err(e) => report.errors.push(error(task, e.to_string())),
            },
            TaskKind::Runtime => report
                .summary
                .push(row(task, "wall_time_s".into(), runtime)),
        }
    }
    report
}

/// Runs every (seed, valuator) cell. A failing cell becomes error rows and
/// the rest of the matrix still runs; only an unreadable CSV dataset aborts.
///
/// Every random stage draws from a stream keyed by the seed, the valuator
/// label and the stage name, so cells are independent of each other and of
/// the order in which they run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let loaded = match &cfg.dataset {
        DatasetConfig::Csv {
            path,
            label_column,
            regression,
        } => {
            let task = if *regression {
                Task::Regression
            } else {
                Task::Classification
            };
            Some(load_csv(path, *label_column, task)?)
        }
        _ => None,
    };
    let prepared: Vec<(u64, dataval::Result<Prepared>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| (seed, prepare(cfg, loaded.as_ref(), seed)))
        .collect();

    let mut report = EvalReport::default();
    let mut cells = Vec::new();
    for (seed, p) in &prepared {
        match p {
            Ok(p) => cells.extend(cfg.valuators.iter().map(|v| {
                (
                    p,
                    Cell {
                        seed: *seed,
                        valuator: v,
                    },
                )
            })),
            Err(e) => {
                for v in &cfg.valuators {
                    report.errors.extend(cfg.tasks.iter().map(|t| ErrorRow {
                        experiment_id: cfg.name.clone(),
                        valuator: v.label().to_string(),
                        seed: *seed,
                        task: t.as_str().to_string(),
                        message: e.to_string(),
                    }));
                }
            }
        }
    }
    let parts: Vec<EvalReport> = cells
        .par_iter()
        .map(|(p, cell)| run_cell(cfg, p, cell))
        .collect();
    for part in parts {
        report.summary.extend(part.summary);
        report.values.extend(part.values);
        report.curves.extend(part.curves);
        report.errors.extend(part.errors);
        report.warnings.extend(part.warnings);
    }
    report.sort();
    Ok(report)
}
