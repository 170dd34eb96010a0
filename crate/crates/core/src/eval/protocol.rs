use std::io::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::accuracy;
use crate::data::{DomainDataset, MultiDomainTask};
use crate::error::{Error, Result};
use crate::model::PredictFrom;
use crate::parallel::parallel_map;
use crate::training::{train_on_sources, RunStatus, TrainConfig};

/// What a dataset was handed out for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Split into train/validation halves and used for fitting and model
    /// selection.
    Fit,
    /// The single final accuracy computation.
    FinalEval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seed: u64,
    pub held_out: String,
    pub stage: Stage,
    pub domain: String,
}

/// Hands out the domains of one cell and records every hand-out.
struct AuditedCell<'a> {
    task: &'a MultiDomainTask,
    target: usize,
    seed: u64,
    log: Mutex<Vec<AuditEvent>>,
}

impl<'a> AuditedCell<'a> {
    fn note(&self, stage: Stage, d: &DomainDataset) {
        self.log.lock().unwrap().push(AuditEvent {
            seed: self.seed,
            held_out: self.task.domains[self.target].name.clone(),
            stage,
            domain: d.name.clone(),
        });
    }

    fn sources(&self) -> Vec<&'a DomainDataset> {
        let out: Vec<&DomainDataset> = (0..self.task.domains.len())
            .filter(|&i| i != self.target)
            .map(|i| &self.task.domains[i])
            .collect();
        out.iter().for_each(|d| self.note(Stage::Fit, d));
        out
    }

    fn target_for_final_eval(&self) -> &'a DomainDataset {
        let t = &self.task.domains[self.target];
        self.note(Stage::FinalEval, t);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub held_out: String,
    pub seed: u64,
    pub test_acc: Option<f64>,
    pub best_val_acc: Option<f64>,
    pub best_step: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub variant: String,
    pub domains: Vec<String>,
    pub seeds: Vec<u64>,
    /// `[seed][held-out domain]` test accuracy; `None` for a failed cell.
    pub per_seed: Vec<Vec<Option<f64>>>,
    /// Mean over seeds per held-out domain (NaN when every seed failed).
    pub per_target: Vec<f64>,
    /// Mean of `per_target`.
    pub mean: f64,
    /// Sample standard deviation across seeds of each seed's mean over
    /// domains; 0 for a single seed.
    pub seed_std: f64,
    pub config: TrainConfig,
    pub incomplete: bool,
    pub cells: Vec<CellResult>,
    pub audit: Vec<AuditEvent>,
}

impl ExperimentResult {
    /// `mean` recomputed from `per_target`.
    pub fn recompute_mean(&self) -> f64 {
        self.per_target.iter().sum::<f64>() / self.per_target.len() as f64
    }
}

fn run_cell(task: &MultiDomainTask, target: usize, seed: u64, config: &TrainConfig) -> (CellResult, Vec<AuditEvent>) {
    let cell = AuditedCell {
        task,
        target,
        seed,
        log: Mutex::new(Vec::new()),
    };
    let cfg = TrainConfig { seed, ..config.clone() };
    let outcome = (|| -> Result<CellResult> {
        let sources = cell.sources();
        let out = train_on_sources(&sources, &cfg, &mut |_| {})?;
        let failure = match &out.record.status {
            RunStatus::Completed => None,
            RunStatus::Diverged { step, message } => Some(format!("diverged at step {step}: {message}")),
        };
        let test_acc = if out.state.best.is_some() {
            let t = cell.target_for_final_eval();
            Some(accuracy(&out.state.selected_params().predict(&t.inputs)?, &t.labels)?)
        } else {
            None
        };
        Ok(CellResult {
            held_out: task.domains[target].name.clone(),
            seed,
            test_acc,
            best_val_acc: out.record.best_val_acc,
            best_step: out.record.best_step,
            error: failure,
        })
    })();
    let result = outcome.unwrap_or_else(|e| CellResult {
        held_out: task.domains[target].name.clone(),
        seed,
        test_acc: None,
        best_val_acc: None,
        best_step: None,
        error: Some(e.to_string()),
    });
    (result, cell.log.into_inner().unwrap())
}

/// For every domain in turn: train on all the others (model selection on
/// their validation splits only) and score the selected parameters on the
/// full held-out domain. Repeated per seed; cells run on up to `workers`
/// threads. Any target already set on `task` is ignored.
pub fn leave_one_domain_out(
    task: &MultiDomainTask,
    config: &TrainConfig,
    seeds: &[u64],
    workers: usize,
) -> Result<ExperimentResult> {
    let n = task.domains.len();
    if n < 3 {
        return Err(Error::config(format!(
            "leave-one-domain-out needs at least 3 domains, got {n}"
        )));
    }
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    config.validate()?;
    let jobs: Vec<(usize, u64)> = seeds.iter().flat_map(|&s| (0..n).map(move |t| (t, s))).collect();
    let results = parallel_map(jobs, workers, |(t, s)| run_cell(task, t, s, config));

    let mut per_seed = vec![vec![None; n]; seeds.len()];
    let mut cells = Vec::with_capacity(results.len());
    let mut audit = Vec::new();
    for (k, (cell, events)) in results.into_iter().enumerate() {
        per_seed[k / n][k % n] = cell.test_acc;
        cells.push(cell);
        audit.extend(events);
    }
    let per_target: Vec<f64> = (0..n)
        .map(|t| {
            let vals: Vec<f64> = per_seed.iter().filter_map(|row| row[t]).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect();
    let incomplete = cells.iter().any(|c| c.test_acc.is_none() || c.error.is_some());
    let seed_means: Vec<f64> = per_seed
        .iter()
        .filter(|row| row.iter().all(Option::is_some))
        .map(|row| row.iter().flatten().sum::<f64>() / n as f64)
        .collect();
    let seed_std = if seed_means.len() < 2 {
        0.0
    } else {
        let m = seed_means.iter().sum::<f64>() / seed_means.len() as f64;
        (seed_means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (seed_means.len() - 1) as f64).sqrt()
    };
    let mut result = ExperimentResult {
        variant: "original".into(),
        domains: task.domains.iter().map(|d| d.name.clone()).collect(),
        seeds: seeds.to_vec(),
        per_seed,
        per_target,
        mean: 0.0,
        seed_std,
        config: config.clone(),
        incomplete,
        cells,
        audit,
    };
    result.mean = result.recompute_mean();
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Original,
    NoRemix,
    NoContrastive,
    /// Predicts from `x_label - x_domain` instead of `x_label`.
    PredictFromDinv,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Original,
        AblationVariant::NoRemix,
        AblationVariant::NoContrastive,
        AblationVariant::PredictFromDinv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Original => "original",
            AblationVariant::NoRemix => "no_remix",
            AblationVariant::NoContrastive => "no_contrastive",
            AblationVariant::PredictFromDinv => "predict_from_dinv",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            AblationVariant::Original => {}
            AblationVariant::NoRemix => c.model.use_remix = false,
            AblationVariant::NoContrastive => c.model.use_contrastive = false,
            AblationVariant::PredictFromDinv => c.model.predict_from = PredictFrom::Dinv,
        }
        c
    }
}

/// The four variants under identical seeds and splits, one row each.
pub fn run_ablations(
    task: &MultiDomainTask,
    base: &TrainConfig,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<ExperimentResult>> {
    AblationVariant::ALL
        .iter()
        .map(|v| {
            let mut r = leave_one_domain_out(task, &v.apply(base), seeds, workers)?;
            r.variant = v.name().into();
            Ok(r)
        })
        .collect()
}

/// One row per result: variant, one column per held-out domain, average.
pub fn write_table_csv(results: &[ExperimentResult], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    if let Some(first) = results.first() {
        let mut header = vec!["variant".to_string()];
        header.extend(first.domains.iter().cloned());
        header.push("average".into());
        wr.write_record(&header).map_err(csv_err)?;
    }
    for r in results {
        let mut row = vec![r.variant.clone()];
        row.extend(r.per_target.iter().map(|v| v.to_string()));
        row.push(r.mean.to_string());
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}
