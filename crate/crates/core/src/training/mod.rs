//! Alternating generator/discriminator optimization and hyperparameter search.

mod adam;
mod search;

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamHyper, AdamState};
pub use search::{random_search, SearchResult, SearchSpace, Trial};

use crate::autodiff::{ParamId, Tape, Tensor};
use crate::data::{
    derive_seed, split_train_val, BatchSampler, CompositeBatch, DomainDataset, MultiDomainTask, SplitSpec,
};
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::losses::{discriminator_loss, generator_loss, LossBreakdown};
use crate::model::{AdrmxConfig, AdrmxParams, Checkpoint, ModelOptions, Trainable};

const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_SAMPLER: u64 = 3;
const STREAM_REMIX: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_per_domain: usize,
    pub lr_gen: f64,
    /// Discriminator learning rate as a multiple of `lr_gen`.
    pub lr_disc_mult: f64,
    /// Discriminator updates after each generator update.
    pub disc_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub log_every: usize,
    pub holdout_fraction: f64,
    pub model: ModelOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_per_domain: 32,
            lr_gen: 1e-3,
            lr_disc_mult: 0.5,
            disc_steps: 1,
            weight_decay: 0.0,
            seed: 0,
            eval_every: 100,
            log_every: 10,
            holdout_fraction: 0.2,
            model: ModelOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be >= 1"));
        }
        if self.batch_per_domain == 0 {
            return Err(Error::config("batch_per_domain must be >= 1"));
        }
        if self.eval_every == 0 || self.log_every == 0 {
            return Err(Error::config("eval_every and log_every must be >= 1"));
        }
        if !(self.lr_disc_mult > 0.0) {
            return Err(Error::config("lr_disc_mult must be > 0"));
        }
        self.gen_hyper().validate()?;
        self.disc_hyper().validate()
    }

    pub fn gen_hyper(&self) -> AdamHyper {
        AdamHyper {
            weight_decay: self.weight_decay,
            ..AdamHyper::with_lr(self.lr_gen)
        }
    }

    pub fn disc_hyper(&self) -> AdamHyper {
        AdamHyper {
            weight_decay: self.weight_decay,
            ..AdamHyper::with_lr(self.lr_gen * self.lr_disc_mult)
        }
    }

    pub fn model_config(&self, d_in: usize, num_classes: usize, num_sources: usize) -> AdrmxConfig {
        AdrmxConfig::with_options(d_in, num_classes, num_sources, self.model.clone())
    }
}

/// Train/validation halves of every source domain, in source order.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSplits {
    pub train: Vec<DomainDataset>,
    pub val: Vec<DomainDataset>,
}

impl SourceSplits {
    pub fn new(sources: &[&DomainDataset], holdout_fraction: f64, seed: u64) -> Result<Self> {
        let base = derive_seed(seed, STREAM_SPLIT);
        let mut train = Vec::with_capacity(sources.len());
        let mut val = Vec::with_capacity(sources.len());
        for s in sources {
            let spec = SplitSpec {
                holdout_fraction,
                seed: derive_seed(base, s.domain_id as u64),
            };
            let (t, v) = split_train_val(s, spec)?;
            train.push(t);
            val.push(v);
        }
        Ok(SourceSplits { train, val })
    }

    pub fn train_refs(&self) -> Vec<&DomainDataset> {
        self.train.iter().collect()
    }
}

/// Unweighted mean of per-domain accuracies, plus the per-domain values.
pub fn mean_accuracy(params: &AdrmxParams, sets: &[DomainDataset]) -> Result<(f64, Vec<f64>)> {
    let mut per = Vec::with_capacity(sets.len());
    for s in sets {
        per.push(accuracy(&params.predict(&s.inputs)?, &s.labels)?);
    }
    Ok((per.iter().sum::<f64>() / per.len() as f64, per))
}

#[derive(Debug, Clone)]
pub struct BestSnapshot {
    pub step: usize,
    pub val_acc: f64,
    pub params: AdrmxParams,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: AdrmxParams,
    pub gen_opt: AdamState,
    pub disc_opt: AdamState,
    pub sampler: BatchSampler,
    /// Drives remix pairing.
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub best: Option<BestSnapshot>,
}

impl TrainState {
    pub fn new(config: &TrainConfig, model: AdrmxConfig, train_sources: &[&DomainDataset]) -> Result<Self> {
        config.validate()?;
        let params = AdrmxParams::new(model, derive_seed(config.seed, STREAM_INIT))?;
        let gen_opt = AdamState::new(params.store(), params.generator_ids(), config.gen_hyper())?;
        let disc_opt = AdamState::new(params.store(), params.discriminator_ids(), config.disc_hyper())?;
        let sampler = BatchSampler::new(
            train_sources,
            config.batch_per_domain,
            derive_seed(config.seed, STREAM_SAMPLER),
        )?;
        Ok(TrainState {
            params,
            gen_opt,
            disc_opt,
            sampler,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_REMIX)),
            step: 0,
            best: None,
        })
    }

    /// One generator update; the discriminator is bound frozen.
    pub fn generator_step(&mut self, batch: &CompositeBatch) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let art = self
            .params
            .forward_train(&mut tape, batch, &mut self.rng, Trainable::GENERATOR)?;
        for &(i, j) in &art.remix_pairs {
            if batch.labels[i] != batch.labels[j] || batch.domains[i] == batch.domains[j] {
                return Err(Error::contract(format!("invalid remix pair ({i}, {j})")));
            }
        }
        let loss = generator_loss(&mut tape, &art, self.params.config())?;
        let grads = tape.backward(loss.total)?;
        grads.write_to(self.params.store_mut());
        self.gen_opt.step(self.params.store_mut())?;
        Ok(loss.breakdown)
    }

    /// One discriminator update on `x_dinv` computed without a tape, so the
    /// encoders receive nothing. Returns the discriminator loss.
    pub fn discriminator_step(&mut self, batch: &CompositeBatch) -> Result<f64> {
        let x_dinv = self.params.dinv_inference(&batch.inputs)?;
        let mut tape = Tape::new();
        let x = tape.constant(x_dinv);
        let logits = self.params.discriminate(&mut tape, x, true)?;
        let loss = discriminator_loss(&mut tape, logits, &batch.domains)?;
        let grads = tape.backward(loss)?;
        grads.write_to(self.params.store_mut());
        self.disc_opt.step(self.params.store_mut())?;
        Ok(tape.value(loss).item())
    }

    /// Parameters to evaluate: the best snapshot if any, else the current ones.
    pub fn selected_params(&self) -> &AdrmxParams {
        self.best.as_ref().map_or(&self.params, |b| &b.params)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = self.params.to_checkpoint()?;
        let store = self.params.store();
        for (tag, opt) in [("gen", &self.gen_opt), ("disc", &self.disc_opt)] {
            for (id, m, v) in opt.moments() {
                ck.tensors.push((format!("adam.{tag}.m.{}", store.name(id)), m.clone()));
                ck.tensors.push((format!("adam.{tag}.v.{}", store.name(id)), v.clone()));
            }
            let meta = serde_json::json!({ "hyper": opt.hyper, "t": opt.t });
            ck.meta.insert(format!("adam.{tag}"), meta.to_string());
        }
        ck.meta
            .insert("train.sampler".into(), serde_json::to_string(&self.sampler)?);
        ck.meta.insert("train.rng".into(), serde_json::to_string(&self.rng)?);
        ck.meta.insert("train.step".into(), self.step.to_string());
        if let Some(b) = &self.best {
            let meta = serde_json::json!({ "step": b.step, "val_acc": b.val_acc });
            ck.meta.insert("train.best".into(), meta.to_string());
            for (_, p) in b.params.store().iter() {
                ck.tensors.push((format!("best.{}", p.name()), p.value().clone()));
            }
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let params = AdrmxParams::from_checkpoint(ck)?;
        let restore = |tag: &str, ids: Vec<ParamId>| -> Result<AdamState> {
            #[derive(Deserialize)]
            struct Meta {
                hyper: AdamHyper,
                t: u64,
            }
            let meta: Meta = serde_json::from_str(ck.meta(&format!("adam.{tag}"))?)?;
            let mut opt = AdamState::new(params.store(), ids.clone(), meta.hyper)?;
            let fetch = |kind: &str, id: ParamId| -> Result<Tensor> {
                let name = format!("adam.{tag}.{kind}.{}", params.store().name(id));
                ck.tensor(&name)
                    .cloned()
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))
            };
            let m = ids.iter().map(|&id| fetch("m", id)).collect::<Result<Vec<_>>>()?;
            let v = ids.iter().map(|&id| fetch("v", id)).collect::<Result<Vec<_>>>()?;
            opt.set_moments(meta.t, m, v)?;
            Ok(opt)
        };
        let gen_opt = restore("gen", params.generator_ids())?;
        let disc_opt = restore("disc", params.discriminator_ids())?;
        let sampler = serde_json::from_str(ck.meta("train.sampler")?)?;
        let rng = serde_json::from_str(ck.meta("train.rng")?)?;
        let step = ck
            .meta("train.step")?
            .parse()
            .map_err(|e| Error::Format(format!("train.step: {e}")))?;
        let best = match ck.meta.get("train.best") {
            None => None,
            Some(raw) => {
                #[derive(Deserialize)]
                struct Meta {
                    step: usize,
                    val_acc: f64,
                }
                let meta: Meta = serde_json::from_str(raw)?;
                let mut best_params = params.clone();
                for id in best_params.store().ids().collect::<Vec<_>>() {
                    let name = format!("best.{}", best_params.store().name(id));
                    let t = ck
                        .tensor(&name)
                        .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
                    best_params.store_mut().set_value(id, t.clone())?;
                }
                Some(BestSnapshot {
                    step: meta.step,
                    val_acc: meta.val_acc,
                    params: best_params,
                })
            }
        };
        Ok(TrainState {
            params,
            gen_opt,
            disc_opt,
            sampler,
            rng,
            step,
            best,
        })
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub val_acc: f64,
    pub per_domain: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { step: usize, message: String },
}

/// Deterministic summary of a run. Wall-clock time is kept out of it so two
/// runs with the same config compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config: TrainConfig,
    pub model: AdrmxConfig,
    pub source_domains: Vec<String>,
    pub steps_completed: usize,
    #[serde(flatten)]
    pub status: RunStatus,
    pub history: Vec<EvalPoint>,
    pub best_step: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub final_losses: Option<LossBreakdown>,
    pub best_checkpoint: Option<String>,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub splits: SourceSplits,
    pub record: RunRecord,
    pub wall_clock: Duration,
}

/// Generator losses and, on validation steps, mean and per-domain accuracy.
type StepOutcome = (LossBreakdown, Option<(f64, Vec<f64>)>);

/// Trains on the task's source domains. The target domain, if any, is not
/// read.
pub fn train_loop(
    task: &MultiDomainTask,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    let sources: Vec<&DomainDataset> = task.sources().collect();
    train_on_sources(&sources, config, observer)
}

/// Alternates generator and discriminator updates for `config.steps`
/// iterations, evaluating mean source-validation accuracy every
/// `eval_every` steps and at the end, and keeping the best snapshot (ties go
/// to the earlier step). A numerical blow-up stops the run and is reported in
/// the record's status rather than as an error.
pub fn train_on_sources(
    sources: &[&DomainDataset],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if sources.len() < 2 {
        return Err(Error::config(format!(
            "training needs at least 2 source domains, got {}",
            sources.len()
        )));
    }
    let started = Instant::now();
    let splits = SourceSplits::new(sources, config.holdout_fraction, config.seed)?;
    let train_refs = splits.train_refs();
    let first = train_refs[0];
    let model = config.model_config(first.d_in(), first.num_classes, sources.len());
    let mut state = TrainState::new(config, model.clone(), &train_refs)?;

    let mut history = Vec::new();
    let mut status = RunStatus::Completed;
    let mut final_losses = None;
    while state.step < config.steps {
        let step = state.step + 1;
        let evaluate = step % config.eval_every == 0 || step == config.steps;
        let outcome = (|| -> Result<StepOutcome> {
            let batch = state.sampler.next_batch(&train_refs)?;
            let losses = state.generator_step(&batch)?;
            for _ in 0..config.disc_steps {
                state.discriminator_step(&batch)?;
            }
            let eval = if evaluate {
                Some(mean_accuracy(&state.params, &splits.val)?)
            } else {
                None
            };
            Ok((losses, eval))
        })();
        let (losses, eval) = match outcome {
            Ok(v) => v,
            Err(e) if e.is_divergence() => {
                log::warn!("run diverged at step {step}: {e}");
                status = RunStatus::Diverged {
                    step,
                    message: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        state.step = step;
        final_losses = Some(losses);

        let val_acc = eval.map(|(acc, per_domain)| {
            log::info!(
                "step {step}/{}: loss {:.4}, source val {acc:.4}",
                config.steps,
                losses.gen_total
            );
            history.push(EvalPoint {
                step,
                val_acc: acc,
                per_domain,
            });
            if state.best.as_ref().is_none_or(|b| acc > b.val_acc) {
                state.best = Some(BestSnapshot {
                    step,
                    val_acc: acc,
                    params: state.params.clone(),
                });
            }
            acc
        });
        if step % config.log_every == 0 || val_acc.is_some() {
            observer(&StepMetrics { step, losses, val_acc });
        }
    }

    let record = RunRecord {
        seed: config.seed,
        config: config.clone(),
        model,
        source_domains: sources.iter().map(|s| s.name.clone()).collect(),
        steps_completed: state.step,
        status,
        history,
        best_step: state.best.as_ref().map(|b| b.step),
        best_val_acc: state.best.as_ref().map(|b| b.val_acc),
        final_losses,
        best_checkpoint: None,
    };
    Ok(TrainOutcome {
        state,
        splits,
        record,
        wall_clock: started.elapsed(),
    })
}
