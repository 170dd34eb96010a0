use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train_on_sources, RunRecord, TrainConfig};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::parallel::parallel_map;

/// Ranges sampled by [`random_search`]. Learning rate, λ and τ are drawn
/// log-uniformly from their closed ranges; the batch size uniformly from the
/// list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub lr: (f64, f64),
    pub lambda: (f64, f64),
    pub temperature: (f64, f64),
    pub batch_per_domain: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr: (1e-4, 3e-3),
            lambda: (0.01, 10.0),
            temperature: (0.1, 1.0),
            batch_per_domain: vec![16, 32, 64],
        }
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("lr", self.lr),
            ("lambda", self.lambda),
            ("temperature", self.temperature),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::config(format!(
                    "search range {name} = ({lo}, {hi}) must satisfy 0 < lo <= hi"
                )));
            }
        }
        if self.batch_per_domain.is_empty() || self.batch_per_domain.contains(&0) {
            return Err(Error::config("search batch_per_domain must list positive sizes"));
        }
        Ok(())
    }

    pub fn sample(&self, base: &TrainConfig, rng: &mut impl Rng) -> TrainConfig {
        let mut c = base.clone();
        c.lr_gen = log_uniform(rng, self.lr);
        c.model.lambda = log_uniform(rng, self.lambda);
        c.model.temperature = log_uniform(rng, self.temperature);
        c.batch_per_domain = self.batch_per_domain[rng.random_range(0..self.batch_per_domain.len())];
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    /// Sampled configuration; the seed field is replaced per run.
    pub config: TrainConfig,
    pub records: Vec<RunRecord>,
    /// Mean over seeds of each run's best validation accuracy; `None` when a
    /// run failed.
    pub mean_val_acc: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub trials: Vec<Trial>,
    /// Index of the trial with the highest mean validation accuracy (ties go
    /// to the lower index).
    pub selected: Option<usize>,
}

impl SearchResult {
    pub fn selected_config(&self) -> Option<&TrainConfig> {
        self.selected.map(|i| &self.trials[i].config)
    }
}

/// Samples `n_trials` configurations from `space` using `sweep_seed`, trains
/// each over every seed in `seeds` and selects by mean source-validation
/// accuracy. Runs that diverge or fail mark their trial as failed, which
/// excludes it from selection.
pub fn random_search(
    sources: &[&DomainDataset],
    base: &TrainConfig,
    space: &SearchSpace,
    n_trials: usize,
    seeds: &[u64],
    sweep_seed: u64,
    workers: usize,
) -> Result<SearchResult> {
    if n_trials == 0 {
        return Err(Error::config("n_trials must be >= 1"));
    }
    if seeds.is_empty() {
        return Err(Error::config("random search needs at least one seed"));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sweep_seed);
    let configs: Vec<TrainConfig> = (0..n_trials).map(|_| space.sample(base, &mut rng)).collect();

    let jobs: Vec<(usize, u64)> = (0..n_trials).flat_map(|t| seeds.iter().map(move |&s| (t, s))).collect();
    let results = parallel_map(jobs, workers, |(t, seed)| {
        let cfg = TrainConfig {
            seed,
            ..configs[t].clone()
        };
        train_on_sources(sources, &cfg, &mut |_| {}).map(|o| o.record)
    });

    let mut trials: Vec<Trial> = configs
        .into_iter()
        .enumerate()
        .map(|(index, config)| Trial {
            index,
            config,
            records: Vec::new(),
            mean_val_acc: None,
            failure: None,
        })
        .collect();
    for (k, res) in results.into_iter().enumerate() {
        let trial = &mut trials[k / seeds.len()];
        match res {
            Ok(rec) => {
                if !rec.completed() && trial.failure.is_none() {
                    trial.failure = Some(format!("seed {}: {:?}", rec.seed, rec.status));
                }
                trial.records.push(rec);
            }
            Err(e) => {
                if trial.failure.is_none() {
                    trial.failure = Some(format!("seed {}: {e}", seeds[k % seeds.len()]));
                }
            }
        }
    }
    let mut selected: Option<usize> = None;
    for trial in &mut trials {
        if trial.failure.is_some() {
            log::warn!(
                "trial {} failed: {}",
                trial.index,
                trial.failure.as_deref().unwrap_or("")
            );
            continue;
        }
        let accs: Option<Vec<f64>> = trial.records.iter().map(|r| r.best_val_acc).collect();
        let Some(accs) = accs else { continue };
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        log::info!("trial {}: mean source val {mean:.4}", trial.index);
        trial.mean_val_acc = Some(mean);
    }
    // argmax over completed trials, ties to the lower index
    for trial in &trials {
        if let Some(m) = trial.mean_val_acc {
            if selected.is_none_or(|s| m > trials[s].mean_val_acc.unwrap_or(f64::NEG_INFINITY)) {
                selected = Some(trial.index);
            }
        }
    }
    Ok(SearchResult { trials, selected })
}
