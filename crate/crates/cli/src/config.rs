use std::path::{Path, PathBuf};

use adrmx_core::data::{
    cache, gen_gaussian_domains, load_mnist, make_colored_mnist, make_rotated_mnist, GaussianSpec, MultiDomainTask,
    COLORED_MNIST_CORRELATIONS, ROTATED_MNIST_ANGLES,
};
use adrmx_core::model::{AdrmxConfig, CeWeights, ContrastiveOn, ModelOptions, PredictFrom};
use adrmx_core::training::{SearchSpace, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Gaussian,
    #[serde(alias = "colored")]
    ColoredMnist,
    #[serde(alias = "rotated")]
    RotatedMnist,
}

/// Which part of the data `eval`-style commands look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitChoice {
    Train,
    Val,
    Target,
}

/// Every setting of every command, as one flat table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub dataset: DatasetKind,
    pub data_seed: u64,
    pub target_domain: Option<usize>,
    pub cache_path: Option<PathBuf>,
    pub gaussian_num_domains: usize,
    pub gaussian_per_domain_n: usize,
    pub gaussian_num_classes: usize,
    pub gaussian_d_in: usize,
    pub gaussian_shift: f64,
    pub gaussian_separation: f64,
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub mnist_limit: Option<usize>,
    pub colored_label_noise: f64,
    pub colored_correlations: Vec<f64>,
    pub rotated_angles: Vec<f64>,
    pub rotated_per_domain: usize,

    pub seed: u64,
    pub steps: usize,
    pub batch_per_domain: usize,
    pub lr_gen: f64,
    pub lr_disc_mult: f64,
    pub disc_steps: usize,
    pub weight_decay: f64,
    pub holdout_fraction: f64,
    pub eval_every: usize,
    pub log_every: usize,

    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub lambda: f64,
    pub temperature: f64,
    pub use_remix: bool,
    pub use_contrastive: bool,
    pub contrastive_on: ContrastiveOn,
    pub dinv_uses_shared_head: bool,
    pub predict_from: PredictFrom,
    pub ce_label: f64,
    pub ce_domain: f64,
    pub ce_dinv: f64,

    pub trials: usize,
    pub seeds: Vec<u64>,
    pub sweep_seed: u64,
    pub search_lr: [f64; 2],
    pub search_lambda: [f64; 2],
    pub search_temperature: [f64; 2],
    pub search_batch_per_domain: Vec<usize>,

    pub checkpoint: Option<PathBuf>,
    pub split: SplitChoice,
}

impl Default for CliConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelOptions::default();
        let s = SearchSpace::default();
        let g = GaussianSpec::default();
        CliConfig {
            dataset: DatasetKind::Gaussian,
            data_seed: 0,
            target_domain: None,
            cache_path: None,
            gaussian_num_domains: g.num_domains,
            gaussian_per_domain_n: g.per_domain_n,
            gaussian_num_classes: g.num_classes,
            gaussian_d_in: g.d_in,
            gaussian_shift: g.domain_shift_scale,
            gaussian_separation: g.class_separation,
            mnist_images: None,
            mnist_labels: None,
            mnist_limit: None,
            colored_label_noise: 0.25,
            colored_correlations: COLORED_MNIST_CORRELATIONS.to_vec(),
            rotated_angles: ROTATED_MNIST_ANGLES.to_vec(),
            rotated_per_domain: 1000,
            seed: t.seed,
            steps: t.steps,
            batch_per_domain: t.batch_per_domain,
            lr_gen: t.lr_gen,
            lr_disc_mult: t.lr_disc_mult,
            disc_steps: t.disc_steps,
            weight_decay: t.weight_decay,
            holdout_fraction: t.holdout_fraction,
            eval_every: t.eval_every,
            log_every: t.log_every,
            latent_dim: m.latent_dim,
            encoder_hidden: m.encoder_hidden,
            discriminator_hidden: m.discriminator_hidden,
            lambda: m.lambda,
            temperature: m.temperature,
            use_remix: m.use_remix,
            use_contrastive: m.use_contrastive,
            contrastive_on: m.contrastive_on,
            dinv_uses_shared_head: m.dinv_uses_shared_head,
            predict_from: m.predict_from,
            ce_label: m.ce_weights.label,
            ce_domain: m.ce_weights.domain,
            ce_dinv: m.ce_weights.dinv,
            trials: 20,
            seeds: vec![0, 1, 2],
            sweep_seed: 0,
            search_lr: [s.lr.0, s.lr.1],
            search_lambda: [s.lambda.0, s.lambda.1],
            search_temperature: [s.temperature.0, s.temperature.1],
            search_batch_per_domain: s.batch_per_domain,
            checkpoint: None,
            split: SplitChoice::Val,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Str,
    Int,
    Float,
    Bool,
    IntList,
    FloatList,
}

/// `(key, kind, description)` for every config key, in display order.
pub const SCHEMA: &[(&str, Kind, &str)] = &[
    ("dataset", Kind::Str, "gaussian | colored_mnist | rotated_mnist"),
    ("data_seed", Kind::Int, "seed of the dataset construction"),
    (
        "target_domain",
        Kind::Int,
        "index of the held-out domain (train, eval, export)",
    ),
    (
        "cache_path",
        Kind::Str,
        "dataset cache file; read when present, written otherwise",
    ),
    ("gaussian_num_domains", Kind::Int, "number of Gaussian domains (>= 3)"),
    ("gaussian_per_domain_n", Kind::Int, "samples per Gaussian domain"),
    ("gaussian_num_classes", Kind::Int, "number of classes"),
    ("gaussian_d_in", Kind::Int, "input dimension"),
    (
        "gaussian_shift",
        Kind::Float,
        "domain shift scale (0 = identical domains)",
    ),
    (
        "gaussian_separation",
        Kind::Float,
        "distance between class means in standard deviations",
    ),
    (
        "mnist_images",
        Kind::Str,
        "MNIST images IDX file (.gz accepted), required for MNIST datasets",
    ),
    (
        "mnist_labels",
        Kind::Str,
        "MNIST labels IDX file (.gz accepted), required for MNIST datasets",
    ),
    ("mnist_limit", Kind::Int, "use only the first N base digits"),
    ("colored_label_noise", Kind::Float, "label flip probability"),
    (
        "colored_correlations",
        Kind::FloatList,
        "signed color-label agreement per domain",
    ),
    (
        "rotated_angles",
        Kind::FloatList,
        "rotation angle in degrees per domain",
    ),
    ("rotated_per_domain", Kind::Int, "digits per rotated domain"),
    ("seed", Kind::Int, "run seed (init, split, sampling, remix)"),
    ("steps", Kind::Int, "training iterations"),
    ("batch_per_domain", Kind::Int, "samples per source domain in each batch"),
    ("lr_gen", Kind::Float, "generator learning rate"),
    (
        "lr_disc_mult",
        Kind::Float,
        "discriminator learning rate as a multiple of lr_gen",
    ),
    ("disc_steps", Kind::Int, "discriminator updates per generator update"),
    ("weight_decay", Kind::Float, "L2 weight decay"),
    (
        "holdout_fraction",
        Kind::Float,
        "validation share of each source domain",
    ),
    ("eval_every", Kind::Int, "validation interval in steps"),
    ("log_every", Kind::Int, "metrics interval in steps"),
    ("latent_dim", Kind::Int, "latent width"),
    ("encoder_hidden", Kind::IntList, "hidden widths of both encoders"),
    (
        "discriminator_hidden",
        Kind::IntList,
        "hidden widths of the discriminator",
    ),
    ("lambda", Kind::Float, "adversarial weight"),
    ("temperature", Kind::Float, "contrastive temperature"),
    ("use_remix", Kind::Bool, "enable the remix term"),
    ("use_contrastive", Kind::Bool, "enable the contrastive term"),
    ("contrastive_on", Kind::Str, "label | dinv | both"),
    (
        "dinv_uses_shared_head",
        Kind::Bool,
        "classify x_dinv with the label classifier",
    ),
    ("predict_from", Kind::Str, "label | dinv"),
    ("ce_label", Kind::Float, "weight of the label cross-entropy"),
    ("ce_domain", Kind::Float, "weight of the domain cross-entropy"),
    ("ce_dinv", Kind::Float, "weight of the x_dinv cross-entropy"),
    ("trials", Kind::Int, "sweep: number of sampled configurations"),
    ("seeds", Kind::IntList, "sweep and ablate: seeds per configuration"),
    ("sweep_seed", Kind::Int, "sweep: seed of the configuration sampler"),
    ("search_lr", Kind::FloatList, "sweep: log-uniform range of lr_gen"),
    ("search_lambda", Kind::FloatList, "sweep: log-uniform range of lambda"),
    (
        "search_temperature",
        Kind::FloatList,
        "sweep: log-uniform range of temperature",
    ),
    (
        "search_batch_per_domain",
        Kind::IntList,
        "sweep: batch_per_domain choices",
    ),
    ("checkpoint", Kind::Str, "eval and export: checkpoint file"),
    ("split", Kind::Str, "eval and export: train | val | target"),
];

pub fn schema_kind(key: &str) -> Option<Kind> {
    SCHEMA.iter().find(|(k, _, _)| *k == key).map(|e| e.1)
}

/// Converts a command-line value to the TOML value of a key.
pub fn parse_override(key: &str, raw: &str) -> CliResult<toml::Value> {
    let kind = schema_kind(key).ok_or_else(|| usage(format!("unknown config key {key:?}")))?;
    let bad = |what: &str| usage(format!("{key}: expected {what}, got {raw:?}"));
    let list = || {
        raw.trim_matches(|c| c == '[' || c == ']')
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
    };
    Ok(match kind {
        Kind::Str => toml::Value::String(raw.to_string()),
        Kind::Int => toml::Value::Integer(raw.parse().map_err(|_| bad("an integer"))?),
        Kind::Float => toml::Value::Float(raw.parse().map_err(|_| bad("a number"))?),
        Kind::Bool => toml::Value::Boolean(raw.parse().map_err(|_| bad("true or false"))?),
        Kind::IntList => toml::Value::Array(
            list()
                .into_iter()
                .map(|s| {
                    s.parse()
                        .map(toml::Value::Integer)
                        .map_err(|_| bad("comma-separated integers"))
                })
                .collect::<CliResult<_>>()?,
        ),
        Kind::FloatList => toml::Value::Array(
            list()
                .into_iter()
                .map(|s| {
                    s.parse()
                        .map(toml::Value::Float)
                        .map_err(|_| bad("comma-separated numbers"))
                })
                .collect::<CliResult<_>>()?,
        ),
    })
}

/// File contents (if any) overlaid with `overrides`, in order.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<CliConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("config {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        table.insert(k.clone(), parse_override(k, v)?);
    }
    let cfg: CliConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| usage(format!("config: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// `--help-config` text: every key with its default and meaning.
pub fn help_text() -> String {
    let defaults = toml::Value::try_from(CliConfig::default()).expect("default config serializes");
    let mut out = String::from("# configuration keys (TOML file via --config, or --key value on the command line)\n");
    for (key, _, doc) in SCHEMA {
        out.push_str(&format!("\n# {doc}\n"));
        match defaults.get(key) {
            Some(v) => out.push_str(&format!("{key} = {v}\n")),
            None => out.push_str(&format!("# {key} = (unset)\n")),
        }
    }
    out
}

impl CliConfig {
    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            latent_dim: self.latent_dim,
            encoder_hidden: self.encoder_hidden.clone(),
            discriminator_hidden: self.discriminator_hidden.clone(),
            lambda: self.lambda,
            temperature: self.temperature,
            use_remix: self.use_remix,
            use_contrastive: self.use_contrastive,
            contrastive_on: self.contrastive_on,
            dinv_uses_shared_head: self.dinv_uses_shared_head,
            predict_from: self.predict_from,
            ce_weights: CeWeights {
                label: self.ce_label,
                domain: self.ce_domain,
                dinv: self.ce_dinv,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_per_domain: self.batch_per_domain,
            lr_gen: self.lr_gen,
            lr_disc_mult: self.lr_disc_mult,
            disc_steps: self.disc_steps,
            weight_decay: self.weight_decay,
            seed: self.seed,
            eval_every: self.eval_every,
            log_every: self.log_every,
            holdout_fraction: self.holdout_fraction,
            model: self.model_options(),
        }
    }

    pub fn search_space(&self) -> SearchSpace {
        SearchSpace {
            lr: (self.search_lr[0], self.search_lr[1]),
            lambda: (self.search_lambda[0], self.search_lambda[1]),
            temperature: (self.search_temperature[0], self.search_temperature[1]),
            batch_per_domain: self.search_batch_per_domain.clone(),
        }
    }

    /// Checks everything that does not need the dataset.
    pub fn validate(&self) -> CliResult<()> {
        self.train_config().validate().map_err(|e| usage(e.to_string()))?;
        AdrmxConfig::with_options(1, 2, 2, self.model_options())
            .validate()
            .map_err(|e| usage(e.to_string()))?;
        self.search_space().validate().map_err(|e| usage(e.to_string()))?;
        if self.dataset != DatasetKind::Gaussian {
            for (key, value) in [
                ("mnist_images", &self.mnist_images),
                ("mnist_labels", &self.mnist_labels),
            ] {
                match value {
                    None => {
                        return Err(usage(format!(
                            "{key}: required for dataset {}",
                            toml::Value::try_from(self.dataset)
                                .map(|v| v.to_string())
                                .unwrap_or_default()
                        )))
                    }
                    Some(p) if !p.exists() => return Err(usage(format!("{key}: file {} does not exist", p.display()))),
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    fn build_task(&self) -> adrmx_core::Result<MultiDomainTask> {
        match self.dataset {
            DatasetKind::Gaussian => gen_gaussian_domains(&GaussianSpec {
                num_domains: self.gaussian_num_domains,
                per_domain_n: self.gaussian_per_domain_n,
                num_classes: self.gaussian_num_classes,
                d_in: self.gaussian_d_in,
                domain_shift_scale: self.gaussian_shift,
                class_separation: self.gaussian_separation,
                seed: self.data_seed,
            }),
            DatasetKind::ColoredMnist | DatasetKind::RotatedMnist => {
                // validate() guarantees both paths
                let images = self.mnist_images.as_ref().expect("validated");
                let labels = self.mnist_labels.as_ref().expect("validated");
                let mut base = load_mnist(images, labels)?;
                if let Some(n) = self.mnist_limit {
                    base = base.truncate(n);
                }
                if self.dataset == DatasetKind::ColoredMnist {
                    make_colored_mnist(
                        &base,
                        self.data_seed,
                        self.colored_label_noise,
                        &self.colored_correlations,
                    )
                } else {
                    make_rotated_mnist(&base, &self.rotated_angles, self.rotated_per_domain, self.data_seed)
                }
            }
        }
    }

    /// The configured task with `target_domain` applied.
    pub fn task(&self) -> anyhow::Result<MultiDomainTask> {
        let task = match &self.cache_path {
            Some(p) if p.exists() => cache::load_task(p)?,
            Some(p) => {
                let t = self.build_task()?;
                cache::save_task(&t, p)?;
                t
            }
            None => self.build_task()?,
        };
        if let Some(t) = self.target_domain {
            if t >= task.domains.len() {
                return Err(usage(format!(
                    "target_domain: {t} out of range, the dataset has {} domains",
                    task.domains.len()
                ))
                .into());
            }
        }
        Ok(task.with_target(self.target_domain)?)
    }
}
