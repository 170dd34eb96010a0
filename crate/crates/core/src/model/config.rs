use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which latent the contrastive term is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveOn {
    Label,
    Dinv,
    Both,
}

impl std::str::FromStr for ContrastiveOn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(ContrastiveOn::Label),
            "dinv" => Ok(ContrastiveOn::Dinv),
            "both" => Ok(ContrastiveOn::Both),
            other => Err(Error::config(format!(
                "contrastive_on must be label, dinv or both, got {other:?}"
            ))),
        }
    }
}

/// Which latent feeds the label classifier at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictFrom {
    /// `x_label`; the domain encoder is never evaluated.
    Label,
    /// `x_label - x_domain`, the domain-invariant-only ablation.
    Dinv,
}

impl std::str::FromStr for PredictFrom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(PredictFrom::Label),
            "dinv" => Ok(PredictFrom::Dinv),
            other => Err(Error::config(format!(
                "predict_from must be label or dinv, got {other:?}"
            ))),
        }
    }
}

/// Per-term weights of the three cross-entropies in the generator loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeWeights {
    pub label: f64,
    pub domain: f64,
    pub dinv: f64,
}

impl Default for CeWeights {
    fn default() -> Self {
        CeWeights {
            label: 1.0,
            domain: 1.0,
            dinv: 1.0,
        }
    }
}

/// Architecture and objective settings that do not depend on the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
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
    pub ce_weights: CeWeights,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            latent_dim: 64,
            encoder_hidden: vec![256, 128],
            discriminator_hidden: vec![128, 128],
            lambda: 0.5,
            temperature: 1.0,
            use_remix: true,
            use_contrastive: true,
            contrastive_on: ContrastiveOn::Both,
            dinv_uses_shared_head: true,
            predict_from: PredictFrom::Label,
            ce_weights: CeWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdrmxConfig {
    pub d_in: usize,
    pub num_classes: usize,
    /// Number of source domains (classes of the domain classifier and the
    /// discriminator).
    pub num_domains: usize,
    #[serde(flatten)]
    pub opts: ModelOptions,
}

impl AdrmxConfig {
    /// Default options for the given problem dimensions.
    pub fn new(d_in: usize, num_classes: usize, num_domains: usize) -> Self {
        Self::with_options(d_in, num_classes, num_domains, ModelOptions::default())
    }

    pub fn with_options(d_in: usize, num_classes: usize, num_domains: usize, opts: ModelOptions) -> Self {
        AdrmxConfig {
            d_in,
            num_classes,
            num_domains,
            opts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.opts.latent_dim == 0 {
            return Err(Error::config("d_in and latent_dim must be positive"));
        }
        if self.opts.encoder_hidden.contains(&0) || self.opts.discriminator_hidden.contains(&0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.num_domains < 2 {
            return Err(Error::config(format!(
                "need at least 2 source domains, got {}",
                self.num_domains
            )));
        }
        if !(self.opts.lambda >= 0.0) || !self.opts.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.opts.lambda)));
        }
        if !(self.opts.temperature > 0.0) || !self.opts.temperature.is_finite() {
            return Err(Error::config(format!(
                "temperature must be > 0, got {}",
                self.opts.temperature
            )));
        }
        let w = self.opts.ce_weights;
        if [w.label, w.domain, w.dinv]
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::config("cross-entropy weights must be finite and >= 0"));
        }
        Ok(())
    }

    /// `[d_in, hidden.., latent_dim]`
    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.d_in];
        s.extend(&self.opts.encoder_hidden);
        s.push(self.opts.latent_dim);
        s
    }

    pub fn discriminator_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.opts.latent_dim];
        s.extend(&self.opts.discriminator_hidden);
        s.push(self.num_domains);
        s
    }
}
