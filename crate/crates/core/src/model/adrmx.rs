use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::{AdrmxConfig, PredictFrom};
use super::mlp::Mlp;
use crate::autodiff::{kernels, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::CompositeBatch;
use crate::error::{Error, Result};

/// The six parameter groups of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    LabelEncoder,
    DomainEncoder,
    LabelClassifier,
    /// Only present when the `x_dinv` head is not shared.
    DinvHead,
    DomainClassifier,
    Discriminator,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::LabelEncoder,
        ParamGroup::DomainEncoder,
        ParamGroup::LabelClassifier,
        ParamGroup::DinvHead,
        ParamGroup::DomainClassifier,
        ParamGroup::Discriminator,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::LabelEncoder => "label_encoder",
            ParamGroup::DomainEncoder => "domain_encoder",
            ParamGroup::LabelClassifier => "label_classifier",
            ParamGroup::DinvHead => "dinv_head",
            ParamGroup::DomainClassifier => "domain_classifier",
            ParamGroup::Discriminator => "discriminator",
        }
    }
}

/// Which side of the game records trainable parameters on a tape. The other
/// side is bound as constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub generator: bool,
    pub discriminator: bool,
}

impl Trainable {
    pub const GENERATOR: Trainable = Trainable {
        generator: true,
        discriminator: false,
    };
    pub const DISCRIMINATOR: Trainable = Trainable {
        generator: false,
        discriminator: true,
    };
    pub const ALL: Trainable = Trainable {
        generator: true,
        discriminator: true,
    };
    pub const NONE: Trainable = Trainable {
        generator: false,
        discriminator: false,
    };
}

#[derive(Debug, Clone)]
pub struct AdrmxParams {
    config: AdrmxConfig,
    store: ParamStore,
    label_encoder: Mlp,
    domain_encoder: Mlp,
    label_classifier: Mlp,
    dinv_head: Option<Mlp>,
    domain_classifier: Mlp,
    discriminator: Mlp,
}

/// Everything one training forward pass records, as handles into its tape.
#[derive(Debug, Clone)]
pub struct ForwardArtifacts {
    pub x_label: Var,
    pub x_domain: Var,
    pub x_dinv: Var,
    /// Absent when remixing is disabled or no anchor found a partner.
    pub x_remixed: Option<Var>,
    pub remix_pairs: Vec<(usize, usize)>,
    pub logits_label: Var,
    pub logits_dinv: Var,
    pub logits_remix: Option<Var>,
    pub logits_domain: Var,
    pub logits_disc: Var,
    pub labels: Vec<usize>,
    /// Shared label of each remix pair.
    pub remix_labels: Vec<usize>,
    pub domains: Vec<usize>,
}

impl AdrmxParams {
    /// Fresh parameters; the initialization is a pure function of `seed`.
    pub fn new(config: AdrmxConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = config.encoder_sizes();
        let d = config.opts.latent_dim;
        let label_encoder = Mlp::new(&mut store, ParamGroup::LabelEncoder.prefix(), &enc, &mut rng)?;
        let domain_encoder = Mlp::new(&mut store, ParamGroup::DomainEncoder.prefix(), &enc, &mut rng)?;
        let label_classifier = Mlp::new(
            &mut store,
            ParamGroup::LabelClassifier.prefix(),
            &[d, config.num_classes],
            &mut rng,
        )?;
        let dinv_head = if config.opts.dinv_uses_shared_head {
            None
        } else {
            Some(Mlp::new(
                &mut store,
                ParamGroup::DinvHead.prefix(),
                &[d, config.num_classes],
                &mut rng,
            )?)
        };
        let domain_classifier = Mlp::new(
            &mut store,
            ParamGroup::DomainClassifier.prefix(),
            &[d, config.num_domains],
            &mut rng,
        )?;
        let discriminator = Mlp::new(
            &mut store,
            ParamGroup::Discriminator.prefix(),
            &config.discriminator_sizes(),
            &mut rng,
        )?;
        Ok(AdrmxParams {
            config,
            store,
            label_encoder,
            domain_encoder,
            label_classifier,
            dinv_head,
            domain_classifier,
            discriminator,
        })
    }

    pub fn config(&self) -> &AdrmxConfig {
        &self.config
    }

    /// Loss-side settings (λ, τ, flags) may change after construction; the
    /// architecture fields may not.
    pub fn config_mut(&mut self) -> &mut AdrmxConfig {
        &mut self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn mlp(&self, group: ParamGroup) -> Option<&Mlp> {
        match group {
            ParamGroup::LabelEncoder => Some(&self.label_encoder),
            ParamGroup::DomainEncoder => Some(&self.domain_encoder),
            ParamGroup::LabelClassifier => Some(&self.label_classifier),
            ParamGroup::DinvHead => self.dinv_head.as_ref(),
            ParamGroup::DomainClassifier => Some(&self.domain_classifier),
            ParamGroup::Discriminator => Some(&self.discriminator),
        }
    }

    /// Parameter ids of one group; empty for an absent `DinvHead`.
    pub fn group_ids(&self, group: ParamGroup) -> Vec<ParamId> {
        self.mlp(group).map(Mlp::param_ids).unwrap_or_default()
    }

    /// Everything except the discriminator.
    pub fn generator_ids(&self) -> Vec<ParamId> {
        ParamGroup::ALL
            .iter()
            .filter(|g| **g != ParamGroup::Discriminator)
            .flat_map(|g| self.group_ids(*g))
            .collect()
    }

    pub fn discriminator_ids(&self) -> Vec<ParamId> {
        self.group_ids(ParamGroup::Discriminator)
    }

    fn check_width(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.config.d_in {
            return Err(Error::dim("encode", x.shape(), &[0, self.config.d_in]));
        }
        Ok(())
    }

    /// Label and domain latents for the input rows in `x`.
    pub fn encode(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<(Var, Var)> {
        self.check_width(tape.value(x))?;
        let x_label = self.label_encoder.forward(tape, &self.store, x, trainable)?;
        let x_domain = self.domain_encoder.forward(tape, &self.store, x, trainable)?;
        Ok((x_label, x_domain))
    }

    /// Training forward pass over a composite batch. Remix partners are drawn
    /// from `rng`; nothing is drawn when remixing is off.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        batch: &CompositeBatch,
        rng: &mut impl Rng,
        trainable: Trainable,
    ) -> Result<ForwardArtifacts> {
        if batch.distinct_domains() < 2 {
            log::warn!("batch holds a single domain; remix term is zero for this step");
        }
        let gen = trainable.generator;
        let x = tape.constant(batch.inputs.clone());
        let (x_label, x_domain) = self.encode(tape, x, gen)?;
        let x_dinv = disentangle(tape, x_label, x_domain)?;

        let remix_pairs = if self.config.opts.use_remix {
            remix_pairing(&batch.labels, &batch.domains, rng)
        } else {
            Vec::new()
        };
        let x_remixed = remix(tape, x_dinv, x_domain, &remix_pairs)?;
        let remix_labels = remix_pairs.iter().map(|&(i, _)| batch.labels[i]).collect();

        let logits_label = self.label_classifier.forward(tape, &self.store, x_label, gen)?;
        let dinv_head = self.dinv_head.as_ref().unwrap_or(&self.label_classifier);
        let logits_dinv = dinv_head.forward(tape, &self.store, x_dinv, gen)?;
        let logits_remix = match x_remixed {
            Some(v) => Some(self.label_classifier.forward(tape, &self.store, v, gen)?),
            None => None,
        };
        let logits_domain = self.domain_classifier.forward(tape, &self.store, x_domain, gen)?;
        let logits_disc = self.discriminate(tape, x_dinv, trainable.discriminator)?;

        Ok(ForwardArtifacts {
            x_label,
            x_domain,
            x_dinv,
            x_remixed,
            remix_pairs,
            logits_label,
            logits_dinv,
            logits_remix,
            logits_domain,
            logits_disc,
            labels: batch.labels.clone(),
            remix_labels,
            domains: batch.domains.clone(),
        })
    }

    /// Discriminator logits over `x_dinv` rows.
    pub fn discriminate(&self, tape: &mut Tape, x_dinv: Var, trainable: bool) -> Result<Var> {
        self.discriminator.forward(tape, &self.store, x_dinv, trainable)
    }

    /// Tape-free latents `(x_label, x_domain)`.
    pub fn encode_inference(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_width(x)?;
        Ok((
            self.label_encoder.infer(&self.store, x)?,
            self.domain_encoder.infer(&self.store, x)?,
        ))
    }

    /// Tape-free `x_dinv` features for already-computed inputs.
    pub fn dinv_inference(&self, x: &Tensor) -> Result<Tensor> {
        let (a, b) = self.encode_inference(x)?;
        kernels::sub(&a, &b)
    }

    /// Logits of the label classifier. With the default `PredictFrom::Label`
    /// only the label encoder and label classifier are evaluated.
    pub fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_width(x)?;
        match self.config.opts.predict_from {
            PredictFrom::Label => {
                let z = self.label_encoder.infer(&self.store, x)?;
                self.label_classifier.infer(&self.store, &z)
            }
            PredictFrom::Dinv => {
                let z = self.dinv_inference(x)?;
                self.dinv_head
                    .as_ref()
                    .unwrap_or(&self.label_classifier)
                    .infer(&self.store, &z)
            }
        }
    }

    /// Class probabilities, one row per input.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        kernels::softmax_rows(&self.predict_logits(x)?)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::default();
        for (_, p) in self.store.iter() {
            ck.tensors.push((p.name().to_string(), p.value().clone()));
        }
        ck.meta
            .insert("model.config".into(), serde_json::to_string(&self.config)?);
        Ok(ck)
    }

    /// Rebuilds parameters written by [`AdrmxParams::to_checkpoint`].
    /// Tensors outside the model's groups (optimizer state and the like) are
    /// ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let raw = ck
            .meta
            .get("model.config")
            .ok_or_else(|| Error::Format("checkpoint has no model.config".into()))?;
        let config: AdrmxConfig = serde_json::from_str(raw)?;
        let mut params = AdrmxParams::new(config, 0)?;
        for id in params.store.ids().collect::<Vec<_>>() {
            let name = params.store.name(id).to_string();
            let t = ck
                .tensor(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            params.store.set_value(id, t.clone())?;
        }
        Ok(params)
    }
}

/// `x_dinv = x_label - x_domain`
pub fn disentangle(tape: &mut Tape, x_label: Var, x_domain: Var) -> Result<Var> {
    tape.sub(x_label, x_domain)
}

/// For each anchor in order, a partner drawn uniformly among samples with the
/// same label from a different domain. Anchors without one are skipped.
pub fn remix_pairing(labels: &[usize], domains: &[usize], rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(labels.len());
    let mut eligible = Vec::with_capacity(labels.len());
    for i in 0..labels.len() {
        eligible.clear();
        eligible.extend((0..labels.len()).filter(|&j| labels[j] == labels[i] && domains[j] != domains[i]));
        if !eligible.is_empty() {
            pairs.push((i, eligible[rng.random_range(0..eligible.len())]));
        }
    }
    pairs
}

/// `x_remixed[r] = x_dinv[i_r] + x_domain[j_r]`; `None` for an empty pair list.
pub fn remix(tape: &mut Tape, x_dinv: Var, x_domain: Var, pairs: &[(usize, usize)]) -> Result<Option<Var>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let anchors: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let partners: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let a = tape.select_rows(x_dinv, &anchors)?;
    let b = tape.select_rows(x_domain, &partners)?;
    Ok(Some(tape.add(a, b)?))
}
