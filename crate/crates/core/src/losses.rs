//! The training objectives. Each tape function returns a scalar var; the
//! generator objective additionally reports its parts as plain numbers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{AdrmxConfig, CeWeights, ContrastiveOn, ForwardArtifacts};

/// Values of every objective term at one step. Disabled terms are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce_label: f64,
    pub ce_domain: f64,
    pub ce_dinv: f64,
    pub remix: f64,
    pub contrastive: f64,
    pub disc: f64,
    pub gen_total: f64,
}

impl LossBreakdown {
    pub const TERMS: [&'static str; 7] = [
        "ce_label",
        "ce_domain",
        "ce_dinv",
        "remix",
        "contrastive",
        "disc",
        "gen_total",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.ce_label,
            self.ce_domain,
            self.ce_dinv,
            self.remix,
            self.contrastive,
            self.disc,
            self.gen_total,
        ]
    }

    /// Divergence error naming the first non-finite term.
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in Self::TERMS.iter().zip(self.values()) {
            if !v.is_finite() {
                return Err(Error::Divergence(format!("loss term {name} is {v}")));
            }
        }
        Ok(())
    }

    /// `gen_total` recomputed from the other fields.
    pub fn recompose(&self, lambda: f64, w: CeWeights) -> f64 {
        generator_total(self, lambda, w).unwrap_or(f64::NAN)
    }
}

/// The generator objective from its parts:
/// `w_l·ce_label + w_d·ce_domain + w_i·ce_dinv + remix + contrastive - λ·disc`.
/// `gen_total` of `parts` is ignored. Disabled terms are expected to be 0.
pub fn generator_total(parts: &LossBreakdown, lambda: f64, w: CeWeights) -> Result<f64> {
    for (name, v) in LossBreakdown::TERMS[..6].iter().zip(parts.values()) {
        if !v.is_finite() {
            return Err(Error::Divergence(format!("loss term {name} is {v}")));
        }
    }
    let mut acc = 0.0;
    for (v, k) in [
        (parts.ce_label, w.label),
        (parts.ce_domain, w.domain),
        (parts.ce_dinv, w.dinv),
        (parts.remix, 1.0),
        (parts.contrastive, 1.0),
        (parts.disc, -lambda),
    ] {
        acc += k * v;
    }
    Ok(acc)
}

fn named<T>(term: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(_) => Error::Divergence(format!("loss term {term} is not finite")),
        other => other,
    })
}

/// Supervised contrastive loss of unit rows `z` at temperature `tau`.
pub fn supcon_loss(tape: &mut Tape, z: Var, labels: &[usize], tau: f64) -> Result<Var> {
    tape.supcon(z, labels, tau)
}

/// Mean cross-entropy of the remixed samples; `None` when there are none.
pub fn remix_loss(tape: &mut Tape, logits_remix: Option<Var>, labels_remix: &[usize]) -> Result<Option<Var>> {
    match logits_remix {
        Some(l) if !labels_remix.is_empty() => Ok(Some(tape.softmax_cross_entropy(l, labels_remix)?)),
        _ => Ok(None),
    }
}

/// Mean cross-entropy of the discriminator against the true source positions.
pub fn discriminator_loss(tape: &mut Tape, logits_disc: Var, domains: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy(logits_disc, domains)
}

/// Contrastive term over the latents selected by `on`, each row-normalized
/// first; the two terms are summed for `Both`.
pub fn contrastive_term(tape: &mut Tape, art: &ForwardArtifacts, on: ContrastiveOn, tau: f64) -> Result<Var> {
    let mut parts = Vec::with_capacity(2);
    if matches!(on, ContrastiveOn::Label | ContrastiveOn::Both) {
        let z = tape.l2_normalize(art.x_label)?;
        parts.push((supcon_loss(tape, z, &art.labels, tau)?, 1.0));
    }
    if matches!(on, ContrastiveOn::Dinv | ContrastiveOn::Both) {
        let z = tape.l2_normalize(art.x_dinv)?;
        parts.push((supcon_loss(tape, z, &art.labels, tau)?, 1.0));
    }
    if parts.len() == 1 {
        Ok(parts[0].0)
    } else {
        tape.weighted_sum(&parts)
    }
}

/// The generator objective recorded on `tape`, plus its breakdown.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Builds the generator objective from a forward pass. Which parameters
/// receive gradient is decided by how `art` was recorded: with the
/// discriminator bound frozen, the `-λ·disc` path reaches only the encoders.
pub fn generator_loss(tape: &mut Tape, art: &ForwardArtifacts, config: &AdrmxConfig) -> Result<GeneratorLoss> {
    let w = config.opts.ce_weights;
    let ce_label = named("ce_label", tape.softmax_cross_entropy(art.logits_label, &art.labels))?;
    let ce_domain = named("ce_domain", tape.softmax_cross_entropy(art.logits_domain, &art.domains))?;
    let ce_dinv = named("ce_dinv", tape.softmax_cross_entropy(art.logits_dinv, &art.labels))?;
    let disc = named("disc", discriminator_loss(tape, art.logits_disc, &art.domains))?;

    let mut terms = vec![(ce_label, w.label), (ce_domain, w.domain), (ce_dinv, w.dinv)];
    let mut bd = LossBreakdown {
        ce_label: tape.value(ce_label).item(),
        ce_domain: tape.value(ce_domain).item(),
        ce_dinv: tape.value(ce_dinv).item(),
        disc: tape.value(disc).item(),
        ..LossBreakdown::default()
    };
    if config.opts.use_remix {
        if let Some(r) = named("remix", remix_loss(tape, art.logits_remix, &art.remix_labels))? {
            bd.remix = tape.value(r).item();
            terms.push((r, 1.0));
        }
    }
    if config.opts.use_contrastive {
        let c = named(
            "contrastive",
            contrastive_term(tape, art, config.opts.contrastive_on, config.opts.temperature),
        )?;
        bd.contrastive = tape.value(c).item();
        terms.push((c, 1.0));
    }
    terms.push((disc, -config.opts.lambda));
    let total = named("gen_total", tape.weighted_sum(&terms))?;
    bd.gen_total = tape.value(total).item();
    bd.check_finite()?;
    Ok(GeneratorLoss { total, breakdown: bd })
}
