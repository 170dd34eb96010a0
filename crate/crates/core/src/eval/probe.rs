use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::accuracy;
use crate::autodiff::{kernels, ParamStore, Tape, Tensor};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::model::{AdrmxParams, Mlp};
use crate::training::{AdamHyper, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: vec![128],
            steps: 1000,
            lr: 1e-3,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Held-out domain-classification accuracy of a probe trained on each
/// latent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub acc_on_x_label: f64,
    pub acc_on_x_dinv: f64,
}

fn stack_features(sets: &[DomainDataset], f: &dyn Fn(&Tensor) -> Result<Tensor>) -> Result<(Tensor, Vec<usize>)> {
    let mut parts = Vec::with_capacity(sets.len());
    let mut domains = Vec::new();
    for (pos, s) in sets.iter().enumerate() {
        parts.push(f(&s.inputs)?);
        domains.extend(std::iter::repeat_n(pos, s.len()));
    }
    Ok((Tensor::vstack(&parts.iter().collect::<Vec<_>>())?, domains))
}

/// Trains one probe on `(x, y)` and returns its accuracy on `(x_test, y_test)`.
/// Initialization and minibatch order depend only on `config.seed`, so two
/// calls with the same config see the same sequence of sample indices.
fn fit_probe(
    x: &Tensor,
    y: &[usize],
    x_test: &Tensor,
    y_test: &[usize],
    num_classes: usize,
    config: &ProbeConfig,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let mut sizes = vec![x.cols()];
    sizes.extend(&config.hidden);
    sizes.push(num_classes);
    let mlp = Mlp::new(&mut store, "probe", &sizes, &mut rng)?;
    let mut adam = AdamState::new(&store, mlp.param_ids(), AdamHyper::with_lr(config.lr))?;
    let b = config.batch_size.min(x.rows());
    for _ in 0..config.steps {
        let idx = sample(&mut rng, x.rows(), b).into_vec();
        let mut tape = Tape::new();
        let xb = tape.constant(x.select_rows(&idx)?);
        let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
        let logits = mlp.forward(&mut tape, &store, xb, true)?;
        let loss = tape.softmax_cross_entropy(logits, &yb)?;
        tape.backward(loss)?.write_to(&mut store);
        adam.step(&mut store)?;
    }
    let probs = kernels::softmax_rows(&mlp.infer(&store, x_test)?)?;
    accuracy(&probs, y_test)
}

/// Freezes the encoders of `params` and trains two fresh domain classifiers
/// with identical architecture, optimizer, budget and seed: one on `x_label`,
/// one on `x_dinv`. Both learn from `train` and are scored on `test`; the
/// class of a sample is the position of its dataset in the slice.
pub fn probe_domain_invariance(
    params: &AdrmxParams,
    train: &[DomainDataset],
    test: &[DomainDataset],
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    if train.len() < 2 || train.len() != test.len() {
        return Err(Error::config(format!(
            "probe needs matching train/test domain lists of length >= 2, got {} and {}",
            train.len(),
            test.len()
        )));
    }
    if config.steps == 0 || config.batch_size == 0 {
        return Err(Error::config("probe steps and batch_size must be >= 1"));
    }
    let label = |x: &Tensor| params.encode_inference(x).map(|(l, _)| l);
    let dinv = |x: &Tensor| params.dinv_inference(x);
    let s = train.len();
    let (xl, yl) = stack_features(train, &label)?;
    let (xl_t, yl_t) = stack_features(test, &label)?;
    let (xd, yd) = stack_features(train, &dinv)?;
    let (xd_t, yd_t) = stack_features(test, &dinv)?;
    Ok(ProbeResult {
        acc_on_x_label: fit_probe(&xl, &yl, &xl_t, &yl_t, s, config)?,
        acc_on_x_dinv: fit_probe(&xd, &yd, &xd_t, &yd_t, s, config)?,
    })
}
