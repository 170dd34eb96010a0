//! Fixtures shared by the benchmarks.

use adrmx_core::data::{gen_gaussian_domains, DomainDataset, GaussianSpec};
use adrmx_core::training::{TrainConfig, TrainState};
use adrmx_core::Tensor;

/// Deterministic, well-conditioned fill in [-0.5, 0.5).
pub fn matrix(rows: usize, cols: usize, salt: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|i| ((i * 7919 + salt * 104_729) % 1009) as f64 / 1009.0 - 0.5)
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// `matrix` with every row scaled to unit length.
pub fn unit_rows(rows: usize, cols: usize, salt: usize) -> Tensor {
    let mut t = matrix(rows, cols, salt);
    for row in t.data_mut().chunks_mut(cols) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    t
}

/// Labels cycling through `classes`.
pub fn labels(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|i| i % classes).collect()
}

/// Three Gaussian source domains of dimension `d_in`.
pub fn gaussian_sources(d_in: usize) -> Vec<DomainDataset> {
    let spec = GaussianSpec {
        num_domains: 3,
        d_in,
        ..GaussianSpec::default()
    };
    gen_gaussian_domains(&spec).expect("valid spec").domains
}

/// A fresh training state with the default model over `sources`.
pub fn train_state(sources: &[&DomainDataset], batch_per_domain: usize) -> TrainState {
    let cfg = TrainConfig {
        batch_per_domain,
        ..TrainConfig::default()
    };
    let model = cfg.model_config(sources[0].d_in(), 2, sources.len());
    TrainState::new(&cfg, model, sources).expect("valid config")
}
