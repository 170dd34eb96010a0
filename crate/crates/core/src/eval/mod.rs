//! Accuracy, the leave-one-domain-out protocol, invariance probes, ablations
//! and embedding export.

mod embed;
mod probe;
mod protocol;

pub use embed::{export_embeddings, pca_2d, write_embeddings_csv, EmbeddingRow, FeatureKind};
pub use probe::{probe_domain_invariance, ProbeConfig, ProbeResult};
pub use protocol::{
    leave_one_domain_out, run_ablations, write_table_csv, AblationVariant, AuditEvent, CellResult, ExperimentResult,
    Stage,
};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if probs.shape().len() != 2 || probs.rows() != labels.len() {
        return Err(Error::dim("accuracy", probs.shape(), &[labels.len()]));
    }
    if labels.is_empty() {
        return Err(Error::contract("accuracy of an empty set"));
    }
    let hits = (0..labels.len()).filter(|&r| argmax(probs.row(r)) == labels[r]).count();
    Ok(hits as f64 / labels.len() as f64)
}
