use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::model::AdrmxParams;

const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Domain,
    Dinv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub sample_id: usize,
    pub feature_kind: FeatureKind,
    pub pc1: f64,
    pub pc2: f64,
    pub class_label: usize,
    pub domain_label: usize,
}

/// Dominant unit eigenvector of the symmetric matrix `a` (`n x n`) by power
/// iteration, with its eigenvalue. Deterministic start vector.
fn power_iteration(a: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut w = vec![0.0; n];
        for i in 0..n {
            w[i] = (0..n).map(|j| a[i * n + j] * v[j]).sum();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (v, 0.0);
        }
        w.iter_mut().for_each(|x| *x /= norm);
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        lambda = norm;
        if delta < POWER_TOL {
            break;
        }
    }
    (v, lambda)
}

/// Centers the rows of `x` and projects them onto the top two principal
/// directions (found by power iteration with deflation). Missing directions
/// of a rank-deficient set are zero columns. Returns `n x 2`.
pub fn pca_2d(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::dim("pca_2d", x.shape(), &[0, 0]));
    }
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = (0..n)
        .flat_map(|r| x.row(r).iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        let row = &centered[r * d..(r + 1) * d];
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += row[i] * row[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n as f64);
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();

    let mut comps = Vec::with_capacity(2);
    for k in 0..2 {
        let (v, lambda) = power_iteration(&cov, d);
        if k >= d || lambda <= 1e-12 * trace.max(f64::MIN_POSITIVE) {
            log::warn!(
                "covariance has rank < {}; padding component {} with zeros",
                k + 1,
                k + 1
            );
            comps.push(vec![0.0; d]);
            continue;
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        comps.push(v);
    }
    let mut out = Vec::with_capacity(n * 2);
    for r in 0..n {
        let row = &centered[r * d..(r + 1) * d];
        for c in &comps {
            out.push(row.iter().zip(c).map(|(a, b)| a * b).sum());
        }
    }
    Tensor::matrix(n, 2, out)
}

/// 2-D projections of `x_domain` and `x_dinv` for every sample of `sets`,
/// each feature kind centered and projected separately. Sample ids count
/// through the sets in order; domain labels are the datasets' domain ids.
pub fn export_embeddings(params: &AdrmxParams, sets: &[&DomainDataset]) -> Result<Vec<EmbeddingRow>> {
    let mut domain_parts = Vec::new();
    let mut dinv_parts = Vec::new();
    let mut meta = Vec::new();
    for s in sets {
        let (xl, xd) = params.encode_inference(&s.inputs)?;
        dinv_parts.push(crate::autodiff::kernels::sub(&xl, &xd)?);
        domain_parts.push(xd);
        meta.extend(s.labels.iter().map(|&y| (y, s.domain_id)));
    }
    let stack = |parts: &[Tensor]| Tensor::vstack(&parts.iter().collect::<Vec<_>>());
    let mut rows = Vec::with_capacity(meta.len() * 2);
    for (kind, feats) in [
        (FeatureKind::Domain, stack(&domain_parts)?),
        (FeatureKind::Dinv, stack(&dinv_parts)?),
    ] {
        let proj = pca_2d(&feats)?;
        for (i, &(class_label, domain_label)) in meta.iter().enumerate() {
            rows.push(EmbeddingRow {
                sample_id: i,
                feature_kind: kind,
                pc1: proj.get(i, 0),
                pc2: proj.get(i, 1),
                class_label,
                domain_label,
            });
        }
    }
    Ok(rows)
}

pub fn write_embeddings_csv(rows: &[EmbeddingRow], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    wr.flush()?;
    Ok(())
}
