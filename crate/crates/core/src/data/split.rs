use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Class-stratified random partition of `0..labels.len()` into
/// `(train, val)`, both sorted ascending. The validation side receives
/// `round(N * f)` indices, allocated to classes by largest remainder.
pub fn split_indices(labels: &[usize], num_classes: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let f = spec.holdout_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::config(format!("holdout_fraction {f} must lie in (0, 1)")));
    }
    let n = labels.len();
    let n_val = (n as f64 * f).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::config(format!(
            "holdout_fraction {f} of {n} samples leaves an empty side"
        )));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    // proportional quota with largest-remainder rounding; ties go to the
    // lower class index
    let exact: Vec<f64> = by_class
        .iter()
        .map(|c| c.len() as f64 * n_val as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = n_val - quota.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::with_capacity(n - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        val.extend_from_slice(&members[..q]);
        train.extend_from_slice(&members[q..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn split_train_val(ds: &DomainDataset, spec: SplitSpec) -> Result<(DomainDataset, DomainDataset)> {
    let (train, val) = split_indices(&ds.labels, ds.num_classes, spec)?;
    Ok((ds.subset(&train)?, ds.subset(&val)?))
}
