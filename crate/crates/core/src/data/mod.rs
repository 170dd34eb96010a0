//! Multi-domain datasets and the machinery to split and batch them.

pub mod cache;
mod gaussian;
pub mod idx;
mod mnist;
mod sampler;
mod split;

pub use gaussian::{gaussian_class_means, gen_gaussian_domains, GaussianSpec};
pub use mnist::{
    color_label_agreement, load_mnist, make_colored_mnist, make_rotated_mnist, rotate_image, MnistSet,
    COLORED_MNIST_CORRELATIONS, ROTATED_MNIST_ANGLES,
};
pub use sampler::{BatchSampler, CompositeBatch};
pub use split::{split_indices, split_train_val, SplitSpec};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Samples from one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub name: String,
    /// `N x d_in`
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl DomainDataset {
    pub fn new(
        domain_id: usize,
        name: impl Into<String>,
        inputs: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = DomainDataset {
            domain_id,
            name: name.into(),
            inputs,
            labels,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.shape().len() != 2 {
            return Err(Error::config(format!(
                "domain {}: inputs must be a matrix, got shape {:?}",
                self.name,
                self.inputs.shape()
            )));
        }
        if self.labels.len() != self.inputs.rows() {
            return Err(Error::dim("DomainDataset", self.inputs.shape(), &[self.labels.len()]));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                bound: self.num_classes,
            });
        }
        if !self.inputs.is_finite() {
            return Err(Error::NonFinite("dataset inputs"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.inputs.cols()
    }

    /// A new dataset holding the listed rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<DomainDataset> {
        Ok(DomainDataset {
            domain_id: self.domain_id,
            name: self.name.clone(),
            inputs: self.inputs.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        })
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

/// Source domains plus (optionally) one held-out target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiDomainTask {
    pub domains: Vec<DomainDataset>,
    pub target_index: Option<usize>,
}

impl MultiDomainTask {
    pub fn new(domains: Vec<DomainDataset>, target_index: Option<usize>) -> Result<Self> {
        let task = MultiDomainTask { domains, target_index };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .domains
            .first()
            .ok_or_else(|| Error::config("task has no domains"))?;
        for d in &self.domains {
            d.validate()?;
            if d.is_empty() {
                return Err(Error::config(format!("domain {} is empty", d.name)));
            }
            if d.d_in() != first.d_in() || d.num_classes != first.num_classes {
                return Err(Error::config(format!(
                    "domain {} has d_in={} classes={}, expected d_in={} classes={}",
                    d.name,
                    d.d_in(),
                    d.num_classes,
                    first.d_in(),
                    first.num_classes
                )));
            }
        }
        let mut ids: Vec<usize> = self.domains.iter().map(|d| d.domain_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.domains.len() {
            return Err(Error::config("domain ids must be unique"));
        }
        if let Some(t) = self.target_index {
            if t >= self.domains.len() {
                return Err(Error::Index {
                    what: "target domain",
                    index: t,
                    bound: self.domains.len(),
                });
            }
        }
        if self.num_sources() < 2 {
            return Err(Error::config(format!(
                "need at least 2 source domains, have {}",
                self.num_sources()
            )));
        }
        Ok(())
    }

    pub fn with_target(&self, target_index: Option<usize>) -> Result<MultiDomainTask> {
        MultiDomainTask::new(self.domains.clone(), target_index)
    }

    pub fn d_in(&self) -> usize {
        self.domains[0].d_in()
    }

    pub fn num_classes(&self) -> usize {
        self.domains[0].num_classes
    }

    pub fn num_sources(&self) -> usize {
        self.domains.len() - usize::from(self.target_index.is_some())
    }

    /// Positions (into `domains`) of the source domains, in order.
    pub fn source_positions(&self) -> Vec<usize> {
        (0..self.domains.len())
            .filter(|&i| Some(i) != self.target_index)
            .collect()
    }

    pub fn sources(&self) -> impl Iterator<Item = &DomainDataset> {
        self.domains
            .iter()
            .enumerate()
            .filter(move |(i, _)| Some(*i) != self.target_index)
            .map(|(_, d)| d)
    }

    pub fn target(&self) -> Option<&DomainDataset> {
        self.target_index.map(|t| &self.domains[t])
    }
}

/// SplitMix64 step, used to derive independent sub-seeds from one seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(id: usize, d_in: usize) -> DomainDataset {
        DomainDataset::new(id, format!("d{id}"), Tensor::zeros(&[2, d_in]), vec![0, 1], 2).unwrap()
    }

    #[test]
    fn task_invariants() {
        assert!(MultiDomainTask::new(vec![tiny(0, 3), tiny(1, 3)], None).is_ok());
        assert!(MultiDomainTask::new(vec![tiny(0, 3), tiny(1, 3)], Some(0)).is_err());
        assert!(MultiDomainTask::new(vec![tiny(0, 3), tiny(0, 3)], None).is_err());
        assert!(MultiDomainTask::new(vec![tiny(0, 3), tiny(1, 4)], None).is_err());
        let t = MultiDomainTask::new(vec![tiny(0, 3), tiny(1, 3), tiny(2, 3)], Some(1)).unwrap();
        assert_eq!(t.source_positions(), vec![0, 2]);
        assert_eq!(t.target().unwrap().domain_id, 1);
    }

    #[test]
    fn labels_out_of_range_rejected() {
        let r = DomainDataset::new(0, "x", Tensor::zeros(&[2, 1]), vec![0, 2], 2);
        assert!(matches!(r, Err(Error::Index { index: 2, .. })));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(1, 0), derive_seed(0, 0));
    }
}
