use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One minibatch per source domain, concatenated in source order.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeBatch {
    /// `B x d_in`
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    /// Position of each sample's domain among the sources (`0..S`), which is
    /// also the target the domain classifier and discriminator predict.
    pub domains: Vec<usize>,
}

impl CompositeBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn distinct_domains(&self) -> usize {
        let mut d = self.domains.clone();
        d.sort_unstable();
        d.dedup();
        d.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

/// Draws `batch_per_domain` samples from every source per step, without
/// replacement within a per-domain epoch. A domain whose remaining samples
/// cannot fill a batch is reshuffled; the leftover partial batch is dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSampler {
    batch_per_domain: usize,
    cursors: Vec<Cursor>,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(sources: &[&DomainDataset], batch_per_domain: usize, seed: u64) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::config("batch sampler needs at least one source"));
        }
        if batch_per_domain == 0 {
            return Err(Error::config("batch_per_domain must be positive"));
        }
        for s in sources {
            if batch_per_domain > s.len() {
                return Err(Error::config(format!(
                    "batch_per_domain {batch_per_domain} exceeds the {} samples of domain {}",
                    s.len(),
                    s.name
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cursors = sources
            .iter()
            .map(|s| {
                let mut order: Vec<usize> = (0..s.len()).collect();
                order.shuffle(&mut rng);
                Cursor { order, pos: 0 }
            })
            .collect();
        Ok(BatchSampler {
            batch_per_domain,
            cursors,
            rng,
        })
    }

    pub fn batch_per_domain(&self) -> usize {
        self.batch_per_domain
    }

    /// Row indices for the next step, one list per source.
    pub fn next_indices(&mut self) -> Vec<Vec<usize>> {
        let b = self.batch_per_domain;
        let mut out = Vec::with_capacity(self.cursors.len());
        for c in &mut self.cursors {
            if c.pos + b > c.order.len() {
                c.order.shuffle(&mut self.rng);
                c.pos = 0;
            }
            out.push(c.order[c.pos..c.pos + b].to_vec());
            c.pos += b;
        }
        out
    }

    /// `sources` must be the datasets the sampler was built with, in order.
    pub fn next_batch(&mut self, sources: &[&DomainDataset]) -> Result<CompositeBatch> {
        if sources.len() != self.cursors.len() {
            return Err(Error::contract(format!(
                "sampler built for {} sources, called with {}",
                self.cursors.len(),
                sources.len()
            )));
        }
        let picks = self.next_indices();
        let mut parts = Vec::with_capacity(sources.len());
        let mut labels = Vec::new();
        let mut domains = Vec::new();
        for (pos, (src, idx)) in sources.iter().zip(&picks).enumerate() {
            parts.push(src.inputs.select_rows(idx)?);
            labels.extend(idx.iter().map(|&i| src.labels[i]));
            domains.extend(std::iter::repeat_n(pos, idx.len()));
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(CompositeBatch {
            inputs: Tensor::vstack(&refs)?,
            labels,
            domains,
        })
    }
}
