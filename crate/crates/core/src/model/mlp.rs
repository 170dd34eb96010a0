use rand::Rng;

use crate::autodiff::{kernels, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Fully connected layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero. Parameters are named
    /// `{prefix}.{layer}.weight` / `.bias`.
    pub fn new(store: &mut ParamStore, prefix: &str, sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config(format!("{prefix}: an MLP needs at least 2 sizes")));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (k, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            let weight = store.add(format!("{prefix}.{k}.weight"), Tensor::matrix(fan_in, fan_out, w)?)?;
            let bias = store.add(format!("{prefix}.{k}.bias"), Tensor::zeros(&[fan_out]))?;
            layers.push(Linear { weight, bias });
        }
        Ok(Mlp { layers })
    }

    /// Rebinds to parameters already present in `store` under `prefix`.
    pub fn attach(store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut layers = Vec::new();
        while let Some(weight) = store.find(&format!("{prefix}.{}.weight", layers.len())) {
            let bias = store
                .find(&format!("{prefix}.{}.bias", layers.len()))
                .ok_or_else(|| Error::Format(format!("{prefix}: weight without bias")))?;
            layers.push(Linear { weight, bias });
        }
        if layers.is_empty() {
            return Err(Error::Format(format!("no parameters named {prefix}.*")));
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    pub fn input_size(&self, store: &ParamStore) -> usize {
        store.value(self.layers[0].weight).rows()
    }

    pub fn output_size(&self, store: &ParamStore) -> usize {
        store.value(self.layers[self.layers.len() - 1].weight).cols()
    }

    /// Records the forward pass. With `trainable = false` the parameters are
    /// bound as constants and receive no gradient from this tape.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, trainable: bool) -> Result<Var> {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (tape.param(store, layer.weight), tape.param(store, layer.bias))
            } else {
                (
                    tape.frozen_param(store, layer.weight),
                    tape.frozen_param(store, layer.bias),
                )
            };
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            if k + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Tape-free forward pass; bit-identical to [`Mlp::forward`].
    pub fn infer(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut h = kernels::matmul(x, store.value(self.layers[0].weight))?;
        h = kernels::add_bias(&h, store.value(self.layers[0].bias))?;
        for layer in &self.layers[1..] {
            h = kernels::relu(&h);
            h = kernels::matmul(&h, store.value(layer.weight))?;
            h = kernels::add_bias(&h, store.value(layer.bias))?;
        }
        if !h.is_finite() {
            return Err(Error::NonFinite("mlp forward"));
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_and_inference_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "enc", &[5, 7, 3], &mut rng).unwrap();
        let x = Tensor::matrix(4, 5, (0..20).map(|i| (i as f64).sin()).collect()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = mlp.forward(&mut tape, &store, xv, true).unwrap();
        assert_eq!(tape.value(out), &mlp.infer(&store, &x).unwrap());
        assert_eq!(mlp.output_size(&store), 3);
        assert_eq!(Mlp::attach(&store, "enc").unwrap(), mlp);
    }

    #[test]
    fn init_is_bounded_with_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[16, 4], &mut rng).unwrap();
        let l = mlp.layers()[0];
        assert!(store.value(l.weight).data().iter().all(|w| w.abs() < 0.25));
        assert!(store.value(l.bias).data().iter().all(|&b| b == 0.0));
    }
}
