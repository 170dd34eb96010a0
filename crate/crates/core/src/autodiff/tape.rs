use crate::autodiff::kernels::{self, gemm};
use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    L2Normalize {
        input: Var,
        norms: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    SupCon {
        z: Var,
        coeff: Vec<f64>,
        temperature: f64,
    },
    SelectRows {
        input: Var,
        indices: Vec<usize>,
    },
    Sum(Var),
    Scale(Var, f64),
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order: an op
/// can only reference vars that already exist.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for a parameter, summed over every place it was bound.
    pub fn param(&self, id: ParamId) -> Option<Tensor> {
        let mut acc: Option<Tensor> = None;
        for &(node, pid) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                match &mut acc {
                    Some(a) => accumulate(a, g.data()),
                    None => acc = Some(g.clone()),
                }
            }
        }
        acc
    }

    /// Zeroes every gradient in `store` and writes the gradients reached by
    /// this backward pass. Parameters off the loss path end up with zeros.
    pub fn write_to(&self, store: &mut ParamStore) {
        store.zero_grads();
        for &(node, pid) in &self.params {
            if let Some(g) = &self.grads[node] {
                accumulate(store.grad_mut(pid), g.data());
            }
        }
    }
}

fn accumulate(dst: &mut Tensor, src: &[f64]) {
    for (d, s) in dst.data_mut().iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        Ok(self.push(value, op, requires_grad))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Binds a trainable parameter; its gradient is reported by `backward`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Binds a parameter's current value as a constant, so no gradient can
    /// reach it through this tape.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.value(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push_checked("matmul", value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::add(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push_checked("add", value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::sub(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push_checked("sub", value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::mul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push_checked("mul", value, Op::Mul(a, b), rg)
    }

    /// Row-broadcast addition of a bias vector; the only broadcasting op.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = kernels::add_bias(self.value(x), self.value(bias))?;
        let rg = self.rg(&[x, bias]);
        self.push_checked("add_bias", value, Op::AddBias(x, bias), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = kernels::relu(self.value(x));
        let rg = self.rg(&[x]);
        self.push_checked("relu", value, Op::Relu(x), rg)
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (value, norms) = kernels::l2_normalize(self.value(x))?;
        let rg = self.rg(&[x]);
        self.push_checked("l2_normalize", value, Op::L2Normalize { input: x, norms }, rg)
    }

    /// Mean softmax cross-entropy; returns a scalar var.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits), targets)?;
        let rg = self.rg(&[logits]);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push_checked("softmax_cross_entropy", Tensor::scalar(loss), op, rg)
    }

    /// Supervised contrastive loss over unit-norm rows; returns a scalar var.
    pub fn supcon(&mut self, z: Var, labels: &[usize], temperature: f64) -> Result<Var> {
        let (loss, coeff) = kernels::supcon(self.value(z), labels, temperature)?;
        let rg = self.rg(&[z]);
        let op = Op::SupCon { z, coeff, temperature };
        self.push_checked("supcon_loss", Tensor::scalar(loss), op, rg)
    }

    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(x).select_rows(indices)?;
        let rg = self.rg(&[x]);
        let op = Op::SelectRows {
            input: x,
            indices: indices.to_vec(),
        };
        Ok(self.push(value, op, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum::<f64>();
        let rg = self.rg(&[x]);
        self.push_checked("sum", Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|e| e * factor).collect();
        let value = Tensor::from_parts_unchecked(v.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push_checked("scale", value, Op::Scale(x, factor), rg)
    }

    /// `Σ w_k · x_k` over same-shaped vars, accumulated left to right.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *terms
            .first()
            .ok_or_else(|| Error::contract("weighted_sum of no terms"))?;
        let shape = self.value(first).shape().to_vec();
        let mut acc = vec![0.0; self.value(first).numel()];
        for &(v, w) in terms {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("weighted_sum", &shape, t.shape()));
            }
            for (a, x) in acc.iter_mut().zip(t.data()) {
                *a += w * x;
            }
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        let value = Tensor::from_parts_unchecked(shape, acc);
        self.push_checked("weighted_sum", value, Op::WeightedSum(terms.to_vec()), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((i, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn send(&self, grads: &mut [Option<Tensor>], to: Var, g: Tensor) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(existing) => accumulate(existing, g.data()),
            slot @ None => *slot = Some(g),
        }
    }

    fn send_with(&self, grads: &mut [Option<Tensor>], to: Var, f: impl FnOnce() -> Tensor) {
        if self.nodes[to.0].requires_grad {
            let g = f();
            self.send(grads, to, g);
        }
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let shape_of = |v: Var| self.value(v).shape().to_vec();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                self.send_with(grads, *a, || {
                    let mut g = vec![0.0; m * k];
                    gemm(m, n, k, up.data(), false, bv.data(), true, 0.0, &mut g);
                    Tensor::from_parts_unchecked(vec![m, k], g)
                });
                self.send_with(grads, *b, || {
                    let mut g = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, up.data(), false, 0.0, &mut g);
                    Tensor::from_parts_unchecked(vec![k, n], g)
                });
            }
            Op::Add(a, b) => {
                self.send_with(grads, *a, || up.clone());
                self.send_with(grads, *b, || up.clone());
            }
            Op::Sub(a, b) => {
                self.send_with(grads, *a, || up.clone());
                self.send_with(grads, *b, || {
                    let d = up.data().iter().map(|v| -v).collect();
                    Tensor::from_parts_unchecked(up.shape().to_vec(), d)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.send_with(grads, *a, || kernels::mul(up, bv).expect("shape checked on forward"));
                self.send_with(grads, *b, || kernels::mul(up, av).expect("shape checked on forward"));
            }
            Op::AddBias(x, bias) => {
                self.send_with(grads, *x, || up.clone());
                self.send_with(grads, *bias, || {
                    let n = up.cols();
                    let mut g = vec![0.0; n];
                    for row in up.data().chunks_exact(n) {
                        for (acc, v) in g.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    Tensor::from_parts_unchecked(shape_of(*bias), g)
                });
            }
            Op::Relu(x) => {
                self.send_with(grads, *x, || {
                    let input = self.value(*x).data();
                    let d = up
                        .data()
                        .iter()
                        .zip(input)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    Tensor::from_parts_unchecked(up.shape().to_vec(), d)
                });
            }
            Op::L2Normalize { input, norms } => {
                // d x = (d y - y (y · d y)) / |x|
                self.send_with(grads, *input, || {
                    let y = &node.value;
                    let c = y.cols();
                    let mut d = Vec::with_capacity(y.numel());
                    for (r, norm) in norms.iter().enumerate() {
                        let yr = y.row(r);
                        let gr = &up.data()[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        d.extend(yr.iter().zip(gr).map(|(yv, gv)| (gv - yv * dot) / norm));
                    }
                    Tensor::from_parts_unchecked(y.shape().to_vec(), d)
                });
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                self.send_with(grads, *logits, || {
                    let scale = up.item() / targets.len() as f64;
                    let c = probs.cols();
                    let mut d = probs.data().to_vec();
                    for (r, &t) in targets.iter().enumerate() {
                        d[r * c + t] -= 1.0;
                    }
                    for v in &mut d {
                        *v *= scale;
                    }
                    Tensor::from_parts_unchecked(probs.shape().to_vec(), d)
                });
            }
            Op::SupCon { z, coeff, temperature } => {
                // L depends on S = z zᵀ / τ with dL/dS = coeff, so
                // dL/dz = (coeff + coeffᵀ) z / τ.
                self.send_with(grads, *z, || {
                    let zv = self.value(*z);
                    let (b, d) = (zv.rows(), zv.cols());
                    let scale = up.item() / temperature;
                    let mut sym = vec![0.0; b * b];
                    for i in 0..b {
                        for j in 0..b {
                            sym[i * b + j] = (coeff[i * b + j] + coeff[j * b + i]) * scale;
                        }
                    }
                    let mut g = vec![0.0; b * d];
                    gemm(b, b, d, &sym, false, zv.data(), false, 0.0, &mut g);
                    Tensor::from_parts_unchecked(vec![b, d], g)
                });
            }
            Op::SelectRows { input, indices } => {
                self.send_with(grads, *input, || {
                    let mut g = Tensor::zeros(self.value(*input).shape());
                    let c = g.cols();
                    let gd = g.data_mut();
                    for (r, &src) in indices.iter().enumerate() {
                        for (dst, v) in gd[src * c..(src + 1) * c].iter_mut().zip(up.row(r)) {
                            *dst += v;
                        }
                    }
                    g
                });
            }
            Op::Sum(x) => {
                self.send_with(grads, *x, || Tensor::full(self.value(*x).shape(), up.item()));
            }
            Op::Scale(x, factor) => {
                self.send_with(grads, *x, || {
                    let d = up.data().iter().map(|v| v * factor).collect();
                    Tensor::from_parts_unchecked(up.shape().to_vec(), d)
                });
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    self.send_with(grads, v, || {
                        let d = up.data().iter().map(|g| g * w).collect();
                        Tensor::from_parts_unchecked(up.shape().to_vec(), d)
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let s = tape.sum(v).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(p).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(p).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn off_path_params_get_zero() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let b = store.add("b", Tensor::vector(vec![5.0]).unwrap()).unwrap();
        store.grad_mut(b).data_mut()[0] = 42.0;
        let mut tape = Tape::new();
        let va = tape.param(&store, a);
        let _vb = tape.param(&store, b);
        let s = tape.sum(va).unwrap();
        let g = tape.backward(s).unwrap();
        g.write_to(&mut store);
        assert_eq!(store.grad(a).data(), &[1.0]);
        assert_eq!(store.grad(b).data(), &[0.0]);
    }

    #[test]
    fn frozen_param_receives_nothing() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0, -1.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let va = tape.frozen_param(&store, a);
        let s = tape.sum(va).unwrap();
        assert!(!tape.requires_grad(s));
        let g = tape.backward(s).unwrap();
        assert!(g.param(a).is_none());
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let r = tape.relu(v).unwrap();
        let s = tape.sum(r).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(p).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_is_repeatable() {
        let mut store = ParamStore::new();
        let w = store
            .add("w", Tensor::matrix(2, 2, vec![0.3, -0.2, 0.5, 0.1]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap());
        let wv = tape.param(&store, w);
        let h = tape.matmul(x, wv).unwrap();
        let n = tape.l2_normalize(h).unwrap();
        let l = tape.softmax_cross_entropy(n, &[0, 1, 1]).unwrap();
        let g1 = tape.backward(l).unwrap().param(w).unwrap();
        let g2 = tape.backward(l).unwrap().param(w).unwrap();
        assert_eq!(g1.checksum(), g2.checksum());
    }
}
