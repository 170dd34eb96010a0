//! Test-only oracles: central finite differences and direct-summation losses.
//! Nothing here calls into the tape; the oracles only evaluate forward values.
#![allow(dead_code)]

use adrmx_core::{ParamId, ParamStore, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Central difference of `f` with respect to every element of parameter `id`.
pub fn central_diff(store: &ParamStore, id: ParamId, mut f: impl FnMut(&ParamStore) -> f64) -> Tensor {
    let base = store.value(id).clone();
    let mut probe = store.clone();
    let mut out = Tensor::zeros(base.shape());
    for k in 0..base.numel() {
        let mut plus = base.clone();
        plus.data_mut()[k] += FD_STEP;
        probe.set_value(id, plus).unwrap();
        let fp = f(&probe);
        let mut minus = base.clone();
        minus.data_mut()[k] -= FD_STEP;
        probe.set_value(id, minus).unwrap();
        let fm = f(&probe);
        out.data_mut()[k] = (fp - fm) / (2.0 * FD_STEP);
    }
    out
}

/// Same as [`central_diff`] but for a free input tensor.
pub fn central_diff_input(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    for k in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[k] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[k] -= FD_STEP;
        out.data_mut()[k] = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
    }
    out
}

/// Worst disagreement between an analytic and a numeric gradient.
///
/// Elements whose analytic magnitude is below `1e-8` are compared on absolute
/// error (and fail if that exceeds `1e-8`); all others on relative error.
/// Returns the largest relative error seen, or infinity on an absolute
/// failure.
pub fn max_rel_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        if a.abs() < 1e-8 {
            if (a - n).abs() >= 1e-8 {
                return f64::INFINITY;
            }
            continue;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs());
        worst = worst.max(rel);
    }
    worst
}

/// Relative difference between two scalars, treating both-zero as exact.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

/// Mean cross-entropy by direct summation over every class.
pub fn ce_oracle(logits: &Tensor, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &v in row {
            z += (v - m).exp();
        }
        total += -((row[t] - m) - z.ln());
    }
    total / targets.len() as f64
}

/// Supervised contrastive loss by an explicit loop over (anchor, positive,
/// contrast) triples, averaged over anchors that have positives.
pub fn supcon_oracle(z: &Tensor, labels: &[usize], tau: f64) -> f64 {
    let b = z.rows();
    let dot = |i: usize, j: usize| -> f64 { z.row(i).iter().zip(z.row(j)).map(|(a, c)| a * c).sum::<f64>() / tau };
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let mut inner = 0.0;
        for &p in &positives {
            let mut denom = 0.0;
            for a in 0..b {
                if a != i {
                    denom += dot(i, a).exp();
                }
            }
            inner += (dot(i, p).exp() / denom).ln();
        }
        total += -inner / positives.len() as f64;
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

/// Unit-normalizes each row.
pub fn normalize_rows(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut data = Vec::with_capacity(t.numel());
    for r in 0..t.rows() {
        let n = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(t.row(r).iter().map(|v| v / n));
    }
    Tensor::matrix(t.rows(), c, data).unwrap()
}

/// The bundled 10,000-digit MNIST subset shipped under `data/mnist`.
pub fn bundled_mnist() -> adrmx_core::data::MnistSet {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    adrmx_core::data::load_mnist(
        dir.join("digits-images-idx3-ubyte.gz"),
        dir.join("digits-labels-idx1-ubyte.gz"),
    )
    .expect("bundled MNIST files")
}

/// Standard normal CDF by composite Simpson integration of the density from
/// -12 (where the remaining tail is below 1e-32).
pub fn normal_cdf(z: f64) -> f64 {
    let lo = -12.0;
    if z <= lo {
        return 0.0;
    }
    let n = 20_000;
    let h = (z - lo) / n as f64;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(lo) + pdf(z);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(lo + k as f64 * h);
    }
    s * h / 3.0
}
