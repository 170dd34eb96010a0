//! Forward kernels on plain tensors.
//!
//! The tape and the tape-free inference path both call into these, so a
//! value computed under either path is bit-identical.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Rows whose Euclidean norm is at or below this cannot be normalized.
pub const MIN_ROW_NORM: f64 = 1e-12;

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::dim(op, t.shape(), &[0, 0]));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major slices, where `op`
/// optionally transposes. `m x k` and `k x n` are the logical (post-op)
/// extents.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    // Row-major `m x k` has strides (k, 1); its stored transpose (k x m) read
    // as m x k has strides (1, m).
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the slices are exactly m*k, k*n and m*n long and the strides
    // above address only elements inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    Ok(Tensor::from_parts_unchecked(vec![m, n], out))
}

fn zip_same(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts_unchecked(a.shape().to_vec(), data))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("mul", a, b, |x, y| x * y)
}

/// Adds `bias` (length `n`) to every row of an `m x n` matrix.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, n) = require_matrix("add_bias", x)?;
    if bias.numel() != n {
        return Err(Error::dim("add_bias", x.shape(), bias.shape()));
    }
    let b = bias.data();
    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(n) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
    Ok(Tensor::from_parts_unchecked(x.shape().to_vec(), data))
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_parts_unchecked(x.shape().to_vec(), data)
}

/// Normalizes each row to unit Euclidean length. Returns the output and the
/// per-row norms.
pub fn l2_normalize(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (rows, cols) = require_matrix("l2_normalize", x)?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut norms = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > MIN_ROW_NORM) {
            return Err(Error::DegenerateInput {
                op: "l2_normalize",
                row: r,
                norm,
            });
        }
        data.extend(row.iter().map(|v| v / norm));
        norms.push(norm);
    }
    Ok((Tensor::from_parts_unchecked(vec![rows, cols], data), norms))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (rows, cols) = require_matrix("softmax", logits)?;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= total;
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![rows, cols], out))
}

/// Mean negative log-likelihood of `targets` under row-wise softmax.
/// Returns the loss and the softmax probabilities (needed for the gradient).
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, cols) = require_matrix("softmax_cross_entropy", logits)?;
    if cols < 2 {
        return Err(Error::contract(format!(
            "softmax_cross_entropy needs at least 2 classes, got {cols}"
        )));
    }
    if targets.len() != rows {
        return Err(Error::dim("softmax_cross_entropy", logits.shape(), &[targets.len()]));
    }
    let mut probs = Vec::with_capacity(rows * cols);
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= cols {
            return Err(Error::Index {
                what: "cross-entropy target",
                index: t,
                bound: cols,
            });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[t];
        probs.extend(row.iter().map(|&v| (v - log_z).exp()));
    }
    let loss = total / rows as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_cross_entropy"));
    }
    Ok((loss, Tensor::from_parts_unchecked(vec![rows, cols], probs)))
}

/// Supervised contrastive loss over unit rows `z` and the coefficient matrix
/// `G = dL/dS` with respect to the scaled similarities `S = z zᵀ / τ`.
///
/// For each anchor `i` with at least one positive (another row sharing its
/// label) the term is `mean_p(-S_ip) + logsumexp_{a != i}(S_ia)`; anchors
/// without positives contribute nothing, and the total is averaged over the
/// anchors that do.
pub fn supcon(z: &Tensor, labels: &[usize], temperature: f64) -> Result<(f64, Vec<f64>)> {
    let (b, _) = require_matrix("supcon_loss", z)?;
    if labels.len() != b {
        return Err(Error::dim("supcon_loss", z.shape(), &[labels.len()]));
    }
    if b < 2 {
        return Err(Error::contract("supcon_loss needs a batch of at least 2"));
    }
    if !(temperature > 0.0) {
        return Err(Error::contract(format!("temperature must be > 0, got {temperature}")));
    }
    for r in 0..b {
        let norm = z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "supcon_loss expects unit rows; row {r} has norm {norm}"
            )));
        }
    }

    let d = z.cols();
    let mut sim = vec![0.0; b * b];
    gemm(b, d, b, z.data(), false, z.data(), true, 0.0, &mut sim);
    for s in &mut sim {
        *s /= temperature;
    }

    let mut coeff = vec![0.0; b * b];
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..b {
        let positives = (0..b).filter(|&p| p != i && labels[p] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        anchors += 1;
        let row = &sim[i * b..(i + 1) * b];
        let max = (0..b)
            .filter(|&a| a != i)
            .map(|a| row[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = (0..b).filter(|&a| a != i).map(|a| (row[a] - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let inv_p = 1.0 / positives as f64;
        let mut pos_sum = 0.0;
        for a in 0..b {
            if a == i {
                continue;
            }
            let softmax = (row[a] - log_z).exp();
            let is_pos = labels[a] == labels[i];
            if is_pos {
                pos_sum += row[a];
            }
            coeff[i * b + a] = softmax - if is_pos { inv_p } else { 0.0 };
        }
        total += log_z - pos_sum * inv_p;
    }
    if anchors == 0 {
        return Ok((0.0, coeff));
    }
    let scale = 1.0 / anchors as f64;
    for c in &mut coeff {
        *c *= scale;
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("supcon_loss"));
    }
    Ok((loss, coeff))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_small_cases() {
        let id = t(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let v = t(&[vec![3.0], vec![4.0]]);
        assert_eq!(matmul(&id, &v).unwrap().data(), &[3.0, 4.0]);
        let a = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = t(&[vec![5.0], vec![6.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
        let err = matmul(&b, &b).unwrap_err();
        assert!(err.to_string().contains("[2, 1]"), "{err}");
    }

    #[test]
    fn gemm_transposes() {
        // a: 2x3, b: 2x3 -> a * bᵀ: 2x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [4.0, 2.0, 10.0, 5.0]);
        // aᵀ * b: 3x3
        let mut c = [0.0; 9];
        gemm(3, 2, 3, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [1.0, 4.0, 1.0, 2.0, 5.0, 2.0, 3.0, 6.0, 3.0]);
    }

    #[test]
    fn elementwise() {
        let v = t(&[vec![1.0, 2.0, 3.0]]);
        let h = t(&[vec![0.5, 0.5, 0.5]]);
        assert_eq!(sub(&v, &h).unwrap().data(), &[0.5, 1.5, 2.5]);
        assert_eq!(sub(&v, &Tensor::zeros(&[1, 3])).unwrap(), v);
        assert!(add(&v, &t(&[vec![1.0], vec![2.0], vec![3.0]])).is_err());
        assert_eq!(relu(&t(&[vec![-1.0, 0.0, 2.0]])).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn normalize() {
        let (n, norms) = l2_normalize(&t(&[vec![3.0, 4.0]])).unwrap();
        assert!((n.get(0, 0) - 0.6).abs() < 1e-15 && (n.get(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(norms, vec![5.0]);
        match l2_normalize(&t(&[vec![1.0, 0.0], vec![0.0, 0.0]])) {
            Err(Error::DegenerateInput { row, .. }) => assert_eq!(row, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cross_entropy_edges() {
        let (l, _) = softmax_cross_entropy(&t(&[vec![0.0, 0.0]]), &[1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = softmax_cross_entropy(&t(&[vec![1000.0, 0.0]]), &[0]).unwrap();
        assert!((0.0..1e-9).contains(&l));
        assert!(matches!(
            softmax_cross_entropy(&t(&[vec![0.0, 0.0]]), &[2]),
            Err(Error::Index { index: 2, .. })
        ));
        assert!(softmax_cross_entropy(&t(&[vec![0.0]]), &[0]).is_err());
    }

    #[test]
    fn supcon_edges() {
        let z = t(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(supcon(&z, &[0, 0], 1.0).unwrap().0, 0.0);
        let z = t(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]);
        let (l, g) = supcon(&z, &[0, 1, 2], 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&c| c == 0.0));
        let bad = t(&[vec![2.0, 0.0], vec![1.0, 0.0]]);
        assert!(matches!(supcon(&bad, &[0, 0], 1.0), Err(Error::Contract(_))));
    }
}
