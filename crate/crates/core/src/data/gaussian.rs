use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DomainDataset, MultiDomainTask};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Parameters of the synthetic Gaussian-domain benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub num_domains: usize,
    pub per_domain_n: usize,
    pub num_classes: usize,
    pub d_in: usize,
    /// Scales both the per-domain rotation angle and translation length.
    pub domain_shift_scale: f64,
    /// Distance between class means, in units of the within-class standard
    /// deviation.
    pub class_separation: f64,
    pub seed: u64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            num_domains: 4,
            per_domain_n: 500,
            num_classes: 2,
            d_in: 8,
            domain_shift_scale: 1.0,
            class_separation: 4.0,
            seed: 0,
        }
    }
}

impl GaussianSpec {
    /// The class means `gen_gaussian_domains` uses for this spec, before any
    /// domain style is applied.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        gaussian_class_means(&mut rng, self.num_classes, self.d_in, self.class_separation)
    }
}

/// Largest per-domain rotation angle at `domain_shift_scale = 1`.
const MAX_ROTATION: f64 = std::f64::consts::FRAC_PI_4;

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Random directions, orthonormal while `count <= dim`.
fn random_directions(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, dim);
        if basis.len() < dim {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        if dot(&v, &v) < 1e-12 {
            continue;
        }
        normalize(&mut v);
        basis.push(v);
    }
    basis
}

/// Centered class means. When `num_classes <= d_in` every pair of means is
/// exactly `separation` apart.
pub fn gaussian_class_means(rng: &mut impl Rng, num_classes: usize, d_in: usize, separation: f64) -> Vec<Vec<f64>> {
    let dirs = random_directions(rng, num_classes, d_in);
    let scale = separation / std::f64::consts::SQRT_2;
    let mut means: Vec<Vec<f64>> = dirs.iter().map(|d| d.iter().map(|x| x * scale).collect()).collect();
    let mut centroid = vec![0.0; d_in];
    for m in &means {
        centroid
            .iter_mut()
            .zip(m)
            .for_each(|(c, x)| *c += x / num_classes as f64);
    }
    for m in &mut means {
        m.iter_mut().zip(&centroid).for_each(|(x, c)| *x -= c);
    }
    means
}

/// Class-conditional Gaussian clusters, shared across domains, with a
/// per-domain affine "style": a rotation within a random plane followed by a
/// translation. Both scale with `domain_shift_scale`; at zero every domain
/// is drawn from the same distribution.
pub fn gen_gaussian_domains(spec: &GaussianSpec) -> Result<MultiDomainTask> {
    if spec.num_domains < 3 {
        return Err(Error::config(format!(
            "num_domains must be >= 3, got {}",
            spec.num_domains
        )));
    }
    if spec.num_classes < 2 {
        return Err(Error::config(format!(
            "num_classes must be >= 2, got {}",
            spec.num_classes
        )));
    }
    if spec.per_domain_n == 0 || spec.d_in == 0 {
        return Err(Error::config("per_domain_n and d_in must be positive"));
    }
    if !(spec.domain_shift_scale >= 0.0) || !(spec.class_separation > 0.0) {
        return Err(Error::config(
            "domain_shift_scale must be >= 0 and class_separation > 0",
        ));
    }

    // means are drawn first; `GaussianSpec::class_means` relies on that
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = gaussian_class_means(&mut rng, spec.num_classes, spec.d_in, spec.class_separation);
    let d = spec.d_in;

    let mut domains = Vec::with_capacity(spec.num_domains);
    for k in 0..spec.num_domains {
        // style parameters are drawn even at zero shift so the sample stream
        // does not depend on the shift value
        let plane = random_directions(&mut rng, 2.min(d), d);
        let angle = spec.domain_shift_scale * MAX_ROTATION * rng.random_range(-1.0..=1.0);
        let mut offset = random_directions(&mut rng, 1, d).remove(0);
        offset.iter_mut().for_each(|x| *x *= spec.domain_shift_scale);

        let mut labels: Vec<usize> = (0..spec.per_domain_n).map(|i| i % spec.num_classes).collect();
        labels.shuffle(&mut rng);

        let mut data = Vec::with_capacity(spec.per_domain_n * d);
        for &y in &labels {
            let mut x: Vec<f64> = gaussian_vec(&mut rng, d)
                .into_iter()
                .zip(&means[y])
                .map(|(e, m)| e + m)
                .collect();
            if plane.len() == 2 {
                rotate_in_plane(&mut x, &plane[0], &plane[1], angle);
            }
            x.iter_mut().zip(&offset).for_each(|(v, t)| *v += t);
            data.extend(x);
        }
        let inputs = Tensor::matrix(spec.per_domain_n, d, data)?;
        domains.push(DomainDataset::new(
            k,
            format!("gauss{k}"),
            inputs,
            labels,
            spec.num_classes,
        )?);
    }
    MultiDomainTask::new(domains, None)
}

/// Rotates `x` by `angle` inside the plane spanned by orthonormal `p`, `q`.
fn rotate_in_plane(x: &mut [f64], p: &[f64], q: &[f64], angle: f64) {
    let (a, b) = (dot(x, p), dot(x, q));
    let (s, c) = angle.sin_cos();
    let (a2, b2) = (c * a - s * b, s * a + c * b);
    for i in 0..x.len() {
        x[i] += (a2 - a) * p[i] + (b2 - b) * q[i];
    }
}
