use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::idx::{read_idx_file, IdxArray};
use super::{DomainDataset, MultiDomainTask};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Color/label agreement per ColoredMNIST domain. A positive value is the
/// probability that the color matches the label; a negative value `-c` means
/// the color disagrees with probability `c`.
pub const COLORED_MNIST_CORRELATIONS: [f64; 3] = [0.9, 0.8, -0.9];

/// Rotation (degrees) of each RotatedMNIST domain.
pub const ROTATED_MNIST_ANGLES: [f64; 6] = [0.0, 15.0, 30.0, 45.0, 60.0, 75.0];

/// Grayscale digits scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistSet {
    pub rows: usize,
    pub cols: usize,
    /// `len * rows * cols` pixels, row-major per image.
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
}

impl MnistSet {
    pub fn from_idx(images: &IdxArray, labels: &IdxArray) -> Result<Self> {
        if images.dims.len() != 3 || labels.dims.len() != 1 {
            return Err(Error::Format(format!(
                "expected 3-D images and 1-D labels, got {:?} and {:?}",
                images.dims, labels.dims
            )));
        }
        if images.dims[0] != labels.dims[0] {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                images.dims[0], labels.dims[0]
            )));
        }
        Ok(MnistSet {
            rows: images.dims[1],
            cols: images.dims[2],
            pixels: images.data.iter().map(|&p| p as f64 / 255.0).collect(),
            labels: labels.data.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// The first `n` samples.
    pub fn truncate(&self, n: usize) -> MnistSet {
        let n = n.min(self.len());
        MnistSet {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * self.image_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<MnistSet> {
    MnistSet::from_idx(&read_idx_file(images)?, &read_idx_file(labels)?)
}

fn check_base(base: &MnistSet) -> Result<()> {
    if base.is_empty() {
        return Err(Error::config("base image set is empty"));
    }
    if let Some(&bad) = base.labels.iter().find(|&&l| l > 9) {
        return Err(Error::config(format!("base label {bad} is not a digit")));
    }
    Ok(())
}

/// Two-channel, binary-label domains in which the channel carrying the digit
/// is spuriously correlated with the label.
///
/// The base set is shuffled and cut into one equal share per domain. For each
/// sample: label = `digit >= 5`, flipped with probability `label_noise`; the
/// digit is then drawn in channel `label` with the domain's agreement
/// probability and in the other channel otherwise.
pub fn make_colored_mnist(
    base: &MnistSet,
    seed: u64,
    label_noise: f64,
    correlations: &[f64],
) -> Result<MultiDomainTask> {
    check_base(base)?;
    if !(0.0..=1.0).contains(&label_noise) {
        return Err(Error::config(format!("label_noise {label_noise} outside [0, 1]")));
    }
    if correlations.len() < 2 || correlations.iter().any(|c| !(-1.0..=1.0).contains(c)) {
        return Err(Error::config("need at least two correlations, each within [-1, 1]"));
    }
    let share = base.len() / correlations.len();
    if share == 0 {
        return Err(Error::config(format!(
            "{} base images cannot fill {} domains",
            base.len(),
            correlations.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..base.len()).collect();
    order.shuffle(&mut rng);

    let pix = base.image_len();
    let mut domains = Vec::with_capacity(correlations.len());
    for (k, &corr) in correlations.iter().enumerate() {
        let agree_p = if corr >= 0.0 { corr } else { 1.0 + corr };
        let mut data = vec![0.0; share * 2 * pix];
        let mut labels = Vec::with_capacity(share);
        for (row, &src) in order[k * share..(k + 1) * share].iter().enumerate() {
            let mut label = usize::from(base.labels[src] >= 5);
            if rng.random::<f64>() < label_noise {
                label = 1 - label;
            }
            let color = if rng.random::<f64>() < agree_p {
                label
            } else {
                1 - label
            };
            let at = row * 2 * pix + color * pix;
            data[at..at + pix].copy_from_slice(base.image(src));
            labels.push(label);
        }
        let name = format!("{:+.0}%", corr * 100.0);
        let inputs = Tensor::matrix(share, 2 * pix, data)?;
        domains.push(DomainDataset::new(k, name, inputs, labels, 2)?);
    }
    MultiDomainTask::new(domains, None)
}

/// Signed color/label agreement of a two-channel dataset: the fraction of
/// samples drawn in the channel matching their label when that fraction is
/// at least one half, otherwise minus the disagreeing fraction.
pub fn color_label_agreement(ds: &DomainDataset) -> f64 {
    let half = ds.d_in() / 2;
    let agree = (0..ds.len())
        .filter(|&i| {
            let row = ds.inputs.row(i);
            let red: f64 = row[..half].iter().sum();
            let green: f64 = row[half..].iter().sum();
            let color = usize::from(green > red);
            color == ds.labels[i]
        })
        .count() as f64
        / ds.len() as f64;
    if agree >= 0.5 {
        agree
    } else {
        -(1.0 - agree)
    }
}

/// Rotates a square image counter-clockwise by `degrees` about its center,
/// with bilinear interpolation and zeros outside the source.
pub fn rotate_image(pixels: &[f64], rows: usize, cols: usize, degrees: f64) -> Vec<f64> {
    if degrees == 0.0 {
        return pixels.to_vec();
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= rows as isize || x >= cols as isize {
            0.0
        } else {
            pixels[y as usize * cols + x as usize]
        }
    };
    let mut out = vec![0.0; rows * cols];
    for y in 0..rows {
        for x in 0..cols {
            // inverse map: rotate the output coordinate back by -angle
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = c * dx - s * dy + cx;
            let sy = s * dx + c * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            out[y * cols + x] = v;
        }
    }
    out
}

/// One domain per angle, each holding a disjoint random subset of the base
/// digits rotated by that angle; 10 classes.
pub fn make_rotated_mnist(
    base: &MnistSet,
    angles: &[f64],
    subset_per_domain: usize,
    seed: u64,
) -> Result<MultiDomainTask> {
    check_base(base)?;
    if angles.len() < 2 {
        return Err(Error::config("need at least two angles"));
    }
    for (i, a) in angles.iter().enumerate() {
        if angles[..i].contains(a) {
            return Err(Error::config(format!("duplicate angle {a}")));
        }
        if !(0.0..=90.0).contains(a) {
            warn!("rotation angle {a} lies outside [0, 90] degrees");
        }
    }
    if subset_per_domain == 0 || subset_per_domain * angles.len() > base.len() {
        return Err(Error::config(format!(
            "{} domains of {subset_per_domain} images need more than the {} available",
            angles.len(),
            base.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..base.len()).collect();
    order.shuffle(&mut rng);

    let pix = base.image_len();
    let mut domains = Vec::with_capacity(angles.len());
    for (k, &angle) in angles.iter().enumerate() {
        let picks = &order[k * subset_per_domain..(k + 1) * subset_per_domain];
        let mut data = Vec::with_capacity(subset_per_domain * pix);
        let mut labels = Vec::with_capacity(subset_per_domain);
        for &src in picks {
            data.extend(rotate_image(base.image(src), base.rows, base.cols, angle));
            labels.push(base.labels[src] as usize);
        }
        let inputs = Tensor::matrix(subset_per_domain, pix, data)?;
        domains.push(DomainDataset::new(k, format!("rot{angle}"), inputs, labels, 10)?);
    }
    MultiDomainTask::new(domains, None)
}
