//! Fusion quality metrics on 8-bit-range grayscale images and the
//! competition-rank aggregation used to compare methods.

mod qabf;
mod rank;
mod report;
mod vif;

pub use qabf::{qabf, qabf_with, QabfConstants};
pub use rank::{
    avg_rank, competition_ranks, reference_table, MetricTable, METRIC_NAMES, REFERENCE_TABLES,
};
pub use report::{evaluate_triple, MetricRow, Report};
pub use vif::{vif_fusion, vif_single, VIF_NOISE_VARIANCE, VIF_WINDOWS};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of histogram bins for EN and MI.
pub const BINS: usize = 256;

/// Grayscale image with values on the 0–255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::dim(format!(
                "image {height}×{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("image contains non-finite values".into()));
        }
        Ok(GrayImage {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(
            height,
            width,
            (0..height * width)
                .map(|k| f(k / width, k % width))
                .collect(),
        )
    }

    pub fn from_u8(height: usize, width: usize, data: &[u8]) -> Result<Self> {
        Self::new(height, width, data.iter().map(|&v| v as f64).collect())
    }

    /// Scales a `[1,1,H,W]` tensor on `[0,1]` to `[0,255]`.
    pub fn from_unit_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 || c != 1 {
            return Err(Error::dim(format!(
                "expected a single plane, got shape {:?}",
                t.shape()
            )));
        }
        Self::new(h, w, t.data().iter().map(|v| v * 255.0).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Values rounded and clamped to `0..=255`.
    pub fn quantized(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn transposed(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |y, x| self.at(x, y)).unwrap()
    }

    fn expect_same_size(&self, other: &GrayImage) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::dim(format!(
                "image sizes differ: {}×{} vs {}×{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

fn entropy_of(counts: &[usize], total: usize) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * p.recip().log2()
        })
        .sum()
}

fn histogram(q: &[u8]) -> Vec<usize> {
    let mut h = vec![0; BINS];
    for &v in q {
        h[v as usize] += 1;
    }
    h
}

/// Shannon entropy of the 256-bin histogram, in bits.
pub fn entropy(f: &GrayImage) -> f64 {
    entropy_of(&histogram(&f.quantized()), f.data.len())
}

/// Population standard deviation.
pub fn std_dev(f: &GrayImage) -> f64 {
    let n = f.data.len() as f64;
    let mean = f.data.iter().sum::<f64>() / n;
    (f.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// `sqrt(RF² + CF²)` where RF and CF are the RMS of horizontal and vertical
/// first differences, averaged over the number of differences.
pub fn spatial_frequency(f: &GrayImage) -> f64 {
    let (h, w) = (f.height, f.width);
    let mut rf = 0.0;
    for y in 0..h {
        for x in 1..w {
            let d = f.at(y, x) - f.at(y, x - 1);
            rf += d * d;
        }
    }
    let mut cf = 0.0;
    for y in 1..h {
        for x in 0..w {
            let d = f.at(y, x) - f.at(y - 1, x);
            cf += d * d;
        }
    }
    let rf = if w > 1 {
        rf / (h * (w - 1)) as f64
    } else {
        0.0
    };
    let cf = if h > 1 {
        cf / ((h - 1) * w) as f64
    } else {
        0.0
    };
    (rf + cf).sqrt()
}

/// Mean of `sqrt((dx² + dy²)/2)` with forward differences over the
/// `(H−1)×(W−1)` pixels that have both neighbours.
pub fn average_gradient(f: &GrayImage) -> f64 {
    let (h, w) = (f.height, f.width);
    if h < 2 || w < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dx = f.at(y, x + 1) - f.at(y, x);
            let dy = f.at(y + 1, x) - f.at(y, x);
            sum += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    sum / ((h - 1) * (w - 1)) as f64
}

/// Mutual information between two images from their joint 256-bin histogram, in bits.
pub fn mutual_information_pair(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.expect_same_size(b)?;
    let (qa, qb) = (a.quantized(), b.quantized());
    let mut joint = vec![0usize; BINS * BINS];
    for (&x, &y) in qa.iter().zip(&qb) {
        joint[x as usize * BINS + y as usize] += 1;
    }
    let n = qa.len();
    Ok(entropy_of(&histogram(&qa), n) + entropy_of(&histogram(&qb), n) - entropy_of(&joint, n))
}

/// `MI(F, A) + MI(F, B)`.
pub fn mutual_information(f: &GrayImage, a: &GrayImage, b: &GrayImage) -> Result<f64> {
    Ok(mutual_information_pair(f, a)? + mutual_information_pair(f, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_half() -> GrayImage {
        GrayImage::from_fn(4, 4, |y, _| if y < 2 { 0.0 } else { 255.0 }).unwrap()
    }

    #[test]
    fn constant_image_has_no_information_or_structure() {
        let c = GrayImage::from_fn(5, 7, |_, _| 91.0).unwrap();
        assert_eq!(entropy(&c), 0.0);
        assert_eq!(std_dev(&c), 0.0);
        assert_eq!(spatial_frequency(&c), 0.0);
        assert_eq!(average_gradient(&c), 0.0);
    }

    #[test]
    fn half_and_half_image() {
        assert_eq!(entropy(&half_half()), 1.0);
        assert_eq!(std_dev(&half_half()), 127.5);
    }

    #[test]
    fn full_ramp_has_eight_bits() {
        let ramp = GrayImage::from_fn(16, 16, |y, x| (y * 16 + x) as f64).unwrap();
        assert!((entropy(&ramp) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn stripes_and_ramp_closed_forms() {
        let stripes =
            GrayImage::from_fn(6, 8, |_, x| if x % 2 == 0 { 0.0 } else { 255.0 }).unwrap();
        assert_eq!(spatial_frequency(&stripes), 255.0);
        let ramp = GrayImage::from_fn(5, 6, |_, x| x as f64).unwrap();
        assert!((average_gradient(&ramp) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn self_information_is_entropy() {
        let f = GrayImage::from_fn(8, 8, |y, x| ((y * 31 + x * 17) % 13) as f64 * 19.0).unwrap();
        let mi = mutual_information(&f, &f, &f).unwrap();
        assert!((mi - 2.0 * entropy(&f)).abs() < 1e-12);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let a = GrayImage::from_fn(4, 4, |_, _| 0.0).unwrap();
        let b = GrayImage::from_fn(4, 5, |_, _| 0.0).unwrap();
        assert!(mutual_information_pair(&a, &b).is_err());
    }
}
