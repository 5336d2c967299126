//! The semantic half of the 6-D feature space: PCA reduction of raw network
//! features to three channels, per-channel normalization, and a deterministic
//! fallback feature generator for when no network output is available.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::imgio::{ImageRgb, RawFeatureTensor};
use crate::{Error, Result};

/// Number of semantic channels kept after reduction.
pub const SEMANTIC_DIM: usize = 3;

const PCA_BLOCK_ROWS: usize = 4096;

/// Per-pixel 3-D semantic vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FeatureField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * SEMANTIC_DIM {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} feature field",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data).expect("finite feature values")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.get_at(y * self.width + x)
    }

    pub fn get_at(&self, index: usize) -> [f64; 3] {
        let p = &self.data[index * 3..index * 3 + 3];
        [p[0], p[1], p[2]]
    }

    pub fn to_tensor(&self) -> RawFeatureTensor {
        RawFeatureTensor {
            width: self.width,
            height: self.height,
            dim: SEMANTIC_DIM,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub(crate) fn check_matches(&self, img: &ImageRgb) -> Result<()> {
        if self.width != img.width() || self.height != img.height() {
            return Err(Error::Dimension(format!(
                "feature field is {}x{}, image is {}x{}",
                self.width,
                self.height,
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }
}

/// A point of the fused color + semantic space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeaturePoint {
    pub color: [f64; 3],
    pub semantic: [f64; 3],
}

impl FeaturePoint {
    pub fn new(color: [f64; 3], semantic: [f64; 3]) -> Self {
        Self { color, semantic }
    }

    pub fn to_array(&self) -> [f64; 6] {
        let [r, g, b] = self.color;
        let [s1, s2, s3] = self.semantic;
        [r, g, b, s1, s2, s3]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }
}

pub fn feature_point(img: &ImageRgb, field: &FeatureField, x: usize, y: usize) -> Result<FeaturePoint> {
    field.check_matches(img)?;
    if x >= img.width() || y >= img.height() {
        return Err(Error::OutOfBounds {
            x: x as i64,
            y: y as i64,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(FeaturePoint::new(img.pixel(x, y), field.get(x, y)))
}

/// Principal axes of a pixel-feature tensor.
#[derive(Debug, Clone)]
pub struct PcaFit {
    pub mean: Vec<f64>,
    /// `target_dim` unit axes (zero rows for padded axes), descending variance.
    pub axes: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl PcaFit {
    /// Fits the top `target_dim` axes of the mean-centered covariance of all pixels.
    pub fn fit(raw: &RawFeatureTensor, target_dim: usize) -> Result<Self> {
        let dim = raw.dim;
        let n = raw.width * raw.height;
        if dim < target_dim {
            return Err(Error::Dimension(format!(
                "cannot reduce {dim}-D features to {target_dim} dimensions"
            )));
        }
        if n < target_dim + 1 {
            return Err(Error::Dimension(format!(
                "PCA to {target_dim} dimensions needs at least {} pixels, got {n}",
                target_dim + 1
            )));
        }

        let mut mean = vec![0.0; dim];
        for p in raw.data.chunks_exact(dim) {
            for (m, &v) in mean.iter_mut().zip(p) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        // Blocked XᵀX accumulation in a fixed order keeps results reproducible
        // without materializing the centered n×dim matrix.
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for block in raw.data.chunks(PCA_BLOCK_ROWS * dim) {
            let rows = block.len() / dim;
            let centered =
                DMatrix::from_fn(rows, dim, |r, c| f64::from(block[r * dim + c]) - mean[c]);
            cov.gemm_tr(1.0, &centered, &centered, 1.0);
        }
        cov /= n as f64;

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let top = eig.eigenvalues[order[0]].max(0.0);
        let rank_floor = top * 1e-10;

        let mut axes = Vec::with_capacity(target_dim);
        let mut eigenvalues = Vec::with_capacity(target_dim);
        for &i in order.iter().take(target_dim) {
            let lambda = eig.eigenvalues[i];
            if top == 0.0 || lambda <= rank_floor {
                axes.push(vec![0.0; dim]);
                eigenvalues.push(0.0);
                continue;
            }
            let mut axis: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = axis
                .iter()
                .enumerate()
                .fold(0, |best, (j, v)| if v.abs() > axis[best].abs() { j } else { best });
            if axis[lead] < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
            axes.push(axis);
            eigenvalues.push(lambda);
        }
        let padded = eigenvalues.iter().filter(|&&l| l == 0.0).count();
        if padded > 0 {
            warn!("feature covariance has rank below {target_dim}; padding {padded} axes with zeros");
        }
        Ok(Self {
            mean,
            axes,
            eigenvalues,
        })
    }

    /// Projects every pixel; output is row-major with `axes.len()` channels.
    pub fn project(&self, raw: &RawFeatureTensor) -> Vec<f64> {
        let mut out = Vec::with_capacity(raw.width * raw.height * self.axes.len());
        let mut centered = vec![0.0; raw.dim];
        for p in raw.data.chunks_exact(raw.dim) {
            for ((c, &v), m) in centered.iter_mut().zip(p).zip(&self.mean) {
                *c = f64::from(v) - m;
            }
            for axis in &self.axes {
                out.push(axis.iter().zip(&centered).map(|(a, c)| a * c).sum());
            }
        }
        out
    }
}

/// Projects raw features onto their top three principal axes (not normalized).
pub fn pca_reduce(raw: &RawFeatureTensor) -> Result<FeatureField> {
    let fit = PcaFit::fit(raw, SEMANTIC_DIM)?;
    FeatureField::new(raw.width, raw.height, fit.project(raw))
}

/// Min-max scales each channel to `[0, 1]`; constant channels become 0.
pub fn normalize_features(field: &FeatureField) -> FeatureField {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in field.data.chunks_exact(3) {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let data = field
        .data
        .chunks_exact(3)
        .flat_map(|p| {
            let mut out = [0.0; 3];
            for c in 0..3 {
                let span = hi[c] - lo[c];
                out[c] = if span > 0.0 { (p[c] - lo[c]) / span } else { 0.0 };
            }
            out
        })
        .collect();
    FeatureField {
        width: field.width,
        height: field.height,
        data,
    }
}

/// The semantic field used by the pipeline.
///
/// A 3-channel tensor is taken as already reduced and only normalized; wider
/// tensors are PCA-reduced first. Values are rounded through `f32` so a field
/// read back from a saved tensor is identical to the in-memory one.
pub fn semantic_field(raw: &RawFeatureTensor) -> Result<FeatureField> {
    let reduced = if raw.dim == SEMANTIC_DIM {
        FeatureField::new(
            raw.width,
            raw.height,
            raw.data.iter().map(|&v| f64::from(v)).collect(),
        )?
    } else {
        pca_reduce(raw)?
    };
    let mut field = normalize_features(&reduced);
    field
        .data
        .iter_mut()
        .for_each(|v| *v = f64::from(*v as f32));
    Ok(field)
}

/// Always PCA-reduces (even 3-D input) before normalizing; the output of the
/// `features` command.
pub fn reduce_network_features(raw: &RawFeatureTensor) -> Result<FeatureField> {
    let mut field = normalize_features(&pca_reduce(raw)?);
    field
        .data
        .iter_mut()
        .for_each(|v| *v = f64::from(*v as f32));
    Ok(field)
}

/// Default blur for [`fallback_features`].
pub const FALLBACK_BLUR_SIGMA: f64 = 8.0;

/// Stand-in features: Gaussian-blurred RGB plus normalized pixel coordinates.
pub fn fallback_features(img: &ImageRgb, blur_sigma: f64) -> RawFeatureTensor {
    let (w, h) = (img.width(), img.height());
    let kernel = gaussian_kernel(blur_sigma);
    let radius = (kernel.len() / 2) as i64;

    let mut horizontal = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (k, &g) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + k as i64 - radius, w);
                let p = img.pixel(sx, y);
                for c in 0..3 {
                    acc[c] += g * p[c];
                }
            }
            horizontal[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }

    let xs = if w > 1 { (w - 1) as f64 } else { 1.0 };
    let ys = if h > 1 { (h - 1) as f64 } else { 1.0 };
    let mut data = Vec::with_capacity(w * h * 5);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (k, &g) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + k as i64 - radius, h);
                let p = &horizontal[(sy * w + x) * 3..(sy * w + x) * 3 + 3];
                for c in 0..3 {
                    acc[c] += g * p[c];
                }
            }
            data.extend(acc.iter().map(|&v| v as f32));
            data.push((x as f64 / xs) as f32);
            data.push((y as f64 / ys) as f32);
        }
    }
    RawFeatureTensor {
        width: w,
        height: h,
        dim: 5,
        data,
    }
}

/// Normalized 1-D Gaussian taps over `±ceil(3σ)`; `σ ≤ 0` gives the identity.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Symmetric (edge-repeating) reflection into `0..n`: `-1 → 0`, `n → n-1`.
pub(crate) fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}
