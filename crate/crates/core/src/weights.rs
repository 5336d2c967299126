//! Gaussian RBF similarity of pixels to palette entries, interpolating
//! exactly at the entries and normalized into a partition of unity.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::features::{FeatureField, FeaturePoint};
use crate::imgio::{encode_gray8, to_byte, ImageRgb};
use crate::palette::SemanticPalette;
use crate::{Error, Result};

const CONDITION_LIMIT: f64 = 1e12;
const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sigmas {
    pub color: f64,
    pub semantic: f64,
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn sq3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Kernel widths: mean pairwise entry distance in color and in semantics,
/// 1.0 when there is no pair or the mean is zero.
pub fn compute_sigmas(palette: &SemanticPalette) -> Sigmas {
    let e = &palette.entries;
    let (mut sc, mut ss, mut pairs) = (0.0, 0.0, 0usize);
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            sc += dist3(&e[i].color, &e[j].color);
            ss += dist3(&e[i].semantic, &e[j].semantic);
            pairs += 1;
        }
    }
    let pick = |sum: f64| {
        if pairs == 0 || sum <= 0.0 {
            1.0
        } else {
            sum / pairs as f64
        }
    };
    Sigmas {
        color: pick(sc),
        semantic: pick(ss),
    }
}

pub fn rbf_kernel(x: &FeaturePoint, p: &FeaturePoint, sigmas: Sigmas) -> f64 {
    (-sq3(&x.color, &p.color) / (2.0 * sigmas.color * sigmas.color)).exp()
        * (-sq3(&x.semantic, &p.semantic) / (2.0 * sigmas.semantic * sigmas.semantic)).exp()
}

/// Fitted interpolation model: `f_i(x) = Σ_j lambda[i][j] φ(x, P_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfModel {
    pub palette: SemanticPalette,
    pub sigmas: Sigmas,
    /// Row-major `k × k`.
    pub lambda: Vec<f64>,
    /// Set when the Gram matrix needed the ridge fallback.
    pub regularized: bool,
}

impl RbfModel {
    pub fn fit(palette: &SemanticPalette) -> Result<Self> {
        fit_lambda(palette, compute_sigmas(palette))
    }

    pub fn k(&self) -> usize {
        self.palette.len()
    }

    pub fn lambda_row(&self, i: usize) -> &[f64] {
        let k = self.k();
        &self.lambda[i * k..(i + 1) * k]
    }

    /// Unclamped, unnormalized interpolants `f_i(x)`.
    pub fn similarities(&self, x: &FeaturePoint) -> Vec<f64> {
        let phi: Vec<f64> = self
            .palette
            .entries
            .iter()
            .map(|p| rbf_kernel(x, p, self.sigmas))
            .collect();
        (0..self.k())
            .map(|i| self.lambda_row(i).iter().zip(&phi).map(|(l, p)| l * p).sum())
            .collect()
    }

    fn weights_into(&self, x: &FeaturePoint, out: &mut [f64]) {
        let k = self.k();
        let mut phi = [0.0f64; 64];
        let phi: &mut [f64] = if k <= 64 { &mut phi[..k] } else { &mut vec![0.0; k][..] };
        for (p, e) in phi.iter_mut().zip(&self.palette.entries) {
            *p = rbf_kernel(x, e, self.sigmas);
        }
        let mut total = 0.0;
        for (i, o) in out.iter_mut().enumerate() {
            let f: f64 = self.lambda[i * k..(i + 1) * k].iter().zip(phi.iter()).map(|(l, p)| l * p).sum();
            *o = f.max(0.0);
            total += *o;
        }
        if total <= 1e-12 {
            out.iter_mut().for_each(|o| *o = 1.0 / k as f64);
        } else {
            out.iter_mut().for_each(|o| *o /= total);
        }
    }
}

/// Solves the Gram system so that each `f_i` is 1 at entry `i` and 0 at the others.
pub fn fit_lambda(palette: &SemanticPalette, sigmas: Sigmas) -> Result<RbfModel> {
    let k = palette.len();
    if k == 0 {
        return Err(Error::Numerical("empty palette".into()));
    }
    if !(sigmas.color > 0.0 && sigmas.semantic > 0.0) {
        return Err(Error::Numerical(format!("non-positive kernel widths {sigmas:?}")));
    }
    let e = &palette.entries;
    let mut gram = DMatrix::from_fn(k, k, |l, j| rbf_kernel(&e[l], &e[j], sigmas));

    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let regularized = !(lo > 0.0 && hi / lo <= CONDITION_LIMIT);
    if regularized {
        warn!("RBF Gram matrix is ill-conditioned (eigenvalues {lo:e}..{hi:e}); adding ridge {RIDGE:e}");
        for i in 0..k {
            gram[(i, i)] += RIDGE;
        }
    }
    let inverse = gram
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| gram.try_inverse())
        .ok_or_else(|| Error::Numerical("singular RBF Gram matrix".into()))?;
    if inverse.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("singular RBF Gram matrix".into()));
    }
    // Gram is symmetric, so row i of its inverse solves Φ λ_iᵀ = e_i.
    let lambda = (0..k * k).map(|idx| inverse[(idx / k, idx % k)]).collect();
    Ok(RbfModel {
        palette: palette.clone(),
        sigmas,
        lambda,
        regularized,
    })
}

/// Normalized, non-negative weights of `x` to every palette entry.
pub fn pixel_weights(x: &FeaturePoint, model: &RbfModel) -> Vec<f64> {
    let mut out = vec![0.0; model.k()];
    model.weights_into(x, &mut out);
    out
}

/// `k` weights per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub data: Vec<f64>,
}

impl WeightField {
    pub fn row(&self, index: usize) -> &[f64] {
        &self.data[index * self.k..(index + 1) * self.k]
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        self.row(y * self.width + x)
    }

    /// Weight map of one entry as an 8-bit grayscale PNG, `round(255 w)`.
    pub fn entry_png(&self, entry: usize) -> Result<Vec<u8>> {
        if entry >= self.k {
            return Err(Error::Config(format!(
                "palette entry {entry} out of range (k = {})",
                self.k
            )));
        }
        let bytes = self.data.chunks_exact(self.k).map(|w| to_byte(w[entry])).collect();
        Ok(encode_gray8(self.width, self.height, bytes))
    }
}

pub fn weight_field(img: &ImageRgb, field: &FeatureField, model: &RbfModel) -> Result<WeightField> {
    field.check_matches(img)?;
    let k = model.k();
    let (w, h) = (img.width(), img.height());
    let mut data = vec![0.0; w * h * k];
    data.par_chunks_mut(w * k).enumerate().for_each(|(y, row)| {
        for (x, out) in row.chunks_exact_mut(k).enumerate() {
            let p = FeaturePoint::new(img.pixel(x, y), field.get(x, y));
            model.weights_into(&p, out);
        }
    });
    Ok(WeightField {
        width: w,
        height: h,
        k,
        data,
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::palette::PaletteConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn palette(points: Vec<FeaturePoint>) -> SemanticPalette {
        SemanticPalette::new(points, PaletteConfig::default()).unwrap()
    }

    fn random_palette(rng: &mut ChaCha8Rng, k: usize) -> SemanticPalette {
        palette(
            (0..k)
                .map(|_| FeaturePoint::from_array(std::array::from_fn(|_| rng.gen())))
                .collect(),
        )
    }

    /// Gauss-Jordan elimination with partial pivoting, independent of nalgebra.
    fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut m: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
            m.swap(col, piv);
            let d = m[col][col];
            m[col].iter_mut().for_each(|v| *v /= d);
            for r in 0..n {
                if r != col {
                    let f = m[r][col];
                    let pivot_row = m[col].clone();
                    m[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
                }
            }
        }
        m.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    #[test]
    fn sigma_rules() {
        let one = palette(vec![FeaturePoint::new([0.5; 3], [0.5; 3])]);
        assert_eq!(compute_sigmas(&one), Sigmas { color: 1.0, semantic: 1.0 });
        let two = palette(vec![
            FeaturePoint::new([0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
            FeaturePoint::new([0.6, 0.0, 0.0], [0.0, 0.2, 0.0]),
        ]);
        let s = compute_sigmas(&two);
        assert!((s.color - 0.6).abs() < 1e-15 && (s.semantic - 0.2).abs() < 1e-15);
        let three = palette(vec![
            FeaturePoint::new([0.0, 0.0, 0.0], [0.1; 3]),
            FeaturePoint::new([0.3, 0.0, 0.0], [0.1; 3]),
            FeaturePoint::new([0.9, 0.0, 0.0], [0.2; 3]),
        ]);
        assert!((compute_sigmas(&three).color - 0.6).abs() < 1e-15);
        let same_semantic = palette(vec![
            FeaturePoint::new([0.0; 3], [0.4; 3]),
            FeaturePoint::new([1.0; 3], [0.4; 3]),
        ]);
        assert_eq!(compute_sigmas(&same_semantic).semantic, 1.0);
    }

    #[test]
    fn kernel_values() {
        let s = Sigmas { color: 0.3, semantic: 0.7 };
        let p = FeaturePoint::new([0.2, 0.4, 0.6], [0.1, 0.1, 0.1]);
        assert_eq!(rbf_kernel(&p, &p, s), 1.0);
        let q = FeaturePoint::new([0.5, 0.4, 0.6], [0.1, 0.1, 0.1]);
        assert!((rbf_kernel(&q, &p, s) - (-0.5f64).exp()).abs() < 1e-12);
        let mut prev = 1.0;
        for step in 1..10 {
            let r = FeaturePoint::new([0.2, 0.4, 0.6], [0.1 + 0.05 * step as f64, 0.1, 0.1]);
            let v = rbf_kernel(&r, &p, s);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn single_entry_model() {
        let p = palette(vec![FeaturePoint::new([0.3; 3], [0.2; 3])]);
        let m = RbfModel::fit(&p).unwrap();
        assert_eq!(m.lambda, vec![1.0]);
        assert_eq!(pixel_weights(&FeaturePoint::new([0.9; 3], [0.0; 3]), &m), vec![1.0]);
    }

    #[test]
    fn lambda_matches_independent_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 2..9 {
            let p = random_palette(&mut rng, k);
            let m = RbfModel::fit(&p).unwrap();
            let gram: Vec<Vec<f64>> = (0..k)
                .map(|l| (0..k).map(|j| rbf_kernel(&p.entries[l], &p.entries[j], m.sigmas)).collect())
                .collect();
            let inv = gauss_jordan_inverse(&gram);
            for i in 0..k {
                for l in 0..k {
                    let exact: f64 = (0..k).map(|j| m.lambda_row(i)[j] * gram[l][j]).sum();
                    let want = if i == l { 1.0 } else { 0.0 };
                    assert!((exact - want).abs() < 1e-8);
                    assert!((m.lambda_row(i)[l] - inv[i][l]).abs() < 1e-6 * (1.0 + inv[i][l].abs()));
                }
            }
        }
    }

    #[test]
    fn mirrored_entries_give_permuted_lambda() {
        let a = FeaturePoint::new([0.2, 0.5, 0.5], [0.5; 3]);
        let b = FeaturePoint::new([0.8, 0.5, 0.5], [0.5; 3]);
        let c = FeaturePoint::new([0.5, 0.5, 0.5], [0.9, 0.5, 0.5]);
        let m1 = RbfModel::fit(&palette(vec![a, b, c])).unwrap();
        let m2 = RbfModel::fit(&palette(vec![b, a, c])).unwrap();
        let perm = [1, 0, 2];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m1.lambda_row(i)[j] - m2.lambda_row(perm[i])[perm[j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn near_duplicate_entries_trigger_ridge() {
        let a = FeaturePoint::new([0.5; 3], [0.5; 3]);
        let b = FeaturePoint::new([0.5, 0.5, 0.5 + 1e-9], [0.5; 3]);
        let c = FeaturePoint::new([0.1; 3], [0.9; 3]);
        let m = RbfModel::fit(&palette(vec![a, b, c])).unwrap();
        assert!(m.regularized);
        let w = pixel_weights(&FeaturePoint::new([0.4; 3], [0.6; 3]), &m);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9 && w.iter().all(|&v| v >= 0.0));
    }

    /// Scalar composition of kernel, interpolant, clamp and normalization.
    fn scalar_weights(x: &FeaturePoint, m: &RbfModel) -> Vec<f64> {
        let k = m.k();
        let mut f = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                let p = &m.palette.entries[j];
                let mut dc = 0.0;
                let mut ds = 0.0;
                for c in 0..3 {
                    dc += (x.color[c] - p.color[c]) * (x.color[c] - p.color[c]);
                    ds += (x.semantic[c] - p.semantic[c]) * (x.semantic[c] - p.semantic[c]);
                }
                let phi = (-dc / (2.0 * m.sigmas.color.powi(2))).exp() * (-ds / (2.0 * m.sigmas.semantic.powi(2))).exp();
                f[i] += m.lambda[i * k + j] * phi;
            }
            if f[i] < 0.0 {
                f[i] = 0.0;
            }
        }
        let s: f64 = f.iter().sum();
        if s <= 1e-12 {
            return vec![1.0 / k as f64; k];
        }
        f.iter().map(|v| v / s).collect()
    }

    #[test]
    fn weights_match_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_palette(&mut rng, 4);
        let m = RbfModel::fit(&p).unwrap();
        for _ in 0..200 {
            let x = FeaturePoint::from_array(std::array::from_fn(|_| rng.gen()));
            let got = pixel_weights(&x, &m);
            let want = scalar_weights(&x, &m);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        for (l, e) in p.entries.iter().enumerate() {
            let w = pixel_weights(e, &m);
            for (i, v) in w.iter().enumerate() {
                assert!((v - if i == l { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_image_single_entry_field() {
        let img = ImageRgb::filled(5, 4, [0.1, 0.2, 0.3]);
        let field = FeatureField::from_fn(5, 4, |_, _| [0.0; 3]);
        let m = RbfModel::fit(&palette(vec![FeaturePoint::new([0.1, 0.2, 0.3], [0.0; 3])])).unwrap();
        let wf = weight_field(&img, &field, &m).unwrap();
        assert!(wf.data.iter().all(|&v| v == 1.0));
        let png = image::load_from_memory(&wf.entry_png(0).unwrap()).unwrap().into_luma8();
        assert!(png.pixels().all(|p| p.0[0] == 255));
        assert!(wf.entry_png(1).is_err());
    }

    #[test]
    fn weight_field_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_palette(&mut rng, 5);
        let m = RbfModel::fit(&p).unwrap();
        let img = ImageRgb::from_fn(20, 10, |x, y| [x as f64 / 19.0, y as f64 / 9.0, 0.5]);
        let field = FeatureField::from_fn(20, 10, |x, y| [(x * y) as f64 / 171.0, 0.3, y as f64 / 9.0]);
        let wf = weight_field(&img, &field, &m).unwrap();
        for i in 0..200 {
            let r = wf.row(i);
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    proptest! {
        #[test]
        fn permuting_entries_permutes_weights(seed in 0u64..1000, x in proptest::array::uniform6(0.0f64..=1.0)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_palette(&mut rng, 4);
            let mut rev = p.clone();
            rev.entries.reverse();
            let (m1, m2) = (RbfModel::fit(&p).unwrap(), RbfModel::fit(&rev).unwrap());
            let x = FeaturePoint::from_array(x);
            let (w1, w2) = (pixel_weights(&x, &m1), pixel_weights(&x, &m2));
            for i in 0..4 {
                prop_assert!((w1[i] - w2[3 - i]).abs() < 1e-9);
            }
        }

        #[test]
        fn weights_are_lipschitz(seed in 0u64..1000, x in proptest::array::uniform6(0.05f64..0.95), axis in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = RbfModel::fit(&random_palette(&mut rng, 3)).unwrap();
            let eps = 1e-7;
            let base = FeaturePoint::from_array(x);
            let mut moved = x;
            moved[axis] += eps;
            // keep away from the clamp boundary where f_i changes sign
            let f = m.similarities(&base);
            prop_assume!(f.iter().all(|v| v.abs() > 1e-3));
            let (w0, w1) = (pixel_weights(&base, &m), pixel_weights(&FeaturePoint::from_array(moved), &m));
            let lipschitz = w0.iter().zip(&w1).map(|(a, b)| (a - b).abs() / eps).fold(0.0, f64::max);
            prop_assert!(lipschitz < 1e4, "empirical L = {}", lipschitz);
        }
    }
}
