//! Full-reference image quality: MSE, PSNR and luminance SSIM.

use serde::{Deserialize, Serialize};

use crate::features::gaussian_kernel;
use crate::imgio::ImageRgb;
use crate::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn same_size(a: &ImageRgb, b: &ImageRgb) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    same_size(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn luma(img: &ImageRgb) -> Vec<f64> {
    img.pixels()
        .map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect()
}

/// Separable valid-region filtering with the normalized 1-D window.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM of the luminance channel over all valid
/// 11×11 Gaussian (σ = 1.5) windows.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    same_size(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let taps = gaussian_kernel(SSIM_SIGMA);
    let taps = &taps[taps.len() / 2 - SSIM_WINDOW / 2..=taps.len() / 2 + SSIM_WINDOW / 2];
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / total).collect();

    let (ya, yb) = (luma(a), luma(b));
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&ya, w, h, &taps);
    let mu_b = filter_valid(&yb, w, h, &taps);
    let e_aa = filter_valid(&prod(&ya, &ya), w, h, &taps);
    let e_bb = filter_valid(&prod(&yb, &yb), w, h, &taps);
    let e_ab = filter_valid(&prod(&ya, &yb), w, h, &taps);

    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2));
    }
    Ok(sum / mu_a.len() as f64)
}

pub fn report(a: &ImageRgb, b: &ImageRgb) -> Result<MetricReport> {
    let m = mse(a, b)?;
    Ok(MetricReport {
        mse: m,
        psnr: psnr_from_mse(m),
        ssim: ssim(a, b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_examples() {
        let a = ImageRgb::filled(4, 4, [0.3, 0.6, 0.9]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let black = ImageRgb::filled(4, 4, [0.0; 3]);
        let white = ImageRgb::filled(4, 4, [1.0; 3]);
        assert_eq!(mse(&black, &white).unwrap(), 1.0);
        let half = ImageRgb::filled(4, 4, [0.5; 3]);
        let quarter = ImageRgb::filled(4, 4, [0.25; 3]);
        assert_eq!(mse(&half, &quarter).unwrap(), 0.0625);
        assert!(mse(&half, &ImageRgb::filled(3, 4, [0.5; 3])).is_err());
    }

    #[test]
    fn psnr_examples() {
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        let a = ImageRgb::filled(4, 4, [0.3; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn ssim_identity_and_constant_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = ImageRgb::from_fn(20, 16, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);

        let c = ImageRgb::filled(16, 16, [0.5; 3]);
        let d = ImageRgb::filled(16, 16, [0.6; 3]);
        let (ma, mb) = (0.5f64, 0.6f64);
        let want = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        assert!((ssim(&c, &d).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn ssim_symmetric_and_size_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ImageRgb::from_fn(15, 12, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let b = ImageRgb::from_fn(15, 12, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
        let small = ImageRgb::filled(10, 30, [0.5; 3]);
        assert!(matches!(ssim(&small, &small), Err(Error::Dimension(_))));
    }
}
