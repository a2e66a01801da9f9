//! Image quality metrics on single-channel images with unit dynamic range.

use pat_tensor::Tensor;

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// PSNR reported when the images agree to within `MIN_MSE`.
pub const PSNR_CAP: f64 = 99.0;
const MIN_MSE: f64 = 1e-10;

/// `(H, W, pixels)` of a single image stored as `[H,W]`, `[1,H,W]` or
/// `[1,1,H,W]`.
fn plane(t: &Tensor<f64>) -> Result<(usize, usize, &[f64])> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::Architecture(format!("expected a single image, got shape {s:?}")));
    }
    Ok((s[s.len() - 2], s[s.len() - 1], t.data()))
}

fn pair<'a>(a: &'a Tensor<f64>, b: &'a Tensor<f64>) -> Result<(usize, usize, &'a [f64], &'a [f64])> {
    let (h, w, pa) = plane(a)?;
    let (hb, wb, pb) = plane(b)?;
    if (h, w) != (hb, wb) {
        return Err(Error::Architecture(format!("image sizes differ: {h}×{w} vs {hb}×{wb}")));
    }
    Ok((h, w, pa, pb))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let centre = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - centre;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable "valid" filtering: output is `(h−10) × (w−10)`.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = taps.iter().zip(&x[y * w + x0..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = taps.iter().enumerate().map(|(k, t)| t * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), K₁ = 0.01,
/// K₂ = 0.03 and L = 1, averaged over fully overlapping window positions.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    let (h, w, pa, pb) = pair(a, b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Architecture(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let taps = gaussian_taps();
    let f = |v: &[f64]| filter_valid(v, h, w, &taps);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (mu_a, mu_b) = (f(pa), f(pb));
    let (saa, sbb, sab) = (f(&prod(pa, pa)), f(&prod(pb, pb)), f(&prod(pa, pb)));
    let (c1, c2) = (K1 * K1, K2 * K2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// `10·log₁₀(1/MSE)` for peak 1, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    let (_, _, pa, pb) = pair(a, b)?;
    let mse = pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / pa.len() as f64;
    if mse < MIN_MSE {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}
