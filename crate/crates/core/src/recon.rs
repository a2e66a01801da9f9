//! Classical reconstructions from linear-array traces: delay-and-sum and
//! frequency-domain line reconstruction.

use std::path::Path;

use pat_tensor::{write_patn, Tensor};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm;
use crate::sim::{SensorArray, SensorData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Das,
    Kspace,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Das => "das",
            Algorithm::Kspace => "kspace",
        })
    }
}

/// Range mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

/// Image region in array coordinates: `top` cells below the array row,
/// `left` columns to the right of element 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Roi {
    /// The image region the array was placed over by the simulator.
    pub fn under_array(geometry: &SensorArray, height: usize) -> Roi {
        Roi {
            top: geometry.standoff_cells,
            left: 0,
            height,
            width: geometry.n_elements,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconImage {
    /// `[H,W]`, values in `[0, 1]`.
    pub pixels: Tensor<f64>,
    pub algorithm: Algorithm,
    pub normalization: Normalization,
}

impl ReconImage {
    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(write_patn(path, &self.pixels)?)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        pgm::write_pgm(path, &self.pixels)
    }
}

/// Maps values onto `[0, 1]`; a constant input maps to all zeros.
pub fn min_max_normalize(image: &Tensor<f64>) -> (Tensor<f64>, Normalization) {
    let (lo, hi) = image
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let norm = Normalization { min: lo, max: hi };
    if hi <= lo {
        return (Tensor::zeros(image.shape()), norm);
    }
    (image.map(|v| (v - lo) / (hi - lo)), norm)
}

fn check(data: &SensorData, roi: &Roi) -> Result<()> {
    let [n_el, n_t] = match data.traces.shape() {
        [a, b] => [*a, *b],
        s => return Err(Error::Invalid(format!("traces must be [elements, steps], got {s:?}"))),
    };
    if n_el != data.geometry.n_elements || n_el == 0 || n_t < 2 {
        return Err(Error::Invalid(format!(
            "traces {:?} do not match a {}-element array",
            data.traces.shape(),
            data.geometry.n_elements
        )));
    }
    if roi.height == 0 || roi.width == 0 {
        return Err(Error::Invalid("empty reconstruction region".into()));
    }
    if !(data.dt > 0.0 && data.c0 > 0.0 && data.dx > 0.0) {
        return Err(Error::Invalid("non-positive dt, c0 or dx".into()));
    }
    Ok(())
}

/// Unnormalized delay-and-sum image over `roi`.
pub fn das_raw(data: &SensorData, roi: &Roi) -> Result<Tensor<f64>> {
    check(data, roi)?;
    let n_el = data.n_elements();
    let n_t = data.n_steps();
    let last = (n_t - 1) as f64;
    // Delays in samples per cell of offset.
    let per_cell = data.dx / (data.c0 * data.dt);
    let mut out = vec![0.0; roi.height * roi.width];
    let mut any_inside = false;
    for a in 0..roi.height {
        let z = (roi.top + a) as f64;
        for b in 0..roi.width {
            let x = (roi.left + b) as f64;
            let mut acc = 0.0;
            for e in 0..n_el {
                let s = per_cell * ((x - e as f64).powi(2) + z * z).sqrt();
                if s > last {
                    continue;
                }
                any_inside = true;
                let j = s.floor() as usize;
                let f = s - j as f64;
                let tr = data.trace(e);
                acc += if j + 1 < n_t { tr[j] * (1.0 - f) + tr[j + 1] * f } else { tr[j] };
            }
            out[a * roi.width + b] = acc;
        }
    }
    if !any_inside {
        return Err(Error::RecordingTooShort { n_steps: n_t });
    }
    Ok(Tensor::new(&[roi.height, roi.width], out)?)
}

pub fn das_reconstruct(data: &SensorData, roi: &Roi) -> Result<ReconImage> {
    let (pixels, normalization) = min_max_normalize(&das_raw(data, roi)?);
    Ok(ReconImage {
        pixels,
        algorithm: Algorithm::Das,
        normalization,
    })
}

/// Spectrum of the sensor data on a `(ω, kx)` grid: `values[m·nk + j]`
/// holds frequency bin `m` (angular frequency `m·dω`, signed index
/// convention) and lateral wavenumber bin `j` (`j·dk`, signed).
#[derive(Debug, Clone, PartialEq)]
pub struct LineSpectrum {
    pub n_omega: usize,
    pub n_k: usize,
    pub d_omega: f64,
    pub dk: f64,
    pub values: Vec<Complex<f64>>,
}

fn signed(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// 1-D transforms along both axes of a row-major `[rows, cols]` buffer.
fn fft_2d(buf: &mut [Complex<f64>], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (fr, fc) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    fr.process(buf);
    let mut col = vec![Complex::default(); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = buf[r * cols + c];
        }
        fc.process(&mut col);
        for r in 0..rows {
            buf[r * cols + c] = col[r];
        }
    }
}

/// Half-cosine taper over the last 5% of samples, then even extension in
/// time and zero padding to a power of two, then the 2-D transform.
pub fn line_spectrum(data: &SensorData) -> Result<LineSpectrum> {
    check(data, &Roi { top: 0, left: 0, height: 1, width: 1 })?;
    let n_el = data.n_elements();
    let n_t = data.n_steps();
    let n_omega = (2 * n_t).next_power_of_two();
    let n_k = (2 * n_el).next_power_of_two();
    let taper_len = ((0.05 * n_t as f64).ceil() as usize).max(1);
    let start = n_t - taper_len;
    let taper = |j: usize| {
        if j < start {
            1.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * (j - start + 1) as f64 / taper_len as f64).cos())
        }
    };
    let mut buf = vec![Complex::default(); n_omega * n_k];
    for e in 0..n_el {
        for (j, &v) in data.trace(e).iter().enumerate() {
            let v = Complex::new(v * taper(j), 0.0);
            buf[j * n_k + e] = v;
            if j > 0 {
                buf[(n_omega - j) * n_k + e] = v;
            }
        }
    }
    fft_2d(&mut buf, n_omega, n_k, false);
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(LineSpectrum {
        n_omega,
        n_k,
        d_omega: two_pi / (n_omega as f64 * data.dt),
        dk: two_pi / (n_k as f64 * data.dx),
        values: buf,
    })
}

/// Maps a line spectrum onto the image wavenumber grid `(kz, kx)` with
/// `dkz = dω/c0`, using the dispersion relation `ω = c0·|k|` and the
/// Jacobian `c0²·|kz|/ω`. Bins with `ω < c0·|kx|` are discarded before
/// interpolating, and `ω = 0` maps to zero.
pub fn remap_to_wavenumbers(spec: &LineSpectrum, c0: f64) -> Vec<Complex<f64>> {
    let (nw, nk) = (spec.n_omega, spec.n_k);
    let mut src = spec.values.clone();
    for m in 0..nw {
        let w = signed(m, nw).abs() * spec.d_omega;
        for j in 0..nk {
            if w < c0 * (signed(j, nk) * spec.dk).abs() {
                src[m * nk + j] = Complex::default();
            }
        }
    }
    let dkz = spec.d_omega / c0;
    let half = (nw / 2) as f64;
    let mut out = vec![Complex::default(); nw * nk];
    for m in 0..nw {
        let kz = signed(m, nw) * dkz;
        for j in 0..nk {
            let kx = signed(j, nk) * spec.dk;
            let w = c0 * (kx * kx + kz * kz).sqrt();
            if w == 0.0 {
                continue;
            }
            let f = w / spec.d_omega;
            if f > half {
                continue;
            }
            let i0 = f.floor() as usize;
            let t = f - i0 as f64;
            let lo = src[i0 * nk + j];
            let hi = if t > 0.0 { src[((i0 + 1) % nw) * nk + j] } else { Complex::default() };
            out[m * nk + j] = (lo * (1.0 - t) + hi * t) * (c0 * c0 * kz.abs() / w);
        }
    }
    out
}

/// Unnormalized frequency-domain reconstruction over `roi`.
pub fn kspace_raw(data: &SensorData, roi: &Roi) -> Result<Tensor<f64>> {
    check(data, roi)?;
    if roi.left + roi.width > data.n_elements() {
        return Err(Error::Invalid(format!(
            "region columns {}..{} exceed the {}-element aperture",
            roi.left,
            roi.left + roi.width,
            data.n_elements()
        )));
    }
    let spec = line_spectrum(data)?;
    let (nw, nk) = (spec.n_omega, spec.n_k);
    let mut img = remap_to_wavenumbers(&spec, data.c0);
    fft_2d(&mut img, nw, nk, true);
    // Depth sample m sits at z = m·c0·dt.
    let per_cell = data.dx / (data.c0 * data.dt);
    let mut out = vec![0.0; roi.height * roi.width];
    for a in 0..roi.height {
        let z = (roi.top + a) as f64 * per_cell;
        let m = z.floor() as usize;
        let t = z - m as f64;
        if m + 1 >= nw / 2 {
            continue;
        }
        for b in 0..roi.width {
            let c = roi.left + b;
            out[a * roi.width + b] = img[m * nk + c].re * (1.0 - t) + img[(m + 1) * nk + c].re * t;
        }
    }
    Ok(Tensor::new(&[roi.height, roi.width], out)?)
}

pub fn kspace_line_reconstruct(data: &SensorData, roi: &Roi) -> Result<ReconImage> {
    let (pixels, normalization) = min_max_normalize(&kspace_raw(data, roi)?);
    Ok(ReconImage {
        pixels,
        algorithm: Algorithm::Kspace,
        normalization,
    })
}

pub fn reconstruct(algorithm: Algorithm, data: &SensorData, roi: &Roi) -> Result<ReconImage> {
    match algorithm {
        Algorithm::Das => das_reconstruct(data, roi),
        Algorithm::Kspace => kspace_line_reconstruct(data, roi),
    }
}
