//! Plane-wise 2-D FFT kernels on split real/imaginary buffers.
//!
//! Forward transforms are unnormalized; inverse transforms carry the
//! 1/(H·W) factor.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::element::Element;

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// Transforms `planes` consecutive H×W planes. `im` of `None` means a real
/// input. Returns the (real, imaginary) output buffers.
pub fn fft2_planes<T: Element>(
    re: &[T],
    im: Option<&[T]>,
    planes: usize,
    h: usize,
    w: usize,
    inverse: bool,
) -> (Vec<T>, Vec<T>) {
    let n = h * w;
    assert_eq!(re.len(), planes * n);
    let mut planner = FftPlanner::<T>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let scratch_len = row_fft
        .get_inplace_scratch_len()
        .max(col_fft.get_inplace_scratch_len());
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); scratch_len];
    let mut buf: Vec<Complex<T>> = match im {
        Some(im) => re.iter().zip(im).map(|(&r, &i)| Complex::new(r, i)).collect(),
        None => re.iter().map(|&r| Complex::new(r, T::zero())).collect(),
    };
    let mut column = vec![Complex::new(T::zero(), T::zero()); h];
    for plane in buf.chunks_exact_mut(n) {
        for row in plane.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
        for x in 0..w {
            for (y, c) in column.iter_mut().enumerate() {
                *c = plane[y * w + x];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for (y, c) in column.iter().enumerate() {
                plane[y * w + x] = *c;
            }
        }
    }
    let scale = if inverse {
        T::one() / T::cast_f64(n as f64)
    } else {
        T::one()
    };
    let mut out_re = Vec::with_capacity(buf.len());
    let mut out_im = Vec::with_capacity(buf.len());
    for c in buf {
        out_re.push(c.re * scale);
        out_im.push(c.im * scale);
    }
    (out_re, out_im)
}

/// Quadrant swap of every H×W plane. `inverse` undoes the forward shift
/// (the two coincide for even extents).
pub fn fftshift_planes<T: Copy>(data: &[T], h: usize, w: usize, inverse: bool) -> Vec<T> {
    let n = h * w;
    let (sy, sx) = if inverse {
        (h - h / 2, w - w / 2)
    } else {
        (h / 2, w / 2)
    };
    let mut out = data.to_vec();
    for (src, dst) in data.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        for y in 0..h {
            let ty = (y + sy) % h;
            for x in 0..w {
                dst[ty * w + (x + sx) % w] = src[y * w + x];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_roundtrip_odd_and_even() {
        for (h, w) in [(4, 4), (3, 5), (1, 2)] {
            let v: Vec<usize> = (0..h * w).collect();
            let s = fftshift_planes(&v, h, w, false);
            assert_eq!(fftshift_planes(&s, h, w, true), v);
        }
        let s = fftshift_planes(&[0, 1, 2, 3], 1, 4, false);
        assert_eq!(s, vec![2, 3, 0, 1]);
    }

    #[test]
    fn power_of_two() {
        assert!(is_power_of_two(1) && is_power_of_two(64));
        assert!(!is_power_of_two(0) && !is_power_of_two(48));
    }
}
