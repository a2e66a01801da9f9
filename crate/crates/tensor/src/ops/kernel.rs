//! Register-blocked GEMM for the conv shapes `matrixmultiply` handles
//! poorly: few output rows or a short inner dimension, with the right
//! operand stored row-major. f32 runs on AVX-512 or AVX2 when the CPU has
//! them; everything else takes the portable loops.

use crate::element::Element;

const MR: usize = 4;
const NR: usize = 16;
/// Inner-dimension block of the intrinsic kernel.
const KC: usize = 128;
/// Column chunk of the intrinsic kernel, so a `KC × NC` panel of `b` stays in L2.
const NC: usize = 512;
/// Inner-dimension block of the `a·bᵀ` kernel.
const KD: usize = 512;

/// Strided operand: element `(i, j)` lives at `data[i·rs + j·cs]`.
#[derive(Clone, Copy)]
pub(crate) struct Strided<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

/// `c[i·ldc + j] = Σ_k a(i,k)·b[k·ldb + j] + beta·c[i·ldc + j]` for an
/// `m × n` result with inner extent `k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_rowmajor_b<T: Element>(
    m: usize,
    n: usize,
    k: usize,
    a: Strided<'_, T>,
    b: &[T],
    ldb: usize,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * a.rs + (k - 1) * a.cs < a.data.len());
    assert!(k == 0 || (k - 1) * ldb + n <= b.len());
    assert!((m - 1) * ldc + n <= c.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            if let (Some(ad), Some(bd), Some(cd)) = (as_f32(a.data), as_f32(b), as_f32_mut(c)) {
                let af = Strided { data: ad, rs: a.rs, cs: a.cs };
                let beta = beta.as_f64() as f32;
                if std::is_x86_feature_detected!("avx512f") {
                    // SAFETY: features detected above; extents asserted on entry.
                    unsafe { avx512::kernel_f32(m, n, k, af, bd, ldb, beta, cd, ldc) };
                } else {
                    // SAFETY: as above.
                    unsafe { avx::kernel_f32(m, n, k, af, bd, ldb, beta, cd, ldc) };
                }
                return;
            }
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { blocked_fma(m, n, k, a, b, ldb, beta, c, ldc) };
            return;
        }
    }
    blocked(m, n, k, a, b, ldb, beta, c, ldc);
}

fn as_f32<T: Element>(s: &[T]) -> Option<&[f32]> {
    if T::DTYPE == crate::element::DType::F32 {
        // SAFETY: T is f32 (checked through its dtype tag), so the layouts agree.
        Some(unsafe { std::slice::from_raw_parts(s.as_ptr() as *const f32, s.len()) })
    } else {
        None
    }
}

fn as_f32_mut<T: Element>(s: &mut [T]) -> Option<&mut [f32]> {
    if T::DTYPE == crate::element::DType::F32 {
        // SAFETY: as in `as_f32`.
        Some(unsafe { std::slice::from_raw_parts_mut(s.as_mut_ptr() as *mut f32, s.len()) })
    } else {
        None
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use super::{avx, Strided, KC, KD, NC};
    use std::arch::x86_64::*;

    const MR: usize = 8;
    const NR: usize = 32;

    /// Full 8×32 tiles in 512-bit registers; edges go to the AVX2 kernel.
    #[target_feature(enable = "avx512f,avx2,fma")]
    #[allow(clippy::too_many_arguments)]
    pub(super) unsafe fn kernel_f32(
        m: usize,
        n: usize,
        k: usize,
        a: Strided<'_, f32>,
        b: &[f32],
        ldb: usize,
        beta: f32,
        c: &mut [f32],
        ldc: usize,
    ) {
        let (mf, nf) = (m - m % MR, n - n % NR);
        let bp = b.as_ptr();
        let ap = a.data.as_ptr();
        let cp = c.as_mut_ptr();
        let vbeta = _mm512_set1_ps(beta);
        for jc in (0..nf).step_by(NC) {
            let jend = (jc + NC).min(nf);
            let mut k0 = 0;
            while k0 < k.max(1) {
                let k1 = (k0 + KC).min(k);
                let first = k0 == 0;
                for j0 in (jc..jend).step_by(NR) {
                    for i0 in (0..mf).step_by(MR) {
                        let mut acc = [_mm512_setzero_ps(); 2 * MR];
                        for kk in k0..k1 {
                            let brow = bp.add(kk * ldb + j0);
                            let b0 = _mm512_loadu_ps(brow);
                            let b1 = _mm512_loadu_ps(brow.add(16));
                            let abase = ap.add(kk * a.cs + i0 * a.rs);
                            for r in 0..MR {
                                let av = _mm512_set1_ps(*abase.add(r * a.rs));
                                acc[2 * r] = _mm512_fmadd_ps(av, b0, acc[2 * r]);
                                acc[2 * r + 1] = _mm512_fmadd_ps(av, b1, acc[2 * r + 1]);
                            }
                        }
                        for r in 0..MR {
                            let out = cp.add((i0 + r) * ldc + j0);
                            let (mut v0, mut v1) = (acc[2 * r], acc[2 * r + 1]);
                            if !first {
                                v0 = _mm512_add_ps(_mm512_loadu_ps(out), v0);
                                v1 = _mm512_add_ps(_mm512_loadu_ps(out.add(16)), v1);
                            } else if beta != 0.0 {
                                v0 = _mm512_fmadd_ps(vbeta, _mm512_loadu_ps(out), v0);
                                v1 = _mm512_fmadd_ps(vbeta, _mm512_loadu_ps(out.add(16)), v1);
                            }
                            _mm512_storeu_ps(out, v0);
                            _mm512_storeu_ps(out.add(16), v1);
                        }
                    }
                }
                k0 = k1.max(k0 + 1);
            }
        }
        if nf < n {
            avx::kernel_f32(m, n - nf, k, a, &b[nf..], ldb, beta, &mut c[nf..], ldc);
        }
        if mf < m && nf > 0 {
            let a_tail = Strided {
                data: &a.data[mf * a.rs..],
                rs: a.rs,
                cs: a.cs,
            };
            avx::kernel_f32(m - mf, nf, k, a_tail, b, ldb, beta, &mut c[mf * ldc..], ldc);
        }
    }

    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn abt_tile<const TM: usize, const TN: usize>(
        i0: usize,
        j0: usize,
        k0: usize,
        k1: usize,
        ap: *const f32,
        lda: usize,
        bp: *const f32,
        ldb: usize,
        c: &mut [f32],
        ldc: usize,
    ) {
        let kv = k0 + (k1 - k0) / 16 * 16;
        let mut acc = [[_mm512_setzero_ps(); TN]; TM];
        let mut kk = k0;
        while kk < kv {
            let mut bv = [_mm512_setzero_ps(); TN];
            for (q, v) in bv.iter_mut().enumerate() {
                *v = _mm512_loadu_ps(bp.add((j0 + q) * ldb + kk));
            }
            for (r, acc_r) in acc.iter_mut().enumerate() {
                let av = _mm512_loadu_ps(ap.add((i0 + r) * lda + kk));
                for q in 0..TN {
                    acc_r[q] = _mm512_fmadd_ps(av, bv[q], acc_r[q]);
                }
            }
            kk += 16;
        }
        for (r, acc_r) in acc.iter().enumerate() {
            for (q, &v) in acc_r.iter().enumerate() {
                let (i, j) = (i0 + r, j0 + q);
                let mut s = _mm512_reduce_add_ps(v);
                for t in kv..k1 {
                    s += *ap.add(i * lda + t) * *bp.add(j * ldb + t);
                }
                c[i * ldc + j] += s;
            }
        }
    }

    /// Row products in 4×6 tiles of 512-bit registers.
    #[target_feature(enable = "avx512f,avx2,fma")]
    #[allow(clippy::too_many_arguments)]
    pub(super) unsafe fn abt_f32(
        m: usize,
        n: usize,
        k: usize,
        a: &[f32],
        lda: usize,
        b: &[f32],
        ldb: usize,
        c: &mut [f32],
        ldc: usize,
    ) {
        let (ap, bp) = (a.as_ptr(), b.as_ptr());
        for k0 in (0..k).step_by(KD) {
            let k1 = (k0 + KD).min(k);
            for i0 in (0..m).step_by(4) {
                let mut j0 = 0;
                while j0 < n {
                    let tn = (n - j0).min(6);
                    macro_rules! rows {
                        ($tn:literal) => {
                            match (m - i0).min(4) {
                                4 => abt_tile::<4, $tn>(i0, j0, k0, k1, ap, lda, bp, ldb, c, ldc),
                                3 => abt_tile::<3, $tn>(i0, j0, k0, k1, ap, lda, bp, ldb, c, ldc),
                                2 => abt_tile::<2, $tn>(i0, j0, k0, k1, ap, lda, bp, ldb, c, ldc),
                                _ => abt_tile::<1, $tn>(i0, j0, k0, k1, ap, lda, bp, ldb, c, ldc),
                            }
                        };
                    }
                    match tn {
                        6 => rows!(6),
                        5 => rows!(5),
                        4 => rows!(4),
                        3 => rows!(3),
                        2 => rows!(2),
                        _ => rows!(1),
                    }
                    j0 += tn;
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx {
    use super::{blocked, Strided, KC, KD, MR, NC, NR};
    use std::arch::x86_64::*;

    /// Full 4×16 tiles with AVX2 FMA; ragged edges use the portable loop.
    #[target_feature(enable = "avx2,fma")]
    #[allow(clippy::too_many_arguments)]
    pub(super) unsafe fn kernel_f32(
        m: usize,
        n: usize,
        k: usize,
        a: Strided<'_, f32>,
        b: &[f32],
        ldb: usize,
        beta: f32,
        c: &mut [f32],
        ldc: usize,
    ) {
        let (mf, nf) = (m - m % MR, n - n % NR);
        let bp = b.as_ptr();
        let ap = a.data.as_ptr();
        let cp = c.as_mut_ptr();
        let vbeta = _mm256_set1_ps(beta);
        for jc in (0..nf).step_by(NC) {
        let jend = (jc + NC).min(nf);
        let mut k0 = 0;
        while k0 < k.max(1) {
            let k1 = (k0 + KC).min(k);
            // The first inner block applies beta, later ones accumulate.
            let first = k0 == 0;
            for j0 in (jc..jend).step_by(NR) {
                for i0 in (0..mf).step_by(MR) {
                    let mut acc = [_mm256_setzero_ps(); 8];
                    for kk in k0..k1 {
                        let brow = bp.add(kk * ldb + j0);
                        let b0 = _mm256_loadu_ps(brow);
                        let b1 = _mm256_loadu_ps(brow.add(8));
                        let abase = ap.add(kk * a.cs + i0 * a.rs);
                        for r in 0..MR {
                            let av = _mm256_broadcast_ss(&*abase.add(r * a.rs));
                            acc[2 * r] = _mm256_fmadd_ps(av, b0, acc[2 * r]);
                            acc[2 * r + 1] = _mm256_fmadd_ps(av, b1, acc[2 * r + 1]);
                        }
                    }
                    for r in 0..MR {
                        let out = cp.add((i0 + r) * ldc + j0);
                        let (mut v0, mut v1) = (acc[2 * r], acc[2 * r + 1]);
                        if !first {
                            v0 = _mm256_add_ps(_mm256_loadu_ps(out), v0);
                            v1 = _mm256_add_ps(_mm256_loadu_ps(out.add(8)), v1);
                        } else if beta != 0.0 {
                            v0 = _mm256_fmadd_ps(vbeta, _mm256_loadu_ps(out), v0);
                            v1 = _mm256_fmadd_ps(vbeta, _mm256_loadu_ps(out.add(8)), v1);
                        }
                        _mm256_storeu_ps(out, v0);
                        _mm256_storeu_ps(out.add(8), v1);
                    }
                }
            }
            k0 = k1.max(k0 + 1);
        }
        }
        // Ragged right columns over all rows, then ragged bottom rows.
        if nf < n {
            let sub = &mut c[nf..];
            blocked(m, n - nf, k, a, &b[nf..], ldb, beta, sub, ldc);
        }
        if mf < m && nf > 0 {
            let a_tail = Strided {
                data: &a.data[mf * a.rs..],
                rs: a.rs,
                cs: a.cs,
            };
            blocked(m - mf, nf, k, a_tail, b, ldb, beta, &mut c[mf * ldc..], ldc);
        }
    }

    #[inline(always)]
    unsafe fn hsum(v: __m256) -> f32 {
        let s = _mm_add_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
        let s = _mm_add_ps(s, _mm_movehl_ps(s, s));
        let s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
        _mm_cvtss_f32(s)
    }

    /// One `TM × TN` tile of row products over `[k0, k1)`.
    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn abt_tile<const TM: usize, const TN: usize>(
        i0: usize,
        j0: usize,
        k0: usize,
        k1: usize,
        ap: *const f32,
        lda: usize,
        bp: *const f32,
        ldb: usize,
        c: &mut [f32],
        ldc: usize,
    ) {
        let kv = k0 + (k1 - k0) / 8 * 8;
        let mut acc = [[_mm256_setzero_ps(); TN]; TM];
        let mut kk = k0;
        while kk < kv {
            let mut bv = [_mm256_setzero_ps(); TN];
            for (q, v) in bv.iter_mut().enumerate() {
                *v = _mm256_loadu_ps(bp.add((j0 + q) * ldb + kk));
            }
            for (r, acc_r) in acc.iter_mut().enumerate() {
                let av = _mm256_loadu_ps(ap.add((i0 + r) * lda + kk));
                for q in 0..TN {
                    acc_r[q] = _mm256_fmadd_ps(av, bv[q], acc_r[q]);
                }
            }
            kk += 8;
        }
        for (r, acc_r) in acc.iter().enumerate() {
            for (q, &v) in acc_r.iter().enumerate() {
                let (i, j) = (i0 + r, j0 + q);
                let mut s = hsum(v);
                for t in kv..k1 {
                    s += *ap.add(i * lda + t) * *bp.add(j * ldb + t);
                }
                c[i * ldc + j] += s;
            }
        }
    }

    /// Row products in 4×3 tiles, blocked along the inner extent.
    #[target_feature(enable = "avx2,fma")]
    #[allow(clippy::too_many_arguments)]
    pub(super) unsafe fn abt_f32(
        m: usize,
        n: usize,
        k: usize,
        a: &[f32],
        lda: usize,
        b: &[f32],
        ldb: usize,
        c: &mut [f32],
        ldc: usize,
    ) {
        let (ap, bp) = (a.as_ptr(), b.as_ptr());
        for k0 in (0..k).step_by(KD) {
            let k1 = (k0 + KD).min(k);
            for i0 in (0..m).step_by(4) {
                let mut j0 = 0;
                while j0 < n {
                    let tn = (n - j0).min(3);
                    macro_rules! rows {
                        ($tn:literal) => {
                            match (m - i0).min(4) {
                                4 => abt_tile::<4, $tn>(i0, j0, k0, k1, ap, lda, bp, ldb, c, ldc),
                                3 => abt_tile::<3, $tn>(i0, j0, k0, k1, ap, lda, bp, ldb, c, ldc),
                                2 => abt_tile::<2, $tn>(i0, j0, k0, k1, ap, lda, bp, ldb, c, ldc),
                                _ => abt_tile::<1, $tn>(i0, j0, k0, k1, ap, lda, bp, ldb, c, ldc),
                            }
                        };
                    }
                    match tn {
                        3 => rows!(3),
                        2 => rows!(2),
                        _ => rows!(1),
                    }
                    j0 += tn;
                }
            }
        }
    }
}

/// `c[i·ldc + j] += Σ_k a[i·lda + k]·b[j·ldb + k]`: products of rows, for
/// weight gradients whose inner extent is a whole feature map.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_abt_acc<T: Element>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * lda + k <= a.len());
    assert!((n - 1) * ldb + k <= b.len());
    assert!((m - 1) * ldc + n <= c.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            if let (Some(ad), Some(bd), Some(cd)) = (as_f32(a), as_f32(b), as_f32_mut(c)) {
                if std::is_x86_feature_detected!("avx512f") {
                    // SAFETY: features detected above; extents asserted on entry.
                    unsafe { avx512::abt_f32(m, n, k, ad, lda, bd, ldb, cd, ldc) };
                } else {
                    // SAFETY: as above.
                    unsafe { avx::abt_f32(m, n, k, ad, lda, bd, ldb, cd, ldc) };
                }
                return;
            }
        }
    }
    for i in 0..m {
        let ar = &a[i * lda..i * lda + k];
        for j in 0..n {
            let br = &b[j * ldb..j * ldb + k];
            let dot = ar.iter().zip(br).fold(T::zero(), |s, (&x, &y)| s + x * y);
            c[i * ldc + j] = c[i * ldc + j] + dot;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn blocked_fma<T: Element>(
    m: usize,
    n: usize,
    k: usize,
    a: Strided<'_, T>,
    b: &[T],
    ldb: usize,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    blocked(m, n, k, a, b, ldb, beta, c, ldc);
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn blocked<T: Element>(
    m: usize,
    n: usize,
    k: usize,
    a: Strided<'_, T>,
    b: &[T],
    ldb: usize,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    let mut j0 = 0;
    while j0 < n {
        let nb = NR.min(n - j0);
        let mut i0 = 0;
        while i0 < m {
            let mb = MR.min(m - i0);
            let mut acc = [[T::zero(); NR]; MR];
            if nb == NR && mb == MR {
                for kk in 0..k {
                    let row: &[T; NR] = b[kk * ldb + j0..kk * ldb + j0 + NR].try_into().expect("NR-wide row");
                    let base = kk * a.cs + i0 * a.rs;
                    for (r, acc_r) in acc.iter_mut().enumerate() {
                        let av = a.data[base + r * a.rs];
                        for (x, &bv) in acc_r.iter_mut().zip(row) {
                            *x = av.mul_add(bv, *x);
                        }
                    }
                }
            } else {
                for kk in 0..k {
                    let row = &b[kk * ldb + j0..kk * ldb + j0 + nb];
                    for (r, acc_r) in acc.iter_mut().enumerate().take(mb) {
                        let av = a.data[(i0 + r) * a.rs + kk * a.cs];
                        for (x, &bv) in acc_r.iter_mut().zip(row) {
                            *x = av.mul_add(bv, *x);
                        }
                    }
                }
            }
            for (r, acc_r) in acc.iter().enumerate().take(mb) {
                let out = &mut c[(i0 + r) * ldc + j0..(i0 + r) * ldc + j0 + nb];
                if beta == T::zero() {
                    out.copy_from_slice(&acc_r[..nb]);
                } else {
                    for (o, &v) in out.iter_mut().zip(acc_r) {
                        *o = beta.mul_add(*o, v);
                    }
                }
            }
            i0 += MR;
        }
        j0 += NR;
    }
}
