//! Convolution kernels for cross-correlation and the 2×2, stride-2
//! transpose convolution used for decoder upsampling.
//!
//! Stride-1 convolutions run one GEMM per kernel tap over a zero-padded
//! copy of the input. Output rows are computed at the padded width, so each
//! tap is a plain offset into the padded planes; the extra columns are
//! dropped afterwards. Other strides go through im2col.

use crate::element::{gemm, Element, MatRef};
use crate::ops::kernel::{gemm_abt_acc, gemm_rowmajor_b, Strided};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `(extent + 2·pad − k) / stride + 1`, rejecting non-integral results.
pub fn conv2d_output_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = extent + 2 * pad;
    if stride == 0 || k == 0 || padded < k || !(padded - k).is_multiple_of(stride) {
        return Err(TensorError::NonIntegralExtent {
            op: "conv2d",
            detail: format!("extent {extent}, kernel {k}, stride {stride}, pad {pad}"),
        });
    }
    Ok((padded - k) / stride + 1)
}

/// Target size, in elements, of one block of im2col columns.
const COL_BLOCK_ELEMS: usize = 1 << 18;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new<T: Element>(
        x: &Tensor<T>,
        w: &Tensor<T>,
        b: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (batch, cin, h, wd) = x.dims4()?;
        let (cout, wcin, kh, kw) = w.dims4()?;
        if wcin != cin {
            return Err(TensorError::shape(
                "conv2d",
                format!("input {:?} has {cin} channels, weight {:?} expects {wcin}", x.shape(), w.shape()),
            ));
        }
        if let Some(b) = b {
            if b.shape() != [cout] {
                return Err(TensorError::shape(
                    "conv2d",
                    format!("bias {:?} does not match {cout} output channels", b.shape()),
                ));
            }
        }
        let ho = conv2d_output_extent(h, kh, stride, pad)?;
        let wo = conv2d_output_extent(wd, kw, stride, pad)?;
        Ok(ConvGeom {
            batch,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn shifted(&self) -> bool {
        self.stride == 1 && !self.is_pointwise()
    }

    /// Padded width, which is also the row pitch of wide outputs.
    fn wp(&self) -> usize {
        self.w + 2 * self.pad
    }

    fn padded_plane(&self) -> usize {
        (self.h + 2 * self.pad) * self.wp()
    }

    /// Length of one sample's padded input; the slack lets the last tap
    /// read a full wide row past the final plane.
    fn padded_len(&self) -> usize {
        self.cin * self.padded_plane() + self.kw
    }

    fn wide_len(&self) -> usize {
        self.ho * self.wp()
    }

    /// Weights regrouped per tap as `[tap, cin, cout]` (`by_cin`) or
    /// `[tap, cout, cin]`, so a GEMM tile reads neighbouring entries.
    fn pack_taps<T: Element>(&self, w: &[T], by_cin: bool) -> Vec<T> {
        let taps = self.kh * self.kw;
        let mut out = vec![T::zero(); w.len()];
        for co in 0..self.cout {
            for ci in 0..self.cin {
                for tap in 0..taps {
                    let at = if by_cin {
                        (tap * self.cin + ci) * self.cout + co
                    } else {
                        (tap * self.cout + co) * self.cin + ci
                    };
                    out[at] = w[(co * self.cin + ci) * taps + tap];
                }
            }
        }
        out
    }

    fn pad_into<T: Element>(&self, xs: &[T], dst: &mut [T]) {
        let (wp, plane) = (self.wp(), self.padded_plane());
        for ci in 0..self.cin {
            for y in 0..self.h {
                let at = ci * plane + (y + self.pad) * wp + self.pad;
                let src = &xs[(ci * self.h + y) * self.w..(ci * self.h + y + 1) * self.w];
                dst[at..at + self.w].copy_from_slice(src);
            }
        }
    }

    /// Valid output columns `[lo, hi)` for kernel column `kj`.
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let mut lo = 0;
        while lo < self.wo && (lo * self.stride + kj) < self.pad {
            lo += 1;
        }
        let mut hi = lo;
        while hi < self.wo && hi * self.stride + kj < self.pad + self.w {
            hi += 1;
        }
        (lo, hi)
    }

    /// Output rows per im2col block, sized so a block of columns stays
    /// cache resident.
    fn rows_per_block(&self) -> usize {
        (COL_BLOCK_ELEMS / (self.k() * self.wo).max(1)).clamp(1, self.ho)
    }

    /// Columns for output rows `[r0, r1)`: row `(ci, ki, kj)` of the block
    /// holds `(r1 − r0)·wo` entries.
    fn im2col<T: Element>(&self, x: &[T], cols: &mut [T], r0: usize, r1: usize) {
        let pc = (r1 - r0) * self.wo;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((ci * self.kh + ki) * self.kw + kj) * pc;
                    let dst = &mut cols[row..row + pc];
                    let (lo, hi) = self.col_range(kj);
                    for oh in r0..r1 {
                        let out = &mut dst[(oh - r0) * self.wo..(oh - r0 + 1) * self.wo];
                        let iy = (oh * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize || lo >= hi {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        out[..lo].fill(T::zero());
                        out[hi..].fill(T::zero());
                        for (ow, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
                            *o = src[ow * self.stride + kj - self.pad];
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Element>(&self, cols: &[T], dx: &mut [T], r0: usize, r1: usize) {
        let pc = (r1 - r0) * self.wo;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((ci * self.kh + ki) * self.kw + kj) * pc;
                    let src = &cols[row..row + pc];
                    let (lo, hi) = self.col_range(kj);
                    for oh in r0..r1 {
                        let iy = (oh * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let seg = &src[(oh - r0) * self.wo..(oh - r0 + 1) * self.wo];
                        for (ow, &v) in seg.iter().enumerate().take(hi).skip(lo) {
                            let ix = ow * self.stride + kj - self.pad;
                            dst[ix] = dst[ix] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x [B,Cin,H,W]` with `w [Cout,Cin,kh,kw]`.
pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, w, b, stride, pad)?;
    Ok(conv2d_forward_geom(&g, x.data(), w.data(), b.map(|b| b.data())))
}

pub(crate) fn conv2d_forward_geom<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
) -> Tensor<T> {
    let (k, p) = (g.k(), g.p());
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); g.batch * g.cout * p];
    let rows = g.rows_per_block();
    let im2col = !g.is_pointwise() && !g.shifted();
    let mut cols = if im2col { vec![T::zero(); k * rows * g.wo] } else { Vec::new() };
    let (mut xpad, mut wide, wpack) = if g.shifted() {
        let wpack = g.pack_taps(w, true);
        (vec![T::zero(); g.padded_len()], vec![T::zero(); g.cout * g.wide_len()], wpack)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    let beta = if b.is_some() { T::one() } else { T::zero() };
    for n in 0..g.batch {
        let xs = &x[n * in_len..(n + 1) * in_len];
        let os = &mut out[n * g.cout * p..(n + 1) * g.cout * p];
        if let Some(b) = b {
            for (co, chunk) in os.chunks_exact_mut(p).enumerate() {
                chunk.fill(b[co]);
            }
        }
        if g.is_pointwise() {
            gemm_rowmajor_b(g.cout, p, k, Strided { data: w, rs: k, cs: 1 }, xs, p, beta, os, p);
            continue;
        }
        if g.shifted() {
            shifted_forward(g, xs, &wpack, os, &mut xpad, &mut wide, b.is_some());
            continue;
        }
        for r0 in (0..g.ho).step_by(rows) {
            let r1 = (r0 + rows).min(g.ho);
            let pc = (r1 - r0) * g.wo;
            g.im2col(xs, &mut cols, r0, r1);
            let wm = Strided { data: w, rs: k, cs: 1 };
            gemm_rowmajor_b(g.cout, pc, k, wm, &cols[..k * pc], pc, beta, &mut os[r0 * g.wo..], p);
        }
    }
    Tensor::new(&[g.batch, g.cout, g.ho, g.wo], out).expect("conv output shape")
}

/// One sample of a stride-1 convolution; `os` already holds the bias when
/// `bias` is set.
fn shifted_forward<T: Element>(
    g: &ConvGeom,
    xs: &[T],
    wpack: &[T],
    os: &mut [T],
    xpad: &mut [T],
    wide: &mut [T],
    bias: bool,
) {
    let (wp, n) = (g.wp(), g.wide_len());
    g.pad_into(xs, xpad);
    for co in 0..g.cout {
        let fill = if bias { os[co * g.p()] } else { T::zero() };
        wide[co * n..(co + 1) * n].fill(fill);
    }
    for ki in 0..g.kh {
        for kj in 0..g.kw {
            let tap = ki * g.kw + kj;
            let a = Strided { data: &wpack[tap * g.cin * g.cout..], rs: 1, cs: g.cout };
            let off = ki * wp + kj;
            gemm_rowmajor_b(g.cout, n, g.cin, a, &xpad[off..], g.padded_plane(), T::one(), wide, n);
        }
    }
    for co in 0..g.cout {
        for y in 0..g.ho {
            let src = &wide[co * n + y * wp..co * n + y * wp + g.wo];
            os[(co * g.ho + y) * g.wo..(co * g.ho + y + 1) * g.wo].copy_from_slice(src);
        }
    }
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (k, p) = (g.k(), g.p());
    let in_len = g.cin * g.h * g.w;
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![T::zero(); w.len()]);
    let mut db = need.2.then(|| vec![T::zero(); g.cout]);
    let rows = g.rows_per_block();
    let im2col = !g.is_pointwise() && !g.shifted();
    let mut cols = if im2col { vec![T::zero(); k * rows * g.wo] } else { Vec::new() };
    let mut shift = g.shifted().then(|| ShiftScratch::new(g, w, need.1));
    for n in 0..g.batch {
        let xs = &x[n * in_len..(n + 1) * in_len];
        let ds = &dout[n * g.cout * p..(n + 1) * g.cout * p];
        if let Some(db) = db.as_mut() {
            for (co, chunk) in ds.chunks_exact(p).enumerate() {
                db[co] = chunk.iter().fold(db[co], |a, &v| a + v);
            }
        }
        if g.is_pointwise() {
            if let Some(dw) = dw.as_mut() {
                gemm(MatRef::new(ds, g.cout, p), MatRef::new(xs, k, p).t(), T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[n * in_len..(n + 1) * in_len];
                gemm(MatRef::new(w, g.cout, k).t(), MatRef::new(ds, g.cout, p), T::one(), dxs);
            }
            continue;
        }
        if let Some(sc) = shift.as_mut() {
            let dxs = dx.as_mut().map(|dx| &mut dx[n * in_len..(n + 1) * in_len]);
            sc.sample(g, xs, ds, dxs);
            continue;
        }
        for r0 in (0..g.ho).step_by(rows) {
            let r1 = (r0 + rows).min(g.ho);
            let pc = (r1 - r0) * g.wo;
            let d_block = MatRef::strided(&ds[r0 * g.wo..], g.cout, pc, p);
            if let Some(dw) = dw.as_mut() {
                g.im2col(xs, &mut cols, r0, r1);
                gemm(d_block, MatRef::new(&cols[..k * pc], k, pc).t(), T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[n * in_len..(n + 1) * in_len];
                let wt = Strided { data: w, rs: 1, cs: k };
                gemm_rowmajor_b(k, pc, g.cout, wt, &ds[r0 * g.wo..], p, T::zero(), &mut cols[..k * pc], pc);
                g.col2im_add(&cols, dxs, r0, r1);
            }
        }
    }
    if let (Some(sc), Some(dw)) = (shift, dw.as_mut()) {
        sc.finish_dw(g, dw);
    }
    ConvGrads { dx, dw, db }
}

/// Buffers for the stride-1 backward pass, reused across the batch.
struct ShiftScratch<T> {
    xpad: Vec<T>,
    dwide: Vec<T>,
    dxpad: Vec<T>,
    /// Weights as `[tap, cout, cin]`.
    wpack: Vec<T>,
    /// Weight gradient laid out `[tap, cout, cin]`.
    dw_taps: Option<Vec<T>>,
}

impl<T: Element> ShiftScratch<T> {
    fn new(g: &ConvGeom, w: &[T], need_dw: bool) -> Self {
        ShiftScratch {
            wpack: g.pack_taps(w, false),
            xpad: vec![T::zero(); g.padded_len()],
            dwide: vec![T::zero(); g.cout * g.wide_len()],
            dxpad: vec![T::zero(); g.padded_len()],
            dw_taps: need_dw.then(|| vec![T::zero(); g.kh * g.kw * g.cout * g.cin]),
        }
    }

    fn sample(&mut self, g: &ConvGeom, xs: &[T], ds: &[T], dx: Option<&mut [T]>) {
        let (wp, n, plane) = (g.wp(), g.wide_len(), g.padded_plane());
        // Columns past `wo` stay zero, so they add nothing to either gradient.
        for co in 0..g.cout {
            for y in 0..g.ho {
                let src = &ds[(co * g.ho + y) * g.wo..(co * g.ho + y + 1) * g.wo];
                self.dwide[co * n + y * wp..co * n + y * wp + g.wo].copy_from_slice(src);
            }
        }
        if let Some(dwt) = self.dw_taps.as_mut() {
            g.pad_into(xs, &mut self.xpad);
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let tap = ki * g.kw + kj;
                    let off = ki * wp + kj;
                    let c = &mut dwt[tap * g.cout * g.cin..(tap + 1) * g.cout * g.cin];
                    gemm_abt_acc(g.cout, g.cin, n, &self.dwide, n, &self.xpad[off..], plane, c, g.cin);
                }
            }
        }
        if let Some(dx) = dx {
            self.dxpad.fill(T::zero());
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let tap = ki * g.kw + kj;
                    let a = Strided { data: &self.wpack[tap * g.cout * g.cin..], rs: 1, cs: g.cin };
                    let off = ki * wp + kj;
                    gemm_rowmajor_b(g.cin, n, g.cout, a, &self.dwide, n, T::one(), &mut self.dxpad[off..], plane);
                }
            }
            for ci in 0..g.cin {
                for y in 0..g.h {
                    let at = ci * plane + (y + g.pad) * wp + g.pad;
                    let src = &self.dxpad[at..at + g.w];
                    let dst = &mut dx[(ci * g.h + y) * g.w..(ci * g.h + y + 1) * g.w];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = *d + v;
                    }
                }
            }
        }
    }

    fn finish_dw(self, g: &ConvGeom, dw: &mut [T]) {
        let Some(dwt) = self.dw_taps else { return };
        let taps = g.kh * g.kw;
        for tap in 0..taps {
            for co in 0..g.cout {
                for ci in 0..g.cin {
                    let i = (co * g.cin + ci) * taps + tap;
                    dw[i] = dw[i] + dwt[(tap * g.cout + co) * g.cin + ci];
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct UpGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
}

impl UpGeom {
    pub fn new<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Self> {
        let (batch, cin, h, wd) = x.dims4()?;
        let (wcin, cout, kh, kw) = w.dims4()?;
        if wcin != cin || kh != 2 || kw != 2 {
            return Err(TensorError::shape(
                "upconv2x2",
                format!("input {:?} incompatible with weight {:?} (expected [{cin},Cout,2,2])", x.shape(), w.shape()),
            ));
        }
        if let Some(b) = b {
            if b.shape() != [cout] {
                return Err(TensorError::shape(
                    "upconv2x2",
                    format!("bias {:?} does not match {cout} output channels", b.shape()),
                ));
            }
        }
        Ok(UpGeom {
            batch,
            cin,
            h,
            w: wd,
            cout,
        })
    }
}

/// Transpose convolution, kernel 2×2, stride 2; weight is `[Cin,Cout,2,2]`.
pub(crate) fn upconv_forward<T: Element>(g: &UpGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Tensor<T> {
    let hw = g.h * g.w;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let mut out = vec![T::zero(); g.batch * g.cout * oh * ow];
    let mut cols = vec![T::zero(); g.cout * 4 * hw];
    for n in 0..g.batch {
        let xs = &x[n * g.cin * hw..(n + 1) * g.cin * hw];
        gemm(MatRef::new(w, g.cin, g.cout * 4).t(), MatRef::new(xs, g.cin, hw), T::zero(), &mut cols);
        let os = &mut out[n * g.cout * oh * ow..(n + 1) * g.cout * oh * ow];
        for co in 0..g.cout {
            let bias = b.map_or(T::zero(), |b| b[co]);
            for d in 0..4 {
                let (di, dj) = (d / 2, d % 2);
                let src = &cols[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for i in 0..g.h {
                    let row = &mut os[co * oh * ow + (2 * i + di) * ow..];
                    for j in 0..g.w {
                        row[2 * j + dj] = src[i * g.w + j] + bias;
                    }
                }
            }
        }
    }
    Tensor::new(&[g.batch, g.cout, oh, ow], out).expect("upconv output shape")
}

pub(crate) fn upconv_backward<T: Element>(
    g: &UpGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let hw = g.h * g.w;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![T::zero(); w.len()]);
    let mut db = need.2.then(|| vec![T::zero(); g.cout]);
    let mut dcols = vec![T::zero(); g.cout * 4 * hw];
    for n in 0..g.batch {
        let ds = &dout[n * g.cout * oh * ow..(n + 1) * g.cout * oh * ow];
        for co in 0..g.cout {
            for d in 0..4 {
                let (di, dj) = (d / 2, d % 2);
                let dst = &mut dcols[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for i in 0..g.h {
                    let row = &ds[co * oh * ow + (2 * i + di) * ow..];
                    for j in 0..g.w {
                        dst[i * g.w + j] = row[2 * j + dj];
                    }
                }
            }
            if let Some(db) = db.as_mut() {
                let plane = &ds[co * oh * ow..(co + 1) * oh * ow];
                db[co] = plane.iter().fold(db[co], |a, &v| a + v);
            }
        }
        let xs = &x[n * g.cin * hw..(n + 1) * g.cin * hw];
        if let Some(dw) = dw.as_mut() {
            gemm(MatRef::new(xs, g.cin, hw), MatRef::new(&dcols, g.cout * 4, hw).t(), T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[n * g.cin * hw..(n + 1) * g.cin * hw];
            gemm(MatRef::new(w, g.cin, g.cout * 4), MatRef::new(&dcols, g.cout * 4, hw), T::zero(), dxs);
        }
    }
    ConvGrads { dx, dw, db }
}
