//! Tape of executed operations and the reverse sweep over it.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::fft::{fft2_planes, fftshift_planes, is_power_of_two};
use crate::ops::conv::{self, ConvGeom, UpGeom};
use crate::ops::pool;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Real and imaginary parts of a complex feature map.
#[derive(Debug, Clone, Copy)]
pub struct ComplexPair {
    pub re: Var,
    pub im: Var,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    SpatialSum(Var),
    Concat(Vec<Var>),
    SliceChannels { src: Var, start: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    UpConv { x: Var, w: Var, b: Option<Var>, geom: UpGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    Fft { re: Var, im: Option<Var>, inverse: bool },
    Shift { x: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Records differentiable operations in execution order.
///
/// Every op validates shapes before it runs and appends one node; the
/// backward sweep walks the tape from the loss to the first node, visiting
/// each node exactly once.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn accumulate<T: Element>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a = *a + v),
        None => *slot = Some(g),
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        debug_assert!(value.rank() <= 4);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Records an input tensor; `requires_grad` leaves receive gradients.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.tracked(v)
    }

    /// Gradient of the last `backward` loss with respect to `v`. Tracked
    /// values the loss does not depend on report zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        if !self.tracked(v) {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        })
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(ta.shape(), data);
        }
        if tb.len() == 1 && tb.rank() == 0 {
            let y = tb.data()[0];
            return Ok(ta.map(|x| f(x, y)));
        }
        if ta.len() == 1 && ta.rank() == 0 {
            let x = ta.data()[0];
            return Ok(tb.map(|y| f(x, y)));
        }
        Err(TensorError::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Sub(a, b), t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Mul(a, b), t))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("div", a, b, |x, y| x / y)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Div(a, b), t))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let s = T::cast_f64(s);
        let v = self.value(x).map(|a| a + s);
        let t = self.tracked(x);
        self.push(v, Op::AddScalar(x), t)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::cast_f64(s);
        let v = self.value(x).map(|a| a * s);
        let t = self.tracked(x);
        self.push(v, Op::Scale(x, s), t)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Rectifier; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { T::zero() });
        let t = self.tracked(x);
        self.push(v, Op::Relu(x), t)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| T::one() / (T::one() + (-a).exp()));
        let t = self.tracked(x);
        self.push(v, Op::Sigmoid(x), t)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.ln());
        let t = self.tracked(x);
        self.push(v, Op::Log(x), t)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        let t = self.tracked(x);
        self.push(v, Op::Square(x), t)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::cast_f64(lo), T::cast_f64(hi));
        let v = self.value(x).map(|a| a.max(lo).min(hi));
        let t = self.tracked(x);
        self.push(v, Op::Clamp(x, lo, hi), t)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &v| a + v);
        let t = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), t)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = T::cast_f64(xv.len() as f64);
        let s = xv.data().iter().fold(T::zero(), |a, &v| a + v) / n;
        let t = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Mean(x), t)
    }

    /// `[B,C,H,W] → [B,C]`, summing each spatial plane.
    pub fn spatial_sum(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        let data = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .map(|p| p.iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        let t = self.tracked(x);
        Ok(self.push(Tensor::new(&[b, c], data)?, Op::SpatialSum(x), t))
    }

    /// Concatenation along the channel axis of 4-D tensors.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(*xs.first().ok_or_else(|| TensorError::shape("concat", "no inputs"))?);
        let (b, _, h, w) = first.dims4()?;
        let mut channels = 0;
        for &x in xs {
            let (xb, xc, xh, xw) = self.value(x).dims4()?;
            if (xb, xh, xw) != (b, h, w) {
                return Err(TensorError::shape(
                    "concat",
                    format!("{:?} vs {:?}", self.shape(xs[0]), self.shape(x)),
                ));
            }
            channels += xc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * channels * plane);
        for n in 0..b {
            for &x in xs {
                let xv = self.value(x);
                let c = xv.shape()[1];
                data.extend_from_slice(&xv.data()[n * c * plane..(n + 1) * c * plane]);
            }
        }
        let t = xs.iter().any(|&x| self.tracked(x));
        Ok(self.push(Tensor::new(&[b, channels, h, w], data)?, Op::Concat(xs.to_vec()), t))
    }

    /// Channels `[start, start+len)` of a 4-D tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if start + len > c {
            return Err(TensorError::shape(
                "slice_channels",
                format!("range {start}..{} exceeds {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * len * plane);
        for n in 0..b {
            data.extend_from_slice(&src[(n * c + start) * plane..(n * c + start + len) * plane]);
        }
        let t = self.tracked(x);
        Ok(self.push(Tensor::new(&[b, len, h, w], data)?, Op::SliceChannels { src: x, start }, t))
    }

    /// Cross-correlation with weight `[Cout,Cin,kh,kw]` and optional bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let v = conv::conv2d_forward_geom(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let t = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(v, Op::Conv2d { x, w, b, geom }, t))
    }

    /// Stride-2 transpose convolution with weight `[Cin,Cout,2,2]`.
    pub fn upconv2x2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let geom = UpGeom::new(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let v = conv::upconv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let t = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(v, Op::UpConv { x, w, b, geom }, t))
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let (v, argmax) = pool::maxpool2x2_forward(self.value(x))?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::MaxPool { x, argmax }, t))
    }

    fn check_fft_extent(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize, usize)> {
        let (b, c, h, w) = self.value(x).dims4()?;
        for extent in [h, w] {
            if !is_power_of_two(extent) {
                return Err(TensorError::NotPowerOfTwo { op, extent });
            }
        }
        Ok((b, c, h, w))
    }

    fn record_fft(&mut self, re: Var, im: Option<Var>, inverse: bool) -> Result<ComplexPair> {
        let op = if inverse { "ifft2" } else { "fft2" };
        let (b, c, h, w) = self.check_fft_extent(op, re)?;
        if let Some(im) = im {
            same_shape(op, self.value(re), self.value(im))?;
        }
        let (ore, oim) = fft2_planes(
            self.value(re).data(),
            im.map(|i| self.value(i).data()),
            b * c,
            h,
            w,
            inverse,
        );
        // Stored stacked as [B, 2C, H, W]: real channels then imaginary.
        let plane = c * h * w;
        let mut stacked = Vec::with_capacity(2 * ore.len());
        for n in 0..b {
            stacked.extend_from_slice(&ore[n * plane..(n + 1) * plane]);
            stacked.extend_from_slice(&oim[n * plane..(n + 1) * plane]);
        }
        let t = self.tracked(re) || im.is_some_and(|i| self.tracked(i));
        let node = self.push(Tensor::new(&[b, 2 * c, h, w], stacked)?, Op::Fft { re, im, inverse }, t);
        Ok(ComplexPair {
            re: self.slice_channels(node, 0, c)?,
            im: self.slice_channels(node, c, c)?,
        })
    }

    /// Unnormalized forward 2-D DFT of a real `[B,C,H,W]` tensor.
    pub fn fft2(&mut self, x: Var) -> Result<ComplexPair> {
        self.record_fft(x, None, false)
    }

    /// Forward 2-D DFT of a complex input.
    pub fn fft2_complex(&mut self, z: ComplexPair) -> Result<ComplexPair> {
        self.record_fft(z.re, Some(z.im), false)
    }

    /// Inverse 2-D DFT scaled by 1/(H·W).
    pub fn ifft2(&mut self, z: ComplexPair) -> Result<ComplexPair> {
        self.record_fft(z.re, Some(z.im), true)
    }

    /// Inverse DFT of a real input (imaginary part zero).
    pub fn ifft2_real(&mut self, x: Var) -> Result<ComplexPair> {
        self.record_fft(x, None, true)
    }

    /// Quadrant swap moving the zero frequency to the plane centre.
    pub fn fftshift(&mut self, x: Var) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        let v = Tensor::new(self.shape(x), fftshift_planes(self.value(x).data(), h, w, false))?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::Shift { x }, t))
    }

    /// Reverse sweep from a scalar loss. Gradients from a previous call are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            self.backward_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn send(&mut self, to: Var, g: Vec<T>) {
        if self.nodes[to.0].tracked {
            accumulate(&mut self.grads[to.0], g);
        }
    }

    /// Reduces a broadcast gradient back onto a scalar operand.
    fn send_broadcast(&mut self, to: Var, g: Vec<T>) {
        if self.nodes[to.0].value.len() == 1 && g.len() != 1 {
            let s = g.iter().fold(T::zero(), |a, &v| a + v);
            self.send(to, vec![s]);
        } else {
            self.send(to, g);
        }
    }

    /// Values of `v` expanded to `n` entries (scalar broadcast).
    fn expanded(&self, v: Var, n: usize) -> Vec<T> {
        let d = self.value(v).data();
        if d.len() == n {
            d.to_vec()
        } else {
            vec![d[0]; n]
        }
    }

    fn backward_node(&mut self, i: usize, g: &[T]) {
        let n = g.len();
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.send_broadcast(*a, g.to_vec());
                self.send_broadcast(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.send_broadcast(*a, g.to_vec());
                self.send_broadcast(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.expanded(*a, n), self.expanded(*b, n));
                if self.tracked(*a) {
                    self.send_broadcast(*a, g.iter().zip(&bv).map(|(&g, &y)| g * y).collect());
                }
                if self.tracked(*b) {
                    self.send_broadcast(*b, g.iter().zip(&av).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.expanded(*a, n), self.expanded(*b, n));
                if self.tracked(*a) {
                    self.send_broadcast(*a, g.iter().zip(&bv).map(|(&g, &y)| g / y).collect());
                }
                if self.tracked(*b) {
                    let gb = g
                        .iter()
                        .zip(av.iter().zip(&bv))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect();
                    self.send_broadcast(*b, gb);
                }
            }
            Op::AddScalar(x) => self.send(*x, g.to_vec()),
            Op::Scale(x, s) => self.send(*x, g.iter().map(|&v| v * *s).collect()),
            Op::Relu(x) => {
                let out = self.nodes[i].value.data();
                let gx = g
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect();
                self.send(*x, gx);
            }
            Op::Sigmoid(x) => {
                let out = self.nodes[i].value.data();
                let gx = g.iter().zip(out).map(|(&g, &y)| g * y * (T::one() - y)).collect();
                self.send(*x, gx);
            }
            Op::Log(x) => {
                let gx = g.iter().zip(self.value(*x).data()).map(|(&g, &a)| g / a).collect();
                self.send(*x, gx);
            }
            Op::Square(x) => {
                let two = T::cast_f64(2.0);
                let gx = g.iter().zip(self.value(*x).data()).map(|(&g, &a)| two * a * g).collect();
                self.send(*x, gx);
            }
            Op::Clamp(x, lo, hi) => {
                let gx = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &a)| if a >= *lo && a <= *hi { g } else { T::zero() })
                    .collect();
                self.send(*x, gx);
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                self.send(*x, vec![g[0]; len]);
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                self.send(*x, vec![g[0] / T::cast_f64(len as f64); len]);
            }
            Op::SpatialSum(x) => {
                let (_, _, h, w) = self.value(*x).dims4().expect("rank-4");
                let gx = g.iter().flat_map(|&v| std::iter::repeat_n(v, h * w)).collect();
                self.send(*x, gx);
            }
            Op::Concat(xs) => {
                let (b, c, h, w) = self.nodes[i].value.dims4().expect("rank-4");
                let plane = h * w;
                let mut offset = 0;
                for &x in xs {
                    let xc = self.value(x).shape()[1];
                    if self.tracked(x) {
                        let mut gx = Vec::with_capacity(b * xc * plane);
                        for nb in 0..b {
                            let start = (nb * c + offset) * plane;
                            gx.extend_from_slice(&g[start..start + xc * plane]);
                        }
                        self.send(x, gx);
                    }
                    offset += xc;
                }
            }
            Op::SliceChannels { src, start } => {
                let (b, c, h, w) = self.value(*src).dims4().expect("rank-4");
                let len = self.nodes[i].value.shape()[1];
                let plane = h * w;
                let mut gx = vec![T::zero(); b * c * plane];
                for nb in 0..b {
                    let at = (nb * c + start) * plane;
                    gx[at..at + len * plane].copy_from_slice(&g[nb * len * plane..(nb + 1) * len * plane]);
                }
                self.send(*src, gx);
            }
            Op::Conv2d { x, w, b, geom } => {
                let need = (self.tracked(*x), self.tracked(*w), b.is_some_and(|b| self.tracked(b)));
                let grads = conv::conv2d_backward(geom, self.value(*x).data(), self.value(*w).data(), g, need);
                if let Some(dx) = grads.dx {
                    self.send(*x, dx);
                }
                if let Some(dw) = grads.dw {
                    self.send(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, grads.db) {
                    self.send(*b, db);
                }
            }
            Op::UpConv { x, w, b, geom } => {
                let need = (self.tracked(*x), self.tracked(*w), b.is_some_and(|b| self.tracked(b)));
                let grads = conv::upconv_backward(geom, self.value(*x).data(), self.value(*w).data(), g, need);
                if let Some(dx) = grads.dx {
                    self.send(*x, dx);
                }
                if let Some(dw) = grads.dw {
                    self.send(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, grads.db) {
                    self.send(*b, db);
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (&gi, &src) in g.iter().zip(argmax) {
                    gx[src] = gx[src] + gi;
                }
                self.send(*x, gx);
            }
            Op::Fft { re, im, inverse } => {
                // Adjoint of the (scaled) DFT: F^H = H·W·F^{-1}, (F^{-1})^H = F/(H·W).
                let (b, c2, h, w) = self.nodes[i].value.dims4().expect("rank-4");
                let c = c2 / 2;
                let plane = c * h * w;
                let mut gre = Vec::with_capacity(b * plane);
                let mut gim = Vec::with_capacity(b * plane);
                for nb in 0..b {
                    gre.extend_from_slice(&g[2 * nb * plane..(2 * nb + 1) * plane]);
                    gim.extend_from_slice(&g[(2 * nb + 1) * plane..(2 * nb + 2) * plane]);
                }
                let (mut xr, mut xi) = fft2_planes(&gre, Some(&gim), b * c, h, w, !*inverse);
                let factor = if *inverse {
                    T::one() / T::cast_f64((h * w) as f64)
                } else {
                    T::cast_f64((h * w) as f64)
                };
                xr.iter_mut().chain(xi.iter_mut()).for_each(|v| *v = *v * factor);
                self.send(*re, xr);
                if let Some(im) = im {
                    self.send(*im, xi);
                }
            }
            Op::Shift { x } => {
                let (_, _, h, w) = self.value(*x).dims4().expect("rank-4");
                self.send(*x, fftshift_planes(g, h, w, true));
            }
        }
        self.nodes[i].op = op;
    }
}
