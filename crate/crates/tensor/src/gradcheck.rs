//! Central finite-difference gradient checking for `f64` graphs.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numeric gradients for one input.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub input: usize,
    /// `max|analytic − numeric| / max(max|numeric|, floor)`.
    pub rel_err: f64,
    pub max_abs_numeric: f64,
}

/// Builds a scalar loss from the given inputs, recorded on `g`.
pub type LossFn<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

/// Compares reverse-mode gradients of `loss` with central differences of
/// step `h` for every input.
pub fn check_gradients(inputs: &[Tensor<f64>], loss: &LossFn<'_>, h: f64) -> Result<Vec<GradReport>> {
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let l = loss(&mut g, &vars)?;
        Ok(g.value(l).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = loss(&mut g, &vars)?;
    g.backward(l)?;

    let mut reports = Vec::with_capacity(inputs.len());
    for (idx, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).expect("tracked input");
        let mut numeric = Vec::with_capacity(inputs[idx].len());
        let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
        for j in 0..inputs[idx].len() {
            let orig = inputs[idx].data()[j];
            probe[idx].data_mut()[j] = orig + h;
            let plus = eval(&probe)?;
            probe[idx].data_mut()[j] = orig - h;
            let minus = eval(&probe)?;
            probe[idx].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
        let max_num = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_diff = numeric
            .iter()
            .zip(analytic.data())
            .fold(0.0f64, |m, (n, a)| m.max((n - a).abs()));
        reports.push(GradReport {
            input: idx,
            rel_err: max_diff / max_num.max(1e-8),
            max_abs_numeric: max_num,
        });
    }
    Ok(reports)
}

/// Worst relative error across all inputs.
pub fn max_rel_err(reports: &[GradReport]) -> f64 {
    reports.iter().fold(0.0, |m, r| m.max(r.rel_err))
}

/// SplitMix64 stream of uniform values in `[-1, 1)`.
struct Uniform(u64);

impl Uniform {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }

    fn tensor(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| self.next()).collect()).expect("shape")
    }

    /// Values bounded away from zero (kinks of relu/clamp, poles of log).
    fn away_from_zero(&mut self, shape: &[usize], lo: f64) -> Tensor<f64> {
        self.tensor(shape).map(|v| v.signum() * (lo + v.abs()))
    }
}

/// One finite-difference check of a named operation.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub op: &'static str,
    pub shape: Vec<usize>,
    pub rel_err: f64,
}

/// `Σ weights ⊙ y` with fixed pseudo-random weights, so every output
/// element contributes to the gradient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut u = Uniform(seed);
    let wt = u.tensor(g.shape(y));
    let w = g.constant(wt);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

const SHAPES: [[usize; 4]; 5] = [[1, 1, 4, 4], [2, 2, 4, 2], [1, 3, 2, 8], [2, 1, 8, 8], [1, 2, 2, 2]];

/// Central-difference check (h = 1e-5) of every differentiable operation
/// on five random shapes each.
pub fn op_suite(seed: u64) -> Result<Vec<SuiteCase>> {
    let h = 1e-5;
    let mut u = Uniform(seed);
    let mut cases = Vec::new();
    let mut run = |op: &'static str, shape: &[usize], inputs: Vec<Tensor<f64>>, f: &LossFn<'_>| -> Result<()> {
        let r = check_gradients(&inputs, f, h)?;
        cases.push(SuiteCase {
            op,
            shape: shape.to_vec(),
            rel_err: max_rel_err(&r),
        });
        Ok(())
    };
    for (si, s) in SHAPES.iter().enumerate() {
        let ws = seed ^ ((si as u64 + 1) * 7919);
        let (b, c, hh, w) = (s[0], s[1], s[2], s[3]);
        let two = [u.tensor(s), u.tensor(s)];
        run("add", s, two.to_vec(), &|g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, ws)
        })?;
        run("subtract", s, two.to_vec(), &|g, v| {
            let y = g.sub(v[0], v[1])?;
            weighted_sum(g, y, ws)
        })?;
        run("multiply", s, two.to_vec(), &|g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, ws)
        })?;
        run("multiply-scalar-broadcast", s, vec![two[0].clone(), u.tensor(&[])], &|g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, ws)
        })?;
        run("divide", s, vec![two[0].clone(), u.away_from_zero(s, 0.5)], &|g, v| {
            let y = g.div(v[0], v[1])?;
            weighted_sum(g, y, ws)
        })?;
        run("scale", s, vec![two[0].clone()], &|g, v| {
            let y = g.scale(v[0], -2.5);
            weighted_sum(g, y, ws)
        })?;
        run("add-scalar", s, vec![two[0].clone()], &|g, v| {
            let y = g.add_scalar(v[0], 0.75);
            weighted_sum(g, y, ws)
        })?;
        run("relu", s, vec![u.away_from_zero(s, 0.01)], &|g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y, ws)
        })?;
        run("sigmoid", s, vec![u.tensor(s).map(|v| 3.0 * v)], &|g, v| {
            let y = g.sigmoid(v[0]);
            weighted_sum(g, y, ws)
        })?;
        run("log", s, vec![u.tensor(s).map(|v| 0.2 + v.abs())], &|g, v| {
            let y = g.log(v[0]);
            weighted_sum(g, y, ws)
        })?;
        run("square", s, vec![two[1].clone()], &|g, v| {
            let y = g.square(v[0]);
            weighted_sum(g, y, ws)
        })?;
        // Clamp bounds sit between grid values so no probe crosses them.
        run("clamp", s, vec![u.tensor(s).map(|v| (v * 20.0).round() / 10.0 + 0.05)], &|g, v| {
            let y = g.clamp(v[0], -0.5, 0.5);
            weighted_sum(g, y, ws)
        })?;
        run("sum", s, vec![two[0].clone()], &|g, v| {
            let y = g.square(v[0]);
            Ok(g.sum(y))
        })?;
        run("mean", s, vec![two[0].clone()], &|g, v| {
            let y = g.square(v[0]);
            Ok(g.mean(y))
        })?;
        run("spatial-sum", s, vec![two[0].clone()], &|g, v| {
            let y = g.spatial_sum(v[0])?;
            weighted_sum(g, y, ws)
        })?;
        run("concat", s, vec![two[0].clone(), u.tensor(&[b, c + 1, hh, w])], &|g, v| {
            let y = g.concat(&[v[0], v[1]])?;
            weighted_sum(g, y, ws)
        })?;
        run("slice-channels", s, vec![u.tensor(&[b, c + 2, hh, w])], &|g, v| {
            let y = g.slice_channels(v[0], 1, c)?;
            weighted_sum(g, y, ws)
        })?;
        let cout = 1 + si % 3;
        run(
            "conv2d",
            s,
            vec![u.tensor(s), u.tensor(&[cout, c, 3, 3]), u.tensor(&[cout])],
            &|g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                weighted_sum(g, y, ws)
            },
        )?;
        run("conv2d-stride2", s, vec![u.tensor(s), u.tensor(&[cout, c, 2, 2])], &|g, v| {
            let y = g.conv2d(v[0], v[1], None, 2, 0)?;
            weighted_sum(g, y, ws)
        })?;
        run(
            "upconv2x2",
            s,
            vec![u.tensor(s), u.tensor(&[c, cout, 2, 2]), u.tensor(&[cout])],
            &|g, v| {
                let y = g.upconv2x2(v[0], v[1], Some(v[2]))?;
                weighted_sum(g, y, ws)
            },
        )?;
        run("maxpool2x2", s, vec![u.tensor(s)], &|g, v| {
            let y = g.maxpool2x2(v[0])?;
            weighted_sum(g, y, ws)
        })?;
        run("fft2", s, vec![u.tensor(s)], &|g, v| {
            let z = g.fft2(v[0])?;
            let both = g.concat(&[z.re, z.im])?;
            weighted_sum(g, both, ws)
        })?;
        run("fft2-complex", s, two.to_vec(), &|g, v| {
            let z = g.fft2_complex(crate::ComplexPair { re: v[0], im: v[1] })?;
            let both = g.concat(&[z.re, z.im])?;
            weighted_sum(g, both, ws)
        })?;
        run("ifft2", s, two.to_vec(), &|g, v| {
            let z = g.ifft2(crate::ComplexPair { re: v[0], im: v[1] })?;
            let both = g.concat(&[z.re, z.im])?;
            weighted_sum(g, both, ws)
        })?;
        run("ifft2-real", s, vec![u.tensor(s)], &|g, v| {
            let z = g.ifft2_real(v[0])?;
            let both = g.concat(&[z.re, z.im])?;
            weighted_sum(g, both, ws)
        })?;
        run("fftshift", s, vec![u.tensor(s)], &|g, v| {
            let y = g.fftshift(v[0])?;
            weighted_sum(g, y, ws)
        })?;
        run(
            "conv-relu-sum",
            s,
            vec![u.tensor(s), u.tensor(&[2, c, 3, 3]), u.tensor(&[2])],
            &|g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                let r = g.relu(y);
                Ok(g.sum(r))
            },
        )?;
        run("fft2-power-sum", s, vec![u.tensor(s)], &|g, v| {
            let z = g.fft2(v[0])?;
            let (a, b) = (g.square(z.re), g.square(z.im));
            let p = g.add(a, b)?;
            Ok(g.sum(p))
        })?;
    }
    Ok(cases)
}
