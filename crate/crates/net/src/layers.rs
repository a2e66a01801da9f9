//! Convolutional building blocks addressed by parameter slot.

use pat_tensor::{Element, Graph, Var};
use rand::Rng;

use crate::error::Result;
use crate::params::{he_uniform, Bound, ParamStore};
use pat_tensor::Tensor;

/// Same-size convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: usize,
    pub b: usize,
    pad: usize,
}

impl Conv {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Conv {
        let w = store.push(format!("{name}.w"), he_uniform(rng, &[cout, cin, k, k], cin * k * k));
        let b = store.push(format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv { w, b, pad: k / 2 }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.conv2d(x, p.var(self.w), Some(p.var(self.b)), 1, self.pad)?)
    }

    pub fn forward_relu<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(g, p, x)?;
        Ok(g.relu(y))
    }
}

/// 2×2 stride-2 transpose convolution with bias.
#[derive(Debug, Clone)]
pub struct UpConv {
    pub w: usize,
    pub b: usize,
}

impl UpConv {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, cin: usize, cout: usize) -> UpConv {
        let w = store.push(format!("{name}.w"), he_uniform(rng, &[cin, cout, 2, 2], cin));
        let b = store.push(format!("{name}.b"), Tensor::zeros(&[cout]));
        UpConv { w, b }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.upconv2x2(x, p.var(self.w), Some(p.var(self.b)))?)
    }
}

/// Two stacked 3×3 conv+relu layers.
#[derive(Debug, Clone)]
pub struct DoubleConv {
    pub first: Conv,
    pub second: Conv,
}

impl DoubleConv {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, cin: usize, cout: usize) -> DoubleConv {
        DoubleConv {
            first: Conv::new(store, rng, &format!("{name}.conv1"), cin, cout, 3),
            second: Conv::new(store, rng, &format!("{name}.conv2"), cout, cout, 3),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.first.forward_relu(g, p, x)?;
        self.second.forward_relu(g, p, h)
    }
}
