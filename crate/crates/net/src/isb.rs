//! Information sharing block: three streams per domain (identity, deep
//! convolutions, spectral transform plus deep convolutions), fused across
//! domains.

use pat_tensor::{Element, Graph, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv, DoubleConv};
use crate::params::{Bound, ParamStore};

#[derive(Debug, Clone)]
pub struct Isb {
    pub skip: Conv,
    pub d_deep: DoubleConv,
    pub d_spec: DoubleConv,
    pub k_deep: DoubleConv,
    pub k_spec: DoubleConv,
    pub fuse_d: Conv,
    pub fuse_k: Conv,
}

#[derive(Debug, Clone, Copy)]
pub struct IsbOut {
    pub d: Var,
    pub k: Var,
    pub skip: Var,
}

/// Real and imaginary parts stacked as channels, quadrant-swapped and
/// scaled to unit-norm (unitary) transform.
fn spectral_stream<T: Element>(g: &mut Graph<T>, x: Var, inverse: bool) -> Result<Var> {
    let (_, _, h, w) = g.value(x).dims4()?;
    let z = if inverse { g.ifft2_real(x)? } else { g.fft2(x)? };
    let cat = g.concat(&[z.re, z.im])?;
    let shifted = g.fftshift(cat)?;
    let n = (h * w) as f64;
    Ok(g.scale(shifted, if inverse { n.sqrt() } else { 1.0 / n.sqrt() }))
}

impl Isb {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, cin: usize, cout: usize) -> Isb {
        let fused = 2 * cin + 4 * cout;
        Isb {
            skip: Conv::new(store, rng, &format!("{name}.skip"), cin, cout, 3),
            d_deep: DoubleConv::new(store, rng, &format!("{name}.das_deep"), cin, cout),
            d_spec: DoubleConv::new(store, rng, &format!("{name}.das_fft"), 2 * cin, cout),
            k_deep: DoubleConv::new(store, rng, &format!("{name}.ks_deep"), cin, cout),
            k_spec: DoubleConv::new(store, rng, &format!("{name}.ks_ifft"), 2 * cin, cout),
            fuse_d: Conv::new(store, rng, &format!("{name}.fuse_das"), fused, cout, 3),
            fuse_k: Conv::new(store, rng, &format!("{name}.fuse_ks"), fused, cout, 3),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, d_in: Var, k_in: Var) -> Result<IsbOut> {
        if g.shape(d_in) != g.shape(k_in) {
            return Err(Error::Architecture(format!(
                "information sharing block inputs differ: {:?} vs {:?}",
                g.shape(d_in),
                g.shape(k_in)
            )));
        }
        let p2 = self.d_deep.forward(g, p, d_in)?;
        let f = spectral_stream(g, d_in, false)?;
        let p3 = self.d_spec.forward(g, p, f)?;
        let q2 = self.k_deep.forward(g, p, k_in)?;
        let fi = spectral_stream(g, k_in, true)?;
        let q3 = self.k_spec.forward(g, p, fi)?;
        let cat = g.concat(&[d_in, p2, p3, k_in, q2, q3])?;
        Ok(IsbOut {
            d: self.fuse_d.forward_relu(g, p, cat)?,
            k: self.fuse_k.forward_relu(g, p, cat)?,
            skip: self.skip.forward_relu(g, p, d_in)?,
        })
    }
}
