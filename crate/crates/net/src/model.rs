//! DuDoUnet, the two single-encoder Unet baselines and the auxiliary
//! autoencoder.

use pat_tensor::{is_power_of_two, Element, Graph, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isb::Isb;
use crate::layers::{Conv, DoubleConv, UpConv};
use crate::params::{Bound, ParamStore};

pub const MIN_IMAGE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Dual-domain Unet with information sharing blocks.
    Dudounet,
    /// Plain Unet on the DAS image.
    Unet1,
    /// Plain Unet on DAS and k-space images stacked as channels.
    Unet2,
    /// Ground-truth autoencoder supplying the latent prior.
    Autoencoder,
}

impl ModelKind {
    pub fn input_channels(self) -> usize {
        match self {
            ModelKind::Dudounet | ModelKind::Unet2 => 2,
            ModelKind::Unet1 | ModelKind::Autoencoder => 1,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Dudounet => "dudounet",
            ModelKind::Unet1 => "unet1",
            ModelKind::Unet2 => "unet2",
            ModelKind::Autoencoder => "autoencoder",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub kind: ModelKind,
    pub depth: usize,
    pub base: usize,
    pub in_channels: usize,
}

impl Arch {
    pub fn new(kind: ModelKind, depth: usize, base: usize) -> Result<Arch> {
        if depth == 0 || base == 0 {
            return Err(Error::Config(format!("depth {depth} and base width {base} must be positive")));
        }
        Ok(Arch {
            kind,
            depth,
            base,
            in_channels: kind.input_channels(),
        })
    }

    /// Channels produced by encoder stage `s`.
    pub fn width(&self, s: usize) -> usize {
        self.base << s
    }

    /// `[C, H, W]` of the bottleneck for `n × n` inputs.
    pub fn latent_shape(&self, n: usize) -> [usize; 3] {
        let side = n >> self.depth;
        [2 * self.width(self.depth - 1), side, side]
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let ok = match shape {
            [b, c, h, w] => {
                *b > 0 && *c == self.in_channels && h == w && is_power_of_two(*h) && *h >= MIN_IMAGE && *h >> self.depth >= 1
            }
            _ => false,
        };
        if !ok {
            return Err(Error::Architecture(format!(
                "{} expects [B,{},N,N] with N a power of two ≥ {MIN_IMAGE}, got {shape:?}",
                self.kind, self.in_channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    stages: Vec<(UpConv, DoubleConv)>,
    head: Conv,
}

impl Decoder {
    fn new<T: Element>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, arch: &Arch, skips: bool) -> Decoder {
        let mut stages = Vec::new();
        let mut cin = 2 * arch.width(arch.depth - 1);
        for s in (0..arch.depth).rev() {
            let c = arch.width(s);
            let up = UpConv::new(store, rng, &format!("dec.up{}", s + 1), cin, c);
            let merged = if skips { 2 * c } else { c };
            let conv = DoubleConv::new(store, rng, &format!("dec.stage{}", s + 1), merged, c);
            stages.push((up, conv));
            cin = c;
        }
        let head = Conv::new(store, rng, "dec.head", arch.width(0), 1, 1);
        Decoder { stages, head }
    }

    /// `skips[s]` belongs to encoder stage `s`; empty for no skips.
    fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, z: Var, skips: &[Var]) -> Result<Var> {
        let mut h = z;
        for (i, (up, conv)) in self.stages.iter().enumerate() {
            let u = up.forward(g, p, h)?;
            let merged = match skips.len() {
                0 => u,
                n => g.concat(&[u, skips[n - 1 - i]])?,
            };
            h = conv.forward(g, p, merged)?;
        }
        self.head.forward(g, p, h)
    }
}

#[derive(Debug, Clone)]
enum Body {
    Dual { isbs: Vec<Isb>, fuse: Conv, dec: Decoder },
    Single { enc: Vec<DoubleConv>, bottleneck: Conv, dec: Decoder },
}

/// Output of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[B,1,N,N]` reconstruction.
    pub y: Var,
    /// Bottleneck latent (z₂ for the main networks, z₁ for the autoencoder).
    pub z: Var,
    /// Skip of the first encoder stage, when the network has skips.
    pub first_skip: Option<Var>,
}

/// Architecture layout: parameter slots of every layer.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Arch,
    body: Body,
}

impl Network {
    /// Builds the layout and He-initialized parameters from `seed`.
    pub fn init<T: Element>(arch: Arch, seed: u64) -> (Network, ParamStore<T>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let top = 2 * arch.width(arch.depth - 1);
        let body = match arch.kind {
            ModelKind::Dudounet => {
                let mut isbs = Vec::new();
                let mut cin = 1;
                for s in 0..arch.depth {
                    isbs.push(Isb::new(&mut store, &mut rng, &format!("enc.isb{}", s + 1), cin, arch.width(s)));
                    cin = arch.width(s);
                }
                let fuse = Conv::new(&mut store, &mut rng, "enc.bottleneck", top, top, 3);
                let dec = Decoder::new(&mut store, &mut rng, &arch, true);
                Body::Dual { isbs, fuse, dec }
            }
            ModelKind::Unet1 | ModelKind::Unet2 | ModelKind::Autoencoder => {
                let mut enc = Vec::new();
                let mut cin = arch.in_channels;
                for s in 0..arch.depth {
                    enc.push(DoubleConv::new(&mut store, &mut rng, &format!("enc.stage{}", s + 1), cin, arch.width(s)));
                    cin = arch.width(s);
                }
                let bottleneck = Conv::new(&mut store, &mut rng, "enc.bottleneck", cin, top, 3);
                let skips = arch.kind != ModelKind::Autoencoder;
                let dec = Decoder::new(&mut store, &mut rng, &arch, skips);
                Body::Single { enc, bottleneck, dec }
            }
        };
        (Network { arch, body }, store)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    /// Runs the network on `x [B, in_channels, N, N]`. DuDoUnet reads the
    /// DAS image from channel 0 and the k-space image from channel 1.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Forward> {
        self.forward_with(g, p, x, None)
    }

    /// As [`Network::forward`], optionally replacing the first-stage skip
    /// by `skip_override` (used to ablate the decoder connection).
    pub fn forward_with<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        skip_override: Option<Var>,
    ) -> Result<Forward> {
        self.arch.check_input(g.shape(x))?;
        match &self.body {
            Body::Dual { isbs, fuse, dec } => {
                let mut d = g.slice_channels(x, 0, 1)?;
                let mut k = g.slice_channels(x, 1, 1)?;
                let mut skips = Vec::new();
                for isb in isbs {
                    let out = isb.forward(g, p, d, k)?;
                    skips.push(out.skip);
                    d = g.maxpool2x2(out.d)?;
                    k = g.maxpool2x2(out.k)?;
                }
                let first_skip = Some(skips[0]);
                if let Some(s) = skip_override {
                    skips[0] = s;
                }
                let both = g.concat(&[d, k])?;
                let z = fuse.forward_relu(g, p, both)?;
                let y = dec.forward(g, p, z, &skips)?;
                Ok(Forward { y, z, first_skip })
            }
            Body::Single { enc, bottleneck, dec } => {
                let mut h = x;
                let mut skips = Vec::new();
                for stage in enc {
                    let s = stage.forward(g, p, h)?;
                    skips.push(s);
                    h = g.maxpool2x2(s)?;
                }
                let z = bottleneck.forward_relu(g, p, h)?;
                let with_skips = self.arch.kind != ModelKind::Autoencoder;
                if !with_skips {
                    skips.clear();
                }
                let first_skip = skips.first().copied();
                if let (Some(s), true) = (skip_override, with_skips) {
                    skips[0] = s;
                }
                let y = dec.forward(g, p, z, &skips)?;
                Ok(Forward { y, z, first_skip })
            }
        }
    }
}
