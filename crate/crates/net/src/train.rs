//! Training loops for the reconstruction networks and the auxiliary
//! autoencoder.
//!
//! Training is single-threaded and a pure function of the configuration,
//! the dataset and the seed. Each epoch visits the training split in an
//! order drawn from `(seed, epoch)` alone, which is what lets a run resumed
//! at an epoch boundary continue exactly where an uninterrupted one would.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pat_core::dataset::{Dataset, ImagePair, Split};
use pat_tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Index, OptimState, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::mi::{total_loss, MiConfig, MiHead, MiInputs};
use crate::model::{Arch, ModelKind, Network};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const STEP_LOG: &str = "train.jsonl";
pub const EPOCH_LOG: &str = "epochs.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub depth: usize,
    pub base: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Dudounet,
            depth: 3,
            base: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub normalize_mi: bool,
    pub seed: u64,
    /// Pre-trained autoencoder supplying z₁; enables the MI term.
    pub aux: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mi = MiConfig::default();
        TrainConfig {
            model: ModelConfig::default(),
            epochs: 30,
            batch_size: 4,
            lr: AdamConfig::default().lr,
            lambda: mi.lambda,
            epsilon: mi.epsilon,
            normalize_mi: mi.normalize,
            seed: 0,
            aux: None,
        }
    }
}

impl TrainConfig {
    pub fn mi(&self) -> MiConfig {
        MiConfig {
            lambda: self.lambda,
            epsilon: self.epsilon,
            normalize: self.normalize_mi,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn arch(&self) -> Result<Arch> {
        Arch::new(self.model.kind, self.model.depth, self.model.base)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch()?;
        self.mi().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.model.kind == ModelKind::Dudounet && self.lambda > 0.0 && self.aux.is_none() {
            return Err(Error::Config(
                "dudounet with lambda > 0 needs a pre-trained autoencoder checkpoint (aux)".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the step log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub mse: f64,
    pub neg_log_q: Option<f64>,
    pub total: f64,
}

/// Mean step losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: u64,
    pub mse: f64,
    pub neg_log_q: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
}

/// Network input channels of a sample for `kind`.
pub fn input_of(kind: ModelKind, s: &ImagePair) -> Vec<f32> {
    match kind {
        ModelKind::Dudounet | ModelKind::Unet2 => [s.das.data(), s.kspace.data()].concat(),
        ModelKind::Unet1 => s.das.data().to_vec(),
        ModelKind::Autoencoder => s.gt.data().to_vec(),
    }
}

/// Visiting order of `n` samples in `epoch` (0-based).
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn stack(rows: &[&[f32]], shape: &[usize]) -> Result<Tensor<f32>> {
    Ok(Tensor::new(shape, rows.concat())?)
}

/// Latent of `y [1,1,N,N]` under a frozen autoencoder.
pub fn encode_latent(aux: &Network, params: &ParamStore<f32>, y: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(y.clone());
    let f = aux.forward(&mut g, &p, x)?;
    Ok(g.value(f.z).clone())
}

struct Posterior {
    head: MiHead,
    params: ParamStore<f32>,
    adam: Adam<f32>,
    /// z₁ of every training sample, `[C,H,W]` flattened.
    z1: Vec<Vec<f32>>,
}

/// Full state of a training run between steps.
pub struct Trainer {
    cfg: TrainConfig,
    net: Network,
    params: ParamStore<f32>,
    adam: Adam<f32>,
    mi: Option<Posterior>,
    inputs: Vec<Vec<f32>>,
    targets: Vec<Vec<f32>>,
    n: usize,
    dataset_id: String,
    step: u64,
    epoch: usize,
}

impl Trainer {
    /// Freshly initialized state for `cfg` on the training split of `data`.
    pub fn new(cfg: &TrainConfig, data: &Dataset) -> Result<Trainer> {
        cfg.validate()?;
        let arch = cfg.arch()?;
        let n = data.manifest.n();
        arch.check_input(&[1, arch.in_channels, n, n])?;
        if data.is_empty(Split::Train) {
            return Err(Error::Config("the training split is empty".into()));
        }
        let samples = data.load_split(Split::Train)?;
        let inputs = samples.iter().map(|s| input_of(arch.kind, s)).collect();
        let targets = samples.iter().map(|s| s.gt.data().to_vec()).collect();
        let (net, params) = Network::init::<f32>(arch, cfg.seed);
        let adam = Adam::new(cfg.adam(), &params);
        let mi = match (&cfg.aux, arch.kind) {
            (Some(path), kind) if kind != ModelKind::Autoencoder => Some(posterior(cfg, &arch, n, path, &samples)?),
            _ => None,
        };
        if mi.is_none() && cfg.lambda > 0.0 && arch.kind != ModelKind::Autoencoder {
            log::info!("{}: no auxiliary checkpoint, training without the MI term", arch.kind);
        }
        Ok(Trainer {
            cfg: cfg.clone(),
            net,
            params,
            adam,
            mi,
            inputs,
            targets,
            n,
            dataset_id: data.id().to_string(),
            step: 0,
            epoch: 0,
        })
    }

    /// State restored from `ck`, which must come from a run with the same
    /// configuration (the epoch count may differ) on the same dataset.
    pub fn resume(cfg: &TrainConfig, data: &Dataset, ck: Checkpoint) -> Result<Trainer> {
        let mut t = Trainer::new(cfg, data)?;
        let same = TrainConfig {
            epochs: cfg.epochs,
            ..ck.index.train.clone()
        };
        if &same != cfg {
            return Err(Error::Config("checkpoint was written by a run with a different configuration".into()));
        }
        if ck.index.dataset_id != t.dataset_id {
            return Err(Error::Config(format!(
                "checkpoint belongs to dataset {}, not {}",
                ck.index.dataset_id, t.dataset_id
            )));
        }
        let optim = ck
            .optim
            .ok_or_else(|| Error::Config("checkpoint carries no optimizer state".into()))?;
        t.params.assign(&ck.params)?;
        t.adam = optim.main;
        match (&mut t.mi, ck.head, optim.head) {
            (Some(mi), Some(head), Some(adam)) => {
                mi.params.assign(&head)?;
                mi.adam = adam;
            }
            (None, None, None) => {}
            _ => return Err(Error::Config("posterior head state does not match the configuration".into())),
        }
        t.step = ck.index.step;
        t.epoch = ck.index.epoch;
        Ok(t)
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn head_params(&self) -> Option<&ParamStore<f32>> {
        self.mi.as_ref().map(|m| &m.params)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn n_samples(&self) -> usize {
        self.inputs.len()
    }

    /// Builds the loss graph for the given samples.
    fn graph(&self, idx: &[usize], trainable: bool) -> Result<(Graph<f32>, Losses)> {
        let b = idx.len();
        let n = self.n;
        let c = self.net.arch().in_channels;
        let x = stack(&idx.iter().map(|&i| &self.inputs[i][..]).collect::<Vec<_>>(), &[b, c, n, n])?;
        let y = stack(&idx.iter().map(|&i| &self.targets[i][..]).collect::<Vec<_>>(), &[b, 1, n, n])?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, trainable);
        let hp = self.mi.as_ref().map(|m| m.params.bind(&mut g, trainable));
        let (xv, yv) = (g.constant(x), g.constant(y));
        let f = self.net.forward(&mut g, &p, xv)?;
        let mi = match (&self.mi, &hp) {
            (Some(m), Some(hp)) => {
                let [lc, lh, lw] = self.net.arch().latent_shape(n);
                let z1 = stack(&idx.iter().map(|&i| &m.z1[i][..]).collect::<Vec<_>>(), &[b, lc, lh, lw])?;
                Some(MiInputs {
                    z1: g.constant(z1),
                    z2: f.z,
                    head: &m.head,
                    head_params: hp,
                })
            }
            _ => None,
        };
        let terms = total_loss(&mut g, f.y, yv, mi, &self.cfg.mi())?;
        let losses = Losses {
            mse: f64::from(g.value(terms.mse).item()),
            neg_log_q: terms.neg_log_q.map(|v| f64::from(g.value(v).item())),
            total: f64::from(g.value(terms.total).item()),
            total_var: terms.total,
            main: p,
            head: hp,
        };
        Ok((g, losses))
    }

    /// Mean losses over the given samples at the current parameters,
    /// evaluated in batches of the configured size without updating.
    pub fn loss_on(&self, idx: &[usize]) -> Result<(f64, Option<f64>, f64)> {
        let (mut mse, mut nlq, mut total) = (0.0, None::<f64>, 0.0);
        for chunk in idx.chunks(self.cfg.batch_size) {
            let (_, l) = self.graph(chunk, false)?;
            let w = chunk.len() as f64 / idx.len() as f64;
            mse += w * l.mse;
            total += w * l.total;
            if let Some(v) = l.neg_log_q {
                *nlq.get_or_insert(0.0) += w * v;
            }
        }
        Ok((mse, nlq, total))
    }

    /// One Adam update on the given samples.
    pub fn step(&mut self, idx: &[usize]) -> Result<StepLog> {
        let (mut g, l) = self.graph(idx, true)?;
        let step = self.step + 1;
        if !l.total.is_finite() {
            return Err(Error::Diverged { step, loss: l.total });
        }
        g.backward(l.total_var)?;
        let grads = l.main.grads(&g);
        self.adam.step(&mut self.params, &grads)?;
        if let (Some(m), Some(hp)) = (&mut self.mi, &l.head) {
            let grads = hp.grads(&g);
            m.adam.step(&mut m.params, &grads)?;
        }
        self.step = step;
        Ok(StepLog {
            step,
            epoch: self.epoch,
            mse: l.mse,
            neg_log_q: l.neg_log_q,
            total: l.total,
        })
    }

    /// Runs the next epoch, passing every step's record to `on_step`.
    pub fn run_epoch(&mut self, mut on_step: impl FnMut(&StepLog) -> Result<()>) -> Result<EpochStats> {
        let order = epoch_order(self.cfg.seed, self.epoch, self.inputs.len());
        let (mut mse, mut nlq, mut total, mut steps) = (0.0, None::<f64>, 0.0, 0u64);
        for batch in order.chunks(self.cfg.batch_size) {
            let s = self.step(batch)?;
            on_step(&s)?;
            mse += s.mse;
            total += s.total;
            if let Some(v) = s.neg_log_q {
                *nlq.get_or_insert(0.0) += v;
            }
            steps += 1;
        }
        let k = steps as f64;
        let stats = EpochStats {
            epoch: self.epoch,
            steps,
            mse: mse / k,
            neg_log_q: nlq.map(|v| v / k),
            total: total / k,
        };
        self.epoch += 1;
        Ok(stats)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            index: Index {
                format_version: FORMAT_VERSION,
                arch: *self.net.arch(),
                seed: self.cfg.seed,
                step: self.step,
                epoch: self.epoch,
                image_size: self.n,
                latent_shape: self.net.arch().latent_shape(self.n),
                dataset_id: self.dataset_id.clone(),
                train: self.cfg.clone(),
                params: Vec::new(),
                head: Vec::new(),
                optimizer: None,
            },
            params: self.params.clone(),
            head: self.mi.as_ref().map(|m| m.params.clone()),
            optim: Some(OptimState {
                main: self.adam.clone(),
                head: self.mi.as_ref().map(|m| m.adam.clone()),
            }),
        }
    }
}

struct Losses {
    mse: f64,
    neg_log_q: Option<f64>,
    total: f64,
    total_var: pat_tensor::Var,
    main: crate::params::Bound,
    head: Option<crate::params::Bound>,
}

fn posterior(cfg: &TrainConfig, arch: &Arch, n: usize, path: &Path, samples: &[ImagePair]) -> Result<Posterior> {
    let aux = Checkpoint::load(path)?;
    if aux.index.arch.kind != ModelKind::Autoencoder {
        return Err(Error::Config(format!(
            "{} holds a {} network, not an autoencoder",
            path.display(),
            aux.index.arch.kind
        )));
    }
    let want = arch.latent_shape(n);
    let got = aux.index.arch.latent_shape(n);
    if aux.index.image_size != n || got != want {
        return Err(Error::Architecture(format!(
            "auxiliary latent {got:?} at {}px does not match the {} latent {want:?} at {n}px",
            aux.index.image_size, arch.kind
        )));
    }
    let aux_net = aux.network()?;
    let z1 = samples
        .iter()
        .map(|s| Ok(encode_latent(&aux_net, &aux.params, &s.gt.clone().reshape(&[1, 1, n, n])?)?.into_data()))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (head, params) = MiHead::init::<f32, _>(&mut rng, want[0]);
    let adam = Adam::new(cfg.adam(), &params);
    Ok(Posterior { head, params, adam, z1 })
}

fn append_json<T: Serialize>(w: &mut impl Write, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, v).map_err(|e| Error::Config(format!("log encoding: {e}")))?;
    writeln!(w).map_err(|e| Error::Io {
        path: PathBuf::from(STEP_LOG),
        source: e,
    })
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(Error::io(path))?;
    Ok(BufWriter::new(f))
}

fn drive(mut t: Trainer, out: &Path, append: bool) -> Result<TrainReport> {
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let ck_dir = out.join(CHECKPOINT_DIR);
    let mut steps_log = open_log(&out.join(STEP_LOG), append)?;
    let mut epochs_log = open_log(&out.join(EPOCH_LOG), append)?;
    let mut epochs = Vec::new();
    if t.epoch == 0 && !append {
        t.checkpoint().save(&ck_dir)?;
    }
    while t.epoch < t.cfg.epochs {
        let stats = t.run_epoch(|s| append_json(&mut steps_log, s))?;
        steps_log.flush().map_err(Error::io(out.join(STEP_LOG)))?;
        append_json(&mut epochs_log, &stats)?;
        epochs_log.flush().map_err(Error::io(out.join(EPOCH_LOG)))?;
        log::info!(
            "epoch {}/{}: mse {:.6} total {:.6}",
            stats.epoch + 1,
            t.cfg.epochs,
            stats.mse,
            stats.total
        );
        t.checkpoint().save(&ck_dir)?;
        epochs.push(stats);
    }
    Ok(TrainReport {
        checkpoint: ck_dir,
        epochs,
        steps: t.step,
    })
}

/// Trains from scratch, writing logs and a checkpoint per epoch under `out`.
pub fn train(cfg: &TrainConfig, data: &Dataset, out: &Path) -> Result<TrainReport> {
    drive(Trainer::new(cfg, data)?, out, false)
}

/// Continues the run whose checkpoint is in `out` up to `cfg.epochs`.
pub fn resume(cfg: &TrainConfig, data: &Dataset, out: &Path) -> Result<TrainReport> {
    let ck = Checkpoint::load(&out.join(CHECKPOINT_DIR))?;
    drive(Trainer::resume(cfg, data, ck)?, out, true)
}

/// Trains the ground-truth autoencoder (MSE only). Only the architecture,
/// epochs, batch size, learning rate and seed of `cfg` are used.
pub fn pretrain_aux(cfg: &TrainConfig, data: &Dataset, out: &Path) -> Result<TrainReport> {
    let aux_cfg = TrainConfig {
        model: ModelConfig {
            kind: ModelKind::Autoencoder,
            ..cfg.model
        },
        lambda: 0.0,
        aux: None,
        ..cfg.clone()
    };
    train(&aux_cfg, data, out)
}
