//! Checkpoint directories: `index.json`, `params/<name>.patn` and, when
//! training can resume, `optim/<name>.{m,v}.patn`.

use std::fs;
use std::path::Path;

use pat_tensor::{read_patn, write_patn, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mi::MiHead;
use crate::model::{Arch, Network};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::train::TrainConfig;

pub const INDEX: &str = "index.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimEntry {
    pub adam: AdamConfig,
    pub t: u64,
    pub t_head: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Index {
    pub format_version: u32,
    pub arch: Arch,
    pub seed: u64,
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub image_size: usize,
    pub latent_shape: [usize; 3],
    pub dataset_id: String,
    pub train: TrainConfig,
    pub params: Vec<ParamEntry>,
    /// Posterior-head parameters (`mi.*`), empty without one.
    pub head: Vec<ParamEntry>,
    pub optimizer: Option<OptimEntry>,
}

/// Optimizer state of the network and, if present, the head.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub main: Adam<f32>,
    pub head: Option<Adam<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub index: Index,
    pub params: ParamStore<f32>,
    pub head: Option<ParamStore<f32>>,
    pub optim: Option<OptimState>,
}

fn entries(store: &ParamStore<f32>) -> Vec<ParamEntry> {
    store
        .names()
        .iter()
        .zip(store.tensors())
        .map(|(name, t)| ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        })
        .collect()
}

fn bad(dir: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: dir.to_path_buf(),
        reason: reason.into(),
    }
}

fn check_name(dir: &Path, name: &str) -> Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if !ok || name.starts_with('.') {
        return Err(bad(dir, format!("unsafe parameter name {name:?}")));
    }
    Ok(())
}

fn write_tensor(dir: &Path, rel: &str, t: &Tensor<f32>) -> Result<()> {
    let path = dir.join(rel);
    write_patn(&path, t).map_err(|e| bad(dir, format!("{rel}: {e}")))
}

fn read_tensor(dir: &Path, rel: &str, shape: &[usize]) -> Result<Tensor<f32>> {
    let t: Tensor<f32> = read_patn(dir.join(rel)).map_err(|e| bad(dir, format!("{rel}: {e}")))?;
    if t.shape() != shape {
        return Err(bad(dir, format!("{rel}: shape {:?}, index says {shape:?}", t.shape())));
    }
    Ok(t)
}

fn read_store(dir: &Path, list: &[ParamEntry]) -> Result<ParamStore<f32>> {
    let mut store = ParamStore::new();
    for e in list {
        check_name(dir, &e.name)?;
        let t = read_tensor(dir, &format!("params/{}.patn", e.name), &e.shape)?;
        store.push(e.name.clone(), t);
    }
    Ok(store)
}

fn read_moments(dir: &Path, list: &[ParamEntry], cfg: AdamConfig, t: u64) -> Result<Adam<f32>> {
    let mut m = Vec::new();
    let mut v = Vec::new();
    for e in list {
        m.push(read_tensor(dir, &format!("optim/{}.m.patn", e.name), &e.shape)?);
        v.push(read_tensor(dir, &format!("optim/{}.v.patn", e.name), &e.shape)?);
    }
    Ok(Adam { cfg, t, m, v })
}

impl Checkpoint {
    /// Writes the checkpoint to `dir`, replacing any previous one only once
    /// the new copy is complete.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let name = dir.file_name().ok_or_else(|| bad(dir, "no directory name"))?.to_string_lossy().into_owned();
        let tmp = dir.with_file_name(format!("{name}.tmp"));
        let old = dir.with_file_name(format!("{name}.old"));
        for p in [&tmp, &old] {
            if p.exists() {
                fs::remove_dir_all(p).map_err(Error::io(p))?;
            }
        }
        self.write_into(&tmp)?;
        if dir.exists() {
            fs::rename(dir, &old).map_err(Error::io(dir))?;
        }
        fs::rename(&tmp, dir).map_err(Error::io(&tmp))?;
        if old.exists() {
            fs::remove_dir_all(&old).map_err(Error::io(&old))?;
        }
        Ok(())
    }

    fn write_into(&self, dir: &Path) -> Result<()> {
        for sub in ["params", "optim"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(Error::io(&p))?;
        }
        let mut index = self.index.clone();
        index.params = entries(&self.params);
        index.head = self.head.as_ref().map(entries).unwrap_or_default();
        index.optimizer = self.optim.as_ref().map(|o| OptimEntry {
            adam: o.main.cfg,
            t: o.main.t,
            t_head: o.head.as_ref().map(|h| h.t),
        });
        let stores = std::iter::once(&self.params).chain(self.head.as_ref());
        for store in stores {
            for (name, t) in store.names().iter().zip(store.tensors()) {
                check_name(dir, name)?;
                write_tensor(dir, &format!("params/{name}.patn"), t)?;
            }
        }
        if let Some(o) = &self.optim {
            let pairs = std::iter::once((&self.params, Some(&o.main))).chain(self.head.as_ref().map(|h| (h, o.head.as_ref())));
            for (store, adam) in pairs {
                let adam = adam.ok_or_else(|| bad(dir, "optimizer state missing for the posterior head"))?;
                for ((name, m), v) in store.names().iter().zip(&adam.m).zip(&adam.v) {
                    write_tensor(dir, &format!("optim/{name}.m.patn"), m)?;
                    write_tensor(dir, &format!("optim/{name}.v.patn"), v)?;
                }
            }
        }
        let path = dir.join(INDEX);
        let body = serde_json::to_vec_pretty(&index).map_err(Error::json(&path))?;
        fs::write(&path, body).map_err(Error::io(&path))
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let path = dir.join(INDEX);
        let text = fs::read(&path).map_err(Error::io(&path))?;
        let index: Index = serde_json::from_slice(&text).map_err(Error::json(&path))?;
        if index.format_version != FORMAT_VERSION {
            return Err(bad(dir, format!("format version {} (expected {FORMAT_VERSION})", index.format_version)));
        }
        let params = read_store(dir, &index.params)?;
        let head = if index.head.is_empty() { None } else { Some(read_store(dir, &index.head)?) };
        let optim = match index.optimizer {
            Some(o) => Some(OptimState {
                main: read_moments(dir, &index.params, o.adam, o.t)?,
                head: match o.t_head {
                    Some(t) => Some(read_moments(dir, &index.head, o.adam, t)?),
                    None => None,
                },
            }),
            None => None,
        };
        let ck = Checkpoint {
            index,
            params,
            head,
            optim,
        };
        ck.network()?;
        Ok(ck)
    }

    /// The layout described by the index, verified against the stored
    /// parameter names and shapes.
    pub fn network(&self) -> Result<Network> {
        let (net, fresh) = Network::init::<f32>(self.index.arch, self.index.seed);
        same_layout(&fresh, &self.params).map_err(Error::Architecture)?;
        Ok(net)
    }

    /// The posterior head, if one was trained.
    pub fn mi_head(&self) -> Result<Option<MiHead>> {
        let Some(stored) = &self.head else { return Ok(None) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (head, fresh) = MiHead::init::<f32, _>(&mut rng, self.index.latent_shape[0]);
        same_layout(&fresh, stored).map_err(Error::Architecture)?;
        Ok(Some(head))
    }
}

fn same_layout(expected: &ParamStore<f32>, got: &ParamStore<f32>) -> std::result::Result<(), String> {
    if expected.names() != got.names() {
        return Err("parameter names do not match the architecture".into());
    }
    for (name, (a, b)) in expected.names().iter().zip(expected.tensors().iter().zip(got.tensors())) {
        if a.shape() != b.shape() {
            return Err(format!("{name}: shape {:?}, architecture needs {:?}", b.shape(), a.shape()));
        }
    }
    Ok(())
}
