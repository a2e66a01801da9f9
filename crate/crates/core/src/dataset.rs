//! Vessel-mask ingest and generation of `(DAS, k-space, ground truth)`
//! training triples.
//!
//! Layout on disk: `root/manifest.json` plus `root/{train,test}/NNNNN.{das,kspace,gt}.patn`.
//! Every tensor is `[1,N,N]` f32 in `[0, 1]`; the manifest records a SHA-256
//! per file and the physics used to simulate it.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use pat_tensor::{decode_patn, encode_patn, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pgm;
use crate::recon::{das_reconstruct, kspace_line_reconstruct, Roi};
use crate::sim::Physics;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
/// Masks with a smaller vessel fraction are rejected as empty.
pub const MIN_VESSEL_FRACTION: f64 = 0.005;
/// Attempts at drawing a non-empty crop before giving up on a sample.
const CROP_ATTEMPTS: usize = 64;

/// A binary vessel mask, `[H,W]` with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub name: String,
    pub pixels: Tensor<f64>,
}

impl Mask {
    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn vessel_fraction(&self) -> f64 {
        self.pixels.sum() / self.pixels.len() as f64
    }
}

/// Outcome of [`ingest_masks`].
#[derive(Debug, Clone)]
pub struct Ingested {
    pub masks: Vec<Mask>,
    pub unreadable: usize,
    pub empty: usize,
}

/// Thresholds a greymap at half range; `None` when it is effectively empty.
pub fn mask_from_greymap(name: &str, g: &pgm::Greymap) -> Option<Mask> {
    let mask = Mask {
        name: name.to_string(),
        pixels: g.threshold(),
    };
    (mask.vessel_fraction() >= MIN_VESSEL_FRACTION).then_some(mask)
}

/// Reads every `.pgm` file in `dir` (sorted by name). Unreadable files and
/// empty masks are counted and skipped.
pub fn ingest_masks(dir: &Path) -> Result<Ingested> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    let mut out = Ingested {
        masks: Vec::new(),
        unreadable: 0,
        empty: 0,
    };
    for path in paths {
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        match pgm::read_pgm(&path) {
            Ok(g) => match mask_from_greymap(&name, &g) {
                Some(m) => out.masks.push(m),
                None => out.empty += 1,
            },
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                out.unreadable += 1;
            }
        }
    }
    if out.unreadable > 0 || out.empty > 0 {
        log::warn!("{} unreadable and {} empty masks skipped", out.unreadable, out.empty);
    }
    if out.masks.is_empty() {
        return Err(Error::NoMasks(dir.to_path_buf()));
    }
    Ok(out)
}

/// Draws a vessel-like tree: a few trunks entering from the border that
/// wander, thin out and branch.
pub fn synthetic_vessel_mask(size: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let mut img = vec![0.0; size * size];
    let s = size as f64;
    let mut stamp = |x: f64, y: f64, r: f64| {
        let (lo_y, hi_y) = ((y - r).floor().max(0.0) as usize, (y + r).ceil().min(s - 1.0) as usize);
        let (lo_x, hi_x) = ((x - r).floor().max(0.0) as usize, (x + r).ceil().min(s - 1.0) as usize);
        for py in lo_y..=hi_y {
            for px in lo_x..=hi_x {
                let (dx, dy) = (px as f64 - x, py as f64 - y);
                if dx * dx + dy * dy <= r * r {
                    img[py * size + px] = 1.0;
                }
            }
        }
    };
    // (x, y, heading, radius, remaining length)
    let mut stack: Vec<(f64, f64, f64, f64, f64)> = Vec::new();
    for _ in 0..rng.gen_range(2..=4) {
        let t = rng.gen_range(0.0..s);
        let (x, y, heading) = match rng.gen_range(0..4) {
            0 => (t, 0.0, std::f64::consts::FRAC_PI_2),
            1 => (t, s - 1.0, -std::f64::consts::FRAC_PI_2),
            2 => (0.0, t, 0.0),
            _ => (s - 1.0, t, std::f64::consts::PI),
        };
        let heading = heading + rng.gen_range(-0.6..0.6);
        stack.push((x, y, heading, rng.gen_range(1.2..2.2), rng.gen_range(0.8..1.4) * s));
    }
    while let Some((mut x, mut y, mut heading, r, len)) = stack.pop() {
        let mut walked = 0.0;
        while walked < len && (0.0..s).contains(&x) && (0.0..s).contains(&y) {
            stamp(x, y, r);
            heading += rng.gen_range(-0.15..0.15);
            x += heading.cos();
            y += heading.sin();
            walked += 1.0;
            if r > 0.7 && rng.gen_bool(0.02) {
                let turn = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.4..1.1);
                stack.push((x, y, heading + turn, r * 0.7, (len - walked) * 0.7));
            }
        }
    }
    Tensor::new(&[size, size], img).expect("square buffer")
}

/// `count` synthetic masks of side `size`, a pure function of `seed`.
pub fn synthetic_masks(count: usize, size: usize, seed: u64) -> Vec<Mask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut pixels = synthetic_vessel_mask(size, &mut rng);
            while pixels.sum() < MIN_VESSEL_FRACTION * pixels.len() as f64 {
                pixels = synthetic_vessel_mask(size, &mut rng);
            }
            Mask {
                name: format!("synthetic-{i:03}"),
                pixels,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augment {
    pub crop: bool,
    pub rotate: bool,
    pub flip: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Augment {
            crop: true,
            rotate: true,
            flip: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Image side, a power of two.
    pub n: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub augment: Augment,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n: 64,
            n_train: 200,
            n_test: 50,
            augment: Augment::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n.is_power_of_two() || self.n < 8 {
            return Err(Error::Config(format!("image size {} must be a power of two ≥ 8", self.n)));
        }
        if self.n_train == 0 {
            return Err(Error::Config("a dataset needs at least one training sample".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Placement of the mask crop that became a sample's ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    pub mask: String,
    /// `(row, column)` of the crop's top-left corner in the mask.
    pub crop: (usize, usize),
    /// Counter-clockwise quarter turns.
    pub rotation_deg: u32,
    pub flip: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    /// Relative to the dataset root.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub das: FileRef,
    pub kspace: FileRef,
    pub gt: FileRef,
    pub augmentation: Augmentation,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub dataset_id: String,
    pub seed: u64,
    pub config: DatasetConfig,
    pub physics: Physics,
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> &[SampleRecord] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn n(&self) -> usize {
        self.config.n
    }
}

/// One training triple, each `[1,N,N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub das: Tensor<f32>,
    pub kspace: Tensor<f32>,
    pub gt: Tensor<f32>,
}

/// Seed of sample `index` in `split`, independent of every other sample.
pub fn sample_seed(seed: u64, split: Split, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match split {
        Split::Train => index as u64,
        Split::Test => (1u64 << 63) | index as u64,
    });
    rng.gen()
}

/// Crop, rotate and flip `mask` into an `n × n` ground truth. Quarter
/// turns and flips are exact, so the result stays binary.
pub fn place(mask: &Mask, n: usize, aug: &Augmentation) -> Tensor<f64> {
    let w = mask.width();
    let (r0, c0) = aug.crop;
    let src = mask.pixels.data();
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let (mut rr, mut cc) = (r, c);
            if aug.flip {
                cc = n - 1 - cc;
            }
            (rr, cc) = match aug.rotation_deg {
                90 => (cc, n - 1 - rr),
                180 => (n - 1 - rr, n - 1 - cc),
                270 => (n - 1 - cc, rr),
                _ => (rr, cc),
            };
            out[r * n + c] = src[(r0 + rr) * w + c0 + cc];
        }
    }
    Tensor::new(&[n, n], out).expect("n×n buffer")
}

fn draw_augmentation(masks: &[Mask], n: usize, aug: &Augment, rng: &mut ChaCha8Rng) -> (usize, Augmentation) {
    let mut last = None;
    for _ in 0..CROP_ATTEMPTS {
        let m = rng.gen_range(0..masks.len());
        let mask = &masks[m];
        let crop = if aug.crop {
            (rng.gen_range(0..=mask.height() - n), rng.gen_range(0..=mask.width() - n))
        } else {
            ((mask.height() - n) / 2, (mask.width() - n) / 2)
        };
        let rotation_deg = if aug.rotate { 90 * rng.gen_range(0..4) } else { 0 };
        let flip = aug.flip && rng.gen_bool(0.5);
        let a = Augmentation {
            mask: mask.name.clone(),
            crop,
            rotation_deg,
            flip,
        };
        let (r0, c0) = crop;
        let w = mask.width();
        let set: f64 = (r0..r0 + n).map(|r| mask.pixels.data()[r * w + c0..r * w + c0 + n].iter().sum::<f64>()).sum();
        if set > 0.0 {
            return (m, a);
        }
        last = Some((m, a));
    }
    last.expect("at least one attempt")
}

fn as_image(t: &Tensor<f64>) -> Result<Tensor<f32>> {
    Ok(t.cast::<f32>().reshape(&[1, t.shape()[0], t.shape()[1]])?)
}

fn write_file(root: &Path, rel: &str, t: &Tensor<f32>) -> Result<FileRef> {
    let bytes = encode_patn(t);
    let path = root.join(rel);
    fs::write(&path, &bytes).map_err(Error::io(&path))?;
    Ok(FileRef {
        path: rel.to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Simulates and reconstructs one sample; everything it touches is derived
/// from its own seed.
fn build_sample(masks: &[Mask], cfg: &DatasetConfig, physics: &Physics, root: &Path, split: Split, index: usize, seed: u64) -> Result<SampleRecord> {
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, augmentation) = draw_augmentation(masks, n, &cfg.augment, &mut rng);
    let gt = place(&masks[m], n, &augmentation);
    let data = physics.simulate(&gt)?;
    let roi = Roi::under_array(&data.geometry, n);
    let das = das_reconstruct(&data, &roi)?;
    let kspace = kspace_line_reconstruct(&data, &roi)?;
    let id = format!("{index:05}");
    let stem = format!("{split}/{id}");
    Ok(SampleRecord {
        das: write_file(root, &format!("{stem}.das.patn"), &as_image(&das.pixels)?)?,
        kspace: write_file(root, &format!("{stem}.kspace.patn"), &as_image(&kspace.pixels)?)?,
        gt: write_file(root, &format!("{stem}.gt.patn"), &as_image(&gt)?)?,
        id: format!("{split}/{id}"),
        augmentation,
        seed,
    })
}

fn dataset_id(seed: u64, cfg: &DatasetConfig, physics: &Physics, train: &[SampleRecord], test: &[SampleRecord]) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update(serde_json::to_vec(physics).expect("physics serializes"));
    for r in train.iter().chain(test) {
        for f in [&r.das, &r.kspace, &r.gt] {
            h.update(f.sha256.as_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}

/// Writes `value` as pretty JSON through a temporary file and a rename.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let body = serde_json::to_vec_pretty(value).map_err(Error::json(path))?;
    fs::write(&tmp, body).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

/// Generates the dataset under `root`, which must be absent or empty.
///
/// Samples are built on a pool of `threads` workers (0 = rayon default);
/// the output does not depend on the worker count. On failure everything
/// written under `root` is removed.
pub fn build_dataset(masks: &[Mask], cfg: &DatasetConfig, physics: &Physics, seed: u64, root: &Path, threads: usize) -> Result<Manifest> {
    cfg.validate()?;
    physics.validate()?;
    if physics.sensors.n_elements != cfg.n {
        return Err(Error::Config(format!(
            "physics is set up for {}-pixel images, dataset asks for {}",
            physics.sensors.n_elements, cfg.n
        )));
    }
    if masks.is_empty() {
        return Err(Error::Config("no masks to sample from".into()));
    }
    if let Some(m) = masks.iter().find(|m| m.height() < cfg.n || m.width() < cfg.n) {
        return Err(Error::Config(format!(
            "mask {} is {}×{}, smaller than the {}-pixel image size",
            m.name,
            m.height(),
            m.width(),
            cfg.n
        )));
    }
    if root.exists() && fs::read_dir(root).map_err(Error::io(root))?.next().is_some() {
        return Err(Error::Config(format!("{} is not empty", root.display())));
    }
    let result = build_into(masks, cfg, physics, seed, root, threads);
    if result.is_err() {
        let _ = fs::remove_dir_all(root);
    }
    result
}

fn build_into(masks: &[Mask], cfg: &DatasetConfig, physics: &Physics, seed: u64, root: &Path, threads: usize) -> Result<Manifest> {
    for split in [Split::Train, Split::Test] {
        let dir = root.join(split.to_string());
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let jobs: Vec<(Split, usize)> = (0..cfg.n_train)
        .map(|i| (Split::Train, i))
        .chain((0..cfg.n_test).map(|i| (Split::Test, i)))
        .collect();
    let records: Vec<SampleRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(split, i)| build_sample(masks, cfg, physics, root, split, i, sample_seed(seed, split, i)))
            .collect::<Result<_>>()
    })?;
    let test = records[cfg.n_train..].to_vec();
    let mut train = records;
    train.truncate(cfg.n_train);
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        dataset_id: dataset_id(seed, cfg, physics, &train, &test),
        seed,
        config: *cfg,
        physics: *physics,
        train,
        test,
    };
    write_json_atomic(&root.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// A dataset opened from its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let path = root.join(MANIFEST);
        let text = fs::read(&path).map_err(Error::io(&path))?;
        let manifest: Manifest = serde_json::from_slice(&text).map_err(Error::json(&path))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::Invalid(format!(
                "{}: schema version {} (expected {SCHEMA_VERSION})",
                path.display(),
                manifest.schema_version
            )));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn id(&self) -> &str {
        &self.manifest.dataset_id
    }

    pub fn len(&self, split: Split) -> usize {
        self.manifest.split(split).len()
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    /// Loads and validates sample `index` of `split`.
    pub fn load_sample(&self, split: Split, index: usize) -> Result<ImagePair> {
        let records = self.manifest.split(split);
        let rec = records.get(index).ok_or(Error::IndexOutOfRange {
            split: split.to_string(),
            index,
            len: records.len(),
        })?;
        let n = self.manifest.n();
        let load = |f: &FileRef| -> Result<Tensor<f32>> {
            let fail = |reason: String| Error::Sample {
                id: rec.id.clone(),
                reason,
            };
            let path = self.root.join(&f.path);
            let bytes = fs::read(&path).map_err(|e| fail(format!("{}: {e}", f.path)))?;
            if hex::encode(Sha256::digest(&bytes)) != f.sha256 {
                return Err(fail(format!("{}: checksum mismatch", f.path)));
            }
            let t = decode_patn(&bytes).map_err(|e| fail(format!("{}: {e}", f.path)))?.into_tensor::<f32>();
            if t.shape() != [1, n, n] {
                return Err(fail(format!("{}: shape {:?}, expected [1, {n}, {n}]", f.path, t.shape())));
            }
            if !t.data().iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(fail(format!("{}: values outside [0, 1]", f.path)));
            }
            Ok(t)
        };
        Ok(ImagePair {
            das: load(&rec.das)?,
            kspace: load(&rec.kspace)?,
            gt: load(&rec.gt)?,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<ImagePair>> {
        (0..self.len(split)).map(|i| self.load_sample(split, i)).collect()
    }
}
