//! Test-split evaluation and the multi-model comparison table.

use std::fs;
use std::path::{Path, PathBuf};

use pat_core::dataset::{write_json_atomic, Dataset, Split};
use pat_core::pgm::write_pgm;
use pat_tensor::{Graph, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::model::{ModelKind, Network};
use crate::params::ParamStore;
use crate::train::input_of;

pub const REPORT: &str = "report.json";
pub const TABLE: &str = "table.md";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    /// SSIM × 100.
    pub ssim: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub kind: ModelKind,
    pub dataset_id: String,
    pub seeds: Vec<u64>,
    /// Mean SSIM × 100.
    pub ssim: f64,
    pub psnr: f64,
    pub samples: Vec<SampleMetrics>,
}

/// Prediction for one input `[C,N,N]`, clamped to `[0, 1]`.
pub fn predict(net: &Network, params: &ParamStore<f32>, input: &[f32], n: usize) -> Result<Tensor<f64>> {
    let c = net.arch().in_channels;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(Tensor::new(&[1, c, n, n], input.to_vec())?);
    let f = net.forward(&mut g, &p, x)?;
    let y = g.value(f.y).cast::<f64>().map(|v| v.clamp(0.0, 1.0));
    Ok(y.reshape(&[n, n])?)
}

/// SSIM and PSNR of every test sample. `threads` bounds the worker pool
/// (0 = default); `export` receives `<id>.{pred,gt,das,kspace}.pgm` images.
pub fn evaluate(ck: &Checkpoint, label: &str, data: &Dataset, threads: usize, export: Option<&Path>) -> Result<MetricsReport> {
    if ck.index.dataset_id != data.id() {
        return Err(Error::Config(format!(
            "{label} was trained on dataset {}, evaluation data is {}",
            ck.index.dataset_id,
            data.id()
        )));
    }
    let n = data.manifest.n();
    if ck.index.image_size != n {
        return Err(Error::Architecture(format!("{label} expects {}px images, data has {n}px", ck.index.image_size)));
    }
    let net = ck.network()?;
    if let Some(dir) = export {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let records = &data.manifest.test;
    let samples = pool.install(|| {
        (0..records.len())
            .into_par_iter()
            .map(|i| {
                let s = data.load_sample(Split::Test, i)?;
                let pred = predict(&net, &ck.params, &input_of(ck.index.arch.kind, &s), n)?;
                let gt = s.gt.cast::<f64>().reshape(&[n, n])?;
                let id = records[i].id.clone();
                if let Some(dir) = export {
                    let stem = id.replace('/', "_");
                    write_pgm(&dir.join(format!("{stem}.pred.pgm")), &pred)?;
                    write_pgm(&dir.join(format!("{stem}.gt.pgm")), &gt)?;
                    write_pgm(&dir.join(format!("{stem}.das.pgm")), &s.das.cast())?;
                    write_pgm(&dir.join(format!("{stem}.kspace.pgm")), &s.kspace.cast())?;
                }
                Ok(SampleMetrics {
                    id,
                    ssim: 100.0 * ssim(&pred, &gt)?,
                    psnr: psnr(&pred, &gt)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    if samples.is_empty() {
        return Err(Error::Config("the test split is empty".into()));
    }
    let k = samples.len() as f64;
    Ok(MetricsReport {
        model: label.to_string(),
        kind: ck.index.arch.kind,
        dataset_id: data.id().to_string(),
        seeds: vec![ck.index.seed],
        ssim: samples.iter().map(|s| s.ssim).sum::<f64>() / k,
        psnr: samples.iter().map(|s| s.psnr).sum::<f64>() / k,
        samples,
    })
}

/// One row of the comparison: a label and the checkpoints of its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub label: String,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub kind: ModelKind,
    pub seeds: Vec<u64>,
    /// Mean over seeds of the per-seed mean SSIM × 100.
    pub ssim: f64,
    pub psnr: f64,
    pub per_seed: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset_id: String,
    pub split: Split,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn markdown(&self) -> String {
        let mut s = String::from("| Method | SSIM (×10⁻²) | PSNR (dB) | Seeds |\n|---|---:|---:|---|\n");
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            s.push_str(&format!("| {} | {:.4} | {:.4} | {} |\n", r.label, r.ssim, r.psnr, seeds.join(", ")));
        }
        s
    }
}

/// Evaluates every entry on the test split and writes `report.json` and
/// `table.md` to `out`. Rows keep the input order.
pub fn compare(entries: &[CompareEntry], data: &Dataset, out: &Path, threads: usize) -> Result<Comparison> {
    let mut loaded = Vec::new();
    for e in entries {
        if e.checkpoints.is_empty() {
            return Err(Error::Config(format!("{} lists no checkpoints", e.label)));
        }
        let cks = e.checkpoints.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
        loaded.push(cks);
    }
    // Every checkpoint must come from the same dataset, and that dataset must
    // be the one being evaluated.
    for (e, cks) in entries.iter().zip(&loaded) {
        for (p, ck) in e.checkpoints.iter().zip(cks) {
            if ck.index.dataset_id != data.id() {
                return Err(Error::Config(format!(
                    "{} ({}) was trained on dataset {}, comparison uses {}",
                    e.label,
                    p.display(),
                    ck.index.dataset_id,
                    data.id()
                )));
            }
        }
    }
    let mut rows = Vec::new();
    for (e, cks) in entries.iter().zip(&loaded) {
        let per_seed = cks
            .iter()
            .map(|ck| evaluate(ck, &e.label, data, threads, None))
            .collect::<Result<Vec<_>>>()?;
        let kinds: Vec<ModelKind> = per_seed.iter().map(|r| r.kind).collect();
        if kinds.iter().any(|&k| k != kinds[0]) {
            return Err(Error::Config(format!("{} mixes model kinds {kinds:?}", e.label)));
        }
        let k = per_seed.len() as f64;
        rows.push(ComparisonRow {
            label: e.label.clone(),
            kind: kinds[0],
            seeds: per_seed.iter().flat_map(|r| r.seeds.clone()).collect(),
            ssim: per_seed.iter().map(|r| r.ssim).sum::<f64>() / k,
            psnr: per_seed.iter().map(|r| r.psnr).sum::<f64>() / k,
            per_seed,
        });
    }
    let cmp = Comparison {
        dataset_id: data.id().to_string(),
        split: Split::Test,
        rows,
    };
    fs::create_dir_all(out).map_err(Error::io(out))?;
    write_json_atomic(&out.join(REPORT), &cmp)?;
    let table = out.join(TABLE);
    fs::write(&table, cmp.markdown()).map_err(Error::io(&table))?;
    Ok(cmp)
}
