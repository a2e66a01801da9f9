//! `pat`: dataset generation, classical reconstruction, training and
//! evaluation of the limited-view reconstruction networks.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pat_core::dataset::{build_dataset, ingest_masks, synthetic_masks, write_json_atomic, Dataset};
use pat_core::pgm;
use pat_core::recon::{reconstruct, Algorithm, Roi};
use pat_core::sim::SensorData;
use pat_net::checkpoint::Checkpoint;
use pat_net::eval::{compare, evaluate, CompareEntry, REPORT};
use pat_net::train::{pretrain_aux, resume, train};
use pat_net::ModelKind;
use pat_tensor::{read_patn, write_patn, Tensor};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl From<pat_core::Error> for CliError {
    fn from(e: pat_core::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<pat_net::Error> for CliError {
    fn from(e: pat_net::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<pat_tensor::TensorError> for CliError {
    fn from(e: pat_tensor::TensorError) -> Self {
        CliError::Domain(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "pat", version, about = "Limited-view photoacoustic reconstruction toolkit")]
struct Cli {
    /// JSON run configuration (sections: physics, dataset, model, train).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for dataset generation and evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Only report warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate and reconstruct a dataset of (DAS, k-space, ground truth) triples.
    MakeDataset {
        #[command(flatten)]
        out: OutDir,
        /// Directory of PGM vessel masks (overrides the configuration).
        #[arg(long, value_name = "DIR")]
        masks: Option<PathBuf>,
        /// Image side.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Record sensor traces for an initial-pressure image (.pgm or .patn).
    Simulate {
        #[command(flatten)]
        out: OutDir,
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
    /// Classical reconstruction of stored sensor traces.
    Reconstruct {
        #[command(flatten)]
        out: OutDir,
        /// Sensor traces written by `simulate`.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_enum)]
        algo: AlgoArg,
        /// Also write an 8-bit PGM of the image.
        #[arg(long)]
        export_pgm: bool,
    },
    /// Pre-train the ground-truth autoencoder.
    TrainAux {
        #[command(flatten)]
        out: OutDir,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train a reconstruction network.
    Train {
        #[command(flatten)]
        out: OutDir,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Autoencoder checkpoint supplying the latent prior.
        #[arg(long, value_name = "DIR")]
        aux: Option<PathBuf>,
        /// Continue from the checkpoint already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        out: OutDir,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// Write prediction, ground truth and input images as PGM.
        #[arg(long)]
        export_pgm: bool,
    },
    /// Tabulate several models, each averaged over its seeds.
    Compare {
        #[command(flatten)]
        out: OutDir,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// `LABEL=CKPT[,CKPT...]`, one per row, in table order.
        #[arg(long = "entry", value_name = "LABEL=CKPTS", required = true)]
        entries: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum AlgoArg {
    Das,
    Kspace,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModelArg {
    Dudounet,
    Unet1,
    Unet2,
}

fn load_image(path: &Path) -> Result<Tensor<f64>, CliError> {
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let t = if is_pgm {
        pgm::read_pgm(path)?.to_unit()
    } else {
        read_patn::<f64>(path)?
    };
    match t.shape() {
        [h, w] | [1, h, w] => Ok(t.clone().reshape(&[*h, *w])?),
        s => Err(CliError::Domain(format!("{}: expected a single image, got shape {s:?}", path.display()))),
    }
}

fn parse_entry(s: &str) -> Result<CompareEntry, CliError> {
    let (label, paths) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--entry {s:?} is not LABEL=CKPT[,CKPT...]")))?;
    let checkpoints: Vec<PathBuf> = paths.split(',').filter(|p| !p.is_empty()).map(PathBuf::from).collect();
    if label.is_empty() || checkpoints.is_empty() {
        return Err(CliError::Usage(format!("--entry {s:?} needs a label and at least one checkpoint")));
    }
    Ok(CompareEntry {
        label: label.to_string(),
        checkpoints,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let threads = cli.threads;
    // Flag overrides are folded into the configuration first so that the
    // resolved copy records what actually ran.
    match &cli.command {
        Command::MakeDataset { masks, n, n_train, n_test, .. } => {
            if masks.is_some() {
                cfg.dataset.masks = masks.clone();
            }
            cfg.dataset.n = n.unwrap_or(cfg.dataset.n);
            cfg.dataset.n_train = n_train.unwrap_or(cfg.dataset.n_train);
            cfg.dataset.n_test = n_test.unwrap_or(cfg.dataset.n_test);
        }
        Command::TrainAux { epochs, .. } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.model.kind = ModelKind::Autoencoder;
            cfg.train.aux = None;
        }
        Command::Train {
            model, epochs, lambda, aux, ..
        } => {
            if let Some(m) = model {
                cfg.model.kind = match m {
                    ModelArg::Dudounet => ModelKind::Dudounet,
                    ModelArg::Unet1 => ModelKind::Unet1,
                    ModelArg::Unet2 => ModelKind::Unet2,
                };
            }
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.lambda = lambda.unwrap_or(cfg.train.lambda);
            if aux.is_some() {
                cfg.train.aux = aux.clone();
            }
        }
        _ => {}
    }
    cfg.validate()?;

    match cli.command {
        Command::MakeDataset { out, .. } => {
            let masks = match &cfg.dataset.masks {
                Some(dir) => ingest_masks(dir)?.masks,
                None => synthetic_masks(cfg.dataset.synthetic_masks, cfg.dataset.mask_size(), cfg.seed),
            };
            let physics = cfg.physics.physics(cfg.dataset.n)?;
            let manifest = build_dataset(&masks, &cfg.dataset.dataset(), &physics, cfg.seed, &out.out, threads)?;
            cfg.write_resolved(&out.out)?;
            log::info!(
                "dataset {} with {} train / {} test samples in {}",
                manifest.dataset_id,
                manifest.train.len(),
                manifest.test.len(),
                out.out.display()
            );
        }
        Command::Simulate { out, input } => {
            let p0 = load_image(&input)?;
            let (h, w) = (p0.shape()[0], p0.shape()[1]);
            if h != w {
                return Err(CliError::Domain(format!("initial pressure must be square, got {h}×{w}")));
            }
            let physics = cfg.physics.physics(w)?;
            let data = physics.simulate(&p0)?;
            cfg.write_resolved(&out.out)?;
            data.save(&out.out.join("sensor.patn"))?;
        }
        Command::Reconstruct {
            out,
            input,
            algo,
            export_pgm,
        } => {
            let data = SensorData::load(&input)?;
            let algorithm = match algo {
                AlgoArg::Das => Algorithm::Das,
                AlgoArg::Kspace => Algorithm::Kspace,
            };
            let roi = Roi::under_array(&data.geometry, data.geometry.n_elements);
            let img = reconstruct(algorithm, &data, &roi)?;
            cfg.write_resolved(&out.out)?;
            write_patn(out.out.join(format!("{algorithm}.patn")), &img.pixels)?;
            if export_pgm {
                img.save_pgm(&out.out.join(format!("{algorithm}.pgm")))?;
            }
        }
        Command::TrainAux { out, data, .. } => {
            let ds = Dataset::open(&data)?;
            cfg.write_resolved(&out.out)?;
            let report = pretrain_aux(&cfg.train_config(), &ds, &out.out)?;
            log::info!("autoencoder checkpoint in {}", report.checkpoint.display());
        }
        Command::Train {
            out, data, resume: again, ..
        } => {
            let ds = Dataset::open(&data)?;
            cfg.write_resolved(&out.out)?;
            let tc = cfg.train_config();
            let report = if again { resume(&tc, &ds, &out.out)? } else { train(&tc, &ds, &out.out)? };
            log::info!("{} steps; checkpoint in {}", report.steps, report.checkpoint.display());
        }
        Command::Eval {
            out,
            data,
            checkpoint,
            export_pgm,
        } => {
            let ds = Dataset::open(&data)?;
            let ck = Checkpoint::load(&checkpoint)?;
            cfg.write_resolved(&out.out)?;
            let label = ck.index.arch.kind.to_string();
            let pgm_dir = out.out.join("pgm");
            let report = evaluate(&ck, &label, &ds, threads, export_pgm.then_some(pgm_dir.as_path()))?;
            write_json_atomic(&out.out.join(REPORT), &report)?;
            log::info!("{label}: SSIM {:.4}×10⁻², PSNR {:.4} dB", report.ssim, report.psnr);
        }
        Command::Compare { out, data, entries } => {
            let entries = entries.iter().map(|s| parse_entry(s)).collect::<Result<Vec<_>, _>>()?;
            let ds = Dataset::open(&data)?;
            cfg.write_resolved(&out.out)?;
            let cmp = compare(&entries, &ds, &out.out, threads)?;
            if !cli.quiet {
                print!("{}", cmp.markdown());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
