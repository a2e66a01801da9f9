use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use pat_core::dataset::{build_dataset, synthetic_masks, Augment, Dataset, DatasetConfig};
use pat_core::sim::Physics;
use pat_net::checkpoint::Checkpoint;
use pat_net::eval::{compare, evaluate, CompareEntry, REPORT, TABLE};
use pat_net::train::{encode_latent, pretrain_aux, resume, train, ModelConfig, TrainConfig, Trainer, STEP_LOG};
use pat_net::{Error, ModelKind};

const N: usize = 32;

fn build(name: &str, n_train: usize, n_test: usize, seed: u64) -> PathBuf {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&root);
    let cfg = DatasetConfig {
        n: N,
        n_train,
        n_test,
        augment: Augment::default(),
    };
    let masks = synthetic_masks(6, 48, seed);
    build_dataset(&masks, &cfg, &Physics::for_image(N).unwrap(), seed, &root, 0).unwrap();
    root
}

/// Two training and two test samples.
fn tiny() -> Dataset {
    static ROOT: OnceLock<PathBuf> = OnceLock::new();
    Dataset::open(ROOT.get_or_init(|| build("train-tiny", 2, 2, 1))).unwrap()
}

/// Twenty training samples for the autoencoder.
fn toy() -> Dataset {
    static ROOT: OnceLock<PathBuf> = OnceLock::new();
    Dataset::open(ROOT.get_or_init(|| build("train-toy", 20, 1, 2))).unwrap()
}

fn small(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        model: ModelConfig { kind, depth: 2, base: 4 },
        epochs: 1,
        batch_size: 1,
        lambda: 0.0,
        ..TrainConfig::default()
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("runs").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

/// Autoencoder matching `small(..)` latents, trained for one epoch.
fn aux_checkpoint() -> PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let out = scratch("aux");
        pretrain_aux(&small(ModelKind::Autoencoder), &tiny(), &out).unwrap().checkpoint
    })
    .clone()
}

fn all(t: &Trainer) -> Vec<usize> {
    (0..t.n_samples()).collect()
}

#[test]
fn one_epoch_lowers_the_training_loss() {
    let data = tiny();
    for (kind, lambda, aux) in [
        (ModelKind::Unet1, 0.0, None),
        (ModelKind::Unet2, 0.0, None),
        (ModelKind::Dudounet, 1.0, Some(aux_checkpoint())),
    ] {
        let cfg = TrainConfig { lambda, aux, ..small(kind) };
        let mut t = Trainer::new(&cfg, &data).unwrap();
        let before = t.loss_on(&all(&t)).unwrap();
        let stats = t.run_epoch(|_| Ok(())).unwrap();
        let after = t.loss_on(&all(&t)).unwrap();
        assert_eq!(stats.steps, 2);
        assert!(after.2 < before.2, "{kind}: {} -> {}", before.2, after.2);
        assert_eq!(after.1.is_some(), kind == ModelKind::Dudounet);
    }
}

#[test]
fn zero_lambda_matches_training_without_the_head() {
    let data = tiny();
    let plain = small(ModelKind::Dudounet);
    let with_head = TrainConfig {
        aux: Some(aux_checkpoint()),
        ..plain.clone()
    };
    let mut a = Trainer::new(&plain, &data).unwrap();
    let mut b = Trainer::new(&with_head, &data).unwrap();
    assert!(a.head_params().is_none() && b.head_params().is_some());
    let head_before = b.head_params().unwrap().clone();
    for step in 0..50 {
        let idx = [step % 2];
        let (la, lb) = (a.step(&idx).unwrap(), b.step(&idx).unwrap());
        assert_eq!(la.total.to_bits(), lb.total.to_bits(), "step {step}");
        assert!(la.neg_log_q.is_none() && lb.neg_log_q.is_some());
    }
    assert_eq!(a.params(), b.params());
    // The head sees zero gradients, so Adam leaves it where it started.
    assert_eq!(b.head_params().unwrap(), &head_before);
}

#[test]
fn resumed_run_continues_exactly() {
    let data = tiny();
    let cfg = TrainConfig {
        aux: Some(aux_checkpoint()),
        lambda: 1.0,
        ..small(ModelKind::Dudounet)
    };
    let mut a = Trainer::new(&cfg, &data).unwrap();
    a.run_epoch(|_| Ok(())).unwrap();
    let dir = scratch("resume-ck");
    a.checkpoint().save(&dir).unwrap();
    let mut b = Trainer::resume(&cfg, &data, Checkpoint::load(&dir).unwrap()).unwrap();
    assert_eq!(b.step_count(), 2);
    assert_eq!(b.epochs_done(), 1);
    let (sa, sb) = (a.run_epoch(|_| Ok(())).unwrap(), b.run_epoch(|_| Ok(())).unwrap());
    assert!((sa.total - sb.total).abs() <= 1e-6 * sa.total.abs());
    assert_eq!(a.params(), b.params());

    // Same through the file-level entry points.
    let two = TrainConfig { epochs: 2, ..cfg.clone() };
    let straight = scratch("resume-straight");
    train(&two, &data, &straight).unwrap();
    let split = scratch("resume-split");
    train(&cfg, &data, &split).unwrap();
    let report = resume(&two, &data, &split).unwrap();
    assert_eq!(report.epochs.len(), 1);
    assert_eq!(
        fs::read(straight.join(STEP_LOG)).unwrap(),
        fs::read(split.join(STEP_LOG)).unwrap()
    );
    let (x, y) = (
        Checkpoint::load(&straight.join("checkpoint")).unwrap(),
        Checkpoint::load(&split.join("checkpoint")).unwrap(),
    );
    assert_eq!(x, y);
}

#[test]
fn identical_configs_reproduce_bit_for_bit() {
    let data = tiny();
    let cfg = small(ModelKind::Unet2);
    let (a, b) = (scratch("repro-a"), scratch("repro-b"));
    train(&cfg, &data, &a).unwrap();
    train(&cfg, &data, &b).unwrap();
    assert_eq!(fs::read(a.join(STEP_LOG)).unwrap(), fs::read(b.join(STEP_LOG)).unwrap());
    let mut files: Vec<_> = fs::read_dir(a.join("checkpoint/params")).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert!(!files.is_empty());
    for f in files {
        let rel = Path::new("checkpoint/params").join(&f);
        assert_eq!(fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap(), "{f:?}");
    }
    let log = fs::read_to_string(a.join(STEP_LOG)).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["step", "epoch", "mse", "neg_log_q", "total"] {
        assert!(first.get(key).is_some(), "{key} missing from {first}");
    }
}

#[test]
fn autoencoder_learns_the_toy_set() {
    let data = toy();
    let cfg = TrainConfig {
        model: ModelConfig {
            kind: ModelKind::Autoencoder,
            depth: 2,
            base: 8,
        },
        batch_size: 1,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(&cfg, &data).unwrap();
    let idx = all(&t);
    let before = t.loss_on(&idx).unwrap().0;
    while t.step_count() < 200 {
        t.run_epoch(|_| Ok(())).unwrap();
    }
    let after = t.loss_on(&idx).unwrap().0;
    assert!(after < before / 5.0, "{before} -> {after}");
}

#[test]
fn aux_checkpoint_reloads_to_identical_latents_and_stays_frozen() {
    let data = tiny();
    let path = aux_checkpoint();
    let snapshot = Checkpoint::load(&path).unwrap();
    assert_eq!(snapshot.index.arch.kind, ModelKind::Autoencoder);
    assert_eq!(snapshot.index.latent_shape, [16, 8, 8]);
    assert!(snapshot.head.is_none());

    let y = data.load_sample(pat_core::dataset::Split::Train, 0).unwrap().gt.reshape(&[1, 1, N, N]).unwrap();
    let again = Checkpoint::load(&path).unwrap();
    let z_a = encode_latent(&snapshot.network().unwrap(), &snapshot.params, &y).unwrap();
    let z_b = encode_latent(&again.network().unwrap(), &again.params, &y).unwrap();
    assert_eq!(z_a.shape(), [1, 16, 8, 8]);
    assert_eq!(z_a, z_b);

    let cfg = TrainConfig {
        aux: Some(path.clone()),
        lambda: 1.0,
        ..small(ModelKind::Dudounet)
    };
    let mut t = Trainer::new(&cfg, &data).unwrap();
    t.run_epoch(|_| Ok(())).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), snapshot);
}

#[test]
fn rejects_invalid_configurations() {
    let data = tiny();
    let needs_aux = TrainConfig {
        lambda: 1.0,
        ..small(ModelKind::Dudounet)
    };
    assert!(matches!(Trainer::new(&needs_aux, &data), Err(Error::Config(_))));
    let negative = TrainConfig {
        lambda: -1.0,
        ..small(ModelKind::Unet1)
    };
    assert!(Trainer::new(&negative, &data).is_err());
    let empty_batch = TrainConfig {
        batch_size: 0,
        ..small(ModelKind::Unet1)
    };
    assert!(Trainer::new(&empty_batch, &data).is_err());
    let wider = TrainConfig {
        model: ModelConfig {
            kind: ModelKind::Dudounet,
            depth: 2,
            base: 8,
        },
        aux: Some(aux_checkpoint()),
        ..needs_aux.clone()
    };
    assert!(matches!(Trainer::new(&wider, &data), Err(Error::Architecture(_))));
    let not_an_autoencoder = scratch("not-aux");
    let report = train(&small(ModelKind::Unet1), &data, &not_an_autoencoder).unwrap();
    let wrong = TrainConfig {
        aux: Some(report.checkpoint),
        ..needs_aux
    };
    assert!(matches!(Trainer::new(&wrong, &data), Err(Error::Config(_))));
}

#[test]
fn divergence_names_the_step() {
    let data = tiny();
    let cfg = TrainConfig {
        lr: 1e30,
        epochs: 5,
        ..small(ModelKind::Unet1)
    };
    match train(&cfg, &data, &scratch("diverge")) {
        Err(Error::Diverged { step, loss }) => {
            assert!(step >= 2, "step {step}");
            assert!(!loss.is_finite());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn evaluation_and_comparison_reports() {
    let data = tiny();
    let out = scratch("eval");
    let a = train(&small(ModelKind::Unet1), &data, &out.join("a")).unwrap().checkpoint;
    let b_cfg = TrainConfig {
        seed: 3,
        ..small(ModelKind::Unet2)
    };
    let b = train(&b_cfg, &data, &out.join("b")).unwrap().checkpoint;

    let ck = Checkpoint::load(&a).unwrap();
    let pgm = out.join("pgm");
    let rep = evaluate(&ck, "unet1", &data, 2, Some(&pgm)).unwrap();
    assert_eq!(rep.samples.len(), 2);
    let mean = rep.samples.iter().map(|s| s.ssim).sum::<f64>() / 2.0;
    assert!((rep.ssim - mean).abs() <= 1e-9);
    assert!(rep.ssim.is_finite() && rep.psnr.is_finite());
    let pred = pat_core::pgm::read_pgm(&pgm.join("test_00000.pred.pgm")).unwrap();
    assert_eq!((pred.width, pred.height), (N, N));

    let entries = vec![
        CompareEntry {
            label: "B".into(),
            checkpoints: vec![b.clone()],
        },
        CompareEntry {
            label: "A".into(),
            checkpoints: vec![a.clone()],
        },
        CompareEntry {
            label: "A again".into(),
            checkpoints: vec![a.clone()],
        },
    ];
    let cmp = compare(&entries, &data, &out.join("cmp"), 1).unwrap();
    let labels: Vec<_> = cmp.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["B", "A", "A again"]);
    assert_eq!(cmp.rows[1].ssim, cmp.rows[2].ssim);
    assert_eq!(cmp.rows[1].psnr, cmp.rows[2].psnr);
    assert_eq!(cmp.rows[0].seeds, [3]);
    let table = fs::read_to_string(out.join("cmp").join(TABLE)).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().nth(2).unwrap().starts_with("| B |"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("cmp").join(REPORT)).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 3);

    // A checkpoint from another dataset is refused.
    let other = Dataset::open(&build("train-other", 2, 1, 9)).unwrap();
    let c = train(&small(ModelKind::Unet1), &other, &out.join("c")).unwrap().checkpoint;
    let mixed = vec![
        CompareEntry {
            label: "A".into(),
            checkpoints: vec![a],
        },
        CompareEntry {
            label: "C".into(),
            checkpoints: vec![c],
        },
    ];
    let err = compare(&mixed, &data, &out.join("mixed"), 1).unwrap_err();
    assert!(err.to_string().contains("dataset"), "{err}");
    assert!(!out.join("mixed").join(REPORT).exists());
}

#[test]
fn predictions_are_clamped() {
    let data = tiny();
    let ck = Trainer::new(&small(ModelKind::Unet1), &data).unwrap().checkpoint();
    let net = ck.network().unwrap();
    let input = vec![5.0f32; N * N];
    let y = pat_net::eval::predict(&net, &ck.params, &input, N).unwrap();
    assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(y.shape(), [N, N]);
}
