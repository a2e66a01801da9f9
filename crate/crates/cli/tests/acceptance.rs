//! Acceptance suite: one line per criterion. The desk-scale comparison
//! (criterion 7) takes about an hour on one core and only runs when
//! `PAT_ACCEPTANCE_FULL=1`; otherwise its line reads SKIP.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use pat_core::dataset::{build_dataset, synthetic_masks, Augment, Dataset, DatasetConfig};
use pat_core::pgm::read_pgm;
use pat_core::recon::{das_raw, das_reconstruct, kspace_line_reconstruct, kspace_raw, Roi};
use pat_core::sim::{time_step, Grid2D, Medium, Physics, SensorData, Simulation, SpongeProfile, DEFAULT_CFL, SPONGE_ALPHA};
use pat_net::eval::{compare, CompareEntry, MetricsReport};
use pat_net::mi::{neg_log_q, sigma, HALF_LOG_2PI};
use pat_net::train::{pretrain_aux, train, ModelConfig, TrainConfig, Trainer};
use pat_net::ModelKind;
use pat_tensor::gradcheck::op_suite;
use pat_tensor::{ComplexPair, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances.
const GRAD_REL: f64 = 1e-4;
const GRAD_SHAPES: usize = 5;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const FFT_ROUNDTRIP: f64 = 1e-10;
const PARSEVAL: f64 = 1e-9;
const DFT_ORACLE: f64 = 1e-9;
const ARRIVAL_STEPS: f64 = 1.0;
const ENERGY_DRIFT: f64 = 0.01;
const SPONGE_REFLECTION: f64 = 0.01;
const PHYSICS_BUDGET: Duration = Duration::from_secs(120);
const DAS_PIXELS: usize = 1;
const KSPACE_PIXELS: usize = 2;
const RECON_LINEARITY: f64 = 1e-6;
const SIGMA_ZERO: f64 = 1e-12;
const MSE_FORM: f64 = 1e-9;
const SIGMA_SAMPLES: usize = 1_000_000;
const ABLATION_STEPS: usize = 50;
const MI_MARGIN: f64 = 0.3;
const ORDER_SLACK: f64 = 0.5;
const SMOKE_BUDGET: Duration = Duration::from_secs(300);

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Outcome {
        Outcome { pass: Some(pass), detail }
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn max_rel(got: &[f64], want: &[f64]) -> f64 {
    let d = got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    d / max_abs(want)
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let cases = op_suite(20240611).unwrap();
    let elapsed = t0.elapsed();
    let mut ops: Vec<&str> = cases.iter().map(|c| c.op).collect();
    ops.sort_unstable();
    ops.dedup();
    let fewest = ops.iter().map(|op| cases.iter().filter(|c| c.op == *op).count()).min().unwrap_or(0);
    let worst = cases.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    Outcome::check(
        worst <= GRAD_REL && fewest >= GRAD_SHAPES && elapsed < GRAD_BUDGET,
        format!(
            "{} ops, ≥{fewest} shapes each, max rel err {worst:.2e} (≤ {GRAD_REL:.0e}), {:.2}s (< {}s)",
            ops.len(),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    )
}

fn naive_dft(re: &[f64], im: &[f64], n: usize, inverse: bool) -> Vec<f64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let scale = if inverse { 1.0 / (n * n) as f64 } else { 1.0 };
    let mut out = vec![0.0; 2 * n * n];
    for u in 0..n {
        for v in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    let a = sign * 2.0 * std::f64::consts::PI * ((u * y) as f64 / n as f64 + (v * x) as f64 / n as f64);
                    let (c, s) = (a.cos(), a.sin());
                    let (r, i) = (re[y * n + x], im[y * n + x]);
                    sr += r * c - i * s;
                    si += r * s + i * c;
                }
            }
            out[u * n + v] = sr * scale;
            out[n * n + u * n + v] = si * scale;
        }
    }
    out
}

fn spectral() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut roundtrip, mut parseval) = (0.0f64, 0.0f64);
    for shape in [[1, 1, 16, 16], [2, 3, 8, 4], [1, 2, 32, 1], [1, 1, 64, 64]] {
        let x = random(&mut rng, &shape);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let z = g.fft2(xv).unwrap();
        let back = g.ifft2(z).unwrap();
        roundtrip = roundtrip
            .max(max_rel(g.value(back.re).data(), x.data()))
            .max(max_abs(g.value(back.im).data()) / max_abs(x.data()));
        let hw = (shape[2] * shape[3]) as f64;
        let ex: f64 = x.data().iter().map(|v| v * v).sum();
        let ez: f64 = g.value(z.re).data().iter().chain(g.value(z.im).data()).map(|v| v * v).sum();
        parseval = parseval.max((ez / hw - ex).abs() / ex);
    }
    let re = random(&mut rng, &[1, 1, 8, 8]);
    let im = random(&mut rng, &[1, 1, 8, 8]);
    let mut oracle = 0.0f64;
    for inverse in [false, true] {
        let mut g = Graph::new();
        let z = ComplexPair {
            re: g.constant(re.clone()),
            im: g.constant(im.clone()),
        };
        let out = if inverse { g.ifft2(z).unwrap() } else { g.fft2_complex(z).unwrap() };
        let got: Vec<f64> = g.value(out.re).data().iter().chain(g.value(out.im).data()).copied().collect();
        oracle = oracle.max(max_rel(&got, &naive_dft(re.data(), im.data(), 8, inverse)));
    }
    Outcome::check(
        roundtrip <= FFT_ROUNDTRIP && parseval <= PARSEVAL && oracle <= DFT_ORACLE,
        format!(
            "roundtrip {roundtrip:.1e} (≤ {FFT_ROUNDTRIP:.0e}), Parseval {parseval:.1e} (≤ {PARSEVAL:.0e}), 8×8 DFT {oracle:.1e} (≤ {DFT_ORACLE:.0e})"
        ),
    )
}

fn gaussian(n: usize, r0: f64, c0: f64, w: f64) -> Tensor<f64> {
    let data = (0..n * n)
        .map(|i| {
            let (r, c) = ((i / n) as f64, (i % n) as f64);
            (-((r - r0).powi(2) + (c - c0).powi(2)) / (2.0 * w * w)).exp()
        })
        .collect();
    Tensor::new(&[n, n], data).unwrap()
}

/// Peak step of the trace directly above a single-cell source `depth`
/// pixels below the array, with a parabolic sub-step refinement, and the
/// straight-line travel time `d / (c0·dt)` in steps.
fn arrival(depth: usize) -> (usize, f64, f64) {
    let ph = Physics::for_image(64).unwrap();
    let mut p0 = Tensor::zeros(&[64, 64]);
    p0.data_mut()[depth * 64 + 32] = 1.0;
    let data = ph.simulate(&p0).unwrap();
    let tr = data.trace(32);
    let peak = (0..tr.len()).max_by(|&a, &b| tr[a].total_cmp(&tr[b])).unwrap();
    let (a, b, c) = (tr[peak - 1], tr[peak], tr[peak + 1]);
    let refined = peak as f64 + 0.5 * (a - c) / (a - 2.0 * b + c);
    let d = (ph.sensors.standoff_cells + depth) as f64 * ph.grid.dx;
    (peak, refined, d / (ph.medium.c0 * ph.dt().unwrap()))
}

fn traces_at_array(pad: usize, sponge: bool) -> Vec<f64> {
    let ph = Physics::for_image(64).unwrap();
    let n = ph.grid.nx + 2 * pad;
    let g = Grid2D { nx: n, nz: n, ..ph.grid };
    let centre = (pad + ph.grid.nx / 2) as f64;
    let profile = sponge.then(|| SpongeProfile::new(&g, SPONGE_ALPHA));
    let mut sim = Simulation::new(&gaussian(n, centre, centre, 1.0), g, ph.medium, ph.dt().unwrap(), profile).unwrap();
    let row = pad + ph.sensors.row;
    let cols = pad + ph.sensors.first_col..pad + ph.sensors.first_col + 64;
    let mut out = Vec::new();
    for t in 0..ph.n_steps {
        if t > 0 {
            sim.step();
        }
        out.extend(cols.clone().map(|c| sim.pressure()[row * n + c]));
    }
    out
}

fn physics() -> Outcome {
    let t0 = Instant::now();
    // Depths where the travel time is a whole number of steps, so that
    // rounding the expectation does not eat into the tolerance.
    let (mut off, mut early) = (0.0f64, 0.0f64);
    for depth in [1, 10, 25, 40, 55, 61] {
        let (peak, refined, want) = arrival(depth);
        off = off.max((peak as f64 - want.round()).abs());
        early = early.max(want - refined);
    }

    let g = Grid2D {
        nx: 128,
        nz: 128,
        sponge_cells: 0,
        ..Physics::for_image(64).unwrap().grid
    };
    let med = Medium::default();
    let mut sim = Simulation::new(&gaussian(128, 64.0, 64.0, 3.0), g, med, time_step(&g, &med, DEFAULT_CFL).unwrap(), None).unwrap();
    let e0 = sim.energy();
    let mut drift = 0.0f64;
    // The wavefront stays clear of the periodic border for 150 steps.
    for _ in 0..150 {
        sim.step();
        drift = drift.max((sim.energy() / e0 - 1.0).abs());
    }

    let bounded = traces_at_array(0, true);
    let free = traces_at_array(192, false);
    let reflected = bounded.iter().zip(&free).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let ratio = reflected / max_abs(&free);
    let elapsed = t0.elapsed();
    Outcome::check(
        off <= ARRIVAL_STEPS && drift < ENERGY_DRIFT && ratio < SPONGE_REFLECTION && elapsed < PHYSICS_BUDGET,
        format!(
            "peak within {off} steps of d/(c0·dt) (≤ {ARRIVAL_STEPS}; sub-step peak ≤ {early:.2} early), energy drift {:.3}% (< 1%), reflection {:.3}% (< 1%), {:.1}s (< {}s)",
            100.0 * drift,
            100.0 * ratio,
            elapsed.as_secs_f64(),
            PHYSICS_BUDGET.as_secs()
        ),
    )
}

fn argmax_rc(img: &Tensor<f64>, n: usize) -> (usize, usize) {
    let i = img.argmax();
    (i / n, i % n)
}

fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

fn reconstruction() -> Outcome {
    const N: usize = 64;
    let physics = Physics::for_image(N).unwrap();
    let (mut das_off, mut ks_off) = (0, 0);
    let mut template: Option<SensorData> = None;
    for target in [(10, 32), (32, 32), (50, 20), (40, 45)] {
        let mut p0 = Tensor::zeros(&[N, N]);
        p0.data_mut()[target.0 * N + target.1] = 1.0;
        let d = physics.simulate(&p0).unwrap();
        let roi = Roi::under_array(&d.geometry, N);
        das_off = das_off.max(chebyshev(argmax_rc(&das_reconstruct(&d, &roi).unwrap().pixels, N), target));
        ks_off = ks_off.max(chebyshev(argmax_rc(&kspace_line_reconstruct(&d, &roi).unwrap().pixels, N), target));
        template.get_or_insert(d);
    }
    let template = template.unwrap();
    let roi = Roi::under_array(&template.geometry, N);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut noise = |scale: f64| {
        let mut d = template.clone();
        let v = (0..d.traces.len()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        d.traces = Tensor::new(d.traces.shape(), v).unwrap();
        d
    };
    let (s1, s2) = (noise(1.0), noise(0.5));
    let mut sum = s1.clone();
    sum.traces = Tensor::new(
        s1.traces.shape(),
        s1.traces.data().iter().zip(s2.traces.data()).map(|(a, b)| 2.0 * a - 3.0 * b).collect(),
    )
    .unwrap();
    let mut linearity = 0.0f64;
    for raw in [das_raw, kspace_raw] {
        let (a, b, ab) = (raw(&s1, &roi).unwrap(), raw(&s2, &roi).unwrap(), raw(&sum, &roi).unwrap());
        let want: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        linearity = linearity.max(max_rel(ab.data(), &want));
    }
    Outcome::check(
        das_off <= DAS_PIXELS && ks_off <= KSPACE_PIXELS && linearity <= RECON_LINEARITY,
        format!(
            "DAS within {das_off}px (≤ {DAS_PIXELS}), k-space within {ks_off}px (≤ {KSPACE_PIXELS}), linearity {linearity:.1e} (≤ {RECON_LINEARITY:.0e})"
        ),
    )
}

fn mi_identities() -> Outcome {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::zeros(&[1, 4, 3, 3]));
    let s = sigma(&mut g, z, 1.0).unwrap();
    let zero_err = g.value(s).data().iter().map(|v| (v - 1.5).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mse_err = 0.0f64;
    for (c, h, w) in [(3, 4, 2), (16, 8, 8), (1, 1, 1)] {
        let z1 = random(&mut rng, &[1, c, h, w]);
        let mu = random(&mut rng, &[1, c, h, w]);
        let mut g = Graph::new();
        let (a, b) = (g.constant(z1.clone()), g.constant(mu.clone()));
        let ones = g.constant(Tensor::full(&[1, c], 1.0));
        let v = neg_log_q(&mut g, a, b, ones).unwrap();
        let sq: f64 = z1.data().iter().zip(mu.data()).map(|(x, y)| (x - y).powi(2)).sum();
        let want = 0.5 * sq + c as f64 * HALF_LOG_2PI;
        mse_err = mse_err.max((g.value(v).item() - want).abs() / want.abs());
    }

    let data: Vec<f64> = (0..SIGMA_SAMPLES)
        .map(|i| if i % 10 == 0 { rng.gen_range(-1e4..1e4) } else { rng.gen_range(-30.0..30.0) })
        .collect();
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::new(&[1, SIGMA_SAMPLES, 1, 1], data).unwrap());
    let s = sigma(&mut g, z, 1.0).unwrap();
    let in_bounds = g.value(s).data().iter().all(|v| v.is_finite() && (1.0..=2.0).contains(v));
    Outcome::check(
        zero_err <= SIGMA_ZERO && mse_err <= MSE_FORM && in_bounds,
        format!(
            "σ(0) = 1.5 to {zero_err:.1e} (≤ {SIGMA_ZERO:.0e}), unit-σ MSE form to {mse_err:.1e} (≤ {MSE_FORM:.0e}), {SIGMA_SAMPLES} σ values in [ε, 1+ε]: {in_bounds}"
        ),
    )
}

fn small_dataset(name: &str, n: usize, n_train: usize, n_test: usize, seed: u64) -> Dataset {
    let root = scratch(name);
    let cfg = DatasetConfig {
        n,
        n_train,
        n_test,
        augment: Augment::default(),
    };
    let masks = synthetic_masks(32, n + n / 2, seed);
    build_dataset(&masks, &cfg, &Physics::for_image(n).unwrap(), seed, &root, 0).unwrap();
    Dataset::open(&root).unwrap()
}

fn ablation() -> Outcome {
    let data = small_dataset("ablation-data", 32, 2, 1, 1);
    let plain = TrainConfig {
        model: ModelConfig {
            kind: ModelKind::Dudounet,
            depth: 2,
            base: 4,
        },
        epochs: 1,
        batch_size: 1,
        lambda: 0.0,
        ..TrainConfig::default()
    };
    let aux_cfg = TrainConfig {
        model: ModelConfig {
            kind: ModelKind::Autoencoder,
            ..plain.model
        },
        ..plain.clone()
    };
    let aux = pretrain_aux(&aux_cfg, &data, &scratch("ablation-aux")).unwrap().checkpoint;
    let with_head = TrainConfig {
        aux: Some(aux),
        ..plain.clone()
    };
    let mut a = Trainer::new(&plain, &data).unwrap();
    let mut b = Trainer::new(&with_head, &data).unwrap();
    let mut identical_losses = true;
    for step in 0..ABLATION_STEPS {
        let idx = [step % 2];
        let (la, lb) = (a.step(&idx).unwrap(), b.step(&idx).unwrap());
        identical_losses &= la.total.to_bits() == lb.total.to_bits() && lb.neg_log_q.is_some();
    }
    let identical_params = a.params() == b.params();
    Outcome::check(
        identical_losses && identical_params,
        format!("{ABLATION_STEPS} steps with λ=0 and a live MI head: losses bit-identical {identical_losses}, parameters bit-identical {identical_params}"),
    )
}

fn mean_ssim(r: &[MetricsReport]) -> String {
    r.iter().map(|m| format!("{:.2}", m.ssim)).collect::<Vec<_>>().join("/")
}

fn trend() -> Outcome {
    if std::env::var("PAT_ACCEPTANCE_FULL").as_deref() != Ok("1") {
        return Outcome {
            pass: None,
            detail: "desk-scale protocol runs only with PAT_ACCEPTANCE_FULL=1".into(),
        };
    }
    let t0 = Instant::now();
    let seeds = [0u64, 1, 2];
    let data = small_dataset("trend-data", 64, 200, 50, 2024);
    eprintln!("[trend] dataset ready after {:.0}s", t0.elapsed().as_secs_f64());
    let base = TrainConfig {
        model: ModelConfig {
            kind: ModelKind::Dudounet,
            depth: 3,
            base: 16,
        },
        epochs: 30,
        ..TrainConfig::default()
    };
    let rows: [(&str, ModelKind, bool); 4] = [
        ("Unet#1", ModelKind::Unet1, false),
        ("Unet#2", ModelKind::Unet2, false),
        ("DuDoUnet", ModelKind::Dudounet, false),
        ("DuDoUnet+MI", ModelKind::Dudounet, true),
    ];
    let mut entries: Vec<CompareEntry> = rows
        .iter()
        .map(|(label, ..)| CompareEntry {
            label: label.to_string(),
            checkpoints: Vec::new(),
        })
        .collect();
    for &seed in &seeds {
        let aux_cfg = TrainConfig {
            model: ModelConfig {
                kind: ModelKind::Autoencoder,
                ..base.model
            },
            lambda: 0.0,
            seed,
            ..base.clone()
        };
        let aux = pretrain_aux(&aux_cfg, &data, &scratch(&format!("trend-aux-{seed}"))).unwrap().checkpoint;
        for ((label, kind, mi), entry) in rows.iter().zip(&mut entries) {
            let cfg = TrainConfig {
                model: ModelConfig { kind: *kind, ..base.model },
                lambda: if *mi { 1.0 } else { 0.0 },
                aux: mi.then(|| aux.clone()),
                seed,
                ..base.clone()
            };
            let out = scratch(&format!("trend-{}-{seed}", label.replace(['#', '+'], "")));
            entry.checkpoints.push(train(&cfg, &data, &out).unwrap().checkpoint);
            eprintln!("[trend] {label} seed {seed} trained after {:.0}s", t0.elapsed().as_secs_f64());
        }
    }
    let cmp = compare(&entries, &data, &scratch("trend-report"), 0).unwrap();
    let elapsed = t0.elapsed();
    eprint!("{}", cmp.markdown());
    let s = |l: &str| cmp.row(l).unwrap().ssim;
    let (u1, u2, d, dmi) = (s("Unet#1"), s("Unet#2"), s("DuDoUnet"), s("DuDoUnet+MI"));
    let margin = dmi - u1;
    let pass = margin >= MI_MARGIN && u2 >= u1 - ORDER_SLACK && d >= u2 - ORDER_SLACK;
    let per_seed = rows
        .iter()
        .map(|(l, ..)| format!("{l} {}", mean_ssim(&cmp.row(l).unwrap().per_seed)))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome::check(
        pass,
        format!(
            "mean SSIM×100 Unet#1 {u1:.2}, Unet#2 {u2:.2}, DuDoUnet {d:.2}, DuDoUnet+MI {dmi:.2}; MI margin {margin:+.2} (≥ {MI_MARGIN}), slack {ORDER_SLACK}; per seed [{per_seed}]; {:.1} min",
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn smoke() -> Outcome {
    let t0 = Instant::now();
    let root = scratch("smoke");
    fs::create_dir_all(&root).unwrap();
    let cfg = root.join("config.json");
    fs::write(&cfg, r#"{"seed": 5, "dataset": {"n": 32, "n_train": 2, "n_test": 1}, "train": {"epochs": 1}}"#).unwrap();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let steps: [Vec<String>; 4] = [
        vec!["make-dataset".into(), "--out".into(), p("data")],
        vec!["train-aux".into(), "--data".into(), p("data"), "--out".into(), p("aux")],
        vec![
            "train".into(),
            "--data".into(),
            p("data"),
            "--out".into(),
            p("main"),
            "--model".into(),
            "dudounet".into(),
            "--lambda".into(),
            "1".into(),
            "--aux".into(),
            p("aux/checkpoint"),
        ],
        vec![
            "eval".into(),
            "--data".into(),
            p("data"),
            "--checkpoint".into(),
            p("main/checkpoint"),
            "--out".into(),
            p("eval"),
            "--export-pgm".into(),
        ],
    ];
    for args in &steps {
        let st = Command::new(env!("CARGO_BIN_EXE_pat"))
            .arg("--quiet")
            .arg("--config")
            .arg(&cfg)
            .args(args)
            .status()
            .unwrap();
        if !st.success() {
            return Outcome::check(false, format!("`pat {}` exited with {st}", args[0]));
        }
    }
    let elapsed = t0.elapsed();
    let report: serde_json::Value = match fs::read(root.join("eval/report.json")) {
        Ok(b) => serde_json::from_slice(&b).unwrap(),
        Err(e) => return Outcome::check(false, format!("report.json: {e}")),
    };
    let (ssim, psnr) = (report["ssim"].as_f64().unwrap_or(f64::NAN), report["psnr"].as_f64().unwrap_or(f64::NAN));
    let pgms: Vec<PathBuf> = fs::read_dir(root.join("eval/pgm")).unwrap().map(|e| e.unwrap().path()).collect();
    let valid = pgms.len() == 4 && pgms.iter().all(|p| read_pgm(p).map(|g| g.to_unit().shape() == [32, 32]).unwrap_or(false));
    Outcome::check(
        ssim.is_finite() && psnr.is_finite() && valid && elapsed < SMOKE_BUDGET,
        format!(
            "SSIM×100 {ssim:.2}, PSNR {psnr:.2} dB, {} valid 32×32 PGMs, {:.1}s (< {}s)",
            pgms.len(),
            elapsed.as_secs_f64(),
            SMOKE_BUDGET.as_secs()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("gradient suite", gradients),
        ("spectral suite", spectral),
        ("physics suite", physics),
        ("reconstruction suite", reconstruction),
        ("MI identities", mi_identities),
        ("ablation equivalence", ablation),
        ("desk-scale trend", trend),
        ("end-to-end smoke", smoke),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let verdict = match o.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("criterion {} {name}: {verdict} ({})", i + 1, o.detail);
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
