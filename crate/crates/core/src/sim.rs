//! Two-dimensional photoacoustic forward model.
//!
//! Homogeneous, lossless medium; first-order coupled equations
//! `∂u/∂t = −∇p/ρ0`, `∂ρ/∂t = −ρ0 ∇·u`, `p = c0² ρ`, advanced by leapfrog
//! steps whose spectral gradients carry the k-space correction
//! `sinc(c0·|k|·dt/2)`. Pressure and velocity share one (collocated) grid,
//! the domain is periodic, and a multiplicative sponge absorbs outgoing
//! waves near the border.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pat_tensor::{read_patn, write_patn, Tensor};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_C0: f64 = 1500.0;
pub const DEFAULT_RHO0: f64 = 1000.0;
pub const DEFAULT_DX: f64 = 1e-4;
pub const DEFAULT_CFL: f64 = 0.3;
pub const MAX_CFL: f64 = 0.5;
pub const DEFAULT_SPONGE_CELLS: usize = 20;
pub const DEFAULT_STANDOFF_CELLS: usize = 20;
/// Per-step damping strength at the outermost sponge cell.
pub const SPONGE_ALPHA: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid2D {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub sponge_cells: usize,
}

impl Grid2D {
    /// Smallest square power-of-two grid holding an `n`-wide image below a
    /// sensor row, with the given standoff and sponge width on every side.
    pub fn for_image(n: usize, sponge_cells: usize, standoff_cells: usize, dx: f64) -> Grid2D {
        let need = (n + 2 * sponge_cells).max(n + standoff_cells + 2 * sponge_cells + 1);
        let side = need.next_power_of_two();
        Grid2D {
            nx: side,
            nz: side,
            dx,
            sponge_cells,
        }
    }

    /// Grid diagonal in cells.
    pub fn diag_cells(&self) -> f64 {
        ((self.nx * self.nx + self.nz * self.nz) as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dx.is_nan() || self.dx <= 0.0 || self.nx == 0 || self.nz == 0 {
            return Err(Error::Config(format!("degenerate grid {self:?}")));
        }
        if 2 * self.sponge_cells >= self.nx.min(self.nz) {
            return Err(Error::Config(format!("sponge of {} cells leaves no interior", self.sponge_cells)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Medium {
    pub c0: f64,
    pub rho0: f64,
}

impl Default for Medium {
    fn default() -> Self {
        Medium {
            c0: DEFAULT_C0,
            rho0: DEFAULT_RHO0,
        }
    }
}

impl Medium {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.rho0 > 0.0) {
            return Err(Error::Config(format!("medium needs c0 > 0 and rho0 > 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Linear array of ideal point detectors on one grid row, one element per
/// image column, `standoff_cells` above the image's top row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorArray {
    pub n_elements: usize,
    /// Grid row of the array.
    pub row: usize,
    /// Grid column of element 0; elements are consecutive at pitch dx.
    pub first_col: usize,
    pub standoff_cells: usize,
}

impl SensorArray {
    /// Array on the first row inside the sponge, centred horizontally over
    /// an image `image_width` cells wide.
    pub fn above_image(grid: &Grid2D, image_width: usize, standoff_cells: usize) -> Result<SensorArray> {
        if image_width > grid.nx {
            return Err(Error::Config(format!("image width {image_width} exceeds grid width {}", grid.nx)));
        }
        let arr = SensorArray {
            n_elements: image_width,
            row: grid.sponge_cells,
            first_col: (grid.nx - image_width) / 2,
            standoff_cells,
        };
        arr.validate(grid)?;
        Ok(arr)
    }

    pub fn element(&self, i: usize) -> (usize, usize) {
        (self.row, self.first_col + i)
    }

    /// Grid (row, column) of the image's top-left pixel.
    pub fn image_origin(&self) -> (usize, usize) {
        (self.row + self.standoff_cells, self.first_col)
    }

    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        let s = grid.sponge_cells;
        let last = self.first_col + self.n_elements;
        if self.n_elements == 0 || self.row < s || self.row >= grid.nz - s || self.first_col < s || last > grid.nx - s {
            return Err(Error::Config(format!(
                "sensor array {self:?} must lie inside the grid interior ({}×{}, sponge {s})",
                grid.nz, grid.nx
            )));
        }
        Ok(())
    }
}

/// Time step for a Courant number `cfl`.
pub fn time_step(grid: &Grid2D, medium: &Medium, cfl: f64) -> Result<f64> {
    if cfl.is_nan() || cfl <= 0.0 || cfl > MAX_CFL {
        return Err(Error::Config(format!("CFL {cfl} outside (0, {MAX_CFL}]")));
    }
    Ok(cfl * grid.dx / medium.c0)
}

/// `ceil(1.5 · diagonal / (c0·dt))` rounded up to a multiple of 64.
pub fn default_n_steps(grid: &Grid2D, cfl: f64) -> usize {
    let steps = (1.5 * grid.diag_cells() / cfl).ceil() as usize;
    steps.div_ceil(64) * 64
}

/// Sampled pressure traces of a linear array.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorData {
    /// `[n_elements, n_steps]`; sample `j` is the pressure at time `j·dt`.
    pub traces: Tensor<f64>,
    pub dt: f64,
    pub c0: f64,
    pub dx: f64,
    pub geometry: SensorArray,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorMeta {
    dt: f64,
    c0: f64,
    dx: f64,
    n_steps: usize,
    geometry: SensorArray,
    element_rows: Vec<usize>,
    element_cols: Vec<usize>,
}

/// `foo.patn` → `foo.meta.json`.
pub fn meta_path(patn: &Path) -> PathBuf {
    patn.with_extension("meta.json")
}

impl SensorData {
    pub fn n_elements(&self) -> usize {
        self.traces.shape()[0]
    }

    pub fn n_steps(&self) -> usize {
        self.traces.shape()[1]
    }

    pub fn trace(&self, element: usize) -> &[f64] {
        let n = self.n_steps();
        &self.traces.data()[element * n..(element + 1) * n]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_patn(path, &self.traces)?;
        let (rows, cols) = (0..self.n_elements()).map(|i| self.geometry.element(i)).unzip();
        let meta = SensorMeta {
            dt: self.dt,
            c0: self.c0,
            dx: self.dx,
            n_steps: self.n_steps(),
            geometry: self.geometry,
            element_rows: rows,
            element_cols: cols,
        };
        let mp = meta_path(path);
        let text = serde_json::to_string_pretty(&meta).map_err(Error::json(&mp))?;
        std::fs::write(&mp, text).map_err(Error::io(&mp))
    }

    pub fn load(path: &Path) -> Result<SensorData> {
        let traces = read_patn::<f64>(path)?;
        let mp = meta_path(path);
        let text = std::fs::read_to_string(&mp).map_err(Error::io(&mp))?;
        let meta: SensorMeta = serde_json::from_str(&text).map_err(Error::json(&mp))?;
        if traces.shape() != [meta.geometry.n_elements, meta.n_steps] {
            return Err(Error::Invalid(format!(
                "{}: traces {:?} disagree with metadata ({} elements, {} steps)",
                path.display(),
                traces.shape(),
                meta.geometry.n_elements,
                meta.n_steps
            )));
        }
        let uniform = meta.element_rows.iter().all(|&r| r == meta.geometry.row)
            && meta.element_cols.iter().enumerate().all(|(i, &c)| c == meta.geometry.first_col + i);
        if !uniform || meta.element_rows.len() != meta.geometry.n_elements {
            return Err(Error::Invalid(format!("{}: element positions are not a uniform line", mp.display())));
        }
        Ok(SensorData {
            traces,
            dt: meta.dt,
            c0: meta.c0,
            dx: meta.dx,
            geometry: meta.geometry,
        })
    }
}

/// Multiplicative border damping `m(i) = 1 − α·cos²(π·i/(2·Ns))`, `i` the
/// distance in cells from the outer edge.
#[derive(Debug, Clone)]
pub struct SpongeProfile {
    cells: Vec<(usize, f64)>,
}

impl SpongeProfile {
    pub fn new(grid: &Grid2D, alpha: f64) -> SpongeProfile {
        let ns = grid.sponge_cells;
        let axis = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|c| {
                    let i = c.min(n - 1 - c);
                    if i < ns {
                        let s = (std::f64::consts::PI * i as f64 / (2.0 * ns as f64)).cos();
                        1.0 - alpha * s * s
                    } else {
                        1.0
                    }
                })
                .collect()
        };
        let (fx, fz) = (axis(grid.nx), axis(grid.nz));
        let mut cells = Vec::new();
        for (r, &mz) in fz.iter().enumerate() {
            for (c, &mx) in fx.iter().enumerate() {
                if mz != 1.0 || mx != 1.0 {
                    cells.push((r * grid.nx + c, mz * mx));
                }
            }
        }
        SpongeProfile { cells }
    }

    /// Damps border cells in place; interior values are not touched.
    pub fn apply(&self, field: &mut [f64]) {
        for &(i, m) in &self.cells {
            field[i] *= m;
        }
    }
}

/// Applies the default-strength sponge to each field.
pub fn apply_sponge(fields: &mut [&mut [f64]], grid: &Grid2D) {
    let profile = SpongeProfile::new(grid, SPONGE_ALPHA);
    for f in fields.iter_mut() {
        profile.apply(f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Z,
}

fn wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    let dk = 2.0 * std::f64::consts::PI / (n as f64 * dx);
    (0..n)
        .map(|i| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 } * dk)
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Periodic spectral differentiation on a fixed grid.
pub struct Spectral {
    nx: usize,
    nz: usize,
    /// Derivative multipliers `i·k·κ` (imaginary part only), Nyquist zeroed.
    mx: Vec<f64>,
    mz: Vec<f64>,
    fwd_row: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    fwd_col: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex<f64>>,
    column: Vec<Complex<f64>>,
}

impl Spectral {
    /// `c0_dt` sets the k-space correction `sinc(|k|·c0_dt/2)`; zero gives
    /// the plain spectral derivative.
    pub fn new(grid: &Grid2D, c0_dt: f64) -> Spectral {
        let (nx, nz) = (grid.nx, grid.nz);
        let kx = wavenumbers(nx, grid.dx);
        let kz = wavenumbers(nz, grid.dx);
        let nyq = |i: usize, n: usize| n.is_multiple_of(2) && i == n / 2;
        let mut mx = vec![0.0; nx * nz];
        let mut mz = vec![0.0; nx * nz];
        for r in 0..nz {
            for c in 0..nx {
                let kappa = sinc(0.5 * c0_dt * (kx[c] * kx[c] + kz[r] * kz[r]).sqrt());
                if !nyq(c, nx) {
                    mx[r * nx + c] = kx[c] * kappa;
                }
                if !nyq(r, nz) {
                    mz[r * nx + c] = kz[r] * kappa;
                }
            }
        }
        let mut planner = FftPlanner::new();
        let fwd_row = planner.plan_fft_forward(nx);
        let inv_row = planner.plan_fft_inverse(nx);
        let fwd_col = planner.plan_fft_forward(nz);
        let inv_col = planner.plan_fft_inverse(nz);
        let scratch_len = [&fwd_row, &inv_row, &fwd_col, &inv_col]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Spectral {
            nx,
            nz,
            mx,
            mz,
            fwd_row,
            inv_row,
            fwd_col,
            inv_col,
            scratch: vec![Complex::default(); scratch_len],
            column: vec![Complex::default(); nz],
        }
    }

    /// Unnormalized in-place 2-D transform.
    fn transform(&mut self, data: &mut [Complex<f64>], inverse: bool) {
        let (row, col) = if inverse {
            (&self.inv_row, &self.inv_col)
        } else {
            (&self.fwd_row, &self.fwd_col)
        };
        for r in data.chunks_exact_mut(self.nx) {
            row.process_with_scratch(r, &mut self.scratch);
        }
        for c in 0..self.nx {
            for (r, v) in self.column.iter_mut().enumerate() {
                *v = data[r * self.nx + c];
            }
            col.process_with_scratch(&mut self.column, &mut self.scratch);
            for (r, v) in self.column.iter().enumerate() {
                data[r * self.nx + c] = *v;
            }
        }
    }

    fn neg_index(&self, i: usize) -> usize {
        let (r, c) = (i / self.nx, i % self.nx);
        ((self.nz - r) % self.nz) * self.nx + (self.nx - c) % self.nx
    }

    /// Both components of `∇f` with one forward and one inverse transform.
    pub fn gradient(&mut self, f: &[f64], gx: &mut [f64], gz: &mut [f64]) {
        let mut buf: Vec<Complex<f64>> = f.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        // Both derivative spectra are Hermitian, so pack them as X + iZ.
        for (i, v) in buf.iter_mut().enumerate() {
            let a = Complex::new(-v.im * self.mx[i], v.re * self.mx[i]);
            let b = Complex::new(-v.im * self.mz[i], v.re * self.mz[i]);
            *v = a + Complex::new(-b.im, b.re);
        }
        self.transform(&mut buf, true);
        let scale = 1.0 / (self.nx * self.nz) as f64;
        for (i, v) in buf.iter().enumerate() {
            gx[i] = v.re * scale;
            gz[i] = v.im * scale;
        }
    }

    /// `∂ux/∂x + ∂uz/∂z` with one forward and one inverse transform.
    pub fn divergence(&mut self, ux: &[f64], uz: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex<f64>> = ux.iter().zip(uz).map(|(&a, &b)| Complex::new(a, b)).collect();
        self.transform(&mut buf, false);
        let packed = buf.clone();
        for (i, v) in buf.iter_mut().enumerate() {
            let zc = packed[self.neg_index(i)].conj();
            let x = (packed[i] + zc) * 0.5;
            let z = (packed[i] - zc) * Complex::new(0.0, -0.5);
            let s = x * self.mx[i] + z * self.mz[i];
            *v = Complex::new(-s.im, s.re);
        }
        self.transform(&mut buf, true);
        let scale = 1.0 / (self.nx * self.nz) as f64;
        for (o, v) in out.iter_mut().zip(&buf) {
            *o = v.re * scale;
        }
    }
}

/// Spectral derivative of a `[nz, nx]` field along one axis, with k-space
/// correction for a wave speed × time step of `c0_dt`.
pub fn spectral_gradient(f: &Tensor<f64>, grid: &Grid2D, axis: Axis, c0_dt: f64) -> Result<Tensor<f64>> {
    if f.shape() != [grid.nz, grid.nx] {
        return Err(Error::Invalid(format!(
            "field {:?} does not match grid {}×{}",
            f.shape(),
            grid.nz,
            grid.nx
        )));
    }
    let mut sp = Spectral::new(grid, c0_dt);
    let mut gx = vec![0.0; f.len()];
    let mut gz = vec![0.0; f.len()];
    sp.gradient(f.data(), &mut gx, &mut gz);
    let out = match axis {
        Axis::X => gx,
        Axis::Z => gz,
    };
    Ok(Tensor::new(f.shape(), out)?)
}

/// Leapfrog state: pressure and density at integer steps, velocity at
/// half steps.
pub struct Simulation {
    grid: Grid2D,
    medium: Medium,
    dt: f64,
    spectral: Spectral,
    sponge: Option<SpongeProfile>,
    p: Vec<f64>,
    rho: Vec<f64>,
    ux: Vec<f64>,
    uz: Vec<f64>,
    gx: Vec<f64>,
    gz: Vec<f64>,
    div: Vec<f64>,
    steps: usize,
}

impl Simulation {
    /// Starts from pressure `p0` (a full `[nz, nx]` field) with zero
    /// particle velocity.
    pub fn new(
        p0: &Tensor<f64>,
        grid: Grid2D,
        medium: Medium,
        dt: f64,
        sponge: Option<SpongeProfile>,
    ) -> Result<Simulation> {
        grid.validate()?;
        medium.validate()?;
        if p0.shape() != [grid.nz, grid.nx] {
            return Err(Error::Invalid(format!("initial field {:?} does not match the grid", p0.shape())));
        }
        let n = grid.nx * grid.nz;
        let c2 = medium.c0 * medium.c0;
        let mut sim = Simulation {
            grid,
            medium,
            dt,
            spectral: Spectral::new(&grid, medium.c0 * dt),
            sponge,
            p: p0.data().to_vec(),
            rho: p0.data().iter().map(|v| v / c2).collect(),
            ux: vec![0.0; n],
            uz: vec![0.0; n],
            gx: vec![0.0; n],
            gz: vec![0.0; n],
            div: vec![0.0; n],
            steps: 0,
        };
        // u(−dt/2) = +dt/(2ρ0)·∇p0 makes the first update land on
        // u(dt/2) = −dt/(2ρ0)·∇p0, i.e. zero velocity at t = 0.
        sim.spectral.gradient(&sim.p, &mut sim.gx, &mut sim.gz);
        let k = 0.5 * dt / medium.rho0;
        for i in 0..n {
            sim.ux[i] = k * sim.gx[i];
            sim.uz[i] = k * sim.gz[i];
        }
        Ok(sim)
    }

    pub fn pressure(&self) -> &[f64] {
        &self.p
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn velocity_update(&mut self) {
        self.spectral.gradient(&self.p, &mut self.gx, &mut self.gz);
        let k = self.dt / self.medium.rho0;
        for i in 0..self.p.len() {
            self.ux[i] -= k * self.gx[i];
            self.uz[i] -= k * self.gz[i];
        }
    }

    /// Advances one time step.
    pub fn step(&mut self) {
        self.velocity_update();
        if let Some(s) = &self.sponge {
            s.apply(&mut self.ux);
            s.apply(&mut self.uz);
        }
        self.spectral.divergence(&self.ux, &self.uz, &mut self.div);
        let k = self.dt * self.medium.rho0;
        let c2 = self.medium.c0 * self.medium.c0;
        for i in 0..self.p.len() {
            self.rho[i] -= k * self.div[i];
        }
        if let Some(s) = &self.sponge {
            s.apply(&mut self.rho);
        }
        for i in 0..self.p.len() {
            self.p[i] = c2 * self.rho[i];
        }
        self.steps += 1;
    }

    /// Acoustic energy `Σ (p²/(2ρ0c0²) + ρ0|u|²/2)·dx²` at the current
    /// integer time, with velocity averaged over the neighbouring half steps.
    pub fn energy(&mut self) -> f64 {
        let (ux_prev, uz_prev) = (self.ux.clone(), self.uz.clone());
        self.velocity_update();
        let Medium { c0, rho0 } = self.medium;
        let mut e = 0.0;
        for i in 0..self.p.len() {
            let ux = 0.5 * (ux_prev[i] + self.ux[i]);
            let uz = 0.5 * (uz_prev[i] + self.uz[i]);
            e += self.p[i] * self.p[i] / (2.0 * rho0 * c0 * c0) + 0.5 * rho0 * (ux * ux + uz * uz);
        }
        self.ux = ux_prev;
        self.uz = uz_prev;
        e * self.grid.dx * self.grid.dx
    }
}

/// Complete physics description of one acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub grid: Grid2D,
    pub medium: Medium,
    pub sensors: SensorArray,
    pub cfl: f64,
    pub n_steps: usize,
}

impl Physics {
    /// Default setup for an `n × n` image.
    pub fn for_image(n: usize) -> Result<Physics> {
        let grid = Grid2D::for_image(n, DEFAULT_SPONGE_CELLS, DEFAULT_STANDOFF_CELLS, DEFAULT_DX);
        let sensors = SensorArray::above_image(&grid, n, DEFAULT_STANDOFF_CELLS)?;
        Ok(Physics {
            grid,
            medium: Medium::default(),
            sensors,
            cfl: DEFAULT_CFL,
            n_steps: default_n_steps(&grid, DEFAULT_CFL),
        })
    }

    pub fn dt(&self) -> Result<f64> {
        time_step(&self.grid, &self.medium, self.cfl)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.medium.validate()?;
        self.sensors.validate(&self.grid)?;
        self.dt()?;
        let image_diag = std::f64::consts::SQRT_2 * self.sensors.n_elements as f64;
        let t_min = (image_diag + self.sensors.standoff_cells as f64) / self.cfl;
        if (self.n_steps as f64) < t_min {
            return Err(Error::Config(format!(
                "{} steps cannot cover the image diagonal plus standoff ({} needed)",
                self.n_steps,
                t_min.ceil()
            )));
        }
        Ok(())
    }

    pub fn simulate(&self, p0: &Tensor<f64>) -> Result<SensorData> {
        simulate(p0, &self.grid, &self.medium, &self.sensors, self.n_steps, self.cfl)
    }
}

/// Embeds `p0 [H,W]` below the array and records `n_steps` samples per
/// element.
pub fn simulate(
    p0: &Tensor<f64>,
    grid: &Grid2D,
    medium: &Medium,
    sensors: &SensorArray,
    n_steps: usize,
    cfl: f64,
) -> Result<SensorData> {
    let dt = time_step(grid, medium, cfl)?;
    grid.validate()?;
    sensors.validate(grid)?;
    let (h, w) = match p0.shape() {
        [h, w] => (*h, *w),
        s => return Err(Error::Invalid(format!("initial pressure must be [H,W], got {s:?}"))),
    };
    let (top, left) = sensors.image_origin();
    let s = grid.sponge_cells;
    if w != sensors.n_elements || top + h > grid.nz - s || left + w > grid.nx - s {
        return Err(Error::Invalid(format!(
            "{h}×{w} image at ({top},{left}) does not fit the {}×{} grid interior for a {}-element array",
            grid.nz, grid.nx, sensors.n_elements
        )));
    }
    if !p0.is_finite() {
        return Err(Error::Invalid("initial pressure contains non-finite values".into()));
    }
    let mut field = Tensor::zeros(&[grid.nz, grid.nx]);
    for r in 0..h {
        let dst = (top + r) * grid.nx + left;
        field.data_mut()[dst..dst + w].copy_from_slice(&p0.data()[r * w..(r + 1) * w]);
    }
    let n_el = sensors.n_elements;
    let mut traces = vec![0.0; n_el * n_steps];
    let sponge = SpongeProfile::new(grid, SPONGE_ALPHA);
    let mut sim = Simulation::new(&field, *grid, *medium, dt, Some(sponge))?;
    for t in 0..n_steps {
        if t > 0 {
            sim.step();
        }
        let p = sim.pressure();
        for e in 0..n_el {
            let (r, c) = sensors.element(e);
            traces[e * n_steps + t] = p[r * grid.nx + c];
        }
    }
    Ok(SensorData {
        traces: Tensor::new(&[n_el, n_steps], traces)?,
        dt,
        c0: medium.c0,
        dx: grid.dx,
        geometry: *sensors,
    })
}
