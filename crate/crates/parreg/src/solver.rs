use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{Array3, Array4, Array5, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::field::{require_two_pi_cube, SpaceTimeField};
use crate::grid::Grid;
use crate::spectral::Spectral3;

/// How to start the simulation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// The decaying curl eigenfield; needs a (2 pi)^3 box.
    Beltrami { a: f64, b: f64, c: f64 },
    /// Reproducible divergence-free noise with unit energy and the given
    /// power-law energy spectrum slope.
    RandomSolenoidal { seed: u64, spectrum_slope: f64 },
    /// Last stored time slice of a field container, restarted at `t0`.
    /// Its grid must match the configured one spatially.
    FromFile { path: PathBuf },
}

/// Simulation setup. The grid fixes the spatial box and the requested step
/// `dt`; the actual step is shrunk so that a whole number of steps, divisible
/// by `output_stride`, lands exactly on `t_end`. The grid's `nt` is ignored:
/// the output length follows from the step count. Unit viscosity.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub grid: Grid,
    pub t_end: f64,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
    #[serde(default = "default_dealias")]
    pub dealias: f64,
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    pub initial_condition: InitialCondition,
}

fn default_cfl() -> f64 {
    0.5
}

fn default_dealias() -> f64 {
    2.0 / 3.0
}

fn default_stride() -> usize {
    1
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.t_end.is_finite() && self.t_end > self.grid.t0) {
            return Err(Error::Config(format!(
                "t_end = {} must exceed the start time {}",
                self.t_end, self.grid.t0
            )));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::Config(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if !(self.dealias > 0.2 && self.dealias <= 1.0) {
            return Err(Error::Config(format!(
                "dealias fraction must lie in (0.2, 1], got {}",
                self.dealias
            )));
        }
        if self.output_stride == 0 {
            return Err(Error::Config("output_stride must be at least 1".into()));
        }
        let span = self.t_end - self.grid.t0;
        let n_raw = (span / self.grid.dt).ceil();
        if !(n_raw.is_finite() && n_raw < 1e7) {
            return Err(Error::Config(format!(
                "requested step {} gives {} steps over [{}, {}]; refusing",
                self.grid.dt, n_raw, self.grid.t0, self.t_end
            )));
        }
        Ok(())
    }
}

type Uhat = [Array3<Complex64>; 3];

struct Stepper {
    sp: Spectral3,
    nx: usize,
    ny: usize,
    nz: usize,
    k2: Array3<f64>,
    dealias_frac: f64,
}

impl Stepper {
    fn new(grid: &Grid, dealias_frac: f64) -> Self {
        let sp = Spectral3::new(grid);
        let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
        let mut k2 = Array3::zeros((nx, ny, nz));
        for ((ix, iy, iz), v) in k2.indexed_iter_mut() {
            let kx = sp.wavenumber(0, ix);
            let ky = sp.wavenumber(1, iy);
            let kz = sp.wavenumber(2, iz);
            *v = kx * kx + ky * ky + kz * kz;
        }
        Stepper { sp, nx, ny, nz, k2, dealias_frac }
    }

    fn vorticity_hat(&mut self, uhat: &Uhat) -> Uhat {
        let d = |s: &mut Spectral3, h: &Array3<Complex64>, ax: usize| s.derivative_hat(h, ax);
        let wx = {
            let a = d(&mut self.sp, &uhat[2], 1);
            let b = d(&mut self.sp, &uhat[1], 2);
            &a - &b
        };
        let wy = {
            let a = d(&mut self.sp, &uhat[0], 2);
            let b = d(&mut self.sp, &uhat[2], 0);
            &a - &b
        };
        let wz = {
            let a = d(&mut self.sp, &uhat[1], 0);
            let b = d(&mut self.sp, &uhat[0], 1);
            &a - &b
        };
        [wx, wy, wz]
    }

    fn physical(&mut self, uhat: &Uhat) -> [Array3<f64>; 3] {
        [
            self.sp.inverse_to_real(&uhat[0]),
            self.sp.inverse_to_real(&uhat[1]),
            self.sp.inverse_to_real(&uhat[2]),
        ]
    }

    /// Transform of `u x omega`, before any dealiasing or projection.
    fn cross_hat(&mut self, uhat: &Uhat, u: &[Array3<f64>; 3]) -> Uhat {
        let w_hat = self.vorticity_hat(uhat);
        let w = self.physical(&w_hat);
        let shape = (self.nx, self.ny, self.nz);
        let mut cx = Array3::zeros(shape);
        let mut cy = Array3::zeros(shape);
        let mut cz = Array3::zeros(shape);
        for ((i, j, k), v) in cx.indexed_iter_mut() {
            *v = u[1][[i, j, k]] * w[2][[i, j, k]] - u[2][[i, j, k]] * w[1][[i, j, k]];
        }
        for ((i, j, k), v) in cy.indexed_iter_mut() {
            *v = u[2][[i, j, k]] * w[0][[i, j, k]] - u[0][[i, j, k]] * w[2][[i, j, k]];
        }
        for ((i, j, k), v) in cz.indexed_iter_mut() {
            *v = u[0][[i, j, k]] * w[1][[i, j, k]] - u[1][[i, j, k]] * w[0][[i, j, k]];
        }
        [
            self.sp.forward_real(cx.view()),
            self.sp.forward_real(cy.view()),
            self.sp.forward_real(cz.view()),
        ]
    }

    /// Projected, dealiased nonlinear term, plus the largest speed seen.
    fn nonlinear(&mut self, uhat: &Uhat) -> Result<(Uhat, f64)> {
        let u = self.physical(uhat);
        let mut umax2 = 0.0f64;
        for i in 0..self.nx {
            for j in 0..self.ny {
                for k in 0..self.nz {
                    let s = u[0][[i, j, k]] * u[0][[i, j, k]]
                        + u[1][[i, j, k]] * u[1][[i, j, k]]
                        + u[2][[i, j, k]] * u[2][[i, j, k]];
                    umax2 = umax2.max(s);
                }
            }
        }
        if !umax2.is_finite() {
            return Err(Error::Numerical("velocity lost finiteness during a step".into()));
        }
        let mut nhat = self.cross_hat(uhat, &u);
        for h in &mut nhat {
            self.sp.dealias(h, self.dealias_frac);
        }
        self.sp.leray_project(&mut nhat);
        Ok((nhat, umax2.sqrt()))
    }

    /// Recover the pressure of the current state: the transport part from
    /// the divergence of `u x omega`, minus the dynamic head, mean-free.
    fn pressure(&mut self, uhat: &Uhat) -> Array3<f64> {
        let u = self.physical(uhat);
        let mut chat = self.cross_hat(uhat, &u);
        for h in &mut chat {
            self.sp.dealias(h, self.dealias_frac);
        }
        let shape = (self.nx, self.ny, self.nz);
        let mut phat = Array3::<Complex64>::zeros(shape);
        for ((i, j, k), v) in phat.indexed_iter_mut() {
            let k2 = self.k2[[i, j, k]];
            if k2 == 0.0 {
                continue;
            }
            let kx = self.sp.deriv_wavenumber(0, i);
            let ky = self.sp.deriv_wavenumber(1, j);
            let kz = self.sp.deriv_wavenumber(2, k);
            let dot = chat[0][[i, j, k]] * kx + chat[1][[i, j, k]] * ky + chat[2][[i, j, k]] * kz;
            // -i * dot / k2
            *v = Complex64::new(dot.im, -dot.re) / k2;
        }
        let mut q = Array3::zeros(shape);
        for ((i, j, k), v) in q.indexed_iter_mut() {
            *v = 0.5
                * (u[0][[i, j, k]] * u[0][[i, j, k]]
                    + u[1][[i, j, k]] * u[1][[i, j, k]]
                    + u[2][[i, j, k]] * u[2][[i, j, k]]);
        }
        let qhat = self.sp.forward_real(q.view());
        for ((i, j, k), v) in phat.indexed_iter_mut() {
            if self.k2[[i, j, k]] == 0.0 {
                *v = Complex64::new(0.0, 0.0);
            } else {
                *v -= qhat[[i, j, k]];
            }
        }
        self.sp.inverse_to_real(&phat)
    }
}

fn axpy(dst: &mut Uhat, scale: Complex64, src: &Uhat) {
    for c in 0..3 {
        dst[c].zip_mut_with(&src[c], |d, &s| *d += scale * s);
    }
}

fn scaled(factor: &Array3<f64>, a: &Uhat) -> Uhat {
    let apply = |x: &Array3<Complex64>| {
        let mut out = x.clone();
        out.zip_mut_with(factor, |v, &f| *v *= f);
        out
    };
    [apply(&a[0]), apply(&a[1]), apply(&a[2])]
}

fn initial_hat(sp: &mut Spectral3, grid: &Grid, ic: &InitialCondition) -> Result<Uhat> {
    match ic {
        InitialCondition::Beltrami { a, b, c } => {
            require_two_pi_cube(grid)?;
            let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
            let shape = (nx, ny, nz);
            let (mut ux, mut uy, mut uz) =
                (Array3::zeros(shape), Array3::zeros(shape), Array3::zeros(shape));
            for ix in 0..nx {
                let x = ix as f64 * grid.hx();
                for iy in 0..ny {
                    let y = iy as f64 * grid.hy();
                    for iz in 0..nz {
                        let z = iz as f64 * grid.hz();
                        ux[[ix, iy, iz]] = a * z.sin() + c * y.cos();
                        uy[[ix, iy, iz]] = b * x.sin() + a * z.cos();
                        uz[[ix, iy, iz]] = c * y.sin() + b * x.cos();
                    }
                }
            }
            Ok([
                sp.forward_real(ux.view()),
                sp.forward_real(uy.view()),
                sp.forward_real(uz.view()),
            ])
        }
        InitialCondition::RandomSolenoidal { seed, spectrum_slope } => {
            if !spectrum_slope.is_finite() {
                return Err(Error::Config("spectrum slope must be finite".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let shape = (grid.nx, grid.ny, grid.nz);
            let mut uhat: Uhat = std::array::from_fn(|_| {
                let noise = Array3::from_shape_fn(shape, |_| 2.0 * rng.random::<f64>() - 1.0);
                sp.forward_real(noise.view())
            });
            let cut = grid.nx.min(grid.ny).min(grid.nz) as f64 / 3.0;
            for c in 0..3 {
                for ((ix, iy, iz), v) in uhat[c].indexed_iter_mut() {
                    let kx = sp.wavenumber(0, ix);
                    let ky = sp.wavenumber(1, iy);
                    let kz = sp.wavenumber(2, iz);
                    let kmag = (kx * kx + ky * ky + kz * kz).sqrt();
                    // shell density k^2 converts the energy slope to an
                    // amplitude exponent of (slope - 2) / 2
                    let base = 2.0 * std::f64::consts::PI / grid.lx.max(grid.ly).max(grid.lz);
                    if kmag == 0.0 || kmag > cut * base {
                        *v = Complex64::new(0.0, 0.0);
                    } else {
                        *v *= kmag.powf(0.5 * (spectrum_slope - 2.0));
                    }
                }
            }
            sp.leray_project(&mut uhat);
            // normalize the box integral of |u|^2 to one
            let u = [
                sp.inverse_to_real(&uhat[0]),
                sp.inverse_to_real(&uhat[1]),
                sp.inverse_to_real(&uhat[2]),
            ];
            let cell = grid.cell_volume();
            let ke: f64 = u.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() * cell;
            if ke <= 0.0 {
                return Err(Error::Numerical("random field came out empty".into()));
            }
            let s = 1.0 / ke.sqrt();
            for c in &mut uhat {
                c.mapv_inplace(|v| v * s);
            }
            Ok(uhat)
        }
        InitialCondition::FromFile { path } => {
            let field = container::load(path)?;
            let g = &field.grid;
            let spatial_match = g.nx == grid.nx
                && g.ny == grid.ny
                && g.nz == grid.nz
                && (g.lx - grid.lx).abs() < 1e-12 * grid.lx
                && (g.ly - grid.ly).abs() < 1e-12 * grid.ly
                && (g.lz - grid.lz).abs() < 1e-12 * grid.lz;
            if !spatial_match {
                return Err(Error::Config(format!(
                    "initial-condition file has grid {}x{}x{} on box ({}, {}, {}); \
                     the configured grid differs",
                    g.nx, g.ny, g.nz, g.lx, g.ly, g.lz
                )));
            }
            let last = field.grid.nt - 1;
            let u = field.u_slice(last);
            let mut uhat: Uhat = std::array::from_fn(|c| sp.forward_real(u.index_axis(Axis(0), c)));
            sp.leray_project(&mut uhat);
            Ok(uhat)
        }
    }
}

/// Integrate the incompressible momentum equation (rotational form, unit
/// viscosity, exact integrating factor for the diffusion) and return the
/// stored trajectory with recovered pressure.
pub fn run(config: &SolverConfig) -> Result<SpaceTimeField> {
    config.validate()?;
    let grid = &config.grid;
    let span = config.t_end - grid.t0;
    let stride = config.output_stride;
    let mut n_steps = (span / grid.dt).ceil().max(1.0) as usize;
    n_steps = n_steps.div_ceil(stride) * stride;
    let dt = span / n_steps as f64;
    let nt_out = n_steps / stride + 1;
    let out_grid = Grid::new(
        grid.nx,
        grid.ny,
        grid.nz,
        grid.lx,
        grid.ly,
        grid.lz,
        nt_out,
        grid.t0,
        dt * stride as f64,
    )?;

    let mut st = Stepper::new(grid, config.dealias);
    let mut uhat = initial_hat(&mut st.sp, grid, &config.initial_condition)?;

    let e_half = st.k2.mapv(|k2| (-k2 * dt / 2.0).exp());
    let e_full = st.k2.mapv(|k2| (-k2 * dt).exp());

    let mut u_out = Array5::<f64>::zeros((nt_out, 3, grid.nx, grid.ny, grid.nz));
    let mut p_out = Array4::<f64>::zeros((nt_out, grid.nx, grid.ny, grid.nz));
    let write_slice = |st: &mut Stepper,
                           u_out: &mut Array5<f64>,
                           p_out: &mut Array4<f64>,
                           slot: usize,
                           uhat: &Uhat| {
        let u = st.physical(uhat);
        for c in 0..3 {
            u_out
                .index_axis_mut(Axis(0), slot)
                .index_axis_mut(Axis(0), c)
                .assign(&u[c]);
        }
        p_out.index_axis_mut(Axis(0), slot).assign(&st.pressure(uhat));
    };
    write_slice(&mut st, &mut u_out, &mut p_out, 0, &uhat);

    let h_min = grid.hx().min(grid.hy()).min(grid.hz());
    let half = Complex64::new(0.5, 0.0);
    for step in 0..n_steps {
        let (n1, umax) = st.nonlinear(&uhat)?;
        if umax * dt > config.cfl_safety * h_min {
            return Err(Error::Cfl(format!(
                "step {step}: speed {umax:.4} times dt {dt:.3e} exceeds {} of the cell size \
                 {h_min:.3e}; lower the requested dt",
                config.cfl_safety
            )));
        }
        let k1 = scale_dt(n1, dt);
        let mut arg = uhat.clone();
        axpy(&mut arg, half, &k1);
        let k2 = scale_dt(st.nonlinear(&scaled(&e_half, &arg))?.0, dt);
        let mut arg = scaled(&e_half, &uhat);
        axpy(&mut arg, half, &k2);
        let k3 = scale_dt(st.nonlinear(&arg)?.0, dt);
        let mut arg = scaled(&e_full, &uhat);
        let ek3 = scaled(&e_half, &k3);
        axpy(&mut arg, Complex64::new(1.0, 0.0), &ek3);
        let k4 = scale_dt(st.nonlinear(&arg)?.0, dt);

        let mut next = scaled(&e_full, &uhat);
        let sixth = Complex64::new(1.0 / 6.0, 0.0);
        let third = Complex64::new(1.0 / 3.0, 0.0);
        axpy(&mut next, sixth, &scaled(&e_full, &k1));
        let mut k23 = k2;
        axpy(&mut k23, Complex64::new(1.0, 0.0), &k3);
        axpy(&mut next, third, &scaled(&e_half, &k23));
        axpy(&mut next, sixth, &k4);
        uhat = next;

        if (step + 1) % stride == 0 {
            write_slice(&mut st, &mut u_out, &mut p_out, (step + 1) / stride, &uhat);
        }
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), "solver".to_string());
    metadata.insert("dt_step".to_string(), format!("{dt}"));
    metadata.insert("n_steps".to_string(), format!("{n_steps}"));
    metadata.insert("dealias".to_string(), format!("{}", config.dealias));
    metadata.insert(
        "initial_condition".to_string(),
        serde_json::to_string(&config.initial_condition)
            .unwrap_or_else(|_| "unserializable".to_string()),
    );
    SpaceTimeField::new(out_grid, u_out, p_out, None, metadata)
}

fn scale_dt(mut a: Uhat, dt: f64) -> Uhat {
    for c in &mut a {
        c.mapv_inplace(|v| v * dt);
    }
    a
}
