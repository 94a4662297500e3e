use std::collections::BTreeMap;

use ndarray::{Array4, Array5, ArrayView3, ArrayView4, Axis};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// A sampled incompressible flow: velocity `u` with layout `(t, c, x, y, z)`
/// (z fastest), scalar pressure `p` with layout `(t, x, y, z)` and an
/// optional second vector field `b` shaped like `u`.
///
/// Values must be finite; nothing else is assumed. Generators and the solver
/// each guarantee their own stronger properties (divergence-free output,
/// closed forms) and record provenance in `metadata`.
#[derive(Clone, Debug)]
pub struct SpaceTimeField {
    pub grid: Grid,
    pub u: Array5<f64>,
    pub p: Array4<f64>,
    pub b: Option<Array5<f64>>,
    pub metadata: BTreeMap<String, String>,
}

impl SpaceTimeField {
    pub fn new(
        grid: Grid,
        u: Array5<f64>,
        p: Array4<f64>,
        b: Option<Array5<f64>>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let ushape = [grid.nt, 3, grid.nx, grid.ny, grid.nz];
        if u.shape() != ushape {
            return Err(Error::InvalidField(format!(
                "velocity shape {:?} does not match grid {:?}",
                u.shape(),
                ushape
            )));
        }
        let pshape = [grid.nt, grid.nx, grid.ny, grid.nz];
        if p.shape() != pshape {
            return Err(Error::InvalidField(format!(
                "pressure shape {:?} does not match grid {:?}",
                p.shape(),
                pshape
            )));
        }
        if let Some(b) = &b {
            if b.shape() != ushape {
                return Err(Error::InvalidField(format!(
                    "secondary field shape {:?} does not match grid {:?}",
                    b.shape(),
                    ushape
                )));
            }
        }
        for (name, any_bad) in [
            ("velocity", u.iter().any(|v| !v.is_finite())),
            ("pressure", p.iter().any(|v| !v.is_finite())),
            (
                "secondary field",
                b.as_ref().map(|b| b.iter().any(|v| !v.is_finite())).unwrap_or(false),
            ),
        ] {
            if any_bad {
                return Err(Error::InvalidField(format!("{name} contains non-finite values")));
            }
        }
        Ok(SpaceTimeField { grid, u, p, b, metadata })
    }

    /// Velocity at time index `j`, shaped `(3, nx, ny, nz)`.
    pub fn u_slice(&self, j: usize) -> ArrayView4<'_, f64> {
        self.u.index_axis(Axis(0), j)
    }

    pub fn p_slice(&self, j: usize) -> ArrayView3<'_, f64> {
        self.p.index_axis(Axis(0), j)
    }

    pub fn b_slice(&self, j: usize) -> Option<ArrayView4<'_, f64>> {
        self.b.as_ref().map(|b| b.index_axis(Axis(0), j))
    }

    pub fn max_abs_u(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// |u|^2 at a sample, summed over components (plus |b|^2 when present
    /// and `with_b` is set).
    pub fn speed_sq(&self, j: usize, ix: usize, iy: usize, iz: usize) -> f64 {
        let u = &self.u;
        u[[j, 0, ix, iy, iz]].powi(2) + u[[j, 1, ix, iy, iz]].powi(2) + u[[j, 2, ix, iy, iz]].powi(2)
    }

    pub fn b_sq(&self, j: usize, ix: usize, iy: usize, iz: usize) -> f64 {
        match &self.b {
            Some(b) => {
                b[[j, 0, ix, iy, iz]].powi(2)
                    + b[[j, 1, ix, iy, iz]].powi(2)
                    + b[[j, 2, ix, iy, iz]].powi(2)
            }
            None => 0.0,
        }
    }

    /// Kinetic energy integral of one stored slice: the plain box integral
    /// of |u|^2 (cell sums, which are exact for trigonometric data).
    pub fn kinetic_energy(&self, j: usize) -> f64 {
        let mut s = 0.0;
        for ix in 0..self.grid.nx {
            for iy in 0..self.grid.ny {
                for iz in 0..self.grid.nz {
                    s += self.speed_sq(j, ix, iy, iz);
                }
            }
        }
        s * self.grid.cell_volume()
    }
}

pub(crate) fn require_two_pi_cube(grid: &Grid) -> Result<()> {
    let two_pi = 2.0 * std::f64::consts::PI;
    for l in [grid.lx, grid.ly, grid.lz] {
        if (l - two_pi).abs() > 1e-12 * two_pi {
            return Err(Error::Config(format!(
                "this generator needs a (2*pi)^3 box, got side {l}"
            )));
        }
    }
    Ok(())
}

/// Exact decaying triply-periodic solution with unit viscosity:
/// `u(x,t) = exp(-(t-t0)) * (a sin z + c cos y, b sin x + a cos z, c sin y + b cos x)`
/// and pressure `-|u|^2/2` with the spatial mean removed. The velocity is an
/// eigenfunction of curl, so the advective term is a pure gradient and the
/// trajectory decays mode-by-mode.
pub fn generate_beltrami(grid: &Grid, a: f64, b: f64, c: f64) -> Result<SpaceTimeField> {
    require_two_pi_cube(grid)?;
    for (n, v) in [("a", a), ("b", b), ("c", c)] {
        if !v.is_finite() {
            return Err(Error::Config(format!("coefficient {n} must be finite, got {v}")));
        }
    }
    let (nx, ny, nz, nt) = (grid.nx, grid.ny, grid.nz, grid.nt);
    let mut u = Array5::<f64>::zeros((nt, 3, nx, ny, nz));
    let mut p = Array4::<f64>::zeros((nt, nx, ny, nz));
    // time-independent profile, scaled per slice
    let mut base = Array4::<f64>::zeros((3, nx, ny, nz));
    for ix in 0..nx {
        let x = grid.hx() * ix as f64;
        for iy in 0..ny {
            let y = grid.hy() * iy as f64;
            for iz in 0..nz {
                let z = grid.hz() * iz as f64;
                base[[0, ix, iy, iz]] = a * z.sin() + c * y.cos();
                base[[1, ix, iy, iz]] = b * x.sin() + a * z.cos();
                base[[2, ix, iy, iz]] = c * y.sin() + b * x.cos();
            }
        }
    }
    let n_cells = grid.spatial_len() as f64;
    for j in 0..nt {
        let decay = (-(grid.time(j) - grid.t0)).exp();
        let mut mean_q = 0.0;
        for ix in 0..nx {
            for iy in 0..ny {
                for iz in 0..nz {
                    let mut q = 0.0;
                    for comp in 0..3 {
                        let v = decay * base[[comp, ix, iy, iz]];
                        u[[j, comp, ix, iy, iz]] = v;
                        q += v * v;
                    }
                    p[[j, ix, iy, iz]] = -0.5 * q;
                    mean_q += p[[j, ix, iy, iz]];
                }
            }
        }
        mean_q /= n_cells;
        for ix in 0..nx {
            for iy in 0..ny {
                for iz in 0..nz {
                    p[[j, ix, iy, iz]] -= mean_q;
                }
            }
        }
    }
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "beltrami".into());
    meta.insert("coefficients".into(), format!("{a},{b},{c}"));
    SpaceTimeField::new(grid.clone(), u, p, None, meta)
}

/// Constant velocity and pressure everywhere. Useful because every scaled
/// functional has a closed form on it.
pub fn generate_constant(grid: &Grid, u0: [f64; 3], p0: f64) -> Result<SpaceTimeField> {
    if u0.iter().any(|v| !v.is_finite()) || !p0.is_finite() {
        return Err(Error::Config("constant field values must be finite".into()));
    }
    let (nx, ny, nz, nt) = (grid.nx, grid.ny, grid.nz, grid.nt);
    let mut u = Array5::<f64>::zeros((nt, 3, nx, ny, nz));
    for j in 0..nt {
        for (comp, val) in u0.iter().enumerate() {
            u.index_axis_mut(Axis(0), j).index_axis_mut(Axis(0), comp).fill(*val);
        }
    }
    let p = Array4::<f64>::from_elem((nt, nx, ny, nz), p0);
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "constant".into());
    meta.insert("u".into(), format!("{},{},{}", u0[0], u0[1], u0[2]));
    meta.insert("p".into(), format!("{p0}"));
    SpaceTimeField::new(grid.clone(), u, p, None, meta)
}

/// Parabolic distance between two events: max of the spatial distance and
/// the square root of the time separation. Spatial part uses the periodic
/// minimum image for `grid`.
pub fn parabolic_distance(grid: &Grid, a: (&[f64; 3], f64), b: (&[f64; 3], f64)) -> f64 {
    grid.wrapped_distance(a.0, b.0).max((a.1 - b.1).abs().sqrt())
}

/// A synthetic field with a planted blow-up profile: `|u| = d^(-exponent)`
/// where `d` is the parabolic distance to `center`, floored at the grid
/// scale so values stay finite. Velocity points along x, pressure is zero.
/// This is NOT a flow solution; it exists to exercise detection code, and
/// its metadata says so.
pub fn generate_near_singular(
    grid: &Grid,
    center: ([f64; 3], f64),
    exponent: f64,
) -> Result<SpaceTimeField> {
    if !(exponent > 0.0 && exponent < 2.0) {
        return Err(Error::Config(format!(
            "exponent must lie in (0, 2), got {exponent}"
        )));
    }
    let floor = grid.h_max().max(grid.dt.sqrt());
    let (nx, ny, nz, nt) = (grid.nx, grid.ny, grid.nz, grid.nt);
    let mut u = Array5::<f64>::zeros((nt, 3, nx, ny, nz));
    let p = Array4::<f64>::zeros((nt, nx, ny, nz));
    for j in 0..nt {
        let t = grid.time(j);
        for ix in 0..nx {
            let x = grid.hx() * ix as f64;
            for iy in 0..ny {
                let y = grid.hy() * iy as f64;
                for iz in 0..nz {
                    let z = grid.hz() * iz as f64;
                    let d = parabolic_distance(grid, (&[x, y, z], t), (&center.0, center.1));
                    u[[j, 0, ix, iy, iz]] = d.max(floor).powf(-exponent);
                }
            }
        }
    }
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "near_singular".into());
    meta.insert("exponent".into(), format!("{exponent}"));
    meta.insert(
        "center".into(),
        format!("{},{},{},{}", center.0[0], center.0[1], center.0[2], center.1),
    );
    meta.insert("distance_floor".into(), format!("{floor}"));
    meta.insert("note".into(), "synthetic profile, not a flow solution".into());
    SpaceTimeField::new(grid.clone(), u, p, None, meta)
}

/// The natural zoom `u_l(x,t) = l*u(l*x, l^2*t)`, `p_l = l^2*p(l*x, l^2*t)`,
/// returned on the grid that covers the zoomed domain: same sample counts,
/// box sides divided by `l`, time step divided by `l^2`. With that grid the
/// mapped sample points coincide with stored samples, so resampling is exact
/// value lookup and `lambda = 1` reproduces the input bit for bit.
pub fn rescale(field: &SpaceTimeField, lambda: f64) -> Result<SpaceTimeField> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be finite and positive, got {lambda}")));
    }
    let g = &field.grid;
    let l2 = lambda * lambda;
    let grid = Grid::new(
        g.nx,
        g.ny,
        g.nz,
        g.lx / lambda,
        g.ly / lambda,
        g.lz / lambda,
        g.nt,
        g.t0 / l2,
        g.dt / l2,
    )?;
    let u = field.u.mapv(|v| lambda * v);
    let p = field.p.mapv(|v| l2 * v);
    let b = field.b.as_ref().map(|b| b.mapv(|v| lambda * v));
    let mut metadata = field.metadata.clone();
    metadata.insert("rescaled_by".into(), format!("{lambda}"));
    SpaceTimeField::new(grid, u, p, b, metadata)
}

/// Pointwise relative residual of the momentum balance for a stored
/// trajectory, using spectral space derivatives and centered time
/// differences at interior time samples. For exact solutions this is
/// O(dt^2) and must fall under time refinement.
pub fn momentum_residual(field: &SpaceTimeField) -> Result<f64> {
    use crate::spectral::Spectral3;
    let g = &field.grid;
    if g.nt < 3 {
        return Err(Error::Config("need at least 3 time samples for a centered difference".into()));
    }
    let mut sp = Spectral3::new(g);
    let umax = field.max_abs_u().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for j in 1..g.nt - 1 {
        let u = field.u_slice(j);
        let mut uhat = Vec::with_capacity(3);
        for c in 0..3 {
            uhat.push(sp.forward_real(u.index_axis(Axis(0), c)));
        }
        let phat = sp.forward_real(field.p_slice(j));
        // gradients du_c/dx_a and dp/dx_a
        let mut du = Vec::with_capacity(9);
        for chat in &uhat {
            for axis in 0..3 {
                let dhat = sp.derivative_hat(chat, axis);
                du.push(sp.inverse_to_real(&dhat));
            }
        }
        let mut lap = Vec::with_capacity(3);
        for chat in &uhat {
            let mut lhat = chat.clone();
            for ((ix, iy, iz), v) in lhat.indexed_iter_mut() {
                let k2 = sp.wavenumber(0, ix).powi(2)
                    + sp.wavenumber(1, iy).powi(2)
                    + sp.wavenumber(2, iz).powi(2);
                *v = -k2 * *v;
            }
            lap.push(sp.inverse_to_real(&lhat));
        }
        let mut gp = Vec::with_capacity(3);
        for axis in 0..3 {
            let dhat = sp.derivative_hat(&phat, axis);
            gp.push(sp.inverse_to_real(&dhat));
        }
        let inv_2dt = 1.0 / (2.0 * g.dt);
        for ix in 0..g.nx {
            for iy in 0..g.ny {
                for iz in 0..g.nz {
                    for c in 0..3 {
                        let dudt = (field.u[[j + 1, c, ix, iy, iz]]
                            - field.u[[j - 1, c, ix, iy, iz]])
                            * inv_2dt;
                        let mut adv = 0.0;
                        for a in 0..3 {
                            adv += field.u[[j, a, ix, iy, iz]] * du[c * 3 + a][[ix, iy, iz]];
                        }
                        let r = dudt + adv + gp[c][[ix, iy, iz]] - lap[c][[ix, iy, iz]];
                        worst = worst.max(r.abs());
                    }
                }
            }
        }
    }
    Ok(worst / umax)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pi_grid(n: usize, nt: usize, dt: f64) -> Grid {
        let l = 2.0 * std::f64::consts::PI;
        Grid::new(n, n, n, l, l, l, nt, 0.0, dt).unwrap()
    }

    #[test]
    fn beltrami_point_value() {
        let g = two_pi_grid(8, 2, 0.1);
        let f = generate_beltrami(&g, 1.0, 0.0, 0.0).unwrap();
        // at the origin: (sin 0, cos 0, 0) = (0, 1, 0)
        assert_eq!(f.u[[0, 0, 0, 0, 0]], 0.0);
        assert!((f.u[[0, 1, 0, 0, 0]] - 1.0).abs() < 1e-15);
        assert_eq!(f.u[[0, 2, 0, 0, 0]], 0.0);
    }

    #[test]
    fn beltrami_energy_closed_form() {
        let g = two_pi_grid(16, 4, 0.25);
        let f = generate_beltrami(&g, 1.0, 1.0, 1.0).unwrap();
        let vol = (2.0 * std::f64::consts::PI).powi(3);
        for j in 0..4 {
            let expect = 3.0 * vol * (-2.0 * (g.time(j) - g.t0)).exp();
            let got = f.kinetic_energy(j);
            assert!(
                (got - expect).abs() <= 1e-12 * expect,
                "slice {j}: got {got}, want {expect}"
            );
        }
    }

    #[test]
    fn beltrami_pressure_is_mean_removed_speed() {
        let g = two_pi_grid(8, 2, 0.1);
        let f = generate_beltrami(&g, 0.7, -0.2, 1.3).unwrap();
        let n = g.spatial_len() as f64;
        let mean: f64 = f.p_slice(0).iter().sum::<f64>() / n;
        assert!(mean.abs() < 1e-13);
        // p + |u|^2/2 should be spatially constant
        let c0 = f.p[[0, 0, 0, 0]] + 0.5 * f.speed_sq(0, 0, 0, 0);
        for ix in 0..g.nx {
            for iy in 0..g.ny {
                let c = f.p[[0, ix, iy, 3]] + 0.5 * f.speed_sq(0, ix, iy, 3);
                assert!((c - c0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn beltrami_needs_two_pi_box() {
        let g = Grid::new(8, 8, 8, 1.0, 1.0, 1.0, 2, 0.0, 0.1).unwrap();
        assert!(generate_beltrami(&g, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn near_singular_profile_and_floor() {
        let g = two_pi_grid(16, 4, 0.01);
        let c = ([std::f64::consts::PI; 3], 0.03);
        let f = generate_near_singular(&g, c, 1.0).unwrap();
        let floor = g.h_max().max(g.dt.sqrt());
        let cap = floor.powf(-1.0);
        let max = f.max_abs_u();
        assert!(max <= cap + 1e-12);
        // far from the center the magnitude matches the distance law
        let (ix, iy, iz, j) = (0, 0, 0, 0);
        let pt = [0.0, 0.0, 0.0];
        let d = parabolic_distance(&g, (&pt, g.time(j)), (&c.0, c.1));
        assert!((f.u[[j, 0, ix, iy, iz]] - d.powf(-1.0)).abs() < 1e-12);
        assert_eq!(f.metadata["kind"], "near_singular");
    }

    #[test]
    fn rescale_identity_is_bitwise() {
        let g = two_pi_grid(8, 3, 0.05);
        let f = generate_beltrami(&g, 1.0, 0.5, -0.25).unwrap();
        let r = rescale(&f, 1.0).unwrap();
        assert_eq!(f.u, r.u);
        assert_eq!(f.p, r.p);
        assert_eq!(f.grid.lx, r.grid.lx);
    }

    #[test]
    fn rescale_scales_values_and_grid() {
        let g = two_pi_grid(8, 3, 0.05);
        let f = generate_beltrami(&g, 1.0, 0.0, 0.0).unwrap();
        let r = rescale(&f, 2.0).unwrap();
        assert!((r.grid.lx - std::f64::consts::PI).abs() < 1e-15);
        assert!((r.grid.dt - 0.0125).abs() < 1e-15);
        assert!((r.u[[1, 1, 2, 3, 4]] - 2.0 * f.u[[1, 1, 2, 3, 4]]).abs() < 1e-15);
        assert!((r.p[[1, 2, 3, 4]] - 4.0 * f.p[[1, 2, 3, 4]]).abs() < 1e-15);
    }

    #[test]
    fn momentum_residual_drops_with_dt() {
        // exact solution: residual is the centered-difference error, O(dt^2)
        let coarse = {
            let g = two_pi_grid(12, 5, 0.08);
            momentum_residual(&generate_beltrami(&g, 1.0, 1.0, 1.0).unwrap()).unwrap()
        };
        let fine = {
            let g = two_pi_grid(12, 9, 0.04);
            momentum_residual(&generate_beltrami(&g, 1.0, 1.0, 1.0).unwrap()).unwrap()
        };
        assert!(coarse > 0.0);
        assert!(
            fine * 3.0 <= coarse,
            "residual should drop at least 3x: coarse {coarse}, fine {fine}"
        );
    }
}
