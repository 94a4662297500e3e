use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic space-time sampling: an `nx x ny x nz` spatial box with
/// side lengths `lx, ly, lz` (periodic in all three directions) and `nt`
/// time samples `t0 + j*dt`.
///
/// Spatial node `i` along x sits at `i * lx / nx`; the node is treated as the
/// center of the cell `[x_i - hx/2, x_i + hx/2)` by the quadrature code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub nt: usize,
    pub t0: f64,
    pub dt: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    nx: usize,
    ny: usize,
    nz: usize,
    lx: f64,
    ly: f64,
    lz: f64,
    nt: usize,
    t0: f64,
    dt: f64,
}

impl TryFrom<RawGrid> for Grid {
    type Error = Error;
    fn try_from(r: RawGrid) -> Result<Grid> {
        Grid::new(r.nx, r.ny, r.nz, r.lx, r.ly, r.lz, r.nt, r.t0, r.dt)
    }
}

impl Grid {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nx: usize,
        ny: usize,
        nz: usize,
        lx: f64,
        ly: f64,
        lz: f64,
        nt: usize,
        t0: f64,
        dt: f64,
    ) -> Result<Grid> {
        if nx < 4 || ny < 4 || nz < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4 nodes per spatial axis, got {nx}x{ny}x{nz}"
            )));
        }
        for (name, l) in [("lx", lx), ("ly", ly), ("lz", lz)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!("{name} must be finite and positive, got {l}")));
            }
        }
        if nt < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 time samples, got {nt}")));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidGrid(format!("t0 must be finite, got {t0}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid(format!("dt must be finite and positive, got {dt}")));
        }
        Ok(Grid { nx, ny, nz, lx, ly, lz, nt, t0, dt })
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn hz(&self) -> f64 {
        self.lz / self.nz as f64
    }

    /// Largest spatial cell side.
    pub fn h_max(&self) -> f64 {
        self.hx().max(self.hy()).max(self.hz())
    }

    pub fn cell_volume(&self) -> f64 {
        self.hx() * self.hy() * self.hz()
    }

    pub fn min_side(&self) -> f64 {
        self.lx.min(self.ly).min(self.lz)
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.nt - 1)
    }

    pub fn spatial_len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Index of the stored time sample nearest to `t`.
    pub fn nearest_time_index(&self, t: f64) -> usize {
        let j = ((t - self.t0) / self.dt).round();
        (j.max(0.0) as usize).min(self.nt - 1)
    }

    /// Signed displacement `a - b` along a periodic axis of length `l`,
    /// wrapped into `[-l/2, l/2)` (minimum image).
    pub fn wrapped_delta(a: f64, b: f64, l: f64) -> f64 {
        let mut d = (a - b) % l;
        if d < -l / 2.0 {
            d += l;
        } else if d >= l / 2.0 {
            d -= l;
        }
        d
    }

    /// Minimum-image distance between two spatial points in this box.
    pub fn wrapped_distance(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let dx = Self::wrapped_delta(a[0], b[0], self.lx);
        let dy = Self::wrapped_delta(a[1], b[1], self.ly);
        let dz = Self::wrapped_delta(a[2], b[2], self.lz);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}
