use crate::error::{Error, Result};
use crate::grid::Grid;

/// Quadrature rule for a ball in the periodic box: the list of cells whose
/// center value enters the integral, with a volume-fraction weight per cell.
/// Interior cells get weight 1; cells cut by the sphere get the fraction of
/// a 6x6x6 subsample of their volume that lies inside.
pub struct BallQuadrature {
    /// (ix, iy, iz, weight), indices already wrapped into the grid.
    pub cells: Vec<(usize, usize, usize, f64)>,
    /// Sum of fractional-cell volumes: the geometrically uncertain part.
    pub boundary_volume: f64,
    /// Total weighted volume covered by the rule.
    pub volume: f64,
    cell_volume: f64,
}

impl BallQuadrature {
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }
}

pub fn ball_volume(r: f64) -> f64 {
    4.0 / 3.0 * std::f64::consts::PI * r * r * r
}

/// Build the quadrature rule for `B(center, r)`. The ball must fit in the
/// box without touching its own periodic images (`2r < min side`).
pub fn ball_quadrature(grid: &Grid, center: &[f64; 3], r: f64) -> Result<BallQuadrature> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Geometry(format!("ball radius must be positive, got {r}")));
    }
    if 2.0 * r >= grid.min_side() {
        return Err(Error::Geometry(format!(
            "ball of radius {r} does not fit the periodic box (min side {})",
            grid.min_side()
        )));
    }
    let (hx, hy, hz) = (grid.hx(), grid.hy(), grid.hz());
    let half_diag = 0.5 * (hx * hx + hy * hy + hz * hz).sqrt();
    let range = |c: f64, h: f64, n: usize| -> Vec<usize> {
        let lo = ((c - r) / h).floor() as i64 - 1;
        let hi = ((c + r) / h).ceil() as i64 + 1;
        if (hi - lo + 1) as usize >= n {
            (0..n).collect()
        } else {
            (lo..=hi).map(|i| i.rem_euclid(n as i64) as usize).collect()
        }
    };
    let xs = range(center[0], hx, grid.nx);
    let ys = range(center[1], hy, grid.ny);
    let zs = range(center[2], hz, grid.nz);
    let mut cells = Vec::new();
    let mut boundary_volume = 0.0;
    let mut volume = 0.0;
    let cell_volume = grid.cell_volume();
    for &ix in &xs {
        let dx = Grid::wrapped_delta(ix as f64 * hx, center[0], grid.lx);
        for &iy in &ys {
            let dy = Grid::wrapped_delta(iy as f64 * hy, center[1], grid.ly);
            for &iz in &zs {
                let dz = Grid::wrapped_delta(iz as f64 * hz, center[2], grid.lz);
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                if d >= r + half_diag {
                    continue;
                }
                let w = if d <= r - half_diag {
                    1.0
                } else {
                    // straddling cell: count a 6x6x6 subsample
                    const SUB: usize = 6;
                    let off = |k: usize| (k as f64 + 0.5) / SUB as f64 - 0.5;
                    let mut inside = 0u32;
                    for sx in 0..SUB {
                        let ddx = dx + off(sx) * hx;
                        for sy in 0..SUB {
                            let ddy = dy + off(sy) * hy;
                            for sz in 0..SUB {
                                let ddz = dz + off(sz) * hz;
                                if ddx * ddx + ddy * ddy + ddz * ddz <= r * r {
                                    inside += 1;
                                }
                            }
                        }
                    }
                    if inside == 0 {
                        continue;
                    }
                    boundary_volume += cell_volume;
                    inside as f64 / (SUB * SUB * SUB) as f64
                };
                volume += w * cell_volume;
                cells.push((ix, iy, iz, w));
            }
        }
    }
    Ok(BallQuadrature { cells, boundary_volume, volume, cell_volume })
}

/// Integration weights over one time window, expressed on the stored
/// samples. The rule is the exact integral of the piecewise-linear
/// interpolant of the samples over `[lo, hi]` clipped to the data range, so
/// weights at the window edges are fractional.
pub struct TimeQuadrature {
    /// (time index, weight); weights sum to the clipped window length.
    pub weights: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
    pub clipped: bool,
}

pub fn time_quadrature(grid: &Grid, lo: f64, hi: f64) -> Result<TimeQuadrature> {
    let (t0, t1) = (grid.t0, grid.t_end());
    let a = lo.max(t0);
    let b = hi.min(t1);
    if !(b > a) {
        return Err(Error::Domain(format!(
            "time window [{lo}, {hi}] does not intersect data range [{t0}, {t1}]"
        )));
    }
    let clipped = a > lo || b < hi;
    let dt = grid.dt;
    let mut w = vec![0.0f64; grid.nt];
    // knots: a, every sample in (a, b), b. On each subinterval use the
    // trapezoid of linearly interpolated endpoint values.
    let add_point = |t: f64, coeff: f64, w: &mut Vec<f64>| {
        // distribute coeff * f(t) onto the bracketing samples
        let s = (t - t0) / dt;
        let j = (s.floor() as usize).min(grid.nt - 2);
        let frac = (s - j as f64).clamp(0.0, 1.0);
        w[j] += coeff * (1.0 - frac);
        w[j + 1] += coeff * frac;
    };
    let j_first = ((a - t0) / dt).ceil().max(0.0) as usize;
    let j_last = ((b - t0) / dt).floor().max(0.0) as usize;
    let eps = 1e-12 * dt;
    let t_of = |j: usize| t0 + j as f64 * dt;
    if j_first > j_last {
        // window inside a single sample interval
        let len = b - a;
        add_point(a, 0.5 * len, &mut w);
        add_point(b, 0.5 * len, &mut w);
    } else {
        let jf = j_first.min(grid.nt - 1);
        let jl = j_last.min(grid.nt - 1);
        let left = t_of(jf) - a;
        if left > eps {
            add_point(a, 0.5 * left, &mut w);
            w[jf] += 0.5 * left;
        }
        for j in jf..jl {
            w[j] += 0.5 * dt;
            w[j + 1] += 0.5 * dt;
        }
        let right = b - t_of(jl);
        if right > eps {
            w[jl] += 0.5 * right;
            add_point(b, 0.5 * right, &mut w);
        }
    }
    let weights: Vec<(usize, f64)> =
        w.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect();
    Ok(TimeQuadrature { weights, lo: a, hi: b, clipped })
}

/// Indices of stored samples inside `[lo, hi]` clipped to the data range.
pub fn samples_in_window(grid: &Grid, lo: f64, hi: f64) -> Vec<usize> {
    let a = lo.max(grid.t0);
    let b = hi.min(grid.t_end());
    let eps = 1e-12 * grid.dt;
    (0..grid.nt)
        .filter(|&j| {
            let t = grid.time(j);
            t >= a - eps && t <= b + eps
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_volume_converges_quadratically() {
        let r = 0.5;
        let exact = ball_volume(r);
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let g = Grid::new(n, n, n, 2.0, 2.0, 2.0, 2, 0.0, 0.1).unwrap();
            let q = ball_quadrature(&g, &[1.0, 1.0, 1.0], r).unwrap();
            errs.push((q.volume - exact).abs() / exact);
        }
        assert!(errs[1] < errs[0] / 2.0, "errors {errs:?}");
        assert!(errs[2] < errs[1] / 2.0, "errors {errs:?}");
        assert!(errs[2] < 5e-4, "finest error {}", errs[2]);
    }

    #[test]
    fn ball_wraps_periodically() {
        let g = Grid::new(32, 32, 32, 2.0, 2.0, 2.0, 2, 0.0, 0.1).unwrap();
        // centers differ by a whole number of cells, so the geometry relative
        // to the lattice is identical even though one ball wraps the corner
        let near_corner = ball_quadrature(&g, &[0.05, 0.05, 0.05], 0.4).unwrap();
        let interior = ball_quadrature(&g, &[1.05, 1.05, 1.05], 0.4).unwrap();
        assert!((near_corner.volume - interior.volume).abs() < 1e-12);
        assert_eq!(near_corner.cells.len(), interior.cells.len());
    }

    #[test]
    fn ball_rejects_oversize() {
        let g = Grid::new(8, 8, 8, 1.0, 1.0, 1.0, 2, 0.0, 0.1).unwrap();
        assert!(ball_quadrature(&g, &[0.5, 0.5, 0.5], 0.5).is_err());
    }

    #[test]
    fn time_weights_integrate_constants_exactly() {
        let g = Grid::new(4, 4, 4, 1.0, 1.0, 1.0, 11, 0.0, 0.1).unwrap();
        for (lo, hi) in [(0.0, 1.0), (0.13, 0.78), (0.05, 0.05 + 0.033), (0.95, 1.4), (-0.5, 0.31)]
        {
            let q = time_quadrature(&g, lo, hi).unwrap();
            let total: f64 = q.weights.iter().map(|(_, w)| w).sum();
            let expect = hi.min(1.0) - lo.max(0.0);
            assert!(
                (total - expect).abs() < 1e-12,
                "window [{lo}, {hi}]: weights sum to {total}, want {expect}"
            );
        }
    }

    #[test]
    fn time_weights_integrate_linears_exactly() {
        let g = Grid::new(4, 4, 4, 1.0, 1.0, 1.0, 11, 0.0, 0.1).unwrap();
        let f = |t: f64| 2.0 * t - 0.3;
        for (lo, hi) in [(0.0, 1.0), (0.13, 0.78), (0.21, 0.24)] {
            let q = time_quadrature(&g, lo, hi).unwrap();
            let got: f64 = q.weights.iter().map(|(j, w)| w * f(g.time(*j))).sum();
            let exact = (hi * hi - lo * lo) - 0.3 * (hi - lo);
            assert!((got - exact).abs() < 1e-12, "window [{lo}, {hi}]: {got} vs {exact}");
        }
    }

    #[test]
    fn fully_outside_window_errors() {
        let g = Grid::new(4, 4, 4, 1.0, 1.0, 1.0, 11, 0.0, 0.1).unwrap();
        assert!(time_quadrature(&g, 1.5, 2.0).is_err());
        assert!(time_quadrature(&g, -1.0, -0.2).is_err());
    }

    #[test]
    fn adjacent_windows_are_additive() {
        let g = Grid::new(4, 4, 4, 1.0, 1.0, 1.0, 11, 0.0, 0.1).unwrap();
        let f = |t: f64| (7.0 * t).sin() + 0.4;
        let val = |lo: f64, hi: f64| -> f64 {
            time_quadrature(&g, lo, hi)
                .unwrap()
                .weights
                .iter()
                .map(|(j, w)| w * f(g.time(*j)))
                .sum()
        };
        let split = val(0.1, 0.37) + val(0.37, 0.8);
        let whole = val(0.1, 0.8);
        assert!((split - whole).abs() < 1e-12);
    }
}
