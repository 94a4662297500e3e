use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{FieldQuadrature, Point4, TimeWindowMode};
use crate::grid::Grid;

/// One probed scale pair of an inequality check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LemmaSample {
    pub r: f64,
    pub theta: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Smallest constant that would make this sample satisfy the bound;
    /// 0 when the left side vanishes, infinity when only the right does.
    pub k_required: f64,
    /// The inner radius fell under twice the cell size, or the outer time
    /// window ran past the stored range; the sample is reported but not
    /// allowed to veto admissibility.
    pub resolution_limited: bool,
}

/// Outcome of probing one inequality at several scale pairs.
#[derive(Clone, Debug, Serialize)]
pub struct LemmaReport {
    pub samples: Vec<LemmaSample>,
    pub k_given: f64,
    /// Largest finite `k_required` among resolution-trustworthy samples.
    pub max_k_required: f64,
    /// Share of all samples (trustworthy or not) whose measured constant
    /// stays within `k_given`.
    pub fraction_satisfied: f64,
    pub admissible: bool,
}

impl LemmaReport {
    fn from_samples(samples: Vec<LemmaSample>, k_given: f64) -> Self {
        let mut max_k = 0.0f64;
        let mut admissible = true;
        for s in samples.iter().filter(|s| !s.resolution_limited) {
            if s.k_required.is_infinite() {
                admissible = false;
            } else {
                max_k = max_k.max(s.k_required);
            }
        }
        if max_k > k_given {
            admissible = false;
        }
        let fraction_satisfied = if samples.is_empty() {
            1.0
        } else {
            samples.iter().filter(|s| s.k_required <= k_given).count() as f64
                / samples.len() as f64
        };
        LemmaReport { samples, k_given, max_k_required: max_k, fraction_satisfied, admissible }
    }
}

fn k_required(lhs: f64, rhs: f64) -> f64 {
    if lhs <= 0.0 {
        0.0
    } else if rhs <= 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

/// The cylinder window `[t - r^2, t]` silently clips to the stored range,
/// which would distort the measured constant.
fn window_clipped(grid: &Grid, t: f64, r: f64) -> bool {
    let slack = 1e-9 * grid.dt;
    t - r * r < grid.t0 - slack || t > grid.t_end() + slack
}

/// Check the interpolation bound
/// `C(theta r) <= K (theta^(-3/2) A(r)^(3/4) E(r)^(3/4) + theta^3 A(r)^(3/2))`
/// at the given scale pairs around the event `z`.
pub fn verify_interpolation(
    quad: &FieldQuadrature<'_>,
    z: &Point4,
    pairs: &[(f64, f64)],
    k_given: f64,
) -> Result<LemmaReport> {
    let floor = 2.0 * quad.grid().h_max();
    let mut samples = Vec::with_capacity(pairs.len());
    for &(r, theta) in pairs {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::Config(format!("theta must lie in (0, 1), got {theta}")));
        }
        let a = quad.eval_a(z, r, TimeWindowMode::Cylinder)?.value;
        let e = quad.eval_e(z, r)?.value;
        let lhs = quad.eval_c(z, theta * r)?.value;
        let rhs = theta.powf(-1.5) * a.powf(0.75) * e.powf(0.75) + theta.powi(3) * a.powf(1.5);
        samples.push(LemmaSample {
            r,
            theta,
            lhs,
            rhs,
            k_required: k_required(lhs, rhs),
            resolution_limited: theta * r < floor || window_clipped(quad.grid(), z.1, r),
        });
    }
    Ok(LemmaReport::from_samples(samples, k_given))
}

/// Check the pressure transfer bound
/// `D(theta r) <= K (theta D(r) + theta^(-2) C(r))` at the given scale
/// pairs. Requires `theta < 1/2`, matching the range the bound is used in.
pub fn verify_pressure(
    quad: &FieldQuadrature<'_>,
    z: &Point4,
    pairs: &[(f64, f64)],
    k_given: f64,
) -> Result<LemmaReport> {
    let floor = 2.0 * quad.grid().h_max();
    let mut samples = Vec::with_capacity(pairs.len());
    for &(r, theta) in pairs {
        if !(theta > 0.0 && theta < 0.5) {
            return Err(Error::Config(format!(
                "pressure transfer needs theta in (0, 1/2), got {theta}"
            )));
        }
        let d_outer = quad.eval_d(z, r)?.value;
        let c_outer = quad.eval_c(z, r)?.value;
        let lhs = quad.eval_d(z, theta * r)?.value;
        let rhs = theta * d_outer + theta.powi(-2) * c_outer;
        samples.push(LemmaSample {
            r,
            theta,
            lhs,
            rhs,
            k_required: k_required(lhs, rhs),
            resolution_limited: theta * r < floor || window_clipped(quad.grid(), z.1, r),
        });
    }
    Ok(LemmaReport::from_samples(samples, k_given))
}
