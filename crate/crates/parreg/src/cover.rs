use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{FieldQuadrature, Point4};

/// A finite set of events (x, y, z, t). Points are deduplicated and kept in
/// a deterministic sorted order.
#[derive(Clone, Debug)]
pub struct PointSet4D {
    points: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    x: f64,
    y: f64,
    z: f64,
    t: f64,
}

impl PointSet4D {
    pub fn new(mut points: Vec<[f64; 4]>) -> Result<Self> {
        for p in &points {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("non-finite point {p:?}")));
            }
        }
        points.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        points.dedup();
        Ok(PointSet4D { points })
    }

    pub fn points(&self) -> &[[f64; 4]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounding_box(&self) -> Option<([f64; 4], [f64; 4])> {
        let first = *self.points.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points {
            for k in 0..4 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some((lo, hi))
    }

    pub fn to_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for p in &self.points {
            wtr.serialize(CsvRow { x: p[0], y: p[1], z: p[2], t: p[3] })
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut points = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let row = row.map_err(|e| Error::Domain(format!("bad point row: {e}")))?;
            points.push([row.x, row.y, row.z, row.t]);
        }
        PointSet4D::new(points)
    }
}

fn box_key(p: &[f64; 4], r: f64) -> Result<(i64, i64, i64, i64)> {
    let idx = |v: f64, s: f64| -> Result<i64> {
        let q = (v / s).floor();
        if q.abs() > 9.0e15 {
            return Err(Error::Numerical(format!(
                "coordinate {v} at scale {s} overflows the box index range"
            )));
        }
        Ok(q as i64)
    };
    Ok((idx(p[0], r)?, idx(p[1], r)?, idx(p[2], r)?, idx(p[3], r * r)?))
}

/// Result of covering a point set with grid-aligned parabolic boxes of
/// spatial side `r` and time extent `r^2`.
#[derive(Clone, Debug, Serialize)]
pub struct CoverResult {
    pub r: f64,
    pub count: usize,
    pub empty: bool,
    /// Aligned boxes can exceed a minimal cylinder cover by at most this
    /// factor (each cylinder of radius `r` meets at most 2 boxes per axis).
    pub overcount_bound: u32,
    /// When requested: one cylinder per occupied box, centered spatially in
    /// the box with its time window ending at the box top, so the closed
    /// cylinder of radius `r` contains the box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<[f64; 4]>>,
}

/// Count occupied parabolic boxes at scale `r`, grid anchored at the origin.
pub fn box_count(set: &PointSet4D, r: f64, with_centers: bool) -> Result<CoverResult> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Config(format!("box scale must be positive, got {r}")));
    }
    let mut keys = HashSet::new();
    for p in set.points() {
        keys.insert(box_key(p, r)?);
    }
    let centers = if with_centers {
        let mut cs: Vec<[f64; 4]> = keys
            .iter()
            .map(|&(ix, iy, iz, it)| {
                [
                    (ix as f64 + 0.5) * r,
                    (iy as f64 + 0.5) * r,
                    (iz as f64 + 0.5) * r,
                    (it as f64 + 1.0) * r * r,
                ]
            })
            .collect();
        cs.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Some(cs)
    } else {
        None
    };
    Ok(CoverResult { r, count: keys.len(), empty: set.is_empty(), overcount_bound: 16, centers })
}

/// Least-squares dimension estimate from box counts across scales.
#[derive(Clone, Debug, Serialize)]
pub struct DimensionEstimate {
    pub radii: Vec<f64>,
    pub counts: Vec<usize>,
    /// Slope of log N against log(1/r) between consecutive scales.
    pub per_scale: Vec<f64>,
    /// Smallest and largest per-scale slope, so divergence between the
    /// liminf and limsup behavior of the ladder is visible at a glance.
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub slope_raw: f64,
    /// The slope clamped to the meaningful range [0, 5].
    pub dimension: f64,
    /// Coefficient of determination of the log-log fit.
    pub fit_r2: f64,
}

/// Estimate the parabolic box-counting dimension over at least four scales.
pub fn estimate_minkowski(set: &PointSet4D, radii: &[f64]) -> Result<DimensionEstimate> {
    if set.is_empty() {
        return Err(Error::Domain("cannot estimate the dimension of an empty set".into()));
    }
    if radii.len() < 4 {
        return Err(Error::Config(format!(
            "dimension estimation needs at least 4 scales, got {}",
            radii.len()
        )));
    }
    let mut radii = radii.to_vec();
    radii.sort_by(|a, b| b.total_cmp(a));
    radii.dedup();
    if radii.len() < 4 {
        return Err(Error::Config("scales collapse to fewer than 4 distinct values".into()));
    }
    let mut counts = Vec::with_capacity(radii.len());
    for &r in &radii {
        counts.push(box_count(set, r, false)?.count);
    }
    let xs: Vec<f64> = radii.iter().map(|r| -r.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&n| (n as f64).ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = ys.iter().map(|y| (y - ym) * (y - ym)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fit = ym + slope * (x - xm);
            (y - fit) * (y - fit)
        })
        .sum();
    let fit_r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let per_scale: Vec<f64> = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect();
    let ratio_min = per_scale.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio_max = per_scale.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DimensionEstimate {
        radii,
        counts,
        per_scale,
        ratio_min,
        ratio_max,
        slope_raw: slope,
        dimension: slope.clamp(0.0, 5.0),
        fit_r2,
    })
}

/// Upper bounds on the `alpha`-weight of parabolic covers, one per ladder
/// scale.
#[derive(Clone, Debug, Serialize)]
pub struct HausdorffEstimate {
    pub alpha: f64,
    /// Top cover scales, sorted decreasing.
    pub deltas: Vec<f64>,
    /// Greedy bound on the sum of `r^alpha` over a cover with all radii
    /// at most the matching delta.
    pub bounds: Vec<f64>,
    /// Shrinking delta restricts the cover family, but each bound here also
    /// refines further down, so the reported sequence should not grow. A
    /// `false` records that the greedy heuristic broke that.
    pub monotone_nonincreasing: bool,
    pub empty: bool,
}

/// Greedy weight of a cover topped at scale `r0`, refined down `levels`
/// dyadic generations. Each cell either pays its own `r^alpha` or delegates
/// to its children, whichever is cheaper, so deeper refinement never
/// increases the cost.
fn greedy_cover_weight(set: &PointSet4D, alpha: f64, r0: f64, levels: u32) -> Result<f64> {
    let r_fine = r0 * 0.5f64.powi(levels as i32);
    let mut costs: HashMap<(i64, i64, i64, i64), f64> = HashMap::new();
    for p in set.points() {
        costs.insert(box_key(p, r_fine)?, r_fine.powf(alpha));
    }
    let mut r = r_fine;
    for _ in 0..levels {
        r *= 2.0;
        let own = r.powf(alpha);
        let mut parents: HashMap<(i64, i64, i64, i64), f64> = HashMap::new();
        for ((ix, iy, iz, it), c) in costs {
            let key = (ix.div_euclid(2), iy.div_euclid(2), iz.div_euclid(2), it.div_euclid(4));
            *parents.entry(key).or_insert(0.0) += c;
        }
        for v in parents.values_mut() {
            *v = v.min(own);
        }
        costs = parents;
    }
    Ok(costs.values().sum())
}

/// Number of dyadic generations each ladder bound refines below its delta.
const HAUSDORFF_REFINE_LEVELS: u32 = 8;

/// Greedy upper bound on the `alpha`-weight of a parabolic cover of the
/// set, evaluated at every scale in `deltas`.
pub fn hausdorff_upper(set: &PointSet4D, alpha: f64, deltas: &[f64]) -> Result<HausdorffEstimate> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("weight exponent must be positive, got {alpha}")));
    }
    if deltas.is_empty() {
        return Err(Error::Config("cover scale ladder is empty".into()));
    }
    for &d in deltas {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::Config(format!("cover scale must be positive, got {d}")));
        }
    }
    let mut deltas = deltas.to_vec();
    deltas.sort_by(|a, b| b.total_cmp(a));
    deltas.dedup();
    let mut bounds = Vec::with_capacity(deltas.len());
    for &d in &deltas {
        let b = if set.is_empty() {
            0.0
        } else {
            greedy_cover_weight(set, alpha, d, HAUSDORFF_REFINE_LEVELS)?
        };
        bounds.push(b);
    }
    let monotone_nonincreasing =
        bounds.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + f64::MIN_POSITIVE);
    Ok(HausdorffEstimate {
        alpha,
        deltas,
        bounds,
        monotone_nonincreasing,
        empty: set.is_empty(),
    })
}

/// A greedily built pairwise-disjoint family of parabolic cylinders of
/// common radius `r` centered at set points, together with self-checks.
#[derive(Clone, Debug, Serialize)]
pub struct VitaliFamily {
    pub r: f64,
    pub centers: Vec<[f64; 4]>,
    pub pairwise_disjoint: bool,
    /// Every set point lies in the closed five-fold dilate of some kept
    /// cylinder.
    pub all_covered: bool,
}

fn cylinders_intersect(a: &[f64; 4], b: &[f64; 4], r: f64) -> bool {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    let spatial = (dx * dx + dy * dy + dz * dz).sqrt();
    spatial < 2.0 * r && (a[3] - b[3]).abs() < r * r
}

fn in_closed_dilate(p: &[f64; 4], center: &[f64; 4], r: f64) -> bool {
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    let dz = p[2] - center[2];
    let spatial = (dx * dx + dy * dy + dz * dz).sqrt();
    let s = 5.0 * r;
    spatial <= s && p[3] <= center[3] && p[3] >= center[3] - s * s
}

/// Select a maximal disjoint subfamily of `Q(p, r)` over the set points,
/// visiting points from the latest time downward. The one-sided time
/// windows make the order matter: a discarded point always lies at or
/// before the time of the cylinder that discarded it, which is what places
/// it inside the closed five-fold dilate.
pub fn vitali_disjoint(set: &PointSet4D, r: f64) -> Result<VitaliFamily> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Config(format!("cylinder radius must be positive, got {r}")));
    }
    let mut order: Vec<[f64; 4]> = set.points().to_vec();
    order.sort_by(|a, b| {
        b[3].total_cmp(&a[3])
            .then(a[0].total_cmp(&b[0]))
            .then(a[1].total_cmp(&b[1]))
            .then(a[2].total_cmp(&b[2]))
    });
    let mut centers: Vec<[f64; 4]> = Vec::new();
    for p in &order {
        if centers.iter().all(|c| !cylinders_intersect(c, p, r)) {
            centers.push(*p);
        }
    }
    let mut pairwise_disjoint = true;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            if cylinders_intersect(&centers[i], &centers[j], r) {
                pairwise_disjoint = false;
            }
        }
    }
    let all_covered = set
        .points()
        .iter()
        .all(|p| centers.iter().any(|c| in_closed_dilate(p, c, r)));
    Ok(VitaliFamily { r, centers, pairwise_disjoint, all_covered })
}

/// Budget check for a claimed family of hypothesis-violating cylinders.
#[derive(Clone, Debug, Serialize)]
pub struct BudgetReport {
    /// Dissipation-plus-integrability integral over the whole sampled
    /// domain.
    pub k4: f64,
    pub family_size: usize,
    /// Mass each cylinder must exceed to witness a hypothesis failure.
    pub required_mass: f64,
    pub min_local: f64,
    pub local_sum: f64,
    /// Largest family size the global budget permits at this scale.
    pub m_bound: f64,
    /// Every cylinder carries at least the required mass and the family
    /// size respects the budget. Vacuously true for an empty family.
    pub family_consistent: bool,
    /// The disjoint local integrals sum to no more than the global one.
    pub subadditive: bool,
}

/// Evaluate the covering budget for a pairwise-disjoint cylinder family at
/// radius `r`: the sum of local integrals must respect the global budget,
/// and a family claiming one hypothesis failure per cylinder cannot exceed
/// `k4 / (epsilon r^(5/3 - gamma))` members.
pub fn covering_budget(
    quad: &FieldQuadrature<'_>,
    centers: &[Point4],
    r: f64,
    epsilon: f64,
    gamma: f64,
    mhd: bool,
) -> Result<BudgetReport> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(gamma > 0.0 && gamma < 10.0 / 63.0) {
        return Err(Error::Config(format!("gamma {gamma} outside (0, 10/63)")));
    }
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let a = [centers[i].0[0], centers[i].0[1], centers[i].0[2], centers[i].1];
            let b = [centers[j].0[0], centers[j].0[1], centers[j].0[2], centers[j].1];
            if cylinders_intersect(&a, &b, r) {
                return Err(Error::Config(format!(
                    "cylinders {i} and {j} of the claimed disjoint family intersect"
                )));
            }
        }
    }
    let grid = quad.grid();
    // global budget: plain cell sums in space, trapezoid in time
    let mut k4 = 0.0;
    let cell_vol = grid.cell_volume();
    for j in 0..grid.nt {
        let w = if j == 0 || j == grid.nt - 1 { 0.5 * grid.dt } else { grid.dt };
        let gu = quad.grad_u_sq(j);
        let mut slice = 0.0;
        for ix in 0..grid.nx {
            for iy in 0..grid.ny {
                for iz in 0..grid.nz {
                    let mut v = gu[[ix, iy, iz]]
                        + quad.field.speed_sq(j, ix, iy, iz).powf(5.0 / 3.0)
                        + quad.field.p[[j, ix, iy, iz]].abs().powf(5.0 / 3.0);
                    if mhd {
                        v += quad.field.b_sq(j, ix, iy, iz).powf(5.0 / 3.0);
                    }
                    slice += v;
                }
            }
        }
        if mhd {
            // the gradient part of the secondary field
            let mut sp = crate::spectral::Spectral3::new(grid);
            let gb = sp.grad_norm_sq(
                quad.field
                    .b
                    .as_ref()
                    .ok_or_else(|| Error::Config("secondary field requested but absent".into()))?
                    .index_axis(ndarray::Axis(0), j),
            );
            slice += gb.sum();
        }
        k4 += w * slice * cell_vol;
    }
    let mut locals = Vec::with_capacity(centers.len());
    for c in centers {
        locals.push(quad.eval_hypothesis_integral(c, r, mhd)?.value);
    }
    let required_mass = epsilon * r.powf(5.0 / 3.0 - gamma);
    let min_local = locals.iter().copied().fold(f64::INFINITY, f64::min);
    let local_sum: f64 = locals.iter().sum();
    let m_bound = k4 / required_mass;
    let family_consistent = centers.is_empty()
        || (min_local >= required_mass && centers.len() as f64 <= m_bound + 0.5);
    let subadditive = local_sum <= k4 * (1.0 + 1e-12) + 1e-300;
    Ok(BudgetReport {
        k4,
        family_size: centers.len(),
        required_mass,
        min_local,
        local_sum,
        m_bound,
        family_consistent,
        subadditive,
    })
}

/// Deterministic point sets with known parabolic box dimensions, for
/// calibration and tests.
pub mod fixtures {
    use super::PointSet4D;

    /// Uniform lattice: n^3 spatial points times n^2 time points in
    /// [0, 1)^4. Parabolic dimension 5.
    pub fn lattice_uniform(n: usize) -> PointSet4D {
        let mut pts = Vec::with_capacity(n * n * n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for m in 0..n * n {
                        pts.push([
                            i as f64 / n as f64,
                            j as f64 / n as f64,
                            k as f64 / n as f64,
                            m as f64 / (n * n) as f64,
                        ]);
                    }
                }
            }
        }
        PointSet4D::new(pts).expect("finite lattice")
    }

    /// n points along the time axis in [0, 1). Parabolic dimension 2.
    pub fn time_segment(n: usize) -> PointSet4D {
        let pts = (0..n).map(|j| [0.0, 0.0, 0.0, j as f64 / n as f64]).collect();
        PointSet4D::new(pts).expect("finite segment")
    }

    /// n points along one spatial axis in [0, 1). Parabolic dimension 1.
    pub fn space_segment(n: usize) -> PointSet4D {
        let pts = (0..n).map(|j| [j as f64 / n as f64, 0.0, 0.0, 0.0]).collect();
        PointSet4D::new(pts).expect("finite segment")
    }

    /// The reciprocals 1/k, k = 1..n, on a spatial axis. Box dimension 1/2.
    pub fn reciprocal_sequence(n: usize) -> PointSet4D {
        let pts = (1..=n).map(|k| [1.0 / k as f64, 0.0, 0.0, 0.0]).collect();
        PointSet4D::new(pts).expect("finite sequence")
    }

    /// Midpoints of the level-`level` middle-thirds construction, as a
    /// vector of offsets in [0, 1). Midpoints keep every point strictly
    /// inside its ancestral intervals, so box counts at scales 3^-j are
    /// exactly 2^j for j <= level.
    fn cantor_midpoints(level: u32) -> Vec<f64> {
        let scale = 3.0f64.powi(level as i32);
        (0..1u64 << level)
            .map(|code| {
                let mut m = 0u64;
                for bit in 0..level {
                    if code >> bit & 1 == 1 {
                        m += 2 * 3u64.pow(bit);
                    }
                }
                (m as f64 + 0.5) / scale
            })
            .collect()
    }

    /// Middle-thirds set on the time axis. Parabolic dimension
    /// 2 log 2 / log 3, twice the Euclidean value, because boxes are r^2
    /// thick in time.
    pub fn cantor_time(level: u32) -> PointSet4D {
        let pts = cantor_midpoints(level).into_iter().map(|t| [0.0, 0.0, 0.0, t]).collect();
        PointSet4D::new(pts).expect("finite set")
    }

    /// Middle-thirds set on a spatial axis. Parabolic dimension
    /// log 2 / log 3.
    pub fn cantor_space(level: u32) -> PointSet4D {
        let pts = cantor_midpoints(level).into_iter().map(|x| [x, 0.0, 0.0, 0.0]).collect();
        PointSet4D::new(pts).expect("finite set")
    }

    /// Product of a spatial and a temporal middle-thirds set. Parabolic
    /// dimension 3 log 2 / log 3.
    pub fn cantor_product(level: u32) -> PointSet4D {
        let xs = cantor_midpoints(level);
        let ts = cantor_midpoints(level);
        let mut pts = Vec::with_capacity(xs.len() * ts.len());
        for &x in &xs {
            for &t in &ts {
                pts.push([x, 0.0, 0.0, t]);
            }
        }
        PointSet4D::new(pts).expect("finite set")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::generate_constant;
    use crate::grid::Grid;

    #[test]
    fn lattice_counts_are_exact_powers() {
        let set = fixtures::lattice_uniform(9);
        for (r, expect) in [(0.5, 32), (0.25, 1024), (0.125, 32768)] {
            let c = box_count(&set, r, false).unwrap();
            assert_eq!(c.count, expect, "r = {r}");
        }
    }

    #[test]
    fn lattice_dimension_is_five() {
        let set = fixtures::lattice_uniform(9);
        let est = estimate_minkowski(&set, &[1.0, 0.5, 0.25, 0.125]).unwrap();
        assert!((est.dimension - 5.0).abs() < 1e-9, "dim {}", est.dimension);
        assert!(est.fit_r2 > 0.999999);
    }

    #[test]
    fn segment_dimensions() {
        let time = fixtures::time_segment(4000);
        let est = estimate_minkowski(&time, &[0.5, 0.25, 0.125, 0.0625]).unwrap();
        assert!((est.dimension - 2.0).abs() < 1e-9, "time dim {}", est.dimension);
        let space = fixtures::space_segment(4000);
        let est = estimate_minkowski(&space, &[0.5, 0.25, 0.125, 0.0625]).unwrap();
        assert!((est.dimension - 1.0).abs() < 1e-9, "space dim {}", est.dimension);
    }

    #[test]
    fn cantor_time_counts_double_per_ternary_level() {
        let set = fixtures::cantor_time(13);
        for j in [2u32, 4, 6] {
            let r = 3.0f64.powf(-(j as f64) / 2.0);
            let c = box_count(&set, r, false).unwrap();
            assert_eq!(c.count, 1usize << j, "j = {j}");
        }
        let radii: Vec<f64> = (2..=8).map(|j| 3.0f64.powf(-(j as f64) / 2.0)).collect();
        let est = estimate_minkowski(&set, &radii).unwrap();
        let expect = 2.0 * 2.0f64.ln() / 3.0f64.ln();
        assert!((est.dimension - expect).abs() < 1e-6, "dim {}", est.dimension);
    }

    #[test]
    fn cantor_space_and_product_dimensions() {
        let space = fixtures::cantor_space(11);
        let radii: Vec<f64> = (1..=5).map(|j| 3.0f64.powi(-j)).collect();
        let est = estimate_minkowski(&space, &radii).unwrap();
        let expect = 2.0f64.ln() / 3.0f64.ln();
        assert!((est.dimension - expect).abs() < 1e-6, "dim {}", est.dimension);

        let prod = fixtures::cantor_product(8);
        let radii: Vec<f64> = (1..=4).map(|j| 3.0f64.powi(-j)).collect();
        let est = estimate_minkowski(&prod, &radii).unwrap();
        let expect = 3.0 * 2.0f64.ln() / 3.0f64.ln();
        assert!((est.dimension - expect).abs() < 1e-6, "dim {}", est.dimension);
    }

    #[test]
    fn box_centers_contain_their_points() {
        let set = fixtures::lattice_uniform(4);
        let r = 0.25;
        let cover = box_count(&set, r, true).unwrap();
        let centers = cover.centers.unwrap();
        assert_eq!(centers.len(), cover.count);
        for p in set.points() {
            let inside = centers.iter().any(|c| {
                let dx = p[0] - c[0];
                let dy = p[1] - c[1];
                let dz = p[2] - c[2];
                (dx * dx + dy * dy + dz * dz).sqrt() <= r
                    && p[3] <= c[3]
                    && p[3] >= c[3] - r * r
            });
            assert!(inside, "point {p:?} not inside any cylinder");
        }
    }

    #[test]
    fn hausdorff_bound_shrinks_above_the_dimension() {
        let ladder = [1.0, 0.5, 0.25, 0.125, 0.0625];

        let set = fixtures::cantor_space(11);
        let dim = 2.0f64.ln() / 3.0f64.ln();
        let est = hausdorff_upper(&set, dim + 0.3, &ladder).unwrap();
        assert!(est.monotone_nonincreasing);
        assert!(
            est.bounds.last().unwrap() < &(0.5 * est.bounds[0]),
            "bounds {:?}",
            est.bounds
        );

        // reciprocals have zero cover dimension: weight drains away at any
        // positive exponent
        let recip = hausdorff_upper(&fixtures::reciprocal_sequence(10_000), 0.6, &ladder).unwrap();
        assert!(recip.monotone_nonincreasing, "bounds {:?}", recip.bounds);
        assert!(recip.bounds.last().unwrap() < &(0.7 * recip.bounds[0]));

        // a unit spatial segment at its own dimension stays pinched away
        // from zero and infinity
        let seg = hausdorff_upper(&fixtures::space_segment(4000), 1.0, &ladder).unwrap();
        for &b in &seg.bounds {
            assert!((0.2..=5.0).contains(&b), "bounds {:?}", seg.bounds);
        }

        let point = PointSet4D::new(vec![[0.3, 0.1, 0.0, 0.7]]).unwrap();
        let est = hausdorff_upper(&point, 0.5, &ladder).unwrap();
        assert!(est.monotone_nonincreasing);
        assert!(est.bounds.last().unwrap() < &1e-1);

        let empty = hausdorff_upper(&PointSet4D::new(vec![]).unwrap(), 1.0, &ladder).unwrap();
        assert!(empty.empty);
        assert!(empty.bounds.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn vitali_keeps_later_overlapping_center() {
        let r = 0.2;
        // two events at the same location, half a window apart in time
        let set = PointSet4D::new(vec![
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.5 * r * r],
        ])
        .unwrap();
        let fam = vitali_disjoint(&set, r).unwrap();
        assert_eq!(fam.centers.len(), 1);
        assert_eq!(fam.centers[0][3], 0.5 * r * r, "the later event must win");
        assert!(fam.pairwise_disjoint);
        assert!(fam.all_covered, "the earlier event sits inside the closed dilate");
    }

    #[test]
    fn vitali_separated_points_all_kept() {
        let r = 0.1;
        let set = PointSet4D::new(vec![
            [0.0, 0.0, 0.0, 0.5],
            [1.0, 0.0, 0.0, 0.5],
            [0.0, 1.0, 0.0, 0.5],
            [0.0, 0.0, 0.0, 0.9],
        ])
        .unwrap();
        let fam = vitali_disjoint(&set, r).unwrap();
        assert_eq!(fam.centers.len(), 4);
        assert!(fam.pairwise_disjoint && fam.all_covered);
    }

    #[test]
    fn budget_constant_field_and_zero_field() {
        // |u| = 1 everywhere: k4 = V * T with V = 8, T = 0.5
        let g = Grid::new(24, 24, 24, 2.0, 2.0, 2.0, 6, 0.0, 0.1).unwrap();
        let f = generate_constant(&g, [1.0, 0.0, 0.0], 0.0).unwrap();
        let quad = FieldQuadrature::new(&f);
        let center = ([1.0, 1.0, 1.0], 0.3);
        let rep = covering_budget(&quad, &[center], 0.4, 1e-3, 0.05, false).unwrap();
        assert!((rep.k4 - 4.0).abs() < 1e-9, "k4 = {}", rep.k4);
        assert!(rep.subadditive);
        assert!(rep.family_consistent);
        assert!(rep.m_bound > 1.0);

        let fz = generate_constant(&g, [0.0, 0.0, 0.0], 0.0).unwrap();
        let qz = FieldQuadrature::new(&fz);
        let rep = covering_budget(&qz, &[center], 0.4, 1e-3, 0.05, false).unwrap();
        assert_eq!(rep.k4, 0.0);
        assert!(
            !rep.family_consistent,
            "a zero field cannot host a hypothesis-violating cylinder"
        );
        assert!(rep.subadditive);
    }

    #[test]
    fn budget_rejects_overlapping_family() {
        let g = Grid::new(16, 16, 16, 2.0, 2.0, 2.0, 4, 0.0, 0.1).unwrap();
        let f = generate_constant(&g, [1.0, 0.0, 0.0], 0.0).unwrap();
        let quad = FieldQuadrature::new(&f);
        let a = ([1.0, 1.0, 1.0], 0.3);
        let b = ([1.1, 1.0, 1.0], 0.3);
        assert!(covering_budget(&quad, &[a, b], 0.4, 1e-3, 0.05, false).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let set = fixtures::cantor_space(4);
        let mut buf = Vec::new();
        set.to_csv(&mut buf).unwrap();
        let back = PointSet4D::from_csv(buf.as_slice()).unwrap();
        assert_eq!(set.points(), back.points());
    }

    #[test]
    fn duplicate_points_are_merged() {
        let set = PointSet4D::new(vec![[1.0, 2.0, 3.0, 4.0]; 5]).unwrap();
        assert_eq!(set.len(), 1);
    }
}
