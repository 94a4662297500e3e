//! JSON run configurations, one per subcommand. Unknown keys are rejected
//! everywhere so a typo fails the run instead of silently changing it.

use std::path::PathBuf;

use serde::Deserialize;

use parreg::error::{Error, Result};
use parreg::functionals::{Point4, Query, TimeWindowMode};
use parreg::grid::Grid;
use parreg::schedule::CriteriaConstants;
use parreg::solver::SolverConfig;

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub x: [f64; 3],
    pub t: f64,
}

impl EventSpec {
    pub fn point(&self) -> Point4 {
        (self.x, self.t)
    }
}

/// Analytic field families the `generate` subcommand can manufacture.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldKind {
    Constant { u: [f64; 3], p: f64 },
    Beltrami { a: f64, b: f64, c: f64 },
    NearSingular { center: EventSpec, exponent: f64 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub grid: Grid,
    pub kind: FieldKind,
    /// Container directory name under the output directory.
    #[serde(default = "default_field_name")]
    pub name: String,
}

fn default_field_name() -> String {
    "field".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub solver: SolverConfig,
    #[serde(default = "default_trajectory_name")]
    pub name: String,
}

fn default_trajectory_name() -> String {
    "trajectory".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalsConfig {
    /// Field container directory.
    pub field: PathBuf,
    /// Inline queries; mutually exclusive with `queries_path`.
    #[serde(default)]
    pub queries: Vec<Query>,
    /// Path to a JSON list of queries.
    #[serde(default)]
    pub queries_path: Option<PathBuf>,
    #[serde(default = "default_mode")]
    pub mode: TimeWindowMode,
    #[serde(default)]
    pub mhd: bool,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_mode() -> TimeWindowMode {
    TimeWindowMode::Symmetric
}

fn default_parallelism() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub field: PathBuf,
    pub z: EventSpec,
    pub rho: f64,
    pub gamma: f64,
    #[serde(default)]
    pub constants: CriteriaConstants,
    /// Raises (or lowers) the base-radius ceiling; raising it marks the
    /// schedule non-strict.
    #[serde(default)]
    pub rho0: Option<f64>,
    #[serde(default)]
    pub mhd: bool,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::Config("axis count must be positive".into()));
        }
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(Error::Config(format!(
                "axis range [{}, {}] must be finite",
                self.start, self.stop
            )));
        }
        if self.count == 1 {
            return Ok(vec![self.start]);
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        Ok((0..self.count).map(|i| self.start + step * i as f64).collect())
    }
}

/// Rectangular query lattice, nested x outermost to t innermost.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub x: AxisSpec,
    pub y: AxisSpec,
    pub z: AxisSpec,
    pub t: AxisSpec,
}

const MAX_LATTICE_POINTS: usize = 2_000_000;

impl LatticeSpec {
    pub fn points(&self) -> Result<Vec<Point4>> {
        let total = self
            .x
            .count
            .checked_mul(self.y.count)
            .and_then(|n| n.checked_mul(self.z.count))
            .and_then(|n| n.checked_mul(self.t.count))
            .unwrap_or(usize::MAX);
        if total > MAX_LATTICE_POINTS {
            return Err(Error::Config(format!(
                "lattice holds {total} events, more than the {MAX_LATTICE_POINTS} cap"
            )));
        }
        let (xs, ys, zs, ts) = (self.x.values()?, self.y.values()?, self.z.values()?, self.t.values()?);
        let mut pts = Vec::with_capacity(total);
        for &x in &xs {
            for &y in &ys {
                for &z in &zs {
                    for &t in &ts {
                        pts.push(([x, y, z], t));
                    }
                }
            }
        }
        Ok(pts)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub field: PathBuf,
    #[serde(default)]
    pub points: Vec<EventSpec>,
    #[serde(default)]
    pub lattice: Option<LatticeSpec>,
    pub radii: Vec<f64>,
    #[serde(default)]
    pub constants: CriteriaConstants,
    #[serde(default)]
    pub mhd: bool,
}

/// Where a point set comes from: a CSV file or a built-in generator.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointSource {
    Csv { path: PathBuf },
    LatticeUniform { n: usize },
    TimeSegment { n: usize },
    SpaceSegment { n: usize },
    ReciprocalSequence { n: usize },
    CantorTime { level: u32 },
    CantorSpace { level: u32 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HausdorffSpec {
    pub alpha: f64,
    pub deltas: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitaliSpec {
    pub r: f64,
}

/// Covering-budget check; needs field data to integrate over.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub field: PathBuf,
    pub r: f64,
    pub epsilon: f64,
    pub gamma: f64,
    #[serde(default)]
    pub mhd: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverConfig {
    pub points: PointSource,
    #[serde(default)]
    pub box_scales: Vec<f64>,
    #[serde(default)]
    pub with_centers: bool,
    #[serde(default)]
    pub hausdorff: Option<HausdorffSpec>,
    #[serde(default)]
    pub vitali: Option<VitaliSpec>,
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionConfig {
    pub points: PointSource,
    pub radii: Vec<f64>,
}

/// Scale pairs `(r, theta)` and the constant to test them against.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaProbe {
    pub pairs: Vec<(f64, f64)>,
    pub k: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyLemmasConfig {
    /// Field container; required by the two inequality probes.
    #[serde(default)]
    pub field: Option<PathBuf>,
    #[serde(default)]
    pub z: Option<EventSpec>,
    #[serde(default)]
    pub interpolation: Option<LemmaProbe>,
    #[serde(default)]
    pub pressure: Option<LemmaProbe>,
    /// Exact rational exponent checks, each written as `p/q`.
    #[serde(default)]
    pub identities_gamma: Vec<String>,
    /// Dump the floating-point iteration schedule for this exponent.
    #[serde(default)]
    pub schedule_gamma: Option<f64>,
    #[serde(default)]
    pub constants: CriteriaConstants,
}
