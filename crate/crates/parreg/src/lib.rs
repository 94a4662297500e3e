//! Local regularity analysis for sampled incompressible flows.
//!
//! The crate measures scale-invariant quantities of a velocity/pressure
//! history over parabolic cylinders `Q(z, r) = B(x, r) x (t - r^2, t)`,
//! drives an iteration that certifies points as regular when those
//! quantities are small, and estimates the parabolic box-counting dimension
//! of candidate singular sets. It also ships a small pseudo-spectral solver
//! for manufacturing trajectories to feed the analysis.
//!
//! ```
//! use parreg::grid::Grid;
//! use parreg::field::generate_constant;
//! use parreg::functionals::{FieldQuadrature, TimeWindowMode};
//!
//! let grid = Grid::new(16, 16, 16, 2.0, 2.0, 2.0, 3, 0.0, 0.1).unwrap();
//! let field = generate_constant(&grid, [1.0, 0.0, 0.0], 0.0).unwrap();
//! let quad = FieldQuadrature::new(&field);
//! let a = quad
//!     .eval_a(&([1.0, 1.0, 1.0], 0.2), 0.25, TimeWindowMode::Symmetric)
//!     .unwrap();
//! // for |u| = 1 the scaled sup equals (4/3) pi r^2
//! let expect = 4.0 / 3.0 * std::f64::consts::PI * 0.25f64.powi(2);
//! assert!((a.value - expect).abs() < 0.02 * expect);
//! ```

pub mod certifier;
pub mod container;
pub mod cover;
pub mod error;
pub mod field;
pub mod functionals;
pub mod geom;
pub mod grid;
pub mod lemmas;
pub mod schedule;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
