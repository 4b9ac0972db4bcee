//! Averaged fixed-point iteration over Bregman geometries.
//!
//! The crate runs the recurrence
//!
//! ```text
//! s_{t+1} = (1 - α_t) s_t + α_t T(s_t, y_t) + η_t,    α_t = 2/(t+2)
//! ```
//!
//! for mirror-descent, affine-contraction and Bellman operators, records the
//! error ledger `e_t = D(s_t, s*)`, `a_t = e_t (t+1)²`, and audits each
//! inequality of the accelerated-rate argument along the recorded trajectory.
//!
//! ```
//! use bregman_accel::{Geometry, Operator, RunSpec, Vector};
//!
//! let g = Geometry::squared_euclidean(2).unwrap();
//! let op = Operator::affine_colinear(0.5, Vector::new(vec![2.0, -1.0]).unwrap()).unwrap();
//! let trace = RunSpec::new(g, op, Vector::zeros(2))
//!     .with_iterations(100)
//!     .prepare()
//!     .unwrap()
//!     .run()
//!     .unwrap();
//! // e_t = e_0 / (t+1)^2 for this instance, so a_t stays at e_0 = 2.5
//! assert!((trace.a_max() - 2.5).abs() < 1e-12);
//! ```

pub mod analysis;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod mdp;
pub mod operators;
pub mod perturbation;
pub mod vector;

pub use engine::{EpsilonHit, Prepared, RunSpec, Schedule, Trace, TraceRow};
pub use error::{Error, Result};
pub use geometry::{Geometry, GeometryKind};
pub use mdp::Mdp;
pub use operators::{Operator, OperatorKind};
pub use perturbation::{Injection, PerturbationMode, PerturbationModel};
pub use vector::{SpdMatrix, Vector};
