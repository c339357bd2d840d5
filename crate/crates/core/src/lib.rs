//! Identification of state-dependent switching systems from `(z, ż)` samples.
//!
//! The pipeline alternates two convex problems: a per-sample mode assignment
//! (exact enumeration, a simplex LP, or an order-one Shor SDP) and an ℓ1
//! dynamics fit over a monomial feature map. Switching surfaces are then
//! recovered from the hardened labels with a soft-margin polynomial
//! classification LP.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assign;
pub mod basis;
pub mod bilevel;
pub mod convex;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod fit;
pub mod model;
pub mod simulate;
pub mod surface;

pub use assign::Relaxation;
pub use basis::{basis_size, MonomialBasis};
pub use bilevel::{identify, BilevelConfig, Identification, InitStrategy, IterationRecord, LambdaMode, StopReason};
pub use data::{Dataset, ModeAssignment, Provenance, Sample};
pub use error::{Error, Result};
pub use model::{eval_mode, region_mode, residual_l1, ModeBook, ModeDynamics, SurfaceSet, SwitchingSystemModel};
pub use simulate::{SamplingScheme, SamplingSpec, Trajectory};
pub use surface::{SurfaceFitConfig, SurfaceRecovery};
