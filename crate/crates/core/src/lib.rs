//! Solvers for the 1D1V Vlasov-Poisson-Fokker-Planck system in the high-field
//! scaling: a conservative separable Fokker-Planck stencil, projector-splitting
//! dynamical low-rank IMEX integrators of order one and two, a full-tensor
//! reference solver, and asymptotic-preserving diagnostics.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod advection;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod fokker_planck;
pub mod fulltensor;
pub mod grid;
pub mod linalg;
pub mod lowrank;
pub mod output;
pub mod scenarios;
pub mod steppers;

pub use config::{ScenarioConfig, ScenarioKind, SolverKind};
pub use error::{Result, VpfpError};
pub use grid::{make_grid, PhaseGrid};
pub use lowrank::LowRankState;
pub use steppers::{FieldMode, StepConfig, StepReport, Stepper};
