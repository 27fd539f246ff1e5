//! Quasi-minimal-time boundary control of the linearized channel flow around the
//! laminar Poiseuille profile.
//!
//! The flow is split into streamwise Fourier modes. Each mode is steered to rest
//! by a penalized optimal-control solve with adjoint gradients, and the per-mode
//! controls are assembled into one wall control.

pub mod adjoint;
pub mod assembly;
pub mod banded;
mod ballqp;
pub mod channel;
pub mod cli;
pub mod control;
pub mod error;
pub mod grid;
pub mod io;
pub mod optimizer;
pub mod scalar;
pub mod state;

pub use adjoint::{AdjointMode, AdjointTrajectory};
pub use channel::{ChannelConfig, ConstantForm, ModeCoefficients};
pub use control::ControlTrajectory;
pub use error::{NsmtError, Result};
pub use grid::{Grid, GridFunction};
pub use optimizer::{OptimalModePair, OptimalityReport, PenaltyParams, Smallness};
pub use scalar::Scalar;
pub use state::ModeTrajectory;

pub type ChannelConfigF64 = ChannelConfig<f64>;
pub type ChannelConfigF32 = ChannelConfig<f32>;
pub type GridF64 = Grid<f64>;
pub type GridF32 = Grid<f32>;
pub type GridFunctionF64 = GridFunction<f64>;
pub type GridFunctionF32 = GridFunction<f32>;
pub type ControlTrajectoryF64 = ControlTrajectory<f64>;
pub type ControlTrajectoryF32 = ControlTrajectory<f32>;
pub type ModeTrajectoryF64 = ModeTrajectory<f64>;
pub type ModeTrajectoryF32 = ModeTrajectory<f32>;
pub type OptimalModePairF64 = OptimalModePair<f64>;
