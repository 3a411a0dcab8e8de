//! Kernels for evaluating the clover-improved Wilson-Dirac operator on blocks
//! of right-hand sides, odd-even reduction, lockstep batched GMRES, dense
//! reference checks, and the roofline and instruction-cost models.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
extern crate alloc;

pub mod costmodel;
pub mod dirac;
pub mod error;
pub mod exec;
pub mod field;
pub mod gamma;
pub mod gauge;
pub mod geometry;
pub mod gmres;
pub mod oe;
pub mod operator;
pub mod oracle;
pub mod perf;

pub use num_complex::Complex64 as C64;

pub use dirac::{DiracOperator, DiracParams, HaloExchange, HoppingWorkspace, WilsonDirac};
pub use error::{Error, Result};
pub use exec::{Executor, Serial};
pub use field::{BlockField, DotStrategy, Layout, LayoutPolicy};
pub use gauge::{CloverField, CloverMode, GaugeField, GaugeMode};
pub use geometry::{Direction, LatticeGeometry, Parity, RankGrid};
pub use gmres::{gmres_solve, GmresConfig, GmresOutcome};
pub use oe::{OddEven, OeSplit};
pub use operator::LinearOperator;
