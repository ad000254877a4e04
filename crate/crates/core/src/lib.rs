//! Numerical laboratory for centralizers of fixed-point-free flows and
//! locally free R^d-actions on flat tori and mapping tori.
//!
//! The pipeline calibrates local constants ([`constants`]), builds local
//! cross-sections by a contraction iteration ([`section`]), recovers the
//! reparameterization cocycle of a commuting flow ([`centralizer`]) or action
//! ([`action`]) and audits the result. [`scenario`] wires this into the
//! `centralab` command-line tool.

// `!(x <= bound)` is how NaN gets rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod centralizer;
pub mod constants;
pub mod engine;
pub mod error;
mod par;
pub mod sampling;
pub mod scenario;
pub mod section;

pub use engine::{ChartPoint, SystemSpec, TangentVector};
pub use error::{LabError, Result};
