//! Ejection-collision orbits of the planar circular restricted three-body problem.
//!
//! The crate provides coordinate charts and their vector fields, an adaptive integrator with
//! event location, closed-form `mu = 0` solutions, Melnikov functions with rigorous error
//! budgets, invariant-manifold tracing, the local transition map near collision, and searches
//! for ejection-collision orbits and triple intersections.

#![allow(clippy::needless_range_loop, clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod charts;
pub mod closedform;
pub mod error;
pub mod fields;
pub mod flow;
pub mod localmap;
pub mod manifolds;
pub mod melnikov;
pub mod quadrature;
pub mod search;

pub use error::{Error, Result};
