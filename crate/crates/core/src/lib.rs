#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Fractional-step Lax-Friedrichs solver for the Gauss-Codazzi system of a
//! negatively curved surface in Chaplygin form, with bounds bookkeeping,
//! diagnostics and surface reconstruction.

pub mod config;
pub mod diagnostics;
pub mod immersion;
pub mod initial;
pub mod metric;
pub mod pipeline;
pub mod riemann;
pub mod scheme;
pub mod state;
