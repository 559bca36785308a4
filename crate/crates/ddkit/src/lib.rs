//! Dynamical decoupling toolkit: sequence catalog, schedule rendering, open-system
//! simulation, figures of merit and the decay-curve analysis pipeline.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dynamics;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod scheduler;
pub mod seqlib;
