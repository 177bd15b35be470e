//! Apprenticeship bootstrapping for UAV/UGV coordination.
//!
//! The crate is organized around the data flow of the method: a deterministic
//! [`sim`]ulator produces observations, scripted or human operators produce
//! sub-task [`dataset`]s that are fused into a composite set, the [`learner`]
//! fits a small feed-forward policy, and the [`evaluator`] runs that policy on
//! the composite manoeuvre behind the [`safety`] net.

pub mod sim;
pub mod safety;
pub mod dataset;
pub mod learner;
pub mod evaluator;
