//! Influence-diagram workbench for two-arm parallel randomized trials.
//!
//! A session starts from the four-level model of a two-arm trial and grows
//! it one construction step at a time, driven by directives against the
//! patient-flow diagram. Inference finds the posterior mode over the reduced
//! model and compares the arms by expected utility.

pub mod diagram;
pub mod flow;
pub mod inference;
pub mod naming;
pub mod session;
pub mod states;
pub mod synth;
