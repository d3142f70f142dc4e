//! Desk-scale curriculum reinforcement-learning engine.
//!
//! The crate wires a five-level knowledge hierarchy, a variant/difficulty
//! corpus model, verifier rewards with principle-group aggregation, GRPO and
//! SFT training on a toy policy, a dynamic curriculum scheduler over
//! difficulty lattices, and a two-dimensional evaluation harness. Everything
//! is seeded and deterministic end to end.

pub mod cluster;
pub mod corpus;
pub mod eval;
pub mod fixtures;
pub mod grpo;
pub mod knowledge;
pub mod pipeline;
pub mod policy;
pub mod report;
pub mod reward;
pub mod rng;
pub mod scheduler;
pub mod trainer;
