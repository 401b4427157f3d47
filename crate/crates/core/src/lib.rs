//! Parameterized tool design: tool specs, a CSG-style geometry kernel, grasp
//! planning with a quasi-static simulator, task metrics and joint CMA-ES
//! optimization of tool shape and trajectory, driven by a proposer/critic
//! agent loop.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod agents;
pub mod assembly;
pub mod geometry;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod params;
pub mod provider;
pub mod render;
pub mod scene;
pub mod seed;
pub mod toolspec;
