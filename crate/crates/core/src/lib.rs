//! Stage-structured navigation runtime.
//!
//! An episode is driven by [`controller::run_episode`]: the instruction is
//! decomposed into ordered subgoals, each subgoal is pursued through bounded
//! execution rollouts over forward-centred views, and a separate transition
//! check over a panorama decides whether to advance. Progress is grounded on
//! image-level memory (a short trajectory buffer plus a visual baseline)
//! instead of textual history.

pub mod sim;

pub mod evidence;
pub mod memory;
pub mod backend;
pub mod trace;
pub mod controller;
pub mod audit;
pub mod metrics;
pub mod suite;
