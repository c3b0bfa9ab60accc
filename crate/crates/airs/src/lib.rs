//! Autonomic intrusion-response engine.
//!
//! Detection runs signature rules over partitioned packet captures with an
//! in-process map-reduce scheme, planning selects the response action with
//! the highest expected utility from a persistent knowledge base, and a
//! deterministic simulated environment executes responses and feeds their
//! outcomes back into the knowledge base, closing the
//! monitor/analyze/plan/execute/knowledge loop.

pub mod analysis;
pub mod capture;
pub mod defaults;
pub mod kb;
pub mod planner;
pub mod simenv;
