//! Conversational survey toolkit: flow graphs, survey scripts, a chat
//! engine, response storage and the statistics used to compare surveys.

pub mod dsl;
pub mod engine;
pub mod flow;
pub mod stats;
pub mod store;

#[cfg(feature = "testkit")]
pub mod testkit;
