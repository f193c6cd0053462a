//! Consensus-driven expert selection over a pool of small vision-language
//! models, followed by a single verdict call that reads the selected experts'
//! reasoning.
//!
//! The crate is organised by stage: [`client`] talks to OpenAI-compatible
//! endpoints, [`consensus`] turns answer likelihoods into a selection,
//! [`pipeline`] runs one sample end to end, [`evaluation`] scores a run and
//! [`harness`] drives batches, the mock server and the on-disk run store.

pub mod answer;
pub mod client;
pub mod consensus;
pub mod digest;
pub mod evaluation;
pub mod harness;
pub mod pipeline;
pub mod types;
