//! Batch analysis of GenAI-chatbot mobile traffic captures.
//!
//! The pipeline reads packet captures, groups packets into bidirectional
//! flows, and derives per-trace rate statistics, per-flow PL/IAT/DIR
//! series, joint payload-length/direction Markov chains, TLS and QUIC
//! handshake metadata, and a 1-D CNN payload classifier with SNI occlusion.

pub mod capture;
pub mod classifier;
pub mod dissect;
pub mod fixtures;
pub mod flow;
pub mod markov;
pub mod metrics;
pub mod report;
pub mod series;
