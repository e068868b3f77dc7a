//! Evaluation toolkit for text-to-video retrieval benchmarks with
//! incomplete relevance judgments: metrics that treat unjudged pairs as
//! unknown, pooled annotation, label resolution, agreement, and
//! diagnostics for pooling bias.

pub mod agreement;
pub mod analysis;
pub mod corpus;
pub mod metrics;
pub mod pooling;
pub mod stats;
pub mod textsim;
