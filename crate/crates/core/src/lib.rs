//! Governed spreadsheet computation: portable workbook models, a versioned
//! model store with a test-gated lifecycle and hash-chained audit log, a
//! supervised job engine, and Monte Carlo credit-risk simulation driving
//! workbooks with correlated macro-economic scenarios.

pub mod canonical;
pub mod engine;
pub mod montecarlo;
pub mod rng;
pub mod store;
pub mod workbook;
