//! Energy storage arbitrage across day-ahead and real-time markets.
//!
//! The pipeline forecasts hourly-average real-time prices with a patch
//! transformer, clears day-ahead positions priced at those forecasts,
//! dispatches the battery in real time with a value-table policy and settles
//! everything under two-settlement rules.
//!
//! Modules, bottom up:
//! - [`market_data`]: price/load series, ingestion, windows, synthetic data.
//! - [`numerics`]: dense tensors, the fixed forecaster kernels with analytic
//!   backward passes, gradient checking and Adam.
//! - [`forecaster`]: the patch transformer, DLinear and naive baselines,
//!   training and accuracy metrics.
//! - [`storage`]: battery ratings and state-of-charge bookkeeping.
//! - [`bidding`]: grid DP oracle, value-table policy, day-ahead clearing and
//!   virtual bids.
//! - [`settlement`]: per-day money flows, participation modes and risk stats.
//! - [`pipeline`]: train, forecast, value table and backtest glue.
//! - [`scenario`]: seeded synthetic markets.

pub mod bidding;
pub mod forecaster;
pub mod market_data;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod scenario;
pub mod settlement;
pub mod storage;
