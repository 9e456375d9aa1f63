//! Darknet telescope traffic analytics and probing-rate forecasting.
//!
//! The crate follows the life of a packet log: [`ingest`] parses and filters
//! SYN probes, [`analytics`] ranks ports, probers and countries, [`graphs`]
//! extracts per-prober port-transition graphs, [`timeseries`] buckets probes
//! into per-port rate series and [`forecast`] predicts those rates one step
//! ahead with rolling-window AR/VAR models.

pub mod analytics;
pub mod forecast;
pub mod graphs;
pub mod ingest;
pub mod pipeline;
pub mod synth;
pub mod timeseries;
