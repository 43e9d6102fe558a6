//! Edge-to-cloud vital-sign streaming pipeline.
//!
//! Synthetic ECG and accelerometer streams are reduced on the edge to RR
//! intervals and posture observations, uploaded over a REST-style ingest
//! endpoint, moved through a partitioned message bus, cleansed and stored by
//! the dispatcher, and analysed in micro-batches into fatigue and relaxation
//! scores. The [`harness`] drives the whole pipeline in virtual time.

pub mod analytics;
pub mod bus;
pub mod canonical;
pub mod clock;
pub mod dispatcher;
pub mod edge;
pub mod ingest;
pub mod model;
pub mod harness;
pub mod signal_gen;
pub mod store;
