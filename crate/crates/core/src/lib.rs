//! Neural fields fitted jointly to LiDAR scans and camera images of small
//! synthetic scenes, with the tooling to train, evaluate and inspect them.
//!
//! Data flows from [`scene`] (ground truth and simulated sensors) through
//! [`train`] into a [`field::Model`], which [`eval`] scores with [`metrics`]
//! and [`diagnostics`] probes.

pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod field;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod render;
pub mod scene;
pub mod train;
