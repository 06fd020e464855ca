//! Swarm occupancy mapping.
//!
//! A robot swarm performs a correlated random walk through a bounded planar
//! workspace while each robot runs an extended Kalman filter fed by external
//! signal-strength beacons and odometry.  The filters' position estimates
//! (mean + covariance) are fused into a per-cell free-space density grid, and
//! a persistence barcode of the density field selects the classification
//! threshold that turns the grid into a binary map.
//!
//! Modules follow the data flow: [`domain`] (workspace geometry and ground
//! truth), [`sim`] (swarm motion and measurements), [`ekf`] (per-robot
//! filtering), [`grid`] (density accumulation), [`tda`] (barcodes and
//! thresholding), [`pipeline`] (end-to-end trials, batches, sweeps) and
//! [`io`] (file formats).

pub mod domain;
pub mod ekf;
pub mod error;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod sim;
pub mod tda;

pub use error::Error;
