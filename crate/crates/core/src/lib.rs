//! Dense radar-inertial odometry.
//!
//! Consecutive scanning-radar images are registered with a two-stage
//! phase-correlation pipeline (rotation from polar-warped spectral
//! magnitudes, then translation after rotation correction). The resulting
//! velocity measurements are fused with raw IMU samples in an asynchronous
//! five-state Kalman filter, and the filtered body velocities are
//! dead-reckoned into an SE(2) trajectory.
//!
//! Module map:
//! - [`imaging`]: image container, polar scan rendering, downsampling,
//!   high-pass filtering, spatial rotation.
//! - [`registration`]: FFT plumbing, phase correlation, the two-stage
//!   registration and its conversion to velocity measurements.
//! - [`fusion`]: the five-state Kalman filter and its event types.
//! - [`trajectory`]: SE(2) poses, dead reckoning, interpolation, export.
//! - [`ingestion`]: dataset loaders, event merging, synthetic scene
//!   generation with exact ground truth.
//! - [`evaluation`]: KITTI-style relative odometry errors.
//! - [`pipeline`]: batch runner, ablation matrix, stage timing, plotting.

pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod imaging;
pub mod ingestion;
pub mod pipeline;
pub mod registration;
mod spectral;
pub mod trajectory;

pub use error::{Error, Result};
