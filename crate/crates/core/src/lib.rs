//! Streaming surface-EMG motor decoding.
//!
//! The crate covers the whole decode chain, from raw 1 kHz electrode frames
//! to clamped multi-DOF position estimates at 30 Hz:
//!
//! - [`filter`]: Butterworth and notch biquad design, per-channel cascades.
//! - [`features`]: the 528-entry MAV feature bank, tick scheduling, boxcar
//!   smoothing and rest-baseline subtraction.
//! - [`select`]: greedy Gram-Schmidt forward selection of decoder inputs.
//! - [`kalman`]: least-squares Kalman training and the streaming decoder.
//! - [`protocol`] and [`synth`]: preprogrammed kinematic protocols and the
//!   synthetic EMG generator used as an end-to-end oracle.
//! - [`analysis`]: RMSE, paired t-tests, Holm correction, Tukey fences,
//!   Box-and-Block scoring and the wrist band torque model.
//! - [`pipeline`] and [`session`]: the zero-allocation streaming decoder and
//!   the batch session driver composing everything above.
//!
//! The crate is `no_std` and needs only `alloc`.

#![cfg_attr(not(test), no_std)]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod features;
pub mod filter;
pub mod kalman;
pub mod linalg;
pub mod pipeline;
pub mod protocol;
pub mod select;
pub mod session;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::Trajectory;

/// Electrode channels in the sleeve.
pub const CHANNELS: usize = 32;
/// Acquisition rate, Hz.
pub const SAMPLE_RATE_HZ: u32 = 1000;
/// Feature and kinematics rate, Hz.
pub const FEATURE_RATE_HZ: u32 = 30;
/// Decoder inputs picked by channel selection.
pub const DEFAULT_SELECTION_K: usize = 48;
