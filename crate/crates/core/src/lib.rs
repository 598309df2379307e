//! Perturbed RGB-D sequence synthesis and correspondence-guided Gaussian
//! splat tracking.
//!
//! Poses are world-to-camera throughout: `X_camera = R X_world + t`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod io;
pub mod perturb;
pub mod pipeline;
pub mod poseopt;
pub mod rng;
pub mod scene;
pub mod splat;
pub mod tracking;
pub mod trajectory;

pub use error::{Error, Result};
pub use geometry::Pose;
pub use image::{Frame, FrameSequence, Image, Intrinsics, VOID};
pub use rng::RngStream;
pub use trajectory::Trajectory;
