//! Lifting 2D human keypoints to root-relative 3D poses, with bone-length
//! and camera-intrinsics priors, a bone-direction loss, and the geometric
//! analysis of depth ambiguity along a kinematic chain.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod skeleton;
pub mod train;

pub use error::{Error, Result};
