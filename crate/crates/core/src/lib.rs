//! Contact-aware perception and control for a fully-actuated aerial
//! manipulator pressing on a wall.
//!
//! * [`geom`]: rotations, rigid transforms, frames.
//! * [`sim`]: rigid-body simulation, contact, allocation and sensors.
//! * [`estimator`]: sliding-window visual-inertial estimator with contact factors.
//! * [`ibvs`]: visual servoing on the circular target.
//! * [`control`]: hybrid force-motion control and wrench blending.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod estimator;
pub mod geom;
pub mod ibvs;
pub mod sim;
