//! Topology and shape synthesis of single-actuator spherical linkages for hip
//! exoskeletons.
//!
//! A spherical surface patch is divided into rigid blocks joined by zero-length
//! springs. Spring stiffnesses and node positions are optimized with the Method
//! of Moving Asymptotes so that the network, driven through a prescribed set of
//! end-effector poses, behaves like a zero-energy mechanism whose input block
//! moves as required by a target output-moment profile. The converged design is
//! then binarized into links and revolute joints and checked with screw theory.

pub mod cases;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod mechanism;
pub mod mma;
pub mod response;
pub mod rotation;
pub mod screw;
pub mod sensitivity;
pub mod synthesis;

pub use error::{Error, Result};
