//! 3D gaze estimation for head-mounted eye trackers.
//!
//! Three eye-to-scene mappings (2D-to-2D, 2D-to-3D, 3D-to-3D), a two-sphere
//! eye simulator, and the harness that measures their parallax error across
//! calibration and test depths.

pub mod cli;
pub mod config;
pub mod evaluation;
pub mod eye;
pub mod geometry;
pub mod io;
pub mod mappers;
pub mod observation;
pub mod optimizer;
pub mod selftest;
