//! Script-driven attention guidance for 360° equirectangular video.
//!
//! A time-coded script names objects to look at. For each cue the pipeline
//! asks a detection/segmentation backend where the object is on sampled
//! keyframes, tracks it between keyframes, and darkens (or desaturates) the
//! rest of the frame with a feathered, time-ramped vignette.

pub mod cli;
pub mod detection;
pub mod effects;
pub mod geometry;
pub mod pipeline;
pub mod preview;
pub mod script;
