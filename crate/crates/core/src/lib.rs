//! Coordination layer for federated visual positioning.
//!
//! Devices discover positioning services by location, broadcast queries to
//! a subset of them, pick the service whose pose trajectory best agrees with
//! on-device tracking, and stitch every service's private coordinate frame
//! into one application frame. A deterministic simulator stands in for the
//! vision stack so the coordination algorithms can be exercised end to end.
//!
//! - [`geometry`]: SE(3) poses, rotation averaging, seeded noise
//! - [`stitcher`]: frame stitching and the frame graph
//! - [`trajectory`]: rigid alignment, ATE and RPE
//! - [`selector`]: ATE ranking, reputation, rediscovery trigger
//! - [`federation`]: registry, simulated services, wire format, transports
//! - [`client`]: the device-side localisation loop
//! - [`harness`]: scenarios, experiments and metrics output

pub mod client;
pub mod federation;
pub mod geometry;
pub mod harness;
pub mod rng;
pub mod selector;
pub mod stats;
pub mod stitcher;
pub mod trajectory;

pub use geometry::{FrameId, NoiseModel, Pose, Rotation};
