//! Deterministic scenario runner, experiments and metrics output.
//!
//! A [`ScenarioConfig`] fully describes one simulated world: services, the
//! device path, tracking drift and client settings. Everything downstream is
//! a pure function of the config, including the seed.

mod experiments;
pub mod presets;
mod scenario;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientConfig, VioModel};
use crate::federation::{FederationError, ServiceDescriptor};
use crate::geometry::{Pose, Rotation};

pub use experiments::{
    experiment_recognizer, experiment_recognizer_sweep, experiment_selector,
    experiment_stitch_convergence, RecognizerRow, SelectorRow, StitchRow,
};
pub use scenario::{run_scenario, write_csv, CycleRow, MetricsReport, Summary, CSV_HEADER};

/// Height of the simulated camera above the ground plane, meters.
pub const CAMERA_HEIGHT: f64 = 1.5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no waypoints")]
    NoWaypoints,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("experiment needs at least {0} services")]
    TooFewServices(usize),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ground-plane extents of the simulated world, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Default for World {
    fn default() -> Self {
        Self {
            min: [-100.0, -100.0],
            max: [100.0, 100.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// Yaw about the vertical axis, radians.
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevicePath {
    pub waypoints: Vec<Waypoint>,
    /// Meters per second.
    pub speed: f64,
}

impl DevicePath {
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }

    /// Arc length covered after `t` seconds, capped at the path end.
    pub fn distance_at(&self, t: f64) -> f64 {
        (self.speed * t.max(0.0)).min(self.length())
    }

    /// World camera pose after `t` seconds: constant speed along straight
    /// segments, heading switching at each waypoint.
    pub fn pose_at(&self, t: f64) -> Pose {
        let mut remaining = self.distance_at(t);
        for w in self.waypoints.windows(2) {
            let seg = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            if remaining < seg {
                let f = remaining / seg;
                return camera_pose(
                    w[0].x + f * (w[1].x - w[0].x),
                    w[0].y + f * (w[1].y - w[0].y),
                    w[0].heading,
                );
            }
            remaining -= seg;
        }
        let last = self.waypoints[self.waypoints.len() - 1];
        camera_pose(last.x, last.y, last.heading)
    }
}

/// Camera pose on the ground plane: optical axis along the heading,
/// image y axis pointing down.
pub fn camera_pose(x: f64, y: f64, heading: f64) -> Pose {
    let forward = Vector3::new(heading.cos(), heading.sin(), 0.0);
    let down = Vector3::new(0.0, 0.0, -1.0);
    let right = down.cross(&forward);
    let r = Rotation::from_matrix(&Matrix3::from_columns(&[right, down, forward]))
        .expect("orthonormal columns");
    Pose::new(r, Vector3::new(x, y, CAMERA_HEIGHT))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default)]
    pub world: World,
    pub services: Vec<ServiceDescriptor>,
    pub device_path: DevicePath,
    #[serde(default)]
    pub vio: VioModel,
    #[serde(default)]
    pub client: ClientConfig,
    /// Seconds of simulated time.
    pub duration: f64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_string()));
        if self.device_path.waypoints.is_empty() {
            return Err(HarnessError::NoWaypoints);
        }
        if self.device_path.waypoints.len() < 2 {
            return bad("device_path needs at least 2 waypoints");
        }
        if self
            .device_path
            .waypoints
            .iter()
            .any(|w| !(w.x.is_finite() && w.y.is_finite() && w.heading.is_finite()))
        {
            return bad("waypoints must be finite");
        }
        if !(self.device_path.speed.is_finite() && self.device_path.speed >= 0.0) {
            return bad("speed must be >= 0");
        }
        if self.services.is_empty() {
            return bad("at least one service is required");
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad("duration must be > 0");
        }
        if (0..2).any(|i| !(self.world.min[i] < self.world.max[i])) {
            return bad("world extents are empty");
        }
        self.vio.validate().map_err(HarnessError::InvalidConfig)?;
        self.client.validate().map_err(HarnessError::InvalidConfig)?;
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.services {
            s.validate()?;
            if !ids.insert(&s.service_id) {
                return Err(FederationError::DuplicateService(s.service_id.clone()).into());
            }
        }
        Ok(())
    }

    /// Cycle timestamps: every `cycle_interval` from 0 while below `duration`.
    pub fn cycle_times(&self) -> Vec<f64> {
        let dt = self.client.cycle_interval;
        (0..)
            .map(|k| k as f64 * dt)
            .take_while(|t| *t < self.duration)
            .collect()
    }
}
