//! The federated side of the protocol: spatial discovery, simulated
//! positioning services, the wire format, and transports.

mod registry;
mod service;
pub mod transport;
pub mod wire;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FrameId, NoiseModel, Pose};

pub use registry::{Registry, DEFAULT_DISCOVERY_SLACK};
pub use service::{
    handle_localize, place_similarity, SimulatedService, CONFIDENCE_LAMBDA_R, CONFIDENCE_LAMBDA_T,
    CONFIDENCE_NOISE, MALICIOUS_CONFIDENCE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederationError {
    #[error("invalid service {service_id}: {reason}")]
    InvalidService { service_id: String, reason: String },
    #[error("duplicate service id {0}")]
    DuplicateService(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

/// Circular coverage on the world ground plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRegion {
    pub center: [f64; 2],
    pub radius: f64,
    /// Distance at which simulated place similarity reaches zero.
    pub falloff: f64,
}

impl CoverageRegion {
    pub fn center(&self) -> Vector2<f64> {
        Vector2::from(self.center)
    }

    pub fn distance(&self, p: &Vector2<f64>) -> f64 {
        (p - self.center()).norm()
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        self.distance(p) <= self.radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceMode {
    #[default]
    Honest,
    Malicious,
    Absent,
}

/// One federated positioning service, including the simulation-only ground
/// truth that clients never see.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    pub service_id: String,
    pub domain_name: String,
    pub endpoint: String,
    pub frame: FrameId,
    /// Ground truth `T_{V<-W}`.
    pub frame_transform_from_world: Pose,
    pub coverage: CoverageRegion,
    pub noise: NoiseModel,
    #[serde(default)]
    pub confidence_mode: ConfidenceMode,
    #[serde(default)]
    pub similarity_noise: f64,
    pub recognizer_threshold: f64,
}

impl ServiceDescriptor {
    pub fn validate(&self) -> Result<(), FederationError> {
        let fail = |reason: &str| {
            Err(FederationError::InvalidService {
                service_id: self.service_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.service_id.is_empty() {
            return fail("empty service_id");
        }
        let labels: Vec<&str> = self.domain_name.split('.').collect();
        if labels.len() < 2 || labels.iter().any(|l| l.is_empty()) {
            return fail("domain_name must be a dotted name");
        }
        let c = &self.coverage;
        if !(c.radius.is_finite() && c.radius > 0.0) {
            return fail("coverage radius must be > 0");
        }
        if !(c.falloff.is_finite() && c.falloff >= c.radius) {
            return fail("similarity falloff must be >= radius");
        }
        if c.center.iter().any(|v| !v.is_finite()) {
            return fail("coverage center must be finite");
        }
        if let Err(e) = self.noise.validate() {
            return fail(&e.to_string());
        }
        if !(self.similarity_noise.is_finite() && self.similarity_noise >= 0.0) {
            return fail("similarity_noise must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.recognizer_threshold) {
            return fail("recognizer_threshold must be in [0, 1]");
        }
        if !self.frame_transform_from_world.is_finite() {
            return fail("frame transform must be finite");
        }
        Ok(())
    }

    pub fn entry(&self) -> RegistryEntry {
        RegistryEntry {
            service_id: self.service_id.clone(),
            domain_name: self.domain_name.clone(),
            endpoint: self.endpoint.clone(),
            frame: self.frame.clone(),
        }
    }
}

/// The public part of a descriptor, as returned by discovery.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct RegistryEntry {
    pub service_id: String,
    pub domain_name: String,
    pub endpoint: String,
    pub frame: FrameId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistryQuery {
    /// Device position on the world ground plane.
    pub gps: [f64; 2],
    /// Domain suffixes to keep, e.g. `".edu"`.
    pub tld_whitelist: Option<Vec<String>>,
    pub max_services: Option<usize>,
}

impl RegistryQuery {
    pub fn at(gps: [f64; 2]) -> Self {
        Self {
            gps,
            tld_whitelist: None,
            max_services: None,
        }
    }

    pub fn validate(&self) -> Result<(), FederationError> {
        if self.gps.iter().any(|v| !v.is_finite()) {
            return Err(FederationError::InvalidQuery("gps must be finite".into()));
        }
        if self.max_services == Some(0) {
            return Err(FederationError::InvalidQuery("max_services must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizeRequest {
    pub query_id: String,
    /// Stand-in for the query image: the camera's true world pose.
    pub device_world_pose: Pose,
    pub timestamp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Ok,
    OutOfCoverage,
    Error,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Ok => "OK",
            Status::OutOfCoverage => "OUT_OF_COVERAGE",
            Status::Error => "ERROR",
        }
    }

    pub fn parse(s: &str) -> Option<Status> {
        match s {
            "OK" => Some(Status::Ok),
            "OUT_OF_COVERAGE" => Some(Status::OutOfCoverage),
            "ERROR" => Some(Status::Error),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizeResponse {
    pub query_id: String,
    pub status: Status,
    /// Camera pose in the service frame; present iff `status` is OK.
    pub pose: Option<Pose>,
    pub confidence: Option<f64>,
    pub service_id: String,
    pub frame: FrameId,
}
