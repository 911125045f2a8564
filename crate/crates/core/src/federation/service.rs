use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ConfidenceMode, LocalizeRequest, LocalizeResponse, ServiceDescriptor, Status};
use crate::geometry::{
    compose, perturb, rotation_angle, translation_distance, Pose, Rotation,
};
use crate::rng::{stream, Stream};

/// Translation error scale of the honest confidence model, meters; matches
/// the default ATE-to-score scale so honest scores are comparable.
pub const CONFIDENCE_LAMBDA_T: f64 = 0.5;
/// Rotation error scale of the honest confidence model, radians (10 degrees).
pub const CONFIDENCE_LAMBDA_R: f64 = 10.0 * PI / 180.0;
/// Standard deviation of the additive noise on honest confidence.
pub const CONFIDENCE_NOISE: f64 = 0.02;
pub const MALICIOUS_CONFIDENCE: f64 = 0.99;

/// Simulated place-recognition similarity: linear falloff from the coverage
/// center plus Gaussian noise, clamped to `[0, 1]`.
pub fn place_similarity<R: Rng + ?Sized>(
    svc: &ServiceDescriptor,
    world_pos: &Vector2<f64>,
    rng: &mut R,
) -> f64 {
    let d = svc.coverage.distance(world_pos);
    let base = (1.0 - d / svc.coverage.falloff).clamp(0.0, 1.0);
    let noise = if svc.similarity_noise > 0.0 {
        Normal::new(0.0, svc.similarity_noise)
            .expect("validated sigma")
            .sample(rng)
    } else {
        0.0
    };
    (base + noise).clamp(0.0, 1.0)
}

fn request_is_valid(req: &LocalizeRequest) -> bool {
    !req.query_id.is_empty() && req.timestamp.is_finite() && req.device_world_pose.is_finite()
}

/// A localisation against the wrong place: a random camera pose somewhere
/// inside this service's map.
fn false_match<R: Rng + ?Sized>(svc: &ServiceDescriptor, truth: &Pose, rng: &mut R) -> Pose {
    let r = svc.coverage.radius * rng.random::<f64>().sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    let c = svc.coverage.center();
    let z = truth.translation.z + rng.random_range(-0.5..0.5);
    let yaw = Rotation::rz(2.0 * PI * rng.random::<f64>());
    Pose::new(
        yaw.compose(&truth.rotation),
        Vector3::new(c.x + r * theta.cos(), c.y + r * theta.sin(), z),
    )
}

/// Service-side handling of one query: place-recognition gate, pose
/// estimation in the service frame, confidence.
pub fn handle_localize<R: Rng + ?Sized>(
    svc: &ServiceDescriptor,
    req: &LocalizeRequest,
    rng: &mut R,
) -> LocalizeResponse {
    handle_localize_with_threshold(svc, req, svc.recognizer_threshold, rng)
}

pub(crate) fn handle_localize_with_threshold<R: Rng + ?Sized>(
    svc: &ServiceDescriptor,
    req: &LocalizeRequest,
    threshold: f64,
    rng: &mut R,
) -> LocalizeResponse {
    let mut response = LocalizeResponse {
        query_id: req.query_id.clone(),
        status: Status::Error,
        pose: None,
        confidence: None,
        service_id: svc.service_id.clone(),
        frame: svc.frame.clone(),
    };
    if !request_is_valid(req) {
        return response;
    }
    let world = &req.device_world_pose;
    let ground = world.translation.xy();
    if place_similarity(svc, &ground, rng) < threshold {
        response.status = Status::OutOfCoverage;
        return response;
    }

    let truth = compose(&svc.frame_transform_from_world, world);
    let matched = if svc.coverage.contains(&ground) {
        truth
    } else {
        compose(&svc.frame_transform_from_world, &false_match(svc, world, rng))
    };
    let pose = perturb(&matched, &svc.noise, rng);

    response.confidence = match svc.confidence_mode {
        ConfidenceMode::Honest => {
            let e_t = translation_distance(&truth, &pose);
            let e_r = rotation_angle(&truth.rotation, &pose.rotation);
            let jitter = Normal::new(0.0, CONFIDENCE_NOISE)
                .expect("constant sigma")
                .sample(rng);
            let c = (-(e_t / CONFIDENCE_LAMBDA_T + e_r / CONFIDENCE_LAMBDA_R)).exp() + jitter;
            Some(c.clamp(0.0, 1.0))
        }
        ConfidenceMode::Malicious => Some(MALICIOUS_CONFIDENCE),
        ConfidenceMode::Absent => None,
    };
    response.status = Status::Ok;
    response.pose = Some(pose);
    response
}

/// A running service: descriptor, noise seed, and observable counters.
#[derive(Debug)]
pub struct SimulatedService {
    descriptor: ServiceDescriptor,
    seed: u64,
    received: AtomicU64,
    pose_estimations: AtomicU64,
}

impl SimulatedService {
    pub fn new(descriptor: ServiceDescriptor, seed: u64) -> Self {
        Self {
            descriptor,
            seed,
            received: AtomicU64::new(0),
            pose_estimations: AtomicU64::new(0),
        }
    }

    pub fn descriptor(&self) -> &ServiceDescriptor {
        &self.descriptor
    }

    /// Noise stream for one query, fixed by (seed, service id, query id).
    pub fn query_stream(&self, query_id: &str) -> Stream {
        stream(self.seed, &["service", &self.descriptor.service_id, query_id])
    }

    pub fn handle(&self, req: &LocalizeRequest) -> LocalizeResponse {
        self.handle_with_threshold(req, self.descriptor.recognizer_threshold)
    }

    /// Like [`handle`](Self::handle) with an overridden recognizer threshold.
    pub fn handle_with_threshold(&self, req: &LocalizeRequest, threshold: f64) -> LocalizeResponse {
        self.received.fetch_add(1, Ordering::Relaxed);
        let mut rng = self.query_stream(&req.query_id);
        let resp = handle_localize_with_threshold(&self.descriptor, req, threshold, &mut rng);
        if resp.status == Status::Ok {
            self.pose_estimations.fetch_add(1, Ordering::Relaxed);
        }
        resp
    }

    pub fn received_count(&self) -> u64 {
        self.received.load(Ordering::Relaxed)
    }

    pub fn pose_estimation_count(&self) -> u64 {
        self.pose_estimations.load(Ordering::Relaxed)
    }
}
