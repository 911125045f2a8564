//! Named scenario configurations.
//!
//! "two-rooms" is the stitch-convergence calibration; the others are the
//! reference setups used by the acceptance suite and the CLI.

use nalgebra::{Vector2, Vector3};

use super::{DevicePath, ScenarioConfig, Waypoint, World};
use crate::client::{ClientConfig, VioModel};
use crate::federation::{ConfidenceMode, CoverageRegion, ServiceDescriptor};
use crate::geometry::{FrameId, NoiseModel, Pose, Rotation};

pub const NAMES: &[&str] = &[
    "two-rooms",
    "crossing",
    "selector",
    "recognizer",
    "malicious",
    "single",
];

pub fn by_name(name: &str) -> Option<ScenarioConfig> {
    Some(match name {
        "two-rooms" => two_rooms(),
        "crossing" => crossing(),
        "selector" => selector(),
        "recognizer" => recognizer(),
        "malicious" => malicious(),
        "single" => single_service_noiseless(),
        _ => return None,
    })
}

/// Honest service noise used unless a preset says otherwise.
pub fn default_noise() -> NoiseModel {
    NoiseModel::gaussian(0.1, 1f64.to_radians())
}

pub fn default_vio() -> VioModel {
    VioModel {
        drift_t_per_m: 0.01,
        drift_r_per_m: 0.001,
    }
}

/// A service whose private frame origin sits near its coverage center,
/// rotated by `yaw` and offset by `offset` from it.
fn service(id: &str, center: [f64; 2], radius: f64, falloff: f64, yaw: f64, offset: [f64; 3]) -> ServiceDescriptor {
    let r = Rotation::rz(yaw);
    let c = Vector3::new(center[0], center[1], 0.0);
    let t = -r.rotate(&c) + Vector3::from(offset);
    ServiceDescriptor {
        service_id: id.to_string(),
        domain_name: format!("{id}.vps.example.org"),
        endpoint: format!("loop://{id}"),
        frame: FrameId::new(format!("V-{id}")).expect("non-empty"),
        frame_transform_from_world: Pose::new(r, t),
        coverage: CoverageRegion {
            center,
            radius,
            falloff,
        },
        noise: default_noise(),
        confidence_mode: ConfidenceMode::Honest,
        similarity_noise: 0.0,
        recognizer_threshold: 0.5,
    }
}

fn path(points: &[[f64; 2]], speed: f64) -> DevicePath {
    let mut waypoints: Vec<Waypoint> = points
        .windows(2)
        .map(|w| {
            let d = Vector2::new(w[1][0] - w[0][0], w[1][1] - w[0][1]);
            Waypoint {
                x: w[0][0],
                y: w[0][1],
                heading: d.y.atan2(d.x),
            }
        })
        .collect();
    let last = points[points.len() - 1];
    let heading = waypoints.last().map_or(0.0, |w| w.heading);
    waypoints.push(Waypoint {
        x: last[0],
        y: last[1],
        heading,
    });
    DevicePath { waypoints, speed }
}

fn base(seed: u64, services: Vec<ServiceDescriptor>, device_path: DevicePath, duration: f64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        world: World::default(),
        services,
        device_path,
        vio: default_vio(),
        client: ClientConfig::default(),
        duration,
    }
}

/// Two overlapping services with frames several meters apart and the
/// stitch-convergence noise level (0.2 m, 2 degrees).
pub fn two_rooms() -> ScenarioConfig {
    let noise = NoiseModel::gaussian(0.2, 2f64.to_radians());
    let mut a = service("v1", [0.0, 0.0], 8.0, 16.0, 0.4, [1.0, -2.0, 0.3]);
    let mut b = service("v2", [12.0, 0.0], 8.0, 16.0, -0.9, [-2.0, 1.5, -0.2]);
    a.noise = noise;
    b.noise = noise;
    let p = path(&[[-4.0, -1.0], [4.0, 2.0], [8.0, -2.0], [16.0, 1.0]], 1.0);
    base(8, vec![a, b], p, 20.0)
}

/// A walk from one service's coverage into a neighbour's with an overlap
/// of a few meters; the path zig-zags so trajectories are never collinear.
pub fn crossing() -> ScenarioConfig {
    let a = service("museum", [0.0, 0.0], 10.0, 20.0, 0.7, [3.0, -2.0, 0.5]);
    let b = service("plaza", [16.0, 0.0], 10.0, 20.0, -1.2, [-5.0, 4.0, -0.3]);
    let points: Vec<[f64; 2]> = (0..8)
        .map(|i| [-6.0 + 4.0 * i as f64, if i % 2 == 0 { -2.0 } else { 2.0 }])
        .collect();
    let p = path(&points, 1.0);
    let duration = (p.length() / p.speed).floor();
    base(20, vec![a, b], p, duration)
}

/// Five services in adjacent rooms around a central one, all within
/// discovery range of it. Every service answers every query (gate
/// disabled), so the wrong ones return false matches.
pub fn selector() -> ScenarioConfig {
    let centers = [[0.0, 0.0], [12.5, 0.0], [-12.5, 0.0], [0.0, 12.5], [0.0, -12.5]];
    let yaws = [0.3, -0.8, 1.9, 2.7, -2.2];
    let services = centers
        .iter()
        .zip(yaws)
        .enumerate()
        .map(|(i, (c, yaw))| {
            let mut s = service(&format!("room{i}"), *c, 6.0, 12.0, yaw, [0.5 * i as f64, -0.4, 0.1]);
            s.recognizer_threshold = 0.0;
            s
        })
        .collect();
    let p = path(&[[-2.0, -2.0], [2.0, -1.0], [1.0, 2.0], [-2.0, 1.0], [-1.0, -2.0]], 1.0);
    base(13, services, p, 12.0)
}

/// Three disjoint services separated by more than the similarity falloff,
/// with noisy similarity.
pub fn recognizer() -> ScenarioConfig {
    let services = [[0.0, 0.0], [40.0, 0.0], [0.0, 40.0]]
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut s = service(&format!("site{i}"), *c, 5.0, 15.0, 0.5 * i as f64, [0.0, 0.0, 0.0]);
            s.similarity_noise = 0.05;
            s
        })
        .collect();
    let p = path(&[[0.0, 0.0], [2.0, 1.0]], 1.0);
    base(5, services, p, 3.0)
}

/// An honest service sharing its coverage with a malicious one that reports
/// 0.99 confidence on 1 m noise.
pub fn malicious() -> ScenarioConfig {
    let honest = service("honest", [0.0, 0.0], 15.0, 30.0, 0.2, [1.0, 1.0, 0.0]);
    let mut bad = service("shady", [1.0, 0.0], 15.0, 30.0, -0.5, [-1.0, 2.0, 0.0]);
    bad.noise = NoiseModel::gaussian(1.0, 1f64.to_radians());
    bad.confidence_mode = ConfidenceMode::Malicious;
    let p = path(&[[-6.0, -3.0], [-2.0, 3.0], [2.0, -3.0], [6.0, 3.0], [8.0, -3.0]], 1.0);
    base(7, vec![honest, bad], p, 20.0)
}

/// One noiseless service and a straight walk through its coverage.
pub fn single_service_noiseless() -> ScenarioConfig {
    let mut s = service("solo", [0.0, 0.0], 20.0, 40.0, 1.1, [2.0, -3.0, 0.4]);
    s.noise = NoiseModel::zero();
    let mut cfg = base(1, vec![s], path(&[[-8.0, 0.0], [8.0, 0.0]], 1.0), 15.0);
    cfg.vio = VioModel::default();
    cfg
}
