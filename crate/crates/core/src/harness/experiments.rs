use std::f64::consts::PI;

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use super::{camera_pose, HarnessError, ScenarioConfig};
use crate::client::{vio_step, VioModel};
use crate::federation::{LocalizeRequest, ServiceDescriptor, SimulatedService, Status};
use crate::geometry::{compose, inverse, rotation_angle, translation_distance, Pose};
use crate::rng::{stream, Stream};
use crate::selector::{rank_services, CandidateTrack, TrackPair, MIN_PAIRS};
use crate::stats::{mean, percentile};
use crate::stitcher::{estimate_transform, StitchObservation};

/// Prior-frame observations gathered before the device reaches the second
/// service.
const PRIOR_OBSERVATIONS: usize = 10;
/// Observations are sampled within this fraction of the coverage radius.
const SAMPLE_RADIUS_FRACTION: f64 = 0.8;
/// Walk steps allowed per wanted observation before giving up.
const WALK_BUDGET: usize = 4;

/// Stitch error against ground truth for one observation count. Count 0 is
/// the unstitched baseline: the identity transform.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StitchRow {
    pub obs_count: usize,
    pub t_median: f64,
    pub t_p5: f64,
    pub t_p95: f64,
    pub r_median: f64,
    pub r_p5: f64,
    pub r_p95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectorRow {
    /// Number of poses in the device trajectory so far.
    pub cycle: usize,
    pub trials: usize,
    pub mean_rank: f64,
    pub true_ate_p5: f64,
    pub true_ate_median: f64,
    pub true_ate_p95: f64,
    pub false_ate_p5: f64,
    pub false_ate_median: f64,
    pub false_ate_p95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecognizerRow {
    pub service_id: String,
    pub threshold: f64,
    pub in_queries: u64,
    pub in_accepted: u64,
    pub in_accept_rate: f64,
    pub out_queries: u64,
    pub out_rejected: u64,
    pub out_reject_rate: f64,
    /// Pose estimations the service actually ran.
    pub pose_estimations: u64,
}

fn uniform_in_disk<R: Rng + ?Sized>(svc: &ServiceDescriptor, fraction: f64, rng: &mut R) -> Vector2<f64> {
    let r = svc.coverage.radius * fraction * rng.random::<f64>().sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    svc.coverage.center() + Vector2::new(r * theta.cos(), r * theta.sin())
}

fn random_camera<R: Rng + ?Sized>(svc: &ServiceDescriptor, rng: &mut R) -> Pose {
    let p = uniform_in_disk(svc, SAMPLE_RADIUS_FRACTION, rng);
    camera_pose(p.x, p.y, 2.0 * PI * rng.random::<f64>())
}

/// Tracks the device through a sequence of world poses with drifting VIO.
struct DeviceTracker {
    model: VioModel,
    device_from_world: Pose,
    last_world: Option<Pose>,
    vio: Pose,
}

impl DeviceTracker {
    fn new(model: VioModel, device_from_world: Pose) -> Self {
        Self {
            model,
            device_from_world,
            last_world: None,
            vio: Pose::identity(),
        }
    }

    fn observe(&mut self, world: &Pose, rng: &mut Stream) -> Pose {
        self.vio = match &self.last_world {
            None => compose(&self.device_from_world, world),
            Some(last) => {
                let motion = compose(&inverse(last), world);
                let dist = motion.translation.norm();
                vio_step(&self.vio, &self.model, &motion, dist, rng)
            }
        };
        self.last_world = Some(*world);
        self.vio
    }

    /// Walks in a straight line to `world` in steps of at most `step`
    /// meters, tracking every step.
    fn travel_to(&mut self, world: &Pose, step: f64, rng: &mut Stream) -> Pose {
        if let Some(last) = self.last_world {
            let delta = world.translation - last.translation;
            let n = (delta.norm() / step).ceil() as usize;
            for i in 1..n {
                let via = Pose::new(last.rotation, last.translation + delta * (i as f64 / n as f64));
                self.observe(&via, rng);
            }
        }
        self.observe(world, rng)
    }
}

/// Walks the device through `svc`'s coverage, querying once per step, until
/// `n` OK responses arrive; returns them as stitch observations.
fn gather_observations(
    svc: &SimulatedService,
    n: usize,
    step: f64,
    label: &str,
    t0: f64,
    tracker: &mut DeviceTracker,
    rng: &mut Stream,
) -> Vec<StitchObservation> {
    let d = svc.descriptor();
    let walk = random_walk(d, n * WALK_BUDGET, step, rng);
    let mut out = Vec::with_capacity(n);
    for (i, world) in walk.iter().enumerate() {
        if out.len() == n {
            break;
        }
        let device = tracker.travel_to(world, step, rng);
        let t = t0 + i as f64;
        let resp = svc.handle(&LocalizeRequest {
            query_id: format!("{label}-{i}"),
            device_world_pose: *world,
            timestamp: t,
        });
        if let (Status::Ok, Some(pose)) = (resp.status, resp.pose) {
            out.push(StitchObservation {
                device_pose: device,
                service_pose: pose,
                service_frame: d.frame.clone(),
                confidence: resp.confidence.unwrap_or(0.0),
                timestamp: t,
            });
        }
    }
    out
}

/// Monte-Carlo error of the stitched transform from the second service's
/// frame into the first's, as a function of how many observations of the
/// second frame have been made.
pub fn experiment_stitch_convergence(
    cfg: &ScenarioConfig,
    n_trials: usize,
    max_obs: usize,
) -> Result<Vec<StitchRow>, HarnessError> {
    cfg.validate()?;
    if cfg.services.len() < 2 {
        return Err(HarnessError::TooFewServices(2));
    }
    let v1 = SimulatedService::new(cfg.services[0].clone(), cfg.seed);
    let v2 = SimulatedService::new(cfg.services[1].clone(), cfg.seed);
    let truth = compose(
        &cfg.services[0].frame_transform_from_world,
        &inverse(&cfg.services[1].frame_transform_from_world),
    );
    let k = cfg.client.stitch_k;
    let step = cfg.device_path.speed * cfg.client.cycle_interval;

    // errors[trial][obs_count] = (translation, rotation)
    let errors: Vec<Vec<(f64, f64)>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let tag = trial.to_string();
            let mut rng = stream(cfg.seed, &["stitch", &tag]);
            let device_from_world = inverse(&random_camera(&cfg.services[0], &mut rng));
            let mut tracker = DeviceTracker::new(cfg.vio, device_from_world);
            let prev = gather_observations(&v1, PRIOR_OBSERVATIONS, step, &format!("s{trial}-a"), 0.0, &mut tracker, &mut rng);
            let new = gather_observations(&v2, max_obs, step, &format!("s{trial}-b"), 1e6, &mut tracker, &mut rng);
            let mut row = vec![(
                translation_distance(&Pose::identity(), &truth),
                rotation_angle(&Pose::identity().rotation, &truth.rotation),
            )];
            for n in 1..=max_obs {
                let err = match estimate_transform(&prev, &new[..n.min(new.len())], k) {
                    Ok(est) => (
                        translation_distance(&est.transform, &truth),
                        rotation_angle(&est.transform.rotation, &truth.rotation),
                    ),
                    Err(_) => (f64::INFINITY, f64::INFINITY),
                };
                row.push(err);
            }
            row
        })
        .collect();

    Ok((0..=max_obs)
        .map(|n| {
            let t: Vec<f64> = errors.iter().map(|e| e[n].0).collect();
            let r: Vec<f64> = errors.iter().map(|e| e[n].1).collect();
            StitchRow {
                obs_count: n,
                t_median: percentile(&t, 50.0),
                t_p5: percentile(&t, 5.0),
                t_p95: percentile(&t, 95.0),
                r_median: percentile(&r, 50.0),
                r_p5: percentile(&r, 5.0),
                r_p95: percentile(&r, 95.0),
            }
        })
        .collect())
}

/// Heading-perturbed walk that stays inside the central part of a coverage
/// disk.
fn random_walk(svc: &ServiceDescriptor, steps: usize, step_len: f64, rng: &mut Stream) -> Vec<Pose> {
    let turn = Normal::new(0.0, 0.6).expect("constant sigma");
    let center = svc.coverage.center();
    let limit = svc.coverage.radius * SAMPLE_RADIUS_FRACTION;
    let mut p = uniform_in_disk(svc, 0.5, rng);
    let mut heading = 2.0 * PI * rng.random::<f64>();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(camera_pose(p.x, p.y, heading));
        heading += turn.sample(rng);
        let mut next = p + step_len * Vector2::new(heading.cos(), heading.sin());
        if (next - center).norm() > limit {
            let back = center - p;
            heading = back.y.atan2(back.x) + turn.sample(rng) * 0.5;
            next = p + step_len * Vector2::new(heading.cos(), heading.sin());
        }
        p = next;
    }
    out
}

struct SelectorTrial {
    /// (poses so far, rank of the correct service, its ATE, other ATEs)
    cycles: Vec<(usize, usize, f64, Vec<f64>)>,
}

/// Ranks every configured service against device tracking along a walk
/// inside one service's coverage; that service is the correct one.
pub fn experiment_selector(cfg: &ScenarioConfig, n_trials: usize) -> Result<Vec<SelectorRow>, HarnessError> {
    cfg.validate()?;
    let services: Vec<SimulatedService> = cfg
        .services
        .iter()
        .map(|d| SimulatedService::new(d.clone(), cfg.seed))
        .collect();
    let n_cycles = cfg.cycle_times().len();
    let step = cfg.device_path.speed * cfg.client.cycle_interval;
    let window = cfg.client.selector.track_window;

    let trials: Vec<SelectorTrial> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let tag = trial.to_string();
            let mut rng = stream(cfg.seed, &["selector", &tag]);
            let correct = trial % services.len();
            let walk = random_walk(&cfg.services[correct], n_cycles, step, &mut rng);
            let mut tracker = DeviceTracker::new(cfg.vio, inverse(&walk[0]));
            let mut tracks: Vec<CandidateTrack> = cfg
                .services
                .iter()
                .map(|d| CandidateTrack::new(d.service_id.clone()))
                .collect();
            let mut cycles = Vec::new();
            for (c, world) in walk.iter().enumerate() {
                let vio = tracker.observe(world, &mut rng);
                for (svc, track) in services.iter().zip(tracks.iter_mut()) {
                    let resp = svc.handle(&LocalizeRequest {
                        query_id: format!("t{trial}-c{c}"),
                        device_world_pose: *world,
                        timestamp: c as f64,
                    });
                    if let (Status::Ok, Some(pose)) = (resp.status, resp.pose) {
                        track.push(
                            TrackPair {
                                timestamp: c as f64,
                                vio_pose: vio,
                                service_pose: pose,
                                server_confidence: resp.confidence,
                            },
                            window,
                        );
                    }
                }
                let eligible: Vec<CandidateTrack> =
                    tracks.iter().filter(|t| t.len() >= MIN_PAIRS).cloned().collect();
                let correct_id = &cfg.services[correct].service_id;
                let Ok(ranking) = rank_services(&eligible) else { continue };
                let Some(hit) = ranking.iter().find(|r| &r.service_id == correct_id) else {
                    continue;
                };
                let others = ranking
                    .iter()
                    .filter(|r| &r.service_id != correct_id)
                    .map(|r| r.ate_score)
                    .collect();
                cycles.push((c + 1, hit.rank, hit.ate_score, others));
            }
            SelectorTrial { cycles }
        })
        .collect();

    Ok((MIN_PAIRS..=n_cycles)
        .filter_map(|cycle| {
            let mut ranks = Vec::new();
            let mut true_ate = Vec::new();
            let mut false_ate = Vec::new();
            for trial in &trials {
                for (n, rank, ate, others) in &trial.cycles {
                    if *n == cycle {
                        ranks.push(*rank as f64);
                        true_ate.push(*ate);
                        false_ate.extend(others.iter().copied());
                    }
                }
            }
            (!ranks.is_empty()).then(|| SelectorRow {
                cycle,
                trials: ranks.len(),
                mean_rank: mean(&ranks),
                true_ate_p5: percentile(&true_ate, 5.0),
                true_ate_median: percentile(&true_ate, 50.0),
                true_ate_p95: percentile(&true_ate, 95.0),
                false_ate_p5: percentile(&false_ate, 5.0),
                false_ate_median: percentile(&false_ate, 50.0),
                false_ate_p95: percentile(&false_ate, 95.0),
            })
        })
        .collect())
}

/// Gating outcomes at each service's configured threshold.
pub fn experiment_recognizer(cfg: &ScenarioConfig, n_queries: usize) -> Result<Vec<RecognizerRow>, HarnessError> {
    recognizer_rows(cfg, n_queries, None)
}

/// Gating outcomes at every threshold in `thresholds` (values above 1 are
/// allowed and reject everything).
pub fn experiment_recognizer_sweep(
    cfg: &ScenarioConfig,
    n_queries: usize,
    thresholds: &[f64],
) -> Result<Vec<RecognizerRow>, HarnessError> {
    let mut rows = Vec::new();
    for &th in thresholds {
        rows.extend(recognizer_rows(cfg, n_queries, Some(th))?);
    }
    Ok(rows)
}

/// Queries alternate between a point inside the target service's coverage
/// and a point inside some other service's coverage.
fn recognizer_rows(
    cfg: &ScenarioConfig,
    n_queries: usize,
    threshold: Option<f64>,
) -> Result<Vec<RecognizerRow>, HarnessError> {
    cfg.validate()?;
    let n_svc = cfg.services.len();
    if n_svc < 2 {
        return Err(HarnessError::TooFewServices(2));
    }
    let services: Vec<SimulatedService> = cfg
        .services
        .iter()
        .map(|d| SimulatedService::new(d.clone(), cfg.seed))
        .collect();

    // (service index, in coverage, accepted)
    let outcomes: Vec<(usize, bool, bool)> = (0..n_queries)
        .into_par_iter()
        .map(|q| {
            let tag = q.to_string();
            let mut rng = stream(cfg.seed, &["recognizer", &tag]);
            let target = q % n_svc;
            let inside = (q / n_svc).is_multiple_of(2);
            let source = if inside {
                target
            } else {
                (target + 1 + rng.random_range(0..n_svc - 1)) % n_svc
            };
            let p = uniform_in_disk(&cfg.services[source], 1.0, &mut rng);
            let world = camera_pose(p.x, p.y, 2.0 * PI * rng.random::<f64>());
            let req = LocalizeRequest {
                query_id: format!("q{q}"),
                device_world_pose: world,
                timestamp: q as f64,
            };
            let svc = &services[target];
            let resp = match threshold {
                Some(th) => svc.handle_with_threshold(&req, th),
                None => svc.handle(&req),
            };
            (target, inside, resp.status == Status::Ok)
        })
        .collect();

    Ok(services
        .iter()
        .enumerate()
        .map(|(i, svc)| {
            let mine = outcomes.iter().filter(|o| o.0 == i);
            let (mut in_q, mut in_acc, mut out_q, mut out_rej) = (0u64, 0u64, 0u64, 0u64);
            for &(_, inside, accepted) in mine {
                if inside {
                    in_q += 1;
                    in_acc += accepted as u64;
                } else {
                    out_q += 1;
                    out_rej += (!accepted) as u64;
                }
            }
            let rate = |a: u64, n: u64| if n == 0 { f64::NAN } else { a as f64 / n as f64 };
            RecognizerRow {
                service_id: svc.descriptor().service_id.clone(),
                threshold: threshold.unwrap_or(svc.descriptor().recognizer_threshold),
                in_queries: in_q,
                in_accepted: in_acc,
                in_accept_rate: rate(in_acc, in_q),
                out_queries: out_q,
                out_rejected: out_rej,
                out_reject_rate: rate(out_rej, out_q),
                pose_estimations: svc.pose_estimation_count(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::NoiseModel;
    use crate::harness::presets;

    #[test]
    fn noiseless_stitch_is_exact_at_every_count() {
        let mut cfg = presets::two_rooms();
        for s in &mut cfg.services {
            s.noise = NoiseModel::zero();
        }
        cfg.vio = VioModel::default();
        let rows = experiment_stitch_convergence(&cfg, 20, 10).unwrap();
        assert_eq!(rows.len(), 11);
        assert!(rows[0].t_median > 4.0);
        for r in &rows[1..] {
            assert!(r.t_p95 < 1e-9 && r.r_p95 < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn stitch_needs_two_services() {
        let mut cfg = presets::two_rooms();
        cfg.services.truncate(1);
        assert!(matches!(
            experiment_stitch_convergence(&cfg, 1, 1),
            Err(HarnessError::TooFewServices(2))
        ));
    }

    #[test]
    fn single_service_always_ranks_first() {
        let mut cfg = presets::selector();
        cfg.services.truncate(1);
        let rows = experiment_selector(&cfg, 10).unwrap();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.mean_rank == 1.0));
    }

    #[test]
    fn threshold_above_one_rejects_everything() {
        let rows = experiment_recognizer_sweep(&presets::recognizer(), 200, &[1.01]).unwrap();
        for r in rows {
            assert_eq!(r.in_accepted, 0);
            assert_eq!(r.out_rejected, r.out_queries);
            assert_eq!(r.pose_estimations, 0);
        }
    }

    #[test]
    fn noiseless_gating_is_perfect() {
        let mut cfg = presets::recognizer();
        for s in &mut cfg.services {
            s.similarity_noise = 0.0;
        }
        for r in experiment_recognizer(&cfg, 600).unwrap() {
            assert_eq!(r.in_accepted, r.in_queries);
            assert_eq!(r.out_rejected, r.out_queries);
            assert_eq!(r.pose_estimations, r.in_accepted);
        }
    }
}
