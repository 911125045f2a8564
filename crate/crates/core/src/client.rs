//! The device-side localisation loop.
//!
//! Each cycle the client optionally rediscovers services, broadcasts a query
//! to its active candidate set, ranks candidates against its own tracking,
//! updates reputations, stitches the selected service's frame into the
//! application frame, and emits one application-frame pose.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::federation::transport::{Federation, TransportError};
use crate::federation::{LocalizeRequest, LocalizeResponse, RegistryEntry, RegistryQuery, Status};
use crate::geometry::{compose, inverse, perturb, FrameId, NoiseModel, Pose};
use crate::selector::{
    device_score, needs_rediscovery, rank_services, update_reputation, CandidateTrack, RankEntry,
    SelectorConfig, ServiceReputation, TrackPair, MIN_PAIRS,
};
use crate::stitcher::{estimate_transform, to_frame, FrameGraph, StitchObservation, DEFAULT_STITCH_K};

/// Name of the application frame: the device tracking frame at start.
pub const ANCHOR_FRAME: &str = "D";
/// Stitch observations retained per frame.
const OBSERVATION_HISTORY: usize = 50;

/// Drift of on-device tracking, as standard deviations per meter traveled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct VioModel {
    pub drift_t_per_m: f64,
    pub drift_r_per_m: f64,
}

impl VioModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.drift_t_per_m.is_finite() && self.drift_t_per_m >= 0.0)
            || !(self.drift_r_per_m.is_finite() && self.drift_r_per_m >= 0.0)
        {
            return Err("vio drift must be >= 0".into());
        }
        Ok(())
    }
}

/// Advances the drifted tracking pose by one (noisy) relative motion.
pub fn vio_step<R: Rng + ?Sized>(
    current: &Pose,
    model: &VioModel,
    true_motion: &Pose,
    distance: f64,
    rng: &mut R,
) -> Pose {
    let distance = distance.max(0.0);
    let noise = NoiseModel::gaussian(model.drift_t_per_m * distance, model.drift_r_per_m * distance);
    compose(current, &perturb(true_motion, &noise, rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    /// Seconds between localisation cycles.
    pub cycle_interval: f64,
    pub tau_confidence: f64,
    pub rediscovery_window: usize,
    pub max_broadcast: usize,
    pub tld_whitelist: Option<Vec<String>>,
    pub selector: SelectorConfig,
    pub stitch_k: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            cycle_interval: 1.0,
            tau_confidence: 0.4,
            rediscovery_window: 2,
            max_broadcast: 5,
            tld_whitelist: None,
            selector: SelectorConfig::default(),
            stitch_k: DEFAULT_STITCH_K,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cycle_interval.is_finite() && self.cycle_interval > 0.0) {
            return Err("cycle_interval must be > 0".into());
        }
        if self.max_broadcast == 0 {
            return Err("max_broadcast must be >= 1".into());
        }
        if self.rediscovery_window == 0 {
            return Err("rediscovery_window must be >= 1".into());
        }
        if self.stitch_k == 0 {
            return Err("stitch_k must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau_confidence) {
            return Err("tau_confidence must be in [0, 1]".into());
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(0.5 * self.cycle_interval)
    }
}

/// What one responder said this cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseSummary {
    pub service_id: String,
    /// `None` when the service was unreachable.
    pub status: Option<Status>,
    pub confidence: Option<f64>,
    pub ate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StitchUpdate {
    pub from_frame: FrameId,
    pub to_frame: FrameId,
    pub sample_count: usize,
    pub transform: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleOutcome {
    pub cycle: u64,
    pub t: f64,
    pub discovery: bool,
    pub requests_sent: usize,
    pub selected_service: Option<String>,
    pub provisional: bool,
    /// True when the pose comes from a service this cycle; false when it is
    /// extrapolated from device tracking.
    pub fix: bool,
    /// Camera pose in the application frame.
    pub pose: Pose,
    pub ate_selected: Option<f64>,
    pub confidence: Option<f64>,
    pub stitch_updates: Vec<StitchUpdate>,
    pub responses: Vec<ResponseSummary>,
    pub ranking: Vec<RankEntry>,
    pub newly_blacklisted: Vec<String>,
    /// Time spent ranking, stitching and mapping frames.
    pub compute_time: Duration,
}

/// Inputs the client sees at the start of a cycle.
#[derive(Clone, Debug)]
pub struct CycleInput {
    pub t: f64,
    /// Current pose from device tracking, in the device frame.
    pub vio_pose: Pose,
    /// Payload forwarded to services in place of the camera image.
    pub query_pose: Pose,
    pub gps: [f64; 2],
}

/// Per-session client state.
#[derive(Debug)]
pub struct ClientSession {
    config: ClientConfig,
    anchor: FrameId,
    cycle: u64,
    current_service: Option<String>,
    candidates: Vec<RegistryEntry>,
    tracks: BTreeMap<String, CandidateTrack>,
    reputations: BTreeMap<String, ServiceReputation>,
    confidence_history: Vec<f64>,
    graph: FrameGraph,
    observations: BTreeMap<FrameId, Vec<StitchObservation>>,
    frame_parent: BTreeMap<FrameId, FrameId>,
    last_fix: Option<(Pose, Pose)>,
    registry_queries: u64,
    requests_sent: u64,
}

impl ClientSession {
    pub fn new(config: ClientConfig) -> Self {
        Self {
            config,
            anchor: FrameId::new(ANCHOR_FRAME).expect("non-empty"),
            cycle: 0,
            current_service: None,
            candidates: Vec::new(),
            tracks: BTreeMap::new(),
            reputations: BTreeMap::new(),
            confidence_history: Vec::new(),
            graph: FrameGraph::new(),
            observations: BTreeMap::new(),
            frame_parent: BTreeMap::new(),
            last_fix: None,
            registry_queries: 0,
            requests_sent: 0,
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn anchor(&self) -> &FrameId {
        &self.anchor
    }

    pub fn current_service(&self) -> Option<&str> {
        self.current_service.as_deref()
    }

    pub fn candidates(&self) -> &[RegistryEntry] {
        &self.candidates
    }

    pub fn frame_graph(&self) -> &FrameGraph {
        &self.graph
    }

    pub fn reputation(&self, service_id: &str) -> Option<&ServiceReputation> {
        self.reputations.get(service_id)
    }

    pub fn is_blacklisted(&self, service_id: &str) -> bool {
        self.reputations.get(service_id).is_some_and(|r| r.blacklisted)
    }

    pub fn registry_queries(&self) -> u64 {
        self.registry_queries
    }

    pub fn requests_sent(&self) -> u64 {
        self.requests_sent
    }

    fn discover(&mut self, federation: &dyn Federation, gps: [f64; 2]) {
        self.registry_queries += 1;
        let query = RegistryQuery {
            gps,
            tld_whitelist: self.config.tld_whitelist.clone(),
            max_services: None,
        };
        let found = federation.discover(&query).unwrap_or_default();
        self.candidates = found
            .into_iter()
            .filter(|e| !self.is_blacklisted(&e.service_id))
            .take(self.config.max_broadcast)
            .collect();
        let keep: BTreeSet<&str> = self.current_service.iter().map(String::as_str).collect();
        self.tracks.retain(|id, _| keep.contains(id.as_str()));
        self.confidence_history.clear();
        self.current_service = None;
    }

    fn broadcast(
        &mut self,
        federation: &dyn Federation,
        input: &CycleInput,
    ) -> Vec<(RegistryEntry, Result<LocalizeResponse, TransportError>)> {
        let timeout = self.config.request_timeout();
        let requests: Vec<(RegistryEntry, LocalizeRequest)> = self
            .candidates
            .iter()
            .take(self.config.max_broadcast)
            .map(|e| {
                let req = LocalizeRequest {
                    query_id: format!("c{:06}-{}", self.cycle, e.service_id),
                    device_world_pose: input.query_pose,
                    timestamp: input.t,
                };
                (e.clone(), req)
            })
            .collect();
        self.requests_sent += requests.len() as u64;
        let mut results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = requests
                .iter()
                .map(|(entry, req)| scope.spawn(move || federation.localize(entry, req, timeout)))
                .collect();
            requests
                .iter()
                .zip(handles)
                .map(|((entry, _), h)| {
                    let r = h
                        .join()
                        .unwrap_or_else(|_| Err(TransportError::Io("worker panicked".into())));
                    (entry.clone(), r)
                })
                .collect()
        });
        results.sort_by(|a, b| a.0.service_id.cmp(&b.0.service_id));
        results
    }

    fn record_observation(&mut self, obs: StitchObservation) {
        let list = self.observations.entry(obs.service_frame.clone()).or_default();
        list.push(obs);
        if list.len() > OBSERVATION_HISTORY {
            list.remove(0);
        }
    }

    fn drop_candidate(&mut self, service_id: &str) {
        self.candidates.retain(|e| e.service_id != service_id);
        if self.current_service.as_deref() == Some(service_id) {
            self.current_service = None;
        }
    }

    /// Connects `frame` to the anchor, or refines its edge when a fresh
    /// estimate would carry more samples.
    fn stitch(&mut self, frame: &FrameId) -> Option<StitchUpdate> {
        let parent = self
            .frame_parent
            .get(frame)
            .cloned()
            .unwrap_or_else(|| self.anchor.clone());
        let prev = self.observations.get(&parent)?;
        let new_all = self.observations.get(frame)?;
        let window = self.config.selector.track_window.max(1);
        let new = &new_all[new_all.len().saturating_sub(window)..];
        let k = self.config.stitch_k;
        let candidate_count = prev.len().min(k) * new.len();
        if let Some(existing) = self.graph.edge(frame, &parent) {
            if candidate_count <= existing.sample_count {
                return None;
            }
        }
        let est = estimate_transform(prev, new, k).ok()?;
        if self.graph.update(&est) {
            self.frame_parent.insert(frame.clone(), parent);
            Some(StitchUpdate {
                from_frame: est.from_frame,
                to_frame: est.to_frame,
                sample_count: est.sample_count,
                transform: est.transform,
            })
        } else {
            None
        }
    }

    pub fn localization_cycle(&mut self, federation: &dyn Federation, input: &CycleInput) -> CycleOutcome {
        self.cycle += 1;
        let cfg = self.config.clone();

        // (1) discovery
        let discovery = self.current_service.is_none()
            || needs_rediscovery(
                &self.confidence_history,
                cfg.tau_confidence,
                cfg.rediscovery_window,
            );
        if discovery {
            self.discover(federation, input.gps);
        }

        // anchor observations: the device frame observed by itself
        self.record_observation(StitchObservation {
            device_pose: input.vio_pose,
            service_pose: input.vio_pose,
            service_frame: self.anchor.clone(),
            confidence: 1.0,
            timestamp: input.t,
        });

        // (2) broadcast
        let results = self.broadcast(federation, input);
        let requests_sent = results.len();

        // (3) collect
        let mut responses = Vec::new();
        let mut ok: BTreeMap<String, (FrameId, Pose, Option<f64>)> = BTreeMap::new();
        for (entry, result) in &results {
            let mut summary = ResponseSummary {
                service_id: entry.service_id.clone(),
                status: None,
                confidence: None,
                ate: None,
            };
            if let Ok(resp) = result {
                summary.status = Some(resp.status);
                summary.confidence = resp.confidence;
                match (resp.status, resp.pose) {
                    (Status::OutOfCoverage, _) => self.drop_candidate(&entry.service_id),
                    (Status::Ok, Some(pose)) if resp.frame == entry.frame => {
                        self.tracks
                            .entry(entry.service_id.clone())
                            .or_insert_with(|| CandidateTrack::new(entry.service_id.clone()))
                            .push(
                                TrackPair {
                                    timestamp: input.t,
                                    vio_pose: input.vio_pose,
                                    service_pose: pose,
                                    server_confidence: resp.confidence,
                                },
                                cfg.selector.track_window,
                            );
                        self.record_observation(StitchObservation {
                            device_pose: input.vio_pose,
                            service_pose: pose,
                            service_frame: entry.frame.clone(),
                            confidence: resp.confidence.unwrap_or(0.0),
                            timestamp: input.t,
                        });
                        ok.insert(entry.service_id.clone(), (entry.frame.clone(), pose, resp.confidence));
                    }
                    _ => {}
                }
            }
            responses.push(summary);
        }

        let started = Instant::now();

        // (4) rank responders with enough history
        let eligible: Vec<CandidateTrack> = ok
            .keys()
            .filter_map(|id| self.tracks.get(id))
            .filter(|t| t.len() >= MIN_PAIRS)
            .cloned()
            .collect();
        let ranking = rank_services(&eligible).unwrap_or_default();
        let ate_of: BTreeMap<&str, f64> = ranking
            .iter()
            .map(|r| (r.service_id.as_str(), r.ate_score))
            .collect();
        for summary in &mut responses {
            summary.ate = ate_of.get(summary.service_id.as_str()).copied();
        }

        // (5) reputations; a degenerate alignment says nothing about the service
        let mut newly_blacklisted = Vec::new();
        for entry in ranking.iter().filter(|r| r.ate_score.is_finite()) {
            let Some((_, _, Some(server_conf))) = ok.get(&entry.service_id) else {
                continue;
            };
            let score = device_score(entry.ate_score, cfg.selector.lambda_ate);
            let rep = self
                .reputations
                .entry(entry.service_id.clone())
                .or_insert_with(|| ServiceReputation::new(entry.service_id.clone()));
            let was = rep.blacklisted;
            *rep = update_reputation(rep, score, *server_conf, cfg.selector.delta, cfg.selector.streak_limit);
            if rep.blacklisted && !was {
                newly_blacklisted.push(entry.service_id.clone());
            }
        }
        for id in &newly_blacklisted {
            self.drop_candidate(id);
            self.tracks.remove(id);
            ok.remove(id);
        }

        // (6) selection
        let ranked_pick = ranking
            .iter()
            .find(|r| r.ate_score.is_finite() && ok.contains_key(&r.service_id))
            .map(|r| r.service_id.clone());
        let (selected, provisional) = match ranked_pick {
            Some(id) => (Some(id), false),
            None => {
                let best = ok
                    .iter()
                    .max_by(|a, b| {
                        let ca = a.1 .2.unwrap_or(-1.0);
                        let cb = b.1 .2.unwrap_or(-1.0);
                        ca.total_cmp(&cb).then_with(|| b.0.cmp(a.0))
                    })
                    .map(|(id, _)| id.clone());
                (best, true)
            }
        };
        if selected.is_some() {
            self.current_service = selected.clone();
        }

        let ate_selected = selected.as_ref().and_then(|id| ate_of.get(id.as_str()).copied());
        let confidence = selected.as_ref().and_then(|id| ok[id].2);
        if selected.is_some() {
            let signal = confidence.or_else(|| ate_selected.map(|a| device_score(a, cfg.selector.lambda_ate)));
            if let Some(c) = signal {
                self.confidence_history.push(c);
            }
        }

        // (7) stitching and output
        let mut stitch_updates = Vec::new();
        let mut fixed_pose = None;
        if let Some(id) = &selected {
            let (frame, pose, _) = ok[id].clone();
            if let Some(update) = self.stitch(&frame) {
                stitch_updates.push(update);
            }
            if let Ok(app) = to_frame(&pose, &frame, &self.anchor, &self.graph) {
                fixed_pose = Some(app);
            }
        }
        let compute_time = started.elapsed();

        let (pose, fix) = match fixed_pose {
            Some(app) => {
                self.last_fix = Some((app, input.vio_pose));
                (app, true)
            }
            None => {
                let extrapolated = match &self.last_fix {
                    Some((app, vio)) => compose(app, &compose(&inverse(vio), &input.vio_pose)),
                    None => input.vio_pose,
                };
                (extrapolated, false)
            }
        };

        CycleOutcome {
            cycle: self.cycle,
            t: input.t,
            discovery,
            requests_sent,
            selected_service: if fix { selected } else { None },
            provisional: fix && provisional,
            fix,
            pose,
            ate_selected: if fix { ate_selected } else { None },
            confidence: if fix { confidence } else { None },
            stitch_updates,
            responses,
            ranking,
            newly_blacklisted,
            compute_time,
        }
    }
}
