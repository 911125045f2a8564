//! Server-independent service selection.
//!
//! Each candidate's pose trajectory is rigidly aligned to the device's own
//! tracking trajectory; the candidate with the lowest ATE wins. Services
//! whose self-reported confidence keeps disagreeing with the ATE-derived
//! score are blacklisted.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::trajectory::{ate_points, TrajectoryError};

/// Minimum number of paired poses before a track can be ranked.
pub const MIN_PAIRS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectorError {
    #[error("insufficient observations for track {0}")]
    InsufficientObservations(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    /// Confidence discrepancy that counts toward the streak.
    pub delta: f64,
    pub streak_limit: u32,
    /// Scale of the ATE-to-score map, meters.
    pub lambda_ate: f64,
    /// Sliding window of pairs kept per candidate.
    pub track_window: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            delta: 0.3,
            streak_limit: 3,
            lambda_ate: 0.5,
            track_window: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackPair {
    pub timestamp: f64,
    /// Camera pose from device tracking.
    pub vio_pose: Pose,
    /// Camera pose reported by the service, in its own frame.
    pub service_pose: Pose,
    pub server_confidence: Option<f64>,
}

/// Paired device/service poses for one candidate service.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateTrack {
    pub service_id: String,
    pub pairs: VecDeque<TrackPair>,
}

impl CandidateTrack {
    pub fn new(service_id: impl Into<String>) -> Self {
        Self {
            service_id: service_id.into(),
            pairs: VecDeque::new(),
        }
    }

    /// Appends a pair, dropping the oldest beyond `window` (0 keeps all).
    pub fn push(&mut self, pair: TrackPair, window: usize) {
        self.pairs.push_back(pair);
        if window > 0 {
            while self.pairs.len() > window {
                self.pairs.pop_front();
            }
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// ATE of the service trajectory against device tracking; +inf when the
    /// alignment is degenerate.
    pub fn ate_score(&self) -> Result<f64, SelectorError> {
        if self.pairs.len() < MIN_PAIRS {
            return Err(SelectorError::InsufficientObservations(self.service_id.clone()));
        }
        let vio: Vec<_> = self.pairs.iter().map(|p| p.vio_pose.translation).collect();
        let svc: Vec<_> = self.pairs.iter().map(|p| p.service_pose.translation).collect();
        match ate_points(&vio, &svc) {
            Ok(score) => Ok(score),
            Err(TrajectoryError::InsufficientCorrespondences) => {
                Err(SelectorError::InsufficientObservations(self.service_id.clone()))
            }
            Err(_) => Ok(f64::INFINITY),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankEntry {
    pub service_id: String,
    pub ate_score: f64,
    pub rank: usize,
}

/// Ranks candidates by ascending ATE; ties go to the smaller service id and
/// degenerate tracks sort last with an infinite score.
pub fn rank_services(tracks: &[CandidateTrack]) -> Result<Vec<RankEntry>, SelectorError> {
    let mut scored = tracks
        .iter()
        .map(|t| Ok((t.service_id.clone(), t.ate_score()?)))
        .collect::<Result<Vec<_>, SelectorError>>()?;
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (service_id, ate_score))| RankEntry {
            service_id,
            ate_score,
            rank: i + 1,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ServiceReputation {
    pub service_id: String,
    pub discrepancy_streak: u32,
    pub blacklisted: bool,
}

impl ServiceReputation {
    pub fn new(service_id: impl Into<String>) -> Self {
        Self {
            service_id: service_id.into(),
            ..Self::default()
        }
    }
}

/// Maps an ATE (meters) to a score in `[0, 1]`.
pub fn device_score(ate: f64, lambda_ate: f64) -> f64 {
    if ate.is_finite() {
        (-ate / lambda_ate).exp().clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn update_reputation(
    rep: &ServiceReputation,
    device_score: f64,
    server_confidence: f64,
    delta: f64,
    streak_limit: u32,
) -> ServiceReputation {
    let discrepant = (device_score - server_confidence).abs() > delta;
    let streak = if discrepant { rep.discrepancy_streak + 1 } else { 0 };
    ServiceReputation {
        service_id: rep.service_id.clone(),
        discrepancy_streak: streak,
        blacklisted: rep.blacklisted || streak >= streak_limit,
    }
}

/// True iff the last `window` confidences are all below `tau`.
pub fn needs_rediscovery(confidence_history: &[f64], tau: f64, window: usize) -> bool {
    let window = window.max(1);
    confidence_history.len() >= window
        && confidence_history[confidence_history.len() - window..]
            .iter()
            .all(|&c| c < tau)
}
