//! Stitching service coordinate frames without shared visual features.
//!
//! A service frame `V` and the device tracking frame `D` observe the same
//! camera instant as `C_V` and `C_D`. Two such observations taken in frames
//! `V1` and `V2` give the transform between the frame origins as
//! `C_V1 * C_D^-1 * C'_D * C'_V2^-1`, which maps `V2` coordinates into `V1`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::geometry::{chordal_mean, compose, inverse, FrameId, GeometryError, Pose};

/// Default number of prior-frame observations kept when estimating a transform.
pub const DEFAULT_STITCH_K: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StitchError {
    #[error("degenerate pair")]
    DegeneratePair,
    #[error("no observations")]
    NoObservations,
    #[error("observations span more than one frame")]
    MixedFrames,
    #[error("frames not connected")]
    FramesNotConnected,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// The same camera instant seen by device tracking and by one service.
#[derive(Clone, Debug, PartialEq)]
pub struct StitchObservation {
    /// Camera pose in the device frame.
    pub device_pose: Pose,
    /// Camera pose in the service frame.
    pub service_pose: Pose,
    pub service_frame: FrameId,
    pub confidence: f64,
    pub timestamp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformEstimate {
    pub from_frame: FrameId,
    pub to_frame: FrameId,
    /// Maps coordinates expressed in `from_frame` into `to_frame`.
    pub transform: Pose,
    pub sample_count: usize,
}

impl TransformEstimate {
    pub fn inverse(&self) -> TransformEstimate {
        TransformEstimate {
            from_frame: self.to_frame.clone(),
            to_frame: self.from_frame.clone(),
            transform: inverse(&self.transform),
            sample_count: self.sample_count,
        }
    }
}

/// Transform from `obs2`'s frame into `obs1`'s frame from a single pair.
pub fn pairwise_transform(
    obs1: &StitchObservation,
    obs2: &StitchObservation,
) -> Result<TransformEstimate, StitchError> {
    if obs1.service_frame == obs2.service_frame {
        return Err(StitchError::DegeneratePair);
    }
    Ok(TransformEstimate {
        from_frame: obs2.service_frame.clone(),
        to_frame: obs1.service_frame.clone(),
        transform: pair_product(obs1, obs2),
        sample_count: 1,
    })
}

fn pair_product(obs1: &StitchObservation, obs2: &StitchObservation) -> Pose {
    compose(
        &obs1.service_pose,
        &compose(
            &inverse(&obs1.device_pose),
            &compose(&obs2.device_pose, &inverse(&obs2.service_pose)),
        ),
    )
}

fn common_frame(obs: &[StitchObservation]) -> Result<&FrameId, StitchError> {
    let first = obs.first().ok_or(StitchError::NoObservations)?;
    if obs.iter().any(|o| o.service_frame != first.service_frame) {
        return Err(StitchError::MixedFrames);
    }
    Ok(&first.service_frame)
}

/// The `k` best observations: highest confidence first, ties by most recent.
pub fn best_observations(obs: &[StitchObservation], k: usize) -> Vec<&StitchObservation> {
    let mut sorted: Vec<&StitchObservation> = obs.iter().collect();
    sorted.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(b.timestamp.total_cmp(&a.timestamp))
    });
    sorted.truncate(k.max(1));
    sorted
}

/// Averages the cross product of the `k` best prior-frame observations with
/// every new-frame observation into one transform from the new frame into
/// the prior frame.
pub fn estimate_transform(
    prev_obs: &[StitchObservation],
    new_obs: &[StitchObservation],
    k: usize,
) -> Result<TransformEstimate, StitchError> {
    let prev_frame = common_frame(prev_obs)?;
    let new_frame = common_frame(new_obs)?;
    if prev_frame == new_frame {
        return Err(StitchError::DegeneratePair);
    }
    let best = best_observations(prev_obs, k);
    let samples: Vec<Pose> = best
        .iter()
        .flat_map(|p| new_obs.iter().map(move |n| pair_product(p, n)))
        .collect();
    Ok(TransformEstimate {
        from_frame: new_frame.clone(),
        to_frame: prev_frame.clone(),
        transform: chordal_mean(&samples)?,
        sample_count: samples.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
struct Edge {
    transform: Pose,
    sample_count: usize,
}

/// Directed transform estimates between frames, stored in inverse pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameGraph {
    edges: BTreeMap<(FrameId, FrameId), Edge>,
    revision: u64,
}

impl FrameGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edge(&self, from: &FrameId, to: &FrameId) -> Option<TransformEstimate> {
        self.edges
            .get(&(from.clone(), to.clone()))
            .map(|e| TransformEstimate {
                from_frame: from.clone(),
                to_frame: to.clone(),
                transform: e.transform,
                sample_count: e.sample_count,
            })
    }

    /// Number of accepted updates so far.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn contains_frame(&self, frame: &FrameId) -> bool {
        self.edges.keys().any(|(a, _)| a == frame)
    }

    /// Inserts `est` unless an existing edge carries more samples. Returns
    /// whether the graph changed.
    pub fn update(&mut self, est: &TransformEstimate) -> bool {
        if est.from_frame == est.to_frame {
            return false;
        }
        let key = (est.from_frame.clone(), est.to_frame.clone());
        if let Some(existing) = self.edges.get(&key) {
            if existing.sample_count > est.sample_count {
                return false;
            }
        }
        self.revision += 1;
        let inv = est.inverse();
        self.edges.insert(
            key,
            Edge {
                transform: est.transform,
                sample_count: est.sample_count,
            },
        );
        self.edges.insert(
            (inv.from_frame, inv.to_frame),
            Edge {
                transform: inv.transform,
                sample_count: inv.sample_count,
            },
        );
        true
    }

    fn neighbours<'a>(&'a self, frame: &'a FrameId) -> impl Iterator<Item = &'a FrameId> + 'a {
        self.edges
            .keys()
            .filter(move |(a, _)| a == frame)
            .map(|(_, b)| b)
    }

    /// Fewest-edge path from `from` to `to`; ties go to the lexicographically
    /// smallest frame sequence.
    pub fn path(&self, from: &FrameId, to: &FrameId) -> Option<Vec<FrameId>> {
        if from == to {
            return Some(vec![from.clone()]);
        }
        let mut parent: BTreeMap<&FrameId, &FrameId> = BTreeMap::new();
        let mut seen: BTreeSet<&FrameId> = BTreeSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(node) = queue.pop_front() {
            // BTreeMap iteration yields neighbours in sorted order
            for next in self.neighbours(node) {
                if seen.insert(next) {
                    parent.insert(next, node);
                    if next == to {
                        let mut path = vec![to.clone()];
                        let mut cur = to;
                        while let Some(p) = parent.get(cur) {
                            path.push((*p).clone());
                            cur = p;
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(next);
                }
            }
        }
        None
    }

    /// Transform mapping `from` coordinates into `to` coordinates.
    pub fn transform_between(&self, from: &FrameId, to: &FrameId) -> Result<Pose, StitchError> {
        let path = self.path(from, to).ok_or(StitchError::FramesNotConnected)?;
        let mut total = Pose::identity();
        for hop in path.windows(2) {
            let edge = &self.edges[&(hop[0].clone(), hop[1].clone())];
            total = compose(&edge.transform, &total);
        }
        Ok(total)
    }
}

pub fn update_graph(mut graph: FrameGraph, est: &TransformEstimate) -> FrameGraph {
    graph.update(est);
    graph
}

/// Re-expresses `p` (given in `from`) in frame `to`.
pub fn to_frame(p: &Pose, from: &FrameId, to: &FrameId, graph: &FrameGraph) -> Result<Pose, StitchError> {
    Ok(compose(&graph.transform_between(from, to)?, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_angle, translation_distance, Rotation};
    use nalgebra::Vector3;
    use std::f64::consts::FRAC_PI_2;

    fn fid(s: &str) -> FrameId {
        FrameId::new(s).unwrap()
    }

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        translation_distance(a, b) < tol && rotation_angle(&a.rotation, &b.rotation) < tol
    }

    fn obs(frame: &str, device: Pose, service: Pose, confidence: f64, t: f64) -> StitchObservation {
        StitchObservation {
            device_pose: device,
            service_pose: service,
            service_frame: fid(frame),
            confidence,
            timestamp: t,
        }
    }

    #[test]
    fn identity_observations_give_identity() {
        let i = Pose::identity();
        let est = pairwise_transform(&obs("V1", i, i, 1.0, 0.0), &obs("V2", i, i, 1.0, 1.0)).unwrap();
        assert!(close(&est.transform, &i, 1e-15));
        assert_eq!(est.from_frame, fid("V2"));
        assert_eq!(est.to_frame, fid("V1"));
        assert_eq!(est.sample_count, 1);
    }

    #[test]
    fn same_frame_is_degenerate() {
        let i = Pose::identity();
        let err = pairwise_transform(&obs("V1", i, i, 1.0, 0.0), &obs("V1", i, i, 1.0, 1.0));
        assert_eq!(err.unwrap_err().to_string(), "degenerate pair");
        assert_eq!(
            estimate_transform(&[], &[obs("V1", i, i, 1.0, 0.0)], 5).unwrap_err(),
            StitchError::NoObservations
        );
    }

    #[test]
    fn recovers_known_frames() {
        let v1_w = Pose::from_translation(5.0, 0.0, 0.0);
        let v2_w = Pose::from_rotation(Rotation::rz(FRAC_PI_2));
        let d_w = Pose::new(Rotation::rx(0.2), Vector3::new(-1.0, 3.0, 0.5));
        let c1 = Pose::new(Rotation::ry(0.3), Vector3::new(1.0, 1.0, 1.5));
        let c2 = Pose::new(Rotation::rz(-0.8), Vector3::new(7.0, -2.0, 1.5));
        let o1 = obs("V1", compose(&d_w, &c1), compose(&v1_w, &c1), 0.9, 0.0);
        let o2 = obs("V2", compose(&d_w, &c2), compose(&v2_w, &c2), 0.9, 1.0);
        let expected = compose(
            &Pose::from_translation(5.0, 0.0, 0.0),
            &Pose::from_rotation(Rotation::rz(-FRAC_PI_2)),
        );
        assert!(close(&pairwise_transform(&o1, &o2).unwrap().transform, &expected, 1e-12));
        let est = estimate_transform(std::slice::from_ref(&o1), std::slice::from_ref(&o2), 5).unwrap();
        assert!(close(&est.transform, &expected, 1e-12));
        let dup = vec![o1.clone(); 5];
        let est5 = estimate_transform(&dup, &[o2], 5).unwrap();
        assert_eq!(est5.sample_count, 5);
        assert!(close(&est5.transform, &est.transform, 1e-12));
    }

    #[test]
    fn best_observations_prefers_confidence_then_recency() {
        let i = Pose::identity();
        let all = vec![
            obs("V1", i, i, 0.5, 0.0),
            obs("V1", i, i, 0.9, 1.0),
            obs("V1", i, i, 0.5, 2.0),
            obs("V1", i, i, 0.1, 3.0),
        ];
        let best: Vec<f64> = best_observations(&all, 2).iter().map(|o| o.timestamp).collect();
        assert_eq!(best, vec![1.0, 2.0]);
    }

    #[test]
    fn graph_insert_replace_and_inverse() {
        let a = fid("A");
        let b = fid("B");
        let t = Pose::new(Rotation::rz(0.4), Vector3::new(1.0, 2.0, 0.0));
        let est = TransformEstimate { from_frame: a.clone(), to_frame: b.clone(), transform: t, sample_count: 1 };
        let g = update_graph(FrameGraph::new(), &est);
        assert_eq!(g.edge_count(), 2);
        let back = g.edge(&b, &a).unwrap();
        assert!(close(&back.transform, &inverse(&t), 1e-15));

        let better = TransformEstimate { sample_count: 5, transform: Pose::identity(), ..est.clone() };
        let g = update_graph(g, &better);
        assert_eq!(g.edge(&a, &b).unwrap().sample_count, 5);
        let mut g2 = g.clone();
        assert!(!g2.update(&est));
        assert_eq!(g2.edge(&a, &b).unwrap().sample_count, 5);
    }

    #[test]
    fn to_frame_chains_and_round_trips() {
        let (a, b, c) = (fid("A"), fid("B"), fid("C"));
        let ab = Pose::new(Rotation::rx(0.3), Vector3::new(1.0, 0.0, 0.0));
        let bc = Pose::new(Rotation::rz(-1.1), Vector3::new(0.0, 2.0, -1.0));
        let mut g = FrameGraph::new();
        g.update(&TransformEstimate { from_frame: a.clone(), to_frame: b.clone(), transform: ab, sample_count: 1 });
        g.update(&TransformEstimate { from_frame: b.clone(), to_frame: c.clone(), transform: bc, sample_count: 1 });
        let p = Pose::new(Rotation::ry(0.5), Vector3::new(3.0, 4.0, 5.0));
        assert_eq!(to_frame(&p, &a, &a, &g).unwrap(), p);
        // explicit product oracle
        let expected = Pose::from_matrix(&(bc.to_matrix() * ab.to_matrix() * p.to_matrix())).unwrap();
        let got = to_frame(&p, &a, &c, &g).unwrap();
        assert!(close(&got, &expected, 1e-12));
        let back = to_frame(&got, &c, &a, &g).unwrap();
        assert!(close(&back, &p, 1e-9));
        assert_eq!(
            to_frame(&p, &a, &fid("Z"), &g).unwrap_err().to_string(),
            "frames not connected"
        );
    }

    #[test]
    fn path_prefers_lexicographic_ties() {
        let mut g = FrameGraph::new();
        let edge = |f: &str, t: &str| TransformEstimate {
            from_frame: fid(f),
            to_frame: fid(t),
            transform: Pose::identity(),
            sample_count: 1,
        };
        for (f, t) in [("S", "Y"), ("Y", "T"), ("S", "X"), ("X", "T")] {
            g.update(&edge(f, t));
        }
        assert_eq!(g.path(&fid("S"), &fid("T")).unwrap(), vec![fid("S"), fid("X"), fid("T")]);
    }
}
