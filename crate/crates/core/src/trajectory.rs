//! Trajectory alignment and error metrics (ATE, RPE).

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{compose, inverse, FrameId, Pose, Rotation};
use crate::stats::rmse;

/// Relative singular-value ratio under which the cross-covariance is treated
/// as rank deficient.
const DEGENERACY_RATIO: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("insufficient correspondences")]
    InsufficientCorrespondences,
    #[error("degenerate trajectory")]
    DegenerateTrajectory,
    #[error("insufficient samples")]
    InsufficientSamples,
    #[error("trajectory lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("timestamps do not match at index {0}")]
    TimestampMismatch(usize),
    #[error("timestamps must be finite and strictly increasing (index {0})")]
    NonMonotonic(usize),
    #[error("all samples must share one frame")]
    MixedFrames,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose,
    pub frame: FrameId,
}

/// Time-ordered poses in a single frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    samples: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(samples: Vec<TimedPose>) -> Result<Self, TrajectoryError> {
        for (i, s) in samples.iter().enumerate() {
            if !s.t.is_finite() || (i > 0 && s.t <= samples[i - 1].t) {
                return Err(TrajectoryError::NonMonotonic(i));
            }
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|s| s.frame != first.frame) {
                return Err(TrajectoryError::MixedFrames);
            }
        }
        Ok(Self { samples })
    }

    /// Convenience constructor from `(t, pose)` pairs.
    pub fn from_poses(
        frame: &FrameId,
        poses: impl IntoIterator<Item = (f64, Pose)>,
    ) -> Result<Self, TrajectoryError> {
        Self::new(
            poses
                .into_iter()
                .map(|(t, pose)| TimedPose {
                    t,
                    pose,
                    frame: frame.clone(),
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[TimedPose] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.samples.iter().map(|s| s.pose.translation).collect()
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.samples.iter().map(|s| &s.pose)
    }

    /// Applies `transform` to every pose (re-expression in another frame).
    pub fn transformed(&self, transform: &Pose, frame: FrameId) -> Trajectory {
        Trajectory {
            samples: self
                .samples
                .iter()
                .map(|s| TimedPose {
                    t: s.t,
                    pose: compose(transform, &s.pose),
                    frame: frame.clone(),
                })
                .collect(),
        }
    }
}

fn check_matched(reference: &Trajectory, est: &Trajectory) -> Result<(), TrajectoryError> {
    if reference.len() != est.len() {
        return Err(TrajectoryError::LengthMismatch(reference.len(), est.len()));
    }
    for (i, (a, b)) in reference.samples.iter().zip(&est.samples).enumerate() {
        if (a.t - b.t).abs() > 1e-9 {
            return Err(TrajectoryError::TimestampMismatch(i));
        }
    }
    Ok(())
}

/// Rigid transform `T` minimising `sum |ref_i - T est_i|^2` (no scale).
pub fn align_points(
    reference: &[Vector3<f64>],
    est: &[Vector3<f64>],
) -> Result<Pose, TrajectoryError> {
    if reference.len() != est.len() {
        return Err(TrajectoryError::LengthMismatch(reference.len(), est.len()));
    }
    if reference.len() < 3 {
        return Err(TrajectoryError::InsufficientCorrespondences);
    }
    let n = reference.len() as f64;
    let mu_ref = reference.iter().sum::<Vector3<f64>>() / n;
    let mu_est = est.iter().sum::<Vector3<f64>>() / n;

    let mut h = Matrix3::zeros();
    for (r, e) in reference.iter().zip(est) {
        h += (e - mu_est) * (r - mu_ref).transpose();
    }

    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(TrajectoryError::DegenerateTrajectory),
    };
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let (largest, middle, smallest) = (s[order[0]], s[order[1]], order[2]);
    if !(largest > 0.0) || middle <= DEGENERACY_RATIO * largest {
        return Err(TrajectoryError::DegenerateTrajectory);
    }

    let v = v_t.transpose();
    let mut correction = Matrix3::identity();
    correction[(smallest, smallest)] = (v * u.transpose()).determinant().signum();
    let r = v * correction * u.transpose();
    let rotation =
        Rotation::from_matrix(&r).map_err(|_| TrajectoryError::DegenerateTrajectory)?;
    let translation = mu_ref - rotation.rotate(&mu_est);
    Ok(Pose::new(rotation, translation))
}

/// Transform that best maps `est` onto `reference`.
pub fn align_rigid(reference: &Trajectory, est: &Trajectory) -> Result<Pose, TrajectoryError> {
    check_matched(reference, est)?;
    align_points(&reference.positions(), &est.positions())
}

/// Position RMSE after applying `transform` to `est`.
pub fn residual_rmse(reference: &[Vector3<f64>], est: &[Vector3<f64>], transform: &Pose) -> f64 {
    rmse(
        reference
            .iter()
            .zip(est)
            .map(|(r, e)| (r - transform.transform_point(e)).norm_squared()),
    )
}

/// ATE over raw position lists; see [`ate`].
pub fn ate_points(reference: &[Vector3<f64>], est: &[Vector3<f64>]) -> Result<f64, TrajectoryError> {
    let t = align_points(reference, est)?;
    Ok(residual_rmse(reference, est, &t))
}

/// Absolute trajectory error: position RMSE after rigid alignment.
pub fn ate(reference: &Trajectory, est: &Trajectory) -> Result<f64, TrajectoryError> {
    check_matched(reference, est)?;
    ate_points(&reference.positions(), &est.positions())
}

/// Relative pose error over `delta` steps, as `(translation RMSE, rotation RMSE)`.
pub fn rpe(reference: &Trajectory, est: &Trajectory, delta: usize) -> Result<(f64, f64), TrajectoryError> {
    check_matched(reference, est)?;
    if delta == 0 || reference.len() < delta + 1 {
        return Err(TrajectoryError::InsufficientSamples);
    }
    let r = &reference.samples;
    let e = &est.samples;
    let errors: Vec<Pose> = (0..r.len() - delta)
        .map(|i| {
            let ref_rel = compose(&inverse(&r[i].pose), &r[i + delta].pose);
            let est_rel = compose(&inverse(&e[i].pose), &e[i + delta].pose);
            compose(&inverse(&ref_rel), &est_rel)
        })
        .collect();
    let t = rmse(errors.iter().map(|p| p.translation.norm_squared()));
    let a = rmse(errors.iter().map(|p| p.rotation.angle().powi(2)));
    Ok((t, a))
}
