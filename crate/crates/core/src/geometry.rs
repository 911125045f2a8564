//! Rigid-body pose algebra.
//!
//! Poses are SE(3) transforms using the column-vector convention: a pose maps
//! coordinates in its local frame into its parent frame, and `compose(a, b)`
//! is the matrix product `a * b` (so `b` is applied first). Rotations are
//! stored as unit quaternions with a non-negative scalar part.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Drift in the quaternion norm tolerated before renormalising.
const RENORM_TOLERANCE: f64 = 1e-12;
/// Accepted deviation from unit norm when a quaternion comes from outside.
const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("frame id must be non-empty")]
    EmptyFrameId,
}

/// A rotation in SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    q: UnitQuaternion<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
        }
    }

    fn from_unit(q: UnitQuaternion<f64>) -> Self {
        let raw = *q.quaternion();
        let raw = if raw.w < 0.0 { -raw } else { raw };
        Self {
            q: UnitQuaternion::new_unchecked(raw),
        }
    }

    /// Rotation of `angle` radians about `axis`. A zero axis yields identity.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let norm = axis.norm();
        if norm == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let axis = nalgebra::Unit::new_unchecked(axis / norm);
        Self::from_unit(UnitQuaternion::from_axis_angle(&axis, angle))
    }

    pub fn rx(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::x(), angle)
    }

    pub fn ry(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::y(), angle)
    }

    pub fn rz(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::z(), angle)
    }

    /// Builds a rotation from `[w, x, y, z]`. The quaternion must be unit
    /// length within 1e-9; its components are kept bit-for-bit (up to the
    /// sign flip that makes `w` non-negative).
    pub fn from_wxyz(wxyz: [f64; 4]) -> Result<Self, GeometryError> {
        if wxyz.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidRotation(
                "non-finite quaternion component".into(),
            ));
        }
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(GeometryError::InvalidRotation(format!(
                "quaternion norm {norm} is not 1"
            )));
        }
        Ok(Self::from_unit(UnitQuaternion::new_unchecked(q)))
    }

    /// Nearest rotation (Frobenius norm) to an arbitrary 3x3 matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidRotation("non-finite matrix".into()));
        }
        let r = project_to_so3(m)?;
        let rot = nalgebra::Rotation3::from_matrix_unchecked(r);
        Ok(Self::from_unit(UnitQuaternion::from_rotation_matrix(&rot)))
    }

    /// `[w, x, y, z]` with `w >= 0`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.q.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Self {
        Self::from_unit(self.q.inverse())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        let mut raw = self.q.quaternion() * other.q.quaternion();
        let norm = raw.norm();
        if (norm - 1.0).abs() > RENORM_TOLERANCE {
            raw /= norm;
        }
        Self::from_unit(UnitQuaternion::new_unchecked(raw))
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q.transform_vector(v)
    }

    /// Rotation angle of this rotation, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let q = self.q.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

/// Orthogonal projection onto SO(3) with determinant correction.
fn project_to_so3(m: &Matrix3<f64>) -> Result<Matrix3<f64>, GeometryError> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(GeometryError::InvalidRotation(
                "singular value decomposition failed".into(),
            ))
        }
    };
    let d = (u * v_t).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    Ok(u * correction * v_t)
}

/// A rigid SE(3) transform.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Rotation::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        inverse(self)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Parses a homogeneous matrix; the rotation block is projected onto SO(3).
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Pose, GeometryError> {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into();
        Ok(Pose::new(Rotation::from_matrix(&r)?, t))
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|c| c.is_finite())
            && self.rotation.wxyz().iter().all(|c| c.is_finite())
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.translation;
        let q = self.rotation.wxyz();
        write!(
            f,
            "Pose(t: [{:.4}, {:.4}, {:.4}], q: [{:.4}, {:.4}, {:.4}, {:.4}])",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    t: [f64; 3],
    q: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRepr {
            t: self.translation.into(),
            q: self.rotation.wxyz(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        if repr.t.iter().any(|c| !c.is_finite()) {
            return Err(serde::de::Error::custom("non-finite translation"));
        }
        let rotation = Rotation::from_wxyz(repr.q).map_err(serde::de::Error::custom)?;
        Ok(Pose::new(rotation, Vector3::from(repr.t)))
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: a.rotation.compose(&b.rotation),
        translation: a.rotation.rotate(&b.translation) + a.translation,
    }
}

pub fn inverse(p: &Pose) -> Pose {
    let r_inv = p.rotation.inverse();
    Pose {
        rotation: r_inv,
        translation: -r_inv.rotate(&p.translation),
    }
}

/// Angle of the relative rotation `r1^T r2`, in `[0, pi]`.
///
/// Evaluated as `2 atan2(|v|, |w|)` on the relative quaternion, which equals
/// `acos((trace(r1^T r2) - 1) / 2)` but keeps full precision near zero.
pub fn rotation_angle(r1: &Rotation, r2: &Rotation) -> f64 {
    r1.inverse().compose(r2).angle().clamp(0.0, std::f64::consts::PI)
}

/// The textbook trace form of [`rotation_angle`], argument clamped to [-1, 1].
pub fn rotation_angle_trace(r1: &Rotation, r2: &Rotation) -> f64 {
    let rel = r1.matrix().transpose() * r2.matrix();
    ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

pub fn translation_distance(p1: &Pose, p2: &Pose) -> f64 {
    (p1.translation - p2.translation).norm()
}

/// Arithmetic mean of translations and chordal mean of rotations.
pub fn chordal_mean(poses: &[Pose]) -> Result<Pose, GeometryError> {
    match poses {
        [] => Err(GeometryError::EmptyInput),
        [only] => Ok(*only),
        _ => {
            let n = poses.len() as f64;
            let translation = poses.iter().map(|p| p.translation).sum::<Vector3<f64>>() / n;
            let mean_r = poses.iter().map(|p| p.rotation.matrix()).sum::<Matrix3<f64>>() / n;
            Ok(Pose::new(Rotation::from_matrix(&mean_r)?, translation))
        }
    }
}

/// Pose noise: isotropic Gaussian translation, Gaussian-angle rotation about
/// a uniformly random axis, and occasional uniform outliers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseModel {
    /// Translation noise, meters (split evenly over the three axes).
    pub sigma_t: f64,
    /// Rotation-angle noise, radians.
    pub sigma_r: f64,
    #[serde(default)]
    pub p_outlier: f64,
    #[serde(default)]
    pub outlier_t_range: f64,
    #[serde(default)]
    pub outlier_r_range: f64,
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn gaussian(sigma_t: f64, sigma_r: f64) -> Self {
        Self {
            sigma_t,
            sigma_r,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [
            ("sigma_t", self.sigma_t),
            ("sigma_r", self.sigma_r),
            ("outlier_t_range", self.outlier_t_range),
            ("outlier_r_range", self.outlier_r_range),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GeometryError::InvalidNoise(format!("{name} must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_outlier) {
            return Err(GeometryError::InvalidNoise(
                "p_outlier must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// The offsets actually applied by [`perturb_detailed`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InjectedError {
    pub translation: f64,
    pub rotation: f64,
    pub outlier: bool,
}

fn random_axis<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

pub fn perturb<R: Rng + ?Sized>(p: &Pose, noise: &NoiseModel, rng: &mut R) -> Pose {
    perturb_detailed(p, noise, rng).0
}

/// Perturbs `p` in its parent frame and reports the injected magnitudes.
pub fn perturb_detailed<R: Rng + ?Sized>(
    p: &Pose,
    noise: &NoiseModel,
    rng: &mut R,
) -> (Pose, InjectedError) {
    let outlier = noise.p_outlier > 0.0 && rng.random::<f64>() < noise.p_outlier;
    let (offset, angle) = if outlier {
        let dir = random_axis(rng);
        let mag = noise.outlier_t_range * rng.random::<f64>();
        (dir * mag, noise.outlier_r_range * rng.random::<f64>())
    } else {
        let axis_sigma = noise.sigma_t / 3f64.sqrt();
        let offset = if axis_sigma > 0.0 {
            let mut draw = || -> f64 {
                let z: f64 = StandardNormal.sample(rng);
                axis_sigma * z
            };
            Vector3::new(draw(), draw(), draw())
        } else {
            Vector3::zeros()
        };
        let angle = if noise.sigma_r > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            (noise.sigma_r * z).abs()
        } else {
            0.0
        };
        (offset, angle)
    };
    let delta = if angle > 0.0 {
        Rotation::from_axis_angle(random_axis(rng), angle)
    } else {
        Rotation::identity()
    };
    let out = Pose::new(delta.compose(&p.rotation), p.translation + offset);
    let injected = InjectedError {
        translation: offset.norm(),
        rotation: angle,
        outlier,
    };
    (out, injected)
}

/// An opaque, non-empty coordinate frame name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FrameId(String);

impl FrameId {
    pub fn new(id: impl Into<String>) -> Result<Self, GeometryError> {
        let id = id.into();
        if id.is_empty() {
            Err(GeometryError::EmptyFrameId)
        } else {
            Ok(Self(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for FrameId {
    type Error = GeometryError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<FrameId> for String {
    fn from(f: FrameId) -> String {
        f.0
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_pose_eq(a: &Pose, b: &Pose, tol: f64) {
        assert!(
            translation_distance(a, b) < tol && rotation_angle(&a.rotation, &b.rotation) < tol,
            "{a} != {b}"
        );
    }

    #[test]
    fn compose_identity_and_translations() {
        let p = Pose::new(Rotation::rx(0.3), Vector3::new(1.0, -2.0, 0.5));
        assert_eq!(compose(&Pose::identity(), &p), p);
        let sum = compose(
            &Pose::from_translation(1.0, 0.0, 0.0),
            &Pose::from_translation(0.0, 2.0, 0.0),
        );
        assert_eq!(sum, Pose::from_translation(1.0, 2.0, 0.0));
    }

    #[test]
    fn compose_matches_homogeneous_matrix_product() {
        let a = Pose::from_rotation(Rotation::rz(FRAC_PI_2));
        let b = Pose::from_translation(1.0, 0.0, 0.0);
        // explicit 4x4 product, applied to the origin
        let ma = Matrix4::new(
            0.0, -1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let mb = Matrix4::new(
            1.0, 0.0, 0.0, 1.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let expected = ma * mb * nalgebra::Vector4::new(0.0, 0.0, 0.0, 1.0);
        let got = compose(&a, &b).transform_point(&Vector3::zeros());
        assert!((got - expected.xyz()).norm() < 1e-12);
        assert!((got - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert!((compose(&a, &b).to_matrix() - ma * mb).abs().max() < 1e-12);
    }

    #[test]
    fn inverse_examples() {
        assert_pose_eq(&inverse(&Pose::identity()), &Pose::identity(), 0.0 + 1e-15);
        assert_pose_eq(
            &inverse(&Pose::from_translation(1.0, 2.0, 3.0)),
            &Pose::from_translation(-1.0, -2.0, -3.0),
            1e-15,
        );
        let r = Pose::from_rotation(Rotation::rz(FRAC_PI_2));
        assert_pose_eq(&inverse(&r), &Pose::from_rotation(Rotation::rz(-FRAC_PI_2)), 1e-12);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn rotation_angle_examples() {
        let i = Rotation::identity();
        assert_eq!(rotation_angle(&i, &i), 0.0);
        assert!((rotation_angle(&i, &Rotation::rz(PI)) - PI).abs() < 1e-12);
        let a = rotation_angle(&Rotation::rz(30f64.to_radians()), &Rotation::rz(75f64.to_radians()));
        assert!((a - 0.785398).abs() < 1e-6);
        assert!((a - rotation_angle_trace(&Rotation::rz(0.5236), &Rotation::rz(1.309))).abs() < 1e-3);
    }

    #[test]
    fn trace_form_clamps() {
        let r = Rotation::rz(1e-9);
        let a = rotation_angle_trace(&r, &r);
        assert!(a.is_finite() && a >= 0.0);
        assert!((rotation_angle_trace(&Rotation::identity(), &Rotation::rz(PI)) - PI).abs() < 1e-7);
    }

    #[test]
    fn translation_distance_examples() {
        let o = Pose::identity();
        assert_eq!(translation_distance(&o, &o), 0.0);
        assert_eq!(translation_distance(&o, &Pose::from_translation(3.0, 4.0, 0.0)), 5.0);
        let d = translation_distance(
            &Pose::from_translation(1.0, 1.0, 1.0),
            &Pose::from_translation(2.0, 2.0, 2.0),
        );
        assert!((d - 1.732051).abs() < 1e-6);
    }

    #[test]
    fn chordal_mean_examples() {
        assert_eq!(chordal_mean(&[]), Err(GeometryError::EmptyInput));
        assert_eq!(GeometryError::EmptyInput.to_string(), "empty input");
        let p = Pose::new(Rotation::ry(0.4), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(chordal_mean(&[p]).unwrap(), p);
        assert_pose_eq(&chordal_mean(&[p, p]).unwrap(), &p, 1e-12);
        let a = Pose::new(Rotation::rz(20f64.to_radians()), Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::new(Rotation::rz(-20f64.to_radians()), Vector3::new(3.0, 0.0, 0.0));
        assert_pose_eq(&chordal_mean(&[a, b]).unwrap(), &Pose::from_translation(2.0, 0.0, 0.0), 1e-12);
    }

    #[test]
    fn perturb_zero_noise_is_identity() {
        let p = Pose::new(Rotation::rx(1.0), Vector3::new(4.0, 5.0, 6.0));
        let mut rng = stream(1, &["zero"]);
        assert_eq!(perturb(&p, &NoiseModel::zero(), &mut rng), p);
    }

    #[test]
    fn perturb_is_deterministic() {
        let p = Pose::identity();
        let noise = NoiseModel {
            sigma_t: 0.3,
            sigma_r: 0.1,
            p_outlier: 0.2,
            outlier_t_range: 2.0,
            outlier_r_range: 1.0,
        };
        let a = perturb(&p, &noise, &mut stream(7, &["x"]));
        let b = perturb(&p, &noise, &mut stream(7, &["x"]));
        assert_eq!(a, b);
    }

    #[test]
    fn perturb_translation_mean_in_range() {
        let noise = NoiseModel::gaussian(0.2, 0.0);
        let mut rng = stream(42, &[]);
        let p = Pose::identity();
        let n = 10_000;
        let mean = (0..n)
            .map(|_| translation_distance(&p, &perturb(&p, &noise, &mut rng)))
            .sum::<f64>()
            / n as f64;
        // per-axis sigma 0.2/sqrt(3); E|x| = sigma * 2 sqrt(2/pi) ~= 0.1843
        assert!((0.15..=0.22).contains(&mean), "mean {mean}");
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseModel::gaussian(-1.0, 0.0).validate().is_err());
        let bad = NoiseModel {
            p_outlier: 1.5,
            ..NoiseModel::zero()
        };
        assert!(bad.validate().is_err());
        assert!(NoiseModel::gaussian(0.1, 0.1).validate().is_ok());
    }

    #[test]
    fn quaternion_sign_convention() {
        let r = Rotation::from_wxyz([-1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.wxyz()[0], 1.0);
        assert!(Rotation::from_wxyz([2.0, 0.0, 0.0, 0.0]).is_err());
        let r = Rotation::rz(3.0).compose(&Rotation::rz(3.0));
        assert!(r.wxyz()[0] >= 0.0);
    }

    #[test]
    fn frame_id_rejects_empty() {
        assert!(FrameId::new("").is_err());
        assert_eq!(FrameId::new("V1").unwrap().as_str(), "V1");
    }

    #[test]
    fn pose_json_shape() {
        let p = Pose::from_translation(1.0, 2.0, 3.0);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"t":[1.0,2.0,3.0],"q":[1.0,0.0,0.0,0.0]}"#);
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
