//! Closed-form geometry: disparity/point conversion, Rodrigues rotations and
//! the constant-velocity deformation model that links a rolling-shutter
//! observation of a point to its static position.
//!
//! A rigid scene under constant motion `(ω, v)` is observed at time `t` at
//! `T_t(Ps) = R(t ω) Ps + t v`, where `Ps` is its position at `t = 0`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::LFIntrinsics;

pub type Point3 = Vector3<f64>;
pub type Rotation3 = Matrix3<f64>;

/// Constant angular (rad per frame) and linear (scene units per frame) velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub omega: Vector3<f64>,
    pub vel: Vector3<f64>,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self::zero()
    }
}

impl MotionParams {
    pub fn new(omega: [f64; 3], vel: [f64; 3]) -> Self {
        Self {
            omega: Vector3::from(omega),
            vel: Vector3::from(vel),
        }
    }

    pub fn zero() -> Self {
        Self {
            omega: Vector3::zeros(),
            vel: Vector3::zeros(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.omega == Vector3::zeros() && self.vel == Vector3::zeros()
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.vel.iter()).all(|x| x.is_finite())
    }

    /// `[ωx, ωy, ωz, vx, vy, vz]`.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.vel.x,
            self.vel.y,
            self.vel.z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new([a[0], a[1], a[2]], [a[3], a[4], a[5]])
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            omega: self.omega * s,
            vel: self.vel * s,
        }
    }

    /// Non-fatal sanity checks; returns human-readable warnings.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.omega.norm() >= std::f64::consts::PI {
            out.push(format!(
                "angular speed {:.3} rad per readout leaves the small-rotation regime",
                self.omega.norm()
            ));
        }
        out
    }

    /// Position at time `t` of a point whose static position is `ps`.
    pub fn at_time(&self, ps: &Point3, t: f64) -> Point3 {
        rodrigues(&(self.omega * t)) * ps + self.vel * t
    }
}

/// Normalized disparity at pixel `(u, v)` to a 3D point in the central camera frame.
pub fn disparity_to_point(u: f64, v: f64, d: f64, intr: &LFIntrinsics) -> Result<Point3> {
    let beta = intr.beta();
    let denom = d * intr.focal_plane * intr.w + beta;
    if !(denom > 0.0) {
        return Err(Error::BehindCamera { disparity: d });
    }
    let z = beta * intr.focal_plane / denom;
    Ok(Point3::new(
        z * (u - intr.u0) / intr.f,
        z * (v - intr.v0) / intr.f,
        z,
    ))
}

/// Inverse of [`disparity_to_point`]: pixel position and normalized disparity.
pub fn point_to_disparity(p: &Point3, intr: &LFIntrinsics) -> Result<(f64, f64, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::PointBehindCamera { z: p.z });
    }
    Ok(project_unchecked(p, intr))
}

#[inline]
pub(crate) fn project_unchecked(p: &Point3, intr: &LFIntrinsics) -> (f64, f64, f64) {
    let inv_z = 1.0 / p.z;
    let u = intr.u0 + intr.f * p.x * inv_z;
    let v = intr.v0 + intr.f * p.y * inv_z;
    let d = intr.beta() / intr.w * (inv_z - 1.0 / intr.focal_plane);
    (u, v, d)
}

/// Depth of a normalized disparity, `None` when it maps behind the camera.
pub fn disparity_to_depth(d: f64, intr: &LFIntrinsics) -> Option<f64> {
    let beta = intr.beta();
    let denom = d * intr.focal_plane * intr.w + beta;
    (denom > 0.0).then(|| beta * intr.focal_plane / denom)
}

#[inline]
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

const SMALL_ANGLE: f64 = 1e-12;

/// Rotation matrix of an axis-angle vector.
pub fn rodrigues(axis_angle: &Vector3<f64>) -> Rotation3 {
    let theta2 = axis_angle.norm_squared();
    let k = skew(axis_angle);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return Matrix3::identity() + k + k * k * 0.5;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3).
fn left_jacobian(theta_v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = theta_v.norm_squared();
    let k = skew(theta_v);
    let (a, b) = if theta2 < 1e-8 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

/// `∂(R(θ) y) / ∂θ` as a 3×3 matrix.
pub fn rotate_jacobian(theta: &Vector3<f64>, y: &Vector3<f64>) -> Matrix3<f64> {
    let ry = rodrigues(theta) * y;
    -skew(&ry) * left_jacobian(theta)
}

/// Static position of a point observed at time `tau`: the inverse of
/// [`reimage_at`], `Ps = R(-τω) (P - τ v)`.
pub fn deform_to_static(p: &Point3, tau: f64, m: &MotionParams) -> Point3 {
    rodrigues(&(-m.omega * tau)) * (p - m.vel * tau)
}

/// Position of a static point when imaged at time `tau_lambda`:
/// `Pλ = R(τλ ω) Ps + τλ v`.
pub fn reimage_at(ps: &Point3, tau_lambda: f64, m: &MotionParams) -> Point3 {
    rodrigues(&(m.omega * tau_lambda)) * ps + m.vel * tau_lambda
}

/// Affine map `P ↦ M P + t` equal to `reimage_at(deform_to_static(P, τ), τλ)`.
#[derive(Debug, Clone, Copy)]
pub struct RelativeTransform {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl RelativeTransform {
    pub fn new(tau: f64, tau_lambda: f64, m: &MotionParams) -> Self {
        let ra = rodrigues(&(m.omega * tau_lambda));
        let rb = rodrigues(&(-m.omega * tau));
        let rot = ra * rb;
        let trans = -(rot * m.vel) * tau + m.vel * tau_lambda;
        Self { rot, trans }
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rot * p + self.trans
    }
}

/// Jacobians of `Pλ` with respect to `ω` and `v` for a point `P` observed at
/// `tau` and re-imaged at `tau_lambda`.
pub fn motion_jacobians(
    p: &Point3,
    tau: f64,
    tau_lambda: f64,
    m: &MotionParams,
) -> (Matrix3<f64>, Matrix3<f64>) {
    let a = m.omega * tau_lambda;
    let b = -m.omega * tau;
    let ra = rodrigues(&a);
    let rb = rodrigues(&b);
    let q = p - m.vel * tau;
    let y = rb * q;
    // ∂/∂ω [R(a) R(b) q] with a = τλ ω, b = -τ ω.
    let d_omega = rotate_jacobian(&a, &y) * tau_lambda - ra * rotate_jacobian(&b, &q) * tau;
    let d_vel = -(ra * rb) * tau + Matrix3::identity() * tau_lambda;
    (d_omega, d_vel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> LFIntrinsics {
        LFIntrinsics::desk(128, 128)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(
            rng.gen_range(-s..s),
            rng.gen_range(-s..s),
            rng.gen_range(-s..s),
        )
    }

    #[test]
    fn focal_plane_depth() {
        let intr = intr();
        let p = disparity_to_point(10.0, 20.0, 0.0, &intr).unwrap();
        assert_eq!(p.z, intr.focal_plane);
        let c = disparity_to_point(intr.u0, intr.v0, 0.7, &intr).unwrap();
        assert_eq!((c.x, c.y), (0.0, 0.0));
    }

    #[test]
    fn behind_camera() {
        let intr = intr();
        let d_bad = -intr.beta() / (intr.focal_plane * intr.w) - 0.1;
        match disparity_to_point(0.0, 0.0, d_bad, &intr) {
            Err(Error::BehindCamera { disparity }) => assert_eq!(disparity, d_bad),
            other => panic!("unexpected {other:?}"),
        }
        assert!(point_to_disparity(&Point3::new(0.0, 0.0, -1.0), &intr).is_err());
        assert!(point_to_disparity(&Point3::new(0.0, 0.0, 0.0), &intr).is_err());
    }

    #[test]
    fn inverse_at_focal_plane_and_far_sign() {
        let intr = intr();
        let (u, v, d) = point_to_disparity(&Point3::new(0.0, 0.0, intr.focal_plane), &intr).unwrap();
        assert_eq!((u, v, d), (intr.u0, intr.v0, 0.0));
        let (_, _, far) = point_to_disparity(&Point3::new(0.1, 0.0, 2.0), &intr).unwrap();
        assert!(far < 0.0);
    }

    #[test]
    fn disparity_round_trip() {
        let intr = intr();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let u = rng.gen_range(-50.0..180.0);
            let v = rng.gen_range(-50.0..180.0);
            let d = rng.gen_range(-2.0..3.0);
            let p = disparity_to_point(u, v, d, &intr).unwrap();
            let (u2, v2, d2) = point_to_disparity(&p, &intr).unwrap();
            assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9 && (d - d2).abs() < 1e-9);
        }
    }

    #[test]
    fn rodrigues_basics() {
        assert_eq!(rodrigues(&Vector3::zeros()), Matrix3::identity());
        let r = rodrigues(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let y = r * Vector3::new(1.0, 0.0, 0.0);
        assert!((y - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rodrigues_is_a_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..500 {
            let scale = [1e-13, 1e-6, 0.1, 1.0, 3.0][i % 5];
            let r = rodrigues(&rand_vec(&mut rng, scale));
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-10);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rodrigues_first_order_near_zero() {
        let e = Vector3::new(0.3, -0.5, 0.8).normalize();
        for eps in [1e-3, 1e-4, 1e-5] {
            let err = (rodrigues(&(e * eps)) - (Matrix3::identity() + skew(&(e * eps)))).norm();
            assert!(err <= eps * eps, "eps {eps}: {err}");
        }
    }

    #[test]
    fn rotate_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..50 {
            let scale = if i % 3 == 0 { 1e-7 } else { 1.5 };
            let theta = rand_vec(&mut rng, scale);
            let y = rand_vec(&mut rng, 2.0);
            let jac = rotate_jacobian(&theta, &y);
            let h = 1e-6;
            for k in 0..3 {
                let mut tp = theta;
                let mut tm = theta;
                tp[k] += h;
                tm[k] -= h;
                let fd = (rodrigues(&tp) * y - rodrigues(&tm) * y) / (2.0 * h);
                assert!((fd - jac.column(k)).norm() < 1e-7, "{fd} vs {}", jac.column(k));
            }
        }
    }

    #[test]
    fn deform_examples() {
        let p = Point3::new(0.2, -0.1, 1.3);
        assert_eq!(deform_to_static(&p, 0.4, &MotionParams::zero()), p);
        let m = MotionParams::new([0.1, 0.2, 0.3], [0.5, -0.5, 0.1]);
        assert_eq!(deform_to_static(&p, 0.0, &m), p);
        let tr = MotionParams::new([0.0; 3], [1.0, 0.0, 0.0]);
        let ps = deform_to_static(&Point3::new(0.0, 0.0, 2.0), 0.5, &tr);
        assert_eq!(ps, Point3::new(-0.5, 0.0, 2.0));
        assert_eq!(reimage_at(&p, 0.0, &m), p);
        assert_eq!(reimage_at(&p, 0.3, &MotionParams::zero()), p);
    }

    #[test]
    fn reimage_inverts_deform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let p = rand_vec(&mut rng, 2.0) + Vector3::new(0.0, 0.0, 3.0);
            let tau = rng.gen_range(-0.5..0.5);
            let m = MotionParams {
                omega: rand_vec(&mut rng, 1.0),
                vel: rand_vec(&mut rng, 1.0),
            };
            let back = reimage_at(&deform_to_static(&p, tau, &m), tau, &m);
            assert!((back - p).norm() < 1e-10);
        }
    }

    #[test]
    fn single_axis_group_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let axis = Vector3::new(0.0, 0.0, 1.0);
            let m = MotionParams {
                omega: axis * rng.gen_range(-1.0..1.0),
                vel: rand_vec(&mut rng, 0.5),
            };
            let p = rand_vec(&mut rng, 1.0);
            let (tau, tau2) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let lhs = reimage_at(&deform_to_static(&p, tau, &m), tau2, &m);
            let rhs = rodrigues(&(m.omega * (tau2 - tau))) * (p - m.vel * tau) + m.vel * tau2;
            assert!((lhs - rhs).norm() < 1e-12);
            let rel = RelativeTransform::new(tau, tau2, &m);
            assert!((rel.apply(&p) - lhs).norm() < 1e-12);
        }
    }

    #[test]
    fn motion_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let p = rand_vec(&mut rng, 1.0) + Vector3::new(0.0, 0.0, 2.0);
            let m = MotionParams {
                omega: rand_vec(&mut rng, 0.8),
                vel: rand_vec(&mut rng, 0.8),
            };
            let (tau, tl) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let (jw, jv) = motion_jacobians(&p, tau, tl, &m);
            let f = |m: &MotionParams| RelativeTransform::new(tau, tl, m).apply(&p);
            let h = 1e-6;
            for k in 0..6 {
                let mut a = m.to_array();
                let mut b = m.to_array();
                a[k] += h;
                b[k] -= h;
                let fd = (f(&MotionParams::from_array(a)) - f(&MotionParams::from_array(b))) / (2.0 * h);
                let col = if k < 3 { jw.column(k) } else { jv.column(k - 3) };
                assert!((fd - col).norm() < 1e-7);
            }
        }
    }
}
