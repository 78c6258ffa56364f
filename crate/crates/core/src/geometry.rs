//! Vector, rotation, ray and pinhole-camera primitives.
//!
//! All camera frames use x right, y down, z forward along the optical axis.
//! World quantities are meters, image quantities are pixels.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on the norm of vectors that are used as directions.
pub const UNIT_TOLERANCE: f64 = 1e-9;

const MIN_DEPTH: f64 = 1e-12;
const MIN_PLANE_COSINE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth {z} in the camera frame")]
    NonPositiveDepth { z: f64 },
    #[error("euler angle {index} = {value} lies outside [-pi, pi]")]
    AngleOutOfRange { index: usize, value: f64 },
    #[error("zero-length vector")]
    ZeroVector,
    #[error("ray is parallel to the depth plane")]
    ParallelToPlane,
    #[error("depth plane lies behind the ray origin (lambda = {lambda})")]
    BehindOrigin { lambda: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Half-line `origin + lambda * direction`, `lambda >= 0`, with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    origin: Vec3,
    direction: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self, GeometryError> {
        let norm = direction.norm();
        if norm.is_nan() || norm <= 0.0 || !norm.is_finite() {
            return Err(GeometryError::ZeroVector);
        }
        Ok(Self {
            origin,
            direction: direction / norm,
        })
    }

    /// Ray through two distinct points.
    pub fn through(origin: Vec3, point: Vec3) -> Result<Self, GeometryError> {
        Self::new(origin, point - origin)
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn direction(&self) -> Vec3 {
        self.direction
    }

    pub fn at(&self, lambda: f64) -> Vec3 {
        self.origin + self.direction * lambda
    }
}

/// Wraps an angle into `[-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if (-PI..=PI).contains(&angle) {
        return angle;
    }
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid maps odd multiples of pi to -pi; keep the sign of the input there.
    if wrapped == -PI && angle > 0.0 {
        PI
    } else {
        wrapped
    }
}

/// Three rotation angles in radians, each within `[-pi, pi]`.
///
/// The rotation is composed as intrinsic rotations about X, then Y, then Z,
/// i.e. `R = Rx(a0) * Ry(a1) * Rz(a2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles([f64; 3]);

impl EulerAngles {
    pub fn new(angles: [f64; 3]) -> Result<Self, GeometryError> {
        for (index, &value) in angles.iter().enumerate() {
            if !(-PI..=PI).contains(&value) {
                return Err(GeometryError::AngleOutOfRange { index, value });
            }
        }
        Ok(Self(angles))
    }

    /// Wraps each component into range instead of rejecting it.
    pub fn wrapped(angles: [f64; 3]) -> Self {
        Self(angles.map(wrap_angle))
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn to_matrix(&self) -> Mat3 {
        rotation_matrix(self.0)
    }

    /// Recovers angles from a proper rotation matrix.
    ///
    /// Angles are not unique; the returned triple reproduces the same rotation.
    pub fn from_matrix(m: &Mat3) -> Self {
        let sb = m[(0, 2)].clamp(-1.0, 1.0);
        let b = sb.asin();
        let cb = b.cos();
        let (a, c) = if cb.abs() > 1e-9 {
            ((-m[(1, 2)]).atan2(m[(2, 2)]), (-m[(0, 1)]).atan2(m[(0, 0)]))
        } else {
            // Gimbal lock: only a +/- c is observable, put it all on a.
            (m[(2, 1)].atan2(m[(1, 1)]), 0.0)
        };
        Self::wrapped([a, b, c])
    }
}

/// Rotation matrix `Rx(a0) * Ry(a1) * Rz(a2)` for raw angles of any range.
pub fn rotation_matrix(angles: [f64; 3]) -> Mat3 {
    let (sa, ca) = angles[0].sin_cos();
    let (sb, cb) = angles[1].sin_cos();
    let (sc, cc) = angles[2].sin_cos();
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Mat3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Mat3::new(cc, -sc, 0.0, sc, cc, 0.0, 0.0, 0.0, 1.0);
    rx * ry * rz
}

/// Validated form of [`rotation_matrix`].
pub fn rotation_from_angles(angles: [f64; 3]) -> Result<Mat3, GeometryError> {
    EulerAngles::new(angles).map(|a| a.to_matrix())
}

/// Rigid transform from a camera frame into the scene frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Camera-to-scene rotation.
    pub rotation: Mat3,
    /// Camera origin expressed in the scene frame.
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn point_to_scene(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn point_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn direction_to_scene(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }

    pub fn direction_to_camera(&self, d: &Vec3) -> Vec3 {
        self.rotation.transpose() * d
    }
}

/// Ideal pinhole camera with an optional pose relative to the scene frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub pose: Pose,
}

impl PinholeCamera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive, got ({fx}, {fy})"
            )));
        }
        if !(0.0..=f64::from(width)).contains(&cx) || !(0.0..=f64::from(height)).contains(&cy) {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            pose: Pose::identity(),
        })
    }

    /// Camera with equal focal lengths and the principal point at the image center.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(
            focal,
            focal,
            f64::from(width) / 2.0,
            f64::from(height) / 2.0,
            width,
            height,
        )
    }

    pub fn with_pose(mut self, pose: Pose) -> Self {
        self.pose = pose;
        self
    }

    pub fn principal_point(&self) -> Vec2 {
        Vec2::new(self.cx, self.cy)
    }

    /// Projects a point given in this camera's frame.
    pub fn project(&self, point: &Vec3) -> Result<Vec2, GeometryError> {
        if point.z <= MIN_DEPTH {
            return Err(GeometryError::NonPositiveDepth { z: point.z });
        }
        Ok(Vec2::new(
            self.cx + self.fx * point.x / point.z,
            self.cy + self.fy * point.y / point.z,
        ))
    }

    /// Projects a point given in the scene frame.
    pub fn project_scene(&self, point: &Vec3) -> Result<Vec2, GeometryError> {
        self.project(&self.pose.point_to_camera(point))
    }

    /// Ray from the camera origin through `pixel`, in the camera frame.
    pub fn back_project(&self, pixel: &Vec2) -> Ray {
        let direction = Vec3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        );
        Ray::new(Vec3::zeros(), direction).expect("z component is 1")
    }

    /// Ray through `pixel`, expressed in the scene frame.
    pub fn back_project_scene(&self, pixel: &Vec2) -> Ray {
        let local = self.back_project(pixel);
        Ray::new(
            self.pose.translation,
            self.pose.direction_to_scene(&local.direction()),
        )
        .expect("rotation preserves norm")
    }

    pub fn contains(&self, pixel: &Vec2) -> bool {
        (0.0..=f64::from(self.width)).contains(&pixel.x)
            && (0.0..=f64::from(self.height)).contains(&pixel.y)
    }
}

/// Distance from `point` to the infinite line carrying `ray`.
///
/// The direction is unit, so the usual division by its squared norm is dropped.
pub fn point_ray_distance(ray: &Ray, point: &Vec3) -> f64 {
    debug_assert!((ray.direction().norm() - 1.0).abs() <= UNIT_TOLERANCE);
    ray.direction().cross(&(point - ray.origin())).norm()
}

/// Angle between two vectors, in degrees.
pub fn angle_between(v1: &Vec3, v2: &Vec3) -> Result<f64, GeometryError> {
    let n1 = v1.norm();
    let n2 = v2.norm();
    if n1.is_nan() || n2.is_nan() || n1 <= 0.0 || n2 <= 0.0 {
        return Err(GeometryError::ZeroVector);
    }
    let cosine = (v1.dot(v2) / (n1 * n2)).clamp(-1.0, 1.0);
    Ok(cosine.acos().to_degrees())
}

/// Point on `ray` whose z coordinate equals `depth`.
pub fn intersect_ray_depth_plane(ray: &Ray, depth: f64) -> Result<Vec3, GeometryError> {
    let dz = ray.direction().z;
    if dz.abs() < MIN_PLANE_COSINE {
        return Err(GeometryError::ParallelToPlane);
    }
    let lambda = (depth - ray.origin().z) / dz;
    if lambda <= 0.0 {
        return Err(GeometryError::BehindOrigin { lambda });
    }
    Ok(ray.at(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn camera() -> PinholeCamera {
        PinholeCamera::new(700.0, 700.0, 640.0, 360.0, 1280, 720).unwrap()
    }

    #[test]
    fn project_examples() {
        let cam = camera();
        assert_eq!(
            cam.project(&Vec3::new(0.0, 0.0, 1.0)).unwrap(),
            Vec2::new(640.0, 360.0)
        );
        let px = cam.project(&Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px, Vec2::new(710.0, 360.0), epsilon = 1e-12);
        assert!(matches!(
            cam.project(&Vec3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn back_project_examples() {
        let cam = camera();
        let ray = cam.back_project(&Vec2::new(640.0, 360.0));
        assert_relative_eq!(ray.direction(), Vec3::z(), epsilon = 1e-15);
        let ray = cam.back_project(&Vec2::new(1340.0, 360.0));
        let expected = Vec3::new(1.0, 0.0, 1.0).normalize();
        assert_relative_eq!(ray.direction(), expected, epsilon = 1e-15);
    }

    #[test]
    fn invalid_cameras_rejected() {
        assert!(PinholeCamera::new(0.0, 1.0, 1.0, 1.0, 10, 10).is_err());
        assert!(PinholeCamera::new(1.0, 1.0, 11.0, 1.0, 10, 10).is_err());
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(rotation_from_angles([0.0; 3]).unwrap(), Mat3::identity());
        let r = rotation_from_angles([0.0, PI, 0.0]).unwrap();
        assert_relative_eq!(r * Vec3::z(), -Vec3::z(), epsilon = 1e-15);
        assert!(matches!(
            rotation_from_angles([0.0, 4.0, 0.0]),
            Err(GeometryError::AngleOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn point_ray_distance_example() {
        let ray = Ray::new(Vec3::zeros(), Vec3::z()).unwrap();
        assert_relative_eq!(point_ray_distance(&ray, &Vec3::new(1.0, 0.0, 5.0)), 1.0);
        assert_eq!(point_ray_distance(&ray, &Vec3::new(0.0, 0.0, 3.0)), 0.0);
    }

    #[test]
    fn angle_examples() {
        let v = Vec3::new(0.3, -0.2, 0.9);
        assert!(angle_between(&v, &v).unwrap() < 1e-6);
        assert_relative_eq!(angle_between(&Vec3::x(), &Vec3::y()).unwrap(), 90.0);
        assert_relative_eq!(
            angle_between(&Vec3::new(1.0, 0.0, 1.0), &Vec3::z()).unwrap(),
            45.0,
            epsilon = 1e-12
        );
        assert_eq!(
            angle_between(&Vec3::zeros(), &v),
            Err(GeometryError::ZeroVector)
        );
    }

    #[test]
    fn plane_intersection_examples() {
        let ray = Ray::new(Vec3::zeros(), Vec3::z()).unwrap();
        assert_relative_eq!(
            intersect_ray_depth_plane(&ray, 1.5).unwrap(),
            Vec3::new(0.0, 0.0, 1.5)
        );
        let ray = Ray::new(Vec3::new(0.01, 0.0, 0.0), Vec3::new(1.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(
            intersect_ray_depth_plane(&ray, 2.0).unwrap(),
            Vec3::new(2.01, 0.0, 2.0),
            epsilon = 1e-12
        );
        let ray = Ray::new(Vec3::zeros(), Vec3::x()).unwrap();
        assert_eq!(
            intersect_ray_depth_plane(&ray, 1.0),
            Err(GeometryError::ParallelToPlane)
        );
        let ray = Ray::new(Vec3::new(0.0, 0.0, 3.0), Vec3::z()).unwrap();
        assert!(matches!(
            intersect_ray_depth_plane(&ray, 1.0),
            Err(GeometryError::BehindOrigin { .. })
        ));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
    }

    /// Brute-force distance: scan lambda densely and take the minimum.
    fn scanned_distance(origin: Vec3, dir: Vec3, point: Vec3) -> f64 {
        let center = dir.dot(&(point - origin));
        let mut best = f64::INFINITY;
        // coarse window around the foot of the perpendicular, then 1e-4 steps
        let steps = 40_000;
        for i in 0..=steps {
            let lambda = center - 2.0 + 4.0 * f64::from(i) / f64::from(steps);
            best = best.min((origin + dir * lambda - point).norm());
        }
        best
    }

    #[test]
    fn point_ray_distance_matches_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let origin = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let dir = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let point = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let ray = Ray::new(origin, dir).unwrap();
            let oracle = scanned_distance(origin, dir, point);
            assert!((point_ray_distance(&ray, &point) - oracle).abs() < 1e-6);
        }
    }

    fn angle() -> impl Strategy<Value = f64> {
        -PI..=PI
    }

    proptest! {
        #[test]
        fn rotations_are_orthonormal(a in angle(), b in angle(), c in angle()) {
            let r = rotation_from_angles([a, b, c]).unwrap();
            let err = (r.transpose() * r - Mat3::identity()).amax();
            prop_assert!(err < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
            let v = Vec3::new(0.3, -1.2, 2.0);
            prop_assert!(((r * v).norm() - v.norm()).abs() < 1e-12);
        }

        #[test]
        fn angles_round_trip_preserve_rotation(a in angle(), b in angle(), c in angle()) {
            let original = EulerAngles::new([a, b, c]).unwrap();
            let recovered = EulerAngles::from_matrix(&original.to_matrix());
            let diff = (original.to_matrix() - recovered.to_matrix()).amax();
            prop_assert!(diff < 1e-9, "diff {}", diff);
            for v in recovered.as_array() {
                prop_assert!((-PI..=PI).contains(&v));
            }
        }

        #[test]
        fn project_back_project_identity(
            fx in 100.0..2000.0f64, fy in 100.0..2000.0f64,
            u in 0.0..1280.0f64, v in 0.0..720.0f64, depth in 0.1..10.0f64,
        ) {
            let cam = PinholeCamera::new(fx, fy, 600.0, 350.0, 1280, 720).unwrap();
            let ray = cam.back_project(&Vec2::new(u, v));
            let point = ray.at(depth);
            let px = cam.project(&point).unwrap();
            prop_assert!((px - Vec2::new(u, v)).norm() < 1e-9);
            // the ray passes through any forward point it was built from
            let back = cam.back_project(&px);
            prop_assert!(point_ray_distance(&back, &point) < 1e-9);
        }

        #[test]
        fn distance_invariant_along_ray(shift in -5.0..5.0f64, px in -1.0..1.0f64, py in -1.0..1.0f64) {
            let dir = Vec3::new(0.2, -0.4, 0.9);
            let ray = Ray::new(Vec3::new(0.1, 0.2, 0.0), dir).unwrap();
            let moved = Ray::new(ray.at(shift), dir).unwrap();
            let p = Vec3::new(px, py, 1.0);
            prop_assert!((point_ray_distance(&ray, &p) - point_ray_distance(&moved, &p)).abs() < 1e-12);
        }
    }
}
