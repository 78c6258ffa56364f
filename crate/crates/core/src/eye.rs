//! Two-sphere eye model and the head-mounted camera rig used to synthesize
//! calibration and test observations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_matrix, GeometryError, PinholeCamera, Pose, Ray, Vec2, Vec3};

const MM: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("eye spheres do not intersect (R={eyeball}, r={cornea}, d={separation} mm)")]
    NoIntersection {
        eyeball: f64,
        cornea: f64,
        separation: f64,
    },
    #[error("target coincides with the eyeball center")]
    DegenerateTarget,
    #[error("target is not visible in the scene camera")]
    TargetNotVisible,
    #[error("pupil is not visible in the eye camera")]
    PupilNotVisible,
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Eyeball sphere plus corneal sphere; all lengths in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoSphereEye {
    pub eyeball_radius_mm: f64,
    pub corneal_radius_mm: f64,
    /// Distance between the eyeball and corneal sphere centers.
    pub center_separation_mm: f64,
}

impl Default for TwoSphereEye {
    fn default() -> Self {
        Self {
            eyeball_radius_mm: 11.5,
            corneal_radius_mm: 7.8,
            center_separation_mm: 4.7,
        }
    }
}

/// Circle where the two eye spheres intersect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilGeometry {
    /// Eyeball center to circle center, along the optical axis (mm).
    pub offset_mm: f64,
    pub radius_mm: f64,
}

impl PupilGeometry {
    pub fn offset_m(&self) -> f64 {
        self.offset_mm * MM
    }
}

impl TwoSphereEye {
    pub fn pupil_geometry(&self) -> Result<PupilGeometry, SimError> {
        let (big, small, d) = (
            self.eyeball_radius_mm,
            self.corneal_radius_mm,
            self.center_separation_mm,
        );
        let intersects = (big - small).abs() < d && d < big + small;
        if !intersects || !(big > 0.0 && small > 0.0) {
            return Err(SimError::NoIntersection {
                eyeball: big,
                cornea: small,
                separation: d,
            });
        }
        let offset = (d * d + big * big - small * small) / (2.0 * d);
        let radius = (big * big - offset * offset).sqrt();
        Ok(PupilGeometry {
            offset_mm: offset,
            radius_mm: radius,
        })
    }
}

/// Standard deviations of the injected measurement noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseLevels {
    pub pupil_px: f64,
    pub pupil_pose_deg: f64,
    pub target_mm: f64,
}

impl NoiseLevels {
    pub fn is_zero(&self) -> bool {
        self.pupil_px == 0.0 && self.pupil_pose_deg == 0.0 && self.target_mm == 0.0
    }
}

/// Scene camera at the frame origin, an eye camera looking back at the eye,
/// and the ground-truth eyeball center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRig {
    pub scene_camera: PinholeCamera,
    pub eye_camera: PinholeCamera,
    pub eyeball_center: Vec3,
    pub noise: NoiseLevels,
}

impl Default for SimRig {
    fn default() -> Self {
        Self::build(
            Vec3::new(15.0, 35.0, -25.0) * MM,
            35.0 * MM,
            [0.0, std::f64::consts::PI, 0.0],
            NoiseLevels::default(),
        )
        .expect("default rig is valid")
    }
}

impl SimRig {
    /// Rig with the default intrinsics: scene 1280x720 at 720 px focal, eye 640x360 at 620 px.
    ///
    /// The eye camera sits `eye_camera_distance` in front of the eyeball center
    /// (towards the scene) and is rotated by `eye_camera_angles` relative to the
    /// scene camera.
    pub fn build(
        eyeball_center: Vec3,
        eye_camera_distance: f64,
        eye_camera_angles: [f64; 3],
        noise: NoiseLevels,
    ) -> Result<Self, SimError> {
        let scene = PinholeCamera::centered(720.0, 1280, 720)?;
        let eye = PinholeCamera::centered(620.0, 640, 360)?;
        Self::with_cameras(
            scene,
            eye,
            eyeball_center,
            eye_camera_distance,
            eye_camera_angles,
            noise,
        )
    }

    pub fn with_cameras(
        scene_camera: PinholeCamera,
        eye_camera: PinholeCamera,
        eyeball_center: Vec3,
        eye_camera_distance: f64,
        eye_camera_angles: [f64; 3],
        noise: NoiseLevels,
    ) -> Result<Self, SimError> {
        let pose = Pose::new(
            rotation_matrix(eye_camera_angles),
            eyeball_center + Vec3::z() * eye_camera_distance,
        );
        let rig = Self {
            scene_camera: scene_camera.with_pose(Pose::identity()),
            eye_camera: eye_camera.with_pose(pose),
            eyeball_center,
            noise,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let local = self.eye_camera.pose.point_to_camera(&self.eyeball_center);
        if local.z <= 0.0 {
            return Err(SimError::InvalidRig(
                "eyeball center is behind the eye camera".into(),
            ));
        }
        let n = self.noise;
        if [n.pupil_px, n.pupil_pose_deg, n.target_mm]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(SimError::InvalidRig("noise levels must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Calibration,
    Test,
}

/// Physical layout of a fronto-parallel target grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
    /// Extent between the outermost columns (m).
    pub width: f64,
    /// Extent between the outermost rows (m).
    pub height: f64,
}

impl GridShape {
    /// 5x5 calibration grid spanning a 22-inch 16:9 monitor (48.6 cm x 27.5 cm).
    pub fn calibration() -> Self {
        Self {
            rows: 5,
            cols: 5,
            width: 0.486,
            height: 0.275,
        }
    }

    /// 5x5 grid spanning the 121.5 cm x 68.7 cm wall display of the recording study.
    pub fn wall_display() -> Self {
        Self {
            width: 1.215,
            height: 0.687,
            ..Self::calibration()
        }
    }

    /// The 4x4 grid of cell centers inside the calibration grid.
    pub fn inner_of(outer: &GridShape) -> Self {
        let (rows, cols) = (outer.rows - 1, outer.cols - 1);
        Self {
            rows,
            cols,
            width: outer.width * (cols - 1) as f64 / cols as f64,
            height: outer.height * (rows - 1) as f64 / rows as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetGrid {
    pub depth: f64,
    pub shape: GridShape,
    pub role: Role,
}

impl TargetGrid {
    /// Row-major grid points on the plane `z = depth`, centered on the principal axis.
    pub fn points(&self) -> Result<Vec<Vec3>, SimError> {
        let GridShape {
            rows,
            cols,
            width,
            height,
        } = self.shape;
        if rows < 2 || cols < 2 {
            return Err(SimError::InvalidGrid(format!(
                "{rows}x{cols} grid is too small"
            )));
        }
        let non_negative = |v: f64| v >= 0.0;
        if self.depth.is_nan() || self.depth <= 0.0 || !non_negative(width) || !non_negative(height)
        {
            return Err(SimError::InvalidGrid(
                "depth must be positive and extents non-negative".into(),
            ));
        }
        let mut points = Vec::with_capacity(rows * cols);
        for row in 0..rows {
            let y = height * (row as f64 / (rows - 1) as f64 - 0.5);
            for col in 0..cols {
                let x = width * (col as f64 / (cols - 1) as f64 - 0.5);
                points.push(Vec3::new(x, y, self.depth));
            }
        }
        Ok(points)
    }
}

/// One synthesized observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSample {
    pub pupil_px: Vec2,
    /// Unit pupil normal in the eye-camera frame.
    pub pupil_pose: Vec3,
    /// Measured target position (scene frame, m).
    pub target: Vec3,
    pub target_px: Vec2,
    pub gaze: Ray,
    pub depth: f64,
}

pub fn gaze_toward(rig: &SimRig, target: &Vec3) -> Result<Ray, SimError> {
    Ray::through(rig.eyeball_center, *target).map_err(|_| SimError::DegenerateTarget)
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated non-negative")
}

/// Rotates `n` by a small random tilt with per-axis angular std `sigma_deg`.
fn perturb_direction(n: &Vec3, sigma_deg: f64, rng: &mut ChaCha8Rng) -> Vec3 {
    let helper = if n.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    let dist = gaussian(sigma_deg.to_radians());
    let (a, b) = (dist.sample(rng), dist.sample(rng));
    (n + e1 * a.tan() + e2 * b.tan()).normalize()
}

/// Synthesizes the observation of `target`, with noise drawn from a generator seeded by `seed`.
pub fn synthesize_sample(
    rig: &SimRig,
    eye: &TwoSphereEye,
    target: &Vec3,
    seed: u64,
) -> Result<SimSample, SimError> {
    let pupil = eye.pupil_geometry()?;
    let gaze = gaze_toward(rig, target)?;

    let target_px = rig
        .scene_camera
        .project_scene(target)
        .map_err(|_| SimError::TargetNotVisible)?;
    if !rig.scene_camera.contains(&target_px) {
        return Err(SimError::TargetNotVisible);
    }

    let pupil_center = gaze.at(pupil.offset_m());
    let pupil_px = rig
        .eye_camera
        .project_scene(&pupil_center)
        .map_err(|_| SimError::PupilNotVisible)?;
    if !rig.eye_camera.contains(&pupil_px) {
        return Err(SimError::PupilNotVisible);
    }
    let pupil_pose = rig.eye_camera.pose.direction_to_camera(&gaze.direction());

    let mut sample = SimSample {
        pupil_px,
        pupil_pose,
        target: *target,
        target_px,
        gaze,
        depth: target.z,
    };
    if rig.noise.is_zero() {
        return Ok(sample);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = rig.noise;
    if noise.pupil_px > 0.0 {
        let dist = gaussian(noise.pupil_px);
        sample.pupil_px += Vec2::new(dist.sample(&mut rng), dist.sample(&mut rng));
    }
    if noise.pupil_pose_deg > 0.0 {
        sample.pupil_pose = perturb_direction(&sample.pupil_pose, noise.pupil_pose_deg, &mut rng);
    }
    if noise.target_mm > 0.0 {
        let dist = gaussian(noise.target_mm * MM);
        sample.target += Vec3::from_fn(|_, _| dist.sample(&mut rng));
    }
    Ok(sample)
}

/// Calibration and test samples for a set of depths.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub calibration: Vec<SimSample>,
    pub test: Vec<SimSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLayout {
    pub calibration: GridShape,
    pub test: GridShape,
}

impl Default for GridLayout {
    fn default() -> Self {
        let calibration = GridShape::calibration();
        Self {
            calibration,
            test: GridShape::inner_of(&calibration),
        }
    }
}

/// Per-sample seed derived from the dataset seed and the sample's position.
pub fn derive_seed(seed: u64, depth_index: usize, role: Role, point_index: usize) -> u64 {
    let role_tag = match role {
        Role::Calibration => 0u64,
        Role::Test => 1u64,
    };
    let mut z = seed
        ^ (depth_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ role_tag.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (point_index as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn synthesize_dataset(
    rig: &SimRig,
    eye: &TwoSphereEye,
    depths: &[f64],
    layout: &GridLayout,
    seed: u64,
) -> Result<SimDataset, SimError> {
    if depths.is_empty() {
        return Err(SimError::InvalidGrid("no depths given".into()));
    }
    let mut dataset = SimDataset {
        calibration: Vec::new(),
        test: Vec::new(),
    };
    for (depth_index, &depth) in depths.iter().enumerate() {
        for (role, shape) in [
            (Role::Calibration, layout.calibration),
            (Role::Test, layout.test),
        ] {
            let grid = TargetGrid { depth, shape, role };
            let out = match role {
                Role::Calibration => &mut dataset.calibration,
                Role::Test => &mut dataset.test,
            };
            for (i, target) in grid.points()?.iter().enumerate() {
                let mut sample =
                    synthesize_sample(rig, eye, target, derive_seed(seed, depth_index, role, i))?;
                sample.depth = depth;
                out.push(sample);
            }
        }
    }
    Ok(dataset)
}
