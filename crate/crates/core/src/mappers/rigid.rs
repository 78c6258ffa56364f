use std::f64::consts::PI;

use nalgebra::DVector;

use super::{ray_residual, FitOutcome, MapperError, MapperOptions};
use crate::geometry::{rotation_matrix, EulerAngles, Ray, Vec3, UNIT_TOLERANCE};
use crate::optimizer::{solve_lm, ParamKind, ResidualProblem};

const MIN_SAMPLES: usize = 3;

/// Eye and scene cameras face opposite directions: a half turn about the vertical axis.
pub const INITIAL_ANGLES: [f64; 3] = [0.0, PI, 0.0];

/// Eye-camera pupil normal to scene-frame gaze ray: `e + lambda * R n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model3Dto3D {
    pub angles: EulerAngles,
    pub eyeball_center: Vec3,
}

impl Model3Dto3D {
    pub fn predict(&self, pupil_pose: &Vec3) -> Result<Ray, MapperError> {
        Ok(Ray::new(
            self.eyeball_center,
            self.angles.to_matrix() * pupil_pose,
        )?)
    }
}

struct RigidProblem<'a> {
    poses: &'a [Vec3],
    targets: &'a [Vec3],
    normalize: bool,
}

impl ResidualProblem for RigidProblem<'_> {
    fn num_params(&self) -> usize {
        6
    }

    fn param_kind(&self, index: usize) -> ParamKind {
        if index < 3 {
            ParamKind::Angle
        } else {
            ParamKind::Free
        }
    }

    fn residuals(&self, params: &[f64]) -> DVector<f64> {
        let rotation = rotation_matrix([params[0], params[1], params[2]]);
        let eye = Vec3::new(params[3], params[4], params[5]);
        let mut out = DVector::zeros(3 * self.poses.len());
        for (i, (n, t)) in self.poses.iter().zip(self.targets).enumerate() {
            let r = ray_residual(&(rotation * n), t, &eye, self.normalize);
            out.fixed_rows_mut::<3>(3 * i).copy_from(&r);
        }
        out
    }
}

/// Fits rotation angles and eyeball center minimizing `sum |R n_i x (t_i - e)|^2`
/// over `(pupil_pose, target)` pairs, starting from `R = (0, pi, 0)` and `e = 0`.
pub fn fit_3d_to_3d(
    calibration: &[(Vec3, Vec3)],
    options: &MapperOptions,
) -> Result<FitOutcome<Model3Dto3D>, MapperError> {
    if calibration.len() < MIN_SAMPLES {
        return Err(MapperError::TooFewSamples {
            needed: MIN_SAMPLES,
            got: calibration.len(),
        });
    }
    let (poses, targets): (Vec<Vec3>, Vec<Vec3>) = calibration.iter().copied().unzip();
    for (index, n) in poses.iter().enumerate() {
        if (n.norm() - 1.0).abs() > 1e-6 {
            return Err(MapperError::NonUnitPose { index });
        }
    }
    let first = poses[0];
    if poses.iter().all(|n| first.cross(n).norm() < UNIT_TOLERANCE) {
        return Err(MapperError::DegenerateGeometry(
            "all pupil poses are parallel; rotation is unobservable".into(),
        ));
    }

    let problem = RigidProblem {
        poses: &poses,
        targets: &targets,
        normalize: options.normalize_residuals,
    };
    let mut initial = INITIAL_ANGLES.to_vec();
    initial.extend([0.0; 3]);
    let report = solve_lm(&problem, &initial, &options.lm)?;
    let p = &report.params;
    Ok(FitOutcome {
        model: Model3Dto3D {
            angles: EulerAngles::new([p[0], p[1], p[2]])?,
            eyeball_center: Vec3::new(p[3], p[4], p[5]),
        },
        report: Some(report),
    })
}
