use nalgebra::DVector;

use super::poly::{solve_weights, PolyFeature, PupilNormalizer, Weights, FEATURE_LEN};
use super::{ray_residual, FitOutcome, MapperError, MapperOptions};
use crate::geometry::{Ray, Vec2, Vec3};
use crate::optimizer::{solve_lm, ResidualProblem};

const MIN_SAMPLES: usize = 9;
const NUM_PARAMS: usize = 2 * FEATURE_LEN + 3;

/// Unit direction `(sin t, cos t sin p, cos t cos p)` for angles `(t, p)`.
pub fn polar_to_direction(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(st, ct * sp, ct * cp)
}

/// Inverse of [`polar_to_direction`] for any nonzero vector.
pub fn direction_to_polar(v: &Vec3) -> (f64, f64) {
    let d = v.normalize();
    (d.x.clamp(-1.0, 1.0).asin(), d.y.atan2(d.z))
}

/// Pupil pixel to polar gaze angles, with rays starting at a fitted eyeball center.
#[derive(Debug, Clone, PartialEq)]
pub struct Model2Dto3D {
    pub normalizer: PupilNormalizer,
    /// Columns map features to `theta` and `phi`.
    pub weights: Weights,
    pub eyeball_center: Vec3,
}

impl Model2Dto3D {
    pub fn angles(&self, pupil_px: &Vec2) -> (f64, f64) {
        let a = self.weights.transpose() * self.normalizer.features(pupil_px);
        (a.x, a.y)
    }

    pub fn predict(&self, pupil_px: &Vec2) -> Ray {
        let (theta, phi) = self.angles(pupil_px);
        Ray::new(self.eyeball_center, polar_to_direction(theta, phi)).expect("unit by construction")
    }

    fn to_params(&self) -> Vec<f64> {
        let mut params: Vec<f64> = (0..FEATURE_LEN)
            .flat_map(|i| [self.weights[(i, 0)], self.weights[(i, 1)]])
            .collect();
        params.extend(self.eyeball_center.iter());
        params
    }

    fn from_params(normalizer: PupilNormalizer, params: &[f64]) -> Self {
        Self {
            normalizer,
            weights: Weights::from_fn(|i, j| params[2 * i + j]),
            eyeball_center: Vec3::new(
                params[2 * FEATURE_LEN],
                params[2 * FEATURE_LEN + 1],
                params[2 * FEATURE_LEN + 2],
            ),
        }
    }
}

struct PolarProblem<'a> {
    features: &'a [PolyFeature],
    targets: &'a [Vec3],
    normalize: bool,
    /// Eyeball center held fixed instead of being optimized.
    pinned_center: Option<Vec3>,
}

impl ResidualProblem for PolarProblem<'_> {
    fn num_params(&self) -> usize {
        if self.pinned_center.is_some() {
            2 * FEATURE_LEN
        } else {
            NUM_PARAMS
        }
    }

    fn residuals(&self, params: &[f64]) -> DVector<f64> {
        let weights = Weights::from_fn(|i, j| params[2 * i + j]);
        let eye = self
            .pinned_center
            .unwrap_or_else(|| Vec3::new(params[14], params[15], params[16]));
        let mut out = DVector::zeros(3 * self.features.len());
        for (i, (q, t)) in self.features.iter().zip(self.targets).enumerate() {
            let a = weights.transpose() * q;
            let r = ray_residual(&polar_to_direction(a.x, a.y), t, &eye, self.normalize);
            out.fixed_rows_mut::<3>(3 * i).copy_from(&r);
        }
        out
    }
}

/// All targets along one ray from the initial eyeball center leave the eyeball center unobservable.
fn check_geometry(targets: &[Vec3]) -> Result<(), MapperError> {
    let first = targets[0];
    if targets.iter().any(|t| t.norm() < 1e-12) {
        return Err(MapperError::DegenerateGeometry(
            "target at the initial eyeball center".into(),
        ));
    }
    let axis = first.normalize();
    if targets
        .iter()
        .all(|t| axis.cross(&t.normalize()).norm() < 1e-9)
    {
        return Err(MapperError::DegenerateGeometry(
            "all targets are collinear with the initial eyeball center".into(),
        ));
    }
    Ok(())
}

/// True when all targets share one depth plane (within 1 mm), which leaves
/// the eyeball center unobservable to first order.
fn is_single_plane(targets: &[Vec3]) -> bool {
    let (lo, hi) = targets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
            (lo.min(t.z), hi.max(t.z))
        });
    hi - lo < 1e-3
}

/// Fits `(w, e)` minimizing `sum |g(q_i w) x (t_i - e)|^2` over `(pupil_px, target)` pairs.
///
/// Starts from `e = 0` and weights regressed onto the polar angles of the targets.
pub fn fit_2d_to_3d(
    calibration: &[(Vec2, Vec3)],
    normalizer: PupilNormalizer,
    options: &MapperOptions,
) -> Result<FitOutcome<Model2Dto3D>, MapperError> {
    if calibration.len() < MIN_SAMPLES {
        return Err(MapperError::TooFewSamples {
            needed: MIN_SAMPLES,
            got: calibration.len(),
        });
    }
    let (features, targets): (Vec<PolyFeature>, Vec<Vec3>) = calibration
        .iter()
        .map(|(p, t)| (normalizer.features(p), *t))
        .unzip();
    check_geometry(&targets)?;

    let angles: Vec<Vec2> = targets
        .iter()
        .map(|t| {
            let (theta, phi) = direction_to_polar(t);
            Vec2::new(theta, phi)
        })
        .collect();
    let initial = Model2Dto3D {
        normalizer,
        weights: solve_weights(&features, &angles)?,
        eyeball_center: Vec3::zeros(),
    };

    let pinned_center = (options.pin_center_when_coplanar && is_single_plane(&targets))
        .then_some(initial.eyeball_center);
    let problem = PolarProblem {
        features: &features,
        targets: &targets,
        normalize: options.normalize_residuals,
        pinned_center,
    };
    let mut start = initial.to_params();
    start.truncate(problem.num_params());
    let mut report = solve_lm(&problem, &start, &options.lm)?;
    if let Some(center) = pinned_center {
        report.params.extend(center.iter());
    }
    Ok(FitOutcome {
        model: Model2Dto3D::from_params(normalizer, &report.params),
        report: Some(report),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::point_ray_distance;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn polar_examples() {
        assert_eq!(polar_to_direction(0.0, 0.0), Vec3::z());
        let d = polar_to_direction(FRAC_PI_2, 1.234);
        assert!((d - Vec3::x()).norm() < 1e-15);
        let d = polar_to_direction(0.0, FRAC_PI_2);
        assert!((d - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn polar_round_trip() {
        for (theta, phi) in [(0.1, -0.2), (-0.5, 0.3), (0.0, 2.0)] {
            let (t, p) = direction_to_polar(&(polar_to_direction(theta, phi) * 3.0));
            assert!((t - theta).abs() < 1e-12 && (p - phi).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_only_model_gives_constant_ray() {
        let model = Model2Dto3D {
            normalizer: PupilNormalizer::new(640, 360),
            weights: Weights::zeros(),
            eyeball_center: Vec3::new(0.01, 0.02, -0.03),
        };
        for p in [Vec2::new(10.0, 10.0), Vec2::new(600.0, 300.0)] {
            let ray = model.predict(&p);
            assert_eq!(ray.origin(), model.eyeball_center);
            assert_eq!(ray.direction(), Vec3::z());
        }
    }

    /// Pupil pixels that are an exact polynomial image of the gaze angles from `eye`.
    fn exact_data(eye: Vec3) -> (Vec<(Vec2, Vec3)>, Model2Dto3D) {
        let normalizer = PupilNormalizer::new(640, 360);
        let mut weights = Weights::zeros();
        weights[(1, 0)] = 0.5;
        weights[(2, 1)] = 0.3;
        let truth = Model2Dto3D {
            normalizer,
            weights,
            eyeball_center: eye,
        };
        let mut data = Vec::new();
        for depth in [1.0, 1.5, 2.0] {
            for i in 0..5 {
                for j in 0..5 {
                    let p = Vec2::new(120.0 + 100.0 * f64::from(i), 80.0 + 50.0 * f64::from(j));
                    let ray = truth.predict(&p);
                    let lambda = (depth - eye.z) / ray.direction().z;
                    data.push((p, ray.at(lambda)));
                }
            }
        }
        (data, truth)
    }

    #[test]
    fn exact_fit_passes_through_targets() {
        let (data, truth) = exact_data(Vec3::new(0.015, 0.035, -0.025));
        let fit = fit_2d_to_3d(&data, truth.normalizer, &MapperOptions::default()).unwrap();
        let report = fit.report.unwrap();
        assert!(report.cost <= report.initial_cost);
        assert!(report.is_monotone());
        for (p, t) in &data {
            assert!(point_ray_distance(&fit.model.predict(p), t) < 1e-5);
        }
        assert!((fit.model.eyeball_center - truth.eyeball_center).norm() < 1e-4);
    }

    #[test]
    fn predictions_are_unit() {
        let (data, truth) = exact_data(Vec3::zeros());
        let fit = fit_2d_to_3d(&data, truth.normalizer, &MapperOptions::default()).unwrap();
        for (p, _) in &data {
            let ray = fit.model.predict(&(p * 1.1));
            assert!((ray.direction().norm() - 1.0).abs() < 1e-12);
            assert!(ray.origin().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn collinear_targets_are_degenerate() {
        let data: Vec<_> = (0..12)
            .map(|i| {
                let k = f64::from(i);
                (
                    Vec2::new(10.0 * k, 5.0 * k * k),
                    Vec3::new(0.1, 0.2, 1.0) * (1.0 + k),
                )
            })
            .collect();
        assert!(matches!(
            fit_2d_to_3d(
                &data,
                PupilNormalizer::new(640, 360),
                &MapperOptions::default()
            ),
            Err(MapperError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn too_few_samples() {
        let data = vec![(Vec2::zeros(), Vec3::z()); 8];
        assert_eq!(
            fit_2d_to_3d(
                &data,
                PupilNormalizer::new(640, 360),
                &MapperOptions::default()
            ),
            Err(MapperError::TooFewSamples { needed: 9, got: 8 })
        );
    }
}
