use super::poly::{linear_cost, solve_weights, PupilNormalizer, Weights};
use super::MapperError;
use crate::geometry::{PinholeCamera, Ray, Vec2};

/// Pupil pixel to scene pixel polynomial regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Model2Dto2D {
    pub normalizer: PupilNormalizer,
    pub weights: Weights,
}

impl Model2Dto2D {
    /// Scene-image gaze position `f = q w`.
    pub fn predict(&self, pupil_px: &Vec2) -> Vec2 {
        self.weights.transpose() * self.normalizer.features(pupil_px)
    }

    /// Gaze ray back-projected from the scene-camera origin.
    pub fn predict_ray(&self, pupil_px: &Vec2, scene_camera: &PinholeCamera) -> Ray {
        scene_camera.back_project_scene(&self.predict(pupil_px))
    }

    /// Summed squared pixel residual over `(pupil, scene)` pairs.
    pub fn cost(&self, calibration: &[(Vec2, Vec2)]) -> f64 {
        let (features, targets) = split(&self.normalizer, calibration);
        linear_cost(&features, &targets, &self.weights)
    }
}

fn split(
    normalizer: &PupilNormalizer,
    calibration: &[(Vec2, Vec2)],
) -> (Vec<super::PolyFeature>, Vec<Vec2>) {
    calibration
        .iter()
        .map(|(p, s)| (normalizer.features(p), *s))
        .unzip()
}

/// Fits `w` minimizing `sum |s_i - q(p_i) w|^2` over `(pupil_px, scene_px)` pairs.
pub fn fit_2d_to_2d(
    calibration: &[(Vec2, Vec2)],
    normalizer: PupilNormalizer,
) -> Result<Model2Dto2D, MapperError> {
    let (features, targets) = split(&normalizer, calibration);
    let weights = solve_weights(&features, &targets)?;
    Ok(Model2Dto2D {
        normalizer,
        weights,
    })
}
