//! Calibration and prediction for the three eye-to-scene mappings:
//!
//! - 2D-to-2D: polynomial regression from pupil pixels to scene-image pixels,
//!   back-projected from the scene-camera origin.
//! - 2D-to-3D: polynomial regression from pupil pixels to polar gaze angles,
//!   jointly fitted with the eyeball center.
//! - 3D-to-3D: rotation of eye-camera pupil normals into the scene frame plus
//!   the eyeball center.
//!
//! The two 3D mappings minimize the summed squared point-to-ray distance
//! `|g x (t - e)|^2` with Levenberg-Marquardt.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, PinholeCamera, Ray, Vec2, Vec3};
use crate::optimizer::{FitReport, LmSettings, OptimError};

mod planar;
mod polar;
pub mod poly;
mod rigid;

pub use planar::{fit_2d_to_2d, Model2Dto2D};
pub use polar::{direction_to_polar, fit_2d_to_3d, polar_to_direction, Model2Dto3D};
pub use poly::{poly_features, PolyFeature, PupilNormalizer, Weights};
pub use rigid::{fit_3d_to_3d, Model3Dto3D};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapperError {
    #[error("polynomial feature matrix is rank deficient (rank {rank} < 7)")]
    RankDeficient { rank: usize },
    #[error("need at least {needed} calibration samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate calibration geometry: {0}")]
    DegenerateGeometry(String),
    #[error("pupil pose {index} is not a unit vector")]
    NonUnitPose { index: usize },
    #[error("sample has no pupil pose")]
    MissingPupilPose,
    #[error(transparent)]
    Optimizer(#[from] OptimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Settings shared by the two nonlinear fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapperOptions {
    /// Normalize `t - e` inside the cross product so every residual is the
    /// sine of the angle between ray and target direction.
    pub normalize_residuals: bool,
    /// 2D-to-3D only: keep the eyeball center at its initial value when all
    /// calibration targets lie on one depth plane.
    pub pin_center_when_coplanar: bool,
    pub lm: LmSettings,
}

impl Default for MapperOptions {
    fn default() -> Self {
        Self {
            normalize_residuals: true,
            pin_center_when_coplanar: true,
            lm: LmSettings::default(),
        }
    }
}

/// Cross-product residual between a unit gaze direction and the eye-to-target offset.
pub(crate) fn ray_residual(direction: &Vec3, target: &Vec3, eye: &Vec3, normalize: bool) -> Vec3 {
    let mut offset = target - eye;
    if normalize {
        let norm = offset.norm();
        if norm > 1e-12 {
            offset /= norm;
        }
    }
    direction.cross(&offset)
}

/// Output of a fitted mapper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GazeEstimate {
    /// Gaze position in the scene image.
    ScenePoint(Vec2),
    /// Gaze ray in the scene-camera frame.
    Ray(Ray),
}

impl GazeEstimate {
    /// Scene-frame ray; 2D estimates are back-projected from the scene-camera origin.
    pub fn to_ray(&self, scene_camera: &PinholeCamera) -> Ray {
        match self {
            GazeEstimate::ScenePoint(p) => scene_camera.back_project_scene(p),
            GazeEstimate::Ray(r) => *r,
        }
    }
}

/// A fitted model together with its optimizer report, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome<M> {
    pub model: M,
    pub report: Option<FitReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MapperKind {
    #[serde(rename = "2d2d")]
    TwoDToTwoD,
    #[serde(rename = "2d3d")]
    TwoDToThreeD,
    #[serde(rename = "3d3d")]
    ThreeDToThreeD,
}

impl MapperKind {
    pub const ALL: [MapperKind; 3] = [
        MapperKind::TwoDToTwoD,
        MapperKind::TwoDToThreeD,
        MapperKind::ThreeDToThreeD,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            MapperKind::TwoDToTwoD => "2d2d",
            MapperKind::TwoDToThreeD => "2d3d",
            MapperKind::ThreeDToThreeD => "3d3d",
        }
    }
}

impl fmt::Display for MapperKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MapperKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == s.trim())
            .ok_or_else(|| format!("unknown mapper `{s}` (expected 2d2d, 2d3d or 3d3d)"))
    }
}

/// Any of the three fitted models.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    TwoDToTwoD(Model2Dto2D),
    TwoDToThreeD(Model2Dto3D),
    ThreeDToThreeD(Model3Dto3D),
}

impl FittedModel {
    pub fn kind(&self) -> MapperKind {
        match self {
            FittedModel::TwoDToTwoD(_) => MapperKind::TwoDToTwoD,
            FittedModel::TwoDToThreeD(_) => MapperKind::TwoDToThreeD,
            FittedModel::ThreeDToThreeD(_) => MapperKind::ThreeDToThreeD,
        }
    }

    /// Predicts gaze from whichever pupil observation the model consumes.
    pub fn predict(
        &self,
        pupil_px: &Vec2,
        pupil_pose: Option<&Vec3>,
    ) -> Result<GazeEstimate, MapperError> {
        Ok(match self {
            FittedModel::TwoDToTwoD(m) => GazeEstimate::ScenePoint(m.predict(pupil_px)),
            FittedModel::TwoDToThreeD(m) => GazeEstimate::Ray(m.predict(pupil_px)),
            FittedModel::ThreeDToThreeD(m) => {
                GazeEstimate::Ray(m.predict(pupil_pose.ok_or(MapperError::MissingPupilPose)?)?)
            }
        })
    }
}
