//! TOML experiment configuration. Every table rejects unknown keys.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eye::{
    synthesize_dataset, GridLayout, GridShape, NoiseLevels, SimError, SimRig, TwoSphereEye,
};
use crate::io::{CameraIntrinsics, Dataset};
use crate::mappers::{MapperKind, MapperOptions};
use crate::observation::DepthKey;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub scene_camera: CameraIntrinsics,
    pub eye_camera: CameraIntrinsics,
    pub eyeball_center_mm: [f64; 3],
    /// Eye camera position along +z from the eyeball center.
    pub eye_camera_distance_mm: f64,
    /// Eye-camera rotation relative to the scene camera (X, Y, Z Euler angles).
    pub eye_camera_angles_rad: [f64; 3],
}

impl Default for RigConfig {
    fn default() -> Self {
        let rig = SimRig::default();
        Self {
            scene_camera: CameraIntrinsics::of(&rig.scene_camera),
            eye_camera: CameraIntrinsics::of(&rig.eye_camera),
            eyeball_center_mm: [15.0, 35.0, -25.0],
            eye_camera_distance_mm: 35.0,
            eye_camera_angles_rad: [0.0, std::f64::consts::PI, 0.0],
        }
    }
}

/// Calibration grid; the test grid is the inner grid of cell centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub width_m: f64,
    pub height_m: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = GridShape::calibration();
        Self {
            rows: g.rows,
            cols: g.cols,
            width_m: g.width,
            height_m: g.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub results: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dataset: "dataset.jsonl".into(),
            model: "model.txt".into(),
            results: "results.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Target plane depths (m).
    pub depths: Vec<f64>,
    pub mappers: Vec<MapperKind>,
    pub rig: RigConfig,
    pub eye: TwoSphereEye,
    pub grid: GridConfig,
    pub noise: NoiseLevels,
    pub fit: MapperOptions,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            depths: vec![1.0, 1.25, 1.5, 1.75, 2.0],
            mappers: MapperKind::ALL.to_vec(),
            rig: RigConfig::default(),
            eye: TwoSphereEye::default(),
            grid: GridConfig::default(),
            noise: NoiseLevels::default(),
            fit: MapperOptions::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.depths.is_empty() {
            return invalid("depths must not be empty".into());
        }
        if let Some(d) = self.depths.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return invalid(format!("depth {d} must be positive"));
        }
        let keys: BTreeSet<DepthKey> = self
            .depths
            .iter()
            .map(|d| DepthKey::from_meters(*d))
            .collect();
        if keys.len() != self.depths.len() {
            return invalid("depths must be distinct at millimeter resolution".into());
        }
        if self.mappers.is_empty() {
            return invalid("mappers must not be empty".into());
        }
        if self.grid.rows < 3 || self.grid.cols < 3 {
            return invalid("grid needs at least 3 rows and 3 columns".into());
        }
        self.eye
            .pupil_geometry()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.fit
            .lm
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.rig()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn rig(&self) -> Result<SimRig, SimError> {
        let r = &self.rig;
        SimRig::with_cameras(
            r.scene_camera.camera()?,
            r.eye_camera.camera()?,
            crate::geometry::Vec3::from(r.eyeball_center_mm) * 1e-3,
            r.eye_camera_distance_mm * 1e-3,
            r.eye_camera_angles_rad,
            self.noise,
        )
    }

    pub fn layout(&self) -> GridLayout {
        let calibration = GridShape {
            rows: self.grid.rows,
            cols: self.grid.cols,
            width: self.grid.width_m,
            height: self.grid.height_m,
        };
        GridLayout {
            calibration,
            test: GridShape::inner_of(&calibration),
        }
    }

    pub fn simulate(&self) -> Result<Dataset, SimError> {
        let rig = self.rig()?;
        let sim = synthesize_dataset(&rig, &self.eye, &self.depths, &self.layout(), self.seed)?;
        Ok(Dataset::from_simulation(&rig, &sim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_default_rig() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.rig().unwrap(), SimRig::default());
        assert_eq!(cfg.layout(), GridLayout::default());
    }

    #[test]
    fn toml_round_trip_and_partial_tables() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("seed = 7\n[noise]\npupil_px = 0.5\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.noise.pupil_px, 0.5);
        assert_eq!(partial.depths, cfg.depths);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_toml("sed = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("sed"), "{err}");
        let err = ExperimentConfig::from_toml("[grid]\nwidth = 1.0\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("`width`"), "{err}");
        let err = ExperimentConfig::from_toml("[fit.lm]\nmax_iter = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("max_iter"), "{err}");
    }

    #[test]
    fn validation() {
        let bad = |f: fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.depths.clear()));
        assert!(bad(|c| c.depths.push(-1.0)));
        assert!(bad(|c| c.depths.push(1.0004)));
        assert!(bad(|c| c.mappers.clear()));
        assert!(bad(|c| c.grid.rows = 2));
        assert!(bad(|c| c.noise.pupil_px = -1.0));
        assert!(bad(|c| c.eye.center_separation_mm = 40.0));
        assert!(bad(|c| c.fit.lm.max_iterations = 0));
        assert!(bad(|c| c.rig.eye_camera_distance_mm = -5.0));
    }
}
