//! Line-delimited JSON datasets.
//!
//! Line 1 is a header object; every further non-empty line is one record.
//! Lengths are meters, image coordinates pixels, angles radians.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::Experiment;
use crate::eye::{Role, SimDataset, SimRig};
use crate::geometry::{GeometryError, PinholeCamera, Vec2, Vec3};
use crate::mappers::PupilNormalizer;
use crate::observation::Observation;

pub const SCHEMA: &str = "gaze3d-dataset";
pub const SCHEMA_VERSION: u32 = 1;
pub const FRAMES: &str =
    "scene camera at origin, x right, y down, z forward; pupil_pose in eye-camera frame";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersionMismatch { found: u64 },
    #[error("record {record}: pupil_pose norm {norm} is not unit")]
    UnitViolation { record: usize, norm: f64 },
    #[error("record {record}: {message}")]
    InvalidRecord { record: usize, message: String },
    #[error("dataset has no calibration records")]
    EmptyCalibration,
    #[error("invalid camera intrinsics: {0}")]
    Camera(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn of(camera: &PinholeCamera) -> Self {
        Self {
            fx: camera.fx,
            fy: camera.fy,
            cx: camera.cx,
            cy: camera.cy,
            width: camera.width,
            height: camera.height,
        }
    }

    /// Camera at the scene origin with these intrinsics.
    pub fn camera(&self) -> Result<PinholeCamera, GeometryError> {
        PinholeCamera::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub length: String,
    pub image: String,
    pub angle: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            length: "m".into(),
            image: "px".into(),
            angle: "rad".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Simulated,
    Recorded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub schema: String,
    pub version: u32,
    pub units: Units,
    pub frames: String,
    pub scene_camera: CameraIntrinsics,
    pub eye_camera: CameraIntrinsics,
    pub source: Source,
    /// Ground-truth eyeball center, known only for simulated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eyeball_center_m: Option<[f64; 3]>,
}

impl DatasetHeader {
    pub fn new(
        scene_camera: CameraIntrinsics,
        eye_camera: CameraIntrinsics,
        source: Source,
    ) -> Self {
        Self {
            schema: SCHEMA.into(),
            version: SCHEMA_VERSION,
            units: Units::default(),
            frames: FRAMES.into(),
            scene_camera,
            eye_camera,
            source,
            eyeball_center_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    pupil_px: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pupil_pose: Option<[f64; 3]>,
    target_scene_m: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_px: Option<[f64; 2]>,
    depth_label: f64,
    role: Role,
}

impl From<&Observation> for RecordLine {
    fn from(o: &Observation) -> Self {
        Self {
            pupil_px: o.pupil_px.into(),
            pupil_pose: o.pupil_pose.map(Into::into),
            target_scene_m: o.target.into(),
            target_px: o.target_px.map(Into::into),
            depth_label: o.depth,
            role: o.role,
        }
    }
}

impl From<RecordLine> for Observation {
    fn from(r: RecordLine) -> Self {
        Self {
            pupil_px: Vec2::from(r.pupil_px),
            pupil_pose: r.pupil_pose.map(Vec3::from),
            target: Vec3::from(r.target_scene_m),
            target_px: r.target_px.map(Vec2::from),
            depth: r.depth_label,
            role: r.role,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Observation>,
}

impl Dataset {
    pub fn from_simulation(rig: &SimRig, sim: &SimDataset) -> Self {
        let mut header = DatasetHeader::new(
            CameraIntrinsics::of(&rig.scene_camera),
            CameraIntrinsics::of(&rig.eye_camera),
            Source::Simulated,
        );
        header.eyeball_center_m = Some(rig.eyeball_center.into());
        let records = sim
            .calibration
            .iter()
            .map(|s| Observation::from_sim(s, Role::Calibration))
            .chain(
                sim.test
                    .iter()
                    .map(|s| Observation::from_sim(s, Role::Test)),
            )
            .collect();
        Self { header, records }
    }

    pub fn calibration(&self) -> impl Iterator<Item = &Observation> {
        self.records.iter().filter(|o| o.role == Role::Calibration)
    }

    pub fn test(&self) -> impl Iterator<Item = &Observation> {
        self.records.iter().filter(|o| o.role == Role::Test)
    }

    /// Calibration records that 3D-to-3D fitting has to skip.
    pub fn missing_pose_count(&self) -> usize {
        self.calibration()
            .filter(|o| o.pupil_pose.is_none())
            .count()
    }

    /// Errors are measured from the recorded eyeball center when the header
    /// has one, otherwise from the scene-camera origin.
    pub fn experiment(&self) -> Result<Experiment, DatasetError> {
        let eye = &self.header.eye_camera;
        Ok(Experiment {
            scene_camera: self.header.scene_camera.camera()?,
            normalizer: PupilNormalizer::new(eye.width, eye.height),
            reference: self
                .header
                .eyeball_center_m
                .map(Vec3::from)
                .unwrap_or_else(Vec3::zeros),
            calibration: self.calibration().cloned().collect(),
            test: self.test().cloned().collect(),
        })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for record in &self.records {
            serde_json::to_writer(&mut out, &RecordLine::from(record))?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let io_err = |source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        self.write_to(BufWriter::new(file)).map_err(io_err)
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, DatasetError> {
        let mut lines = input.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => parse_header(&line.map_err(|e| parse_err(1, e))?)?,
            None => return Err(parse_err(1, "missing header line")),
        };
        header.scene_camera.camera()?;
        header.eye_camera.camera()?;

        let mut records = Vec::new();
        for (index, line) in lines {
            let line_no = index + 1;
            let line = line.map_err(|e| parse_err(line_no, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: RecordLine =
                serde_json::from_str(&line).map_err(|e| parse_err(line_no, e))?;
            records.push(validate_record(records.len(), record)?);
        }
        if !records
            .iter()
            .any(|o: &Observation| o.role == Role::Calibration)
        {
            return Err(DatasetError::EmptyCalibration);
        }
        Ok(Self { header, records })
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let file = File::open(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_from(BufReader::new(file))
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    Dataset::load(path)
}

fn parse_err(line: usize, message: impl ToString) -> DatasetError {
    DatasetError::Parse {
        line,
        message: message.to_string(),
    }
}

fn parse_header(line: &str) -> Result<DatasetHeader, DatasetError> {
    // Check schema and version loosely first so a newer file reports its
    // version instead of an unknown-field error.
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_err(1, e))?;
    if value.get("schema").and_then(|s| s.as_str()) != Some(SCHEMA) {
        return Err(parse_err(1, format!("header schema must be \"{SCHEMA}\"")));
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(found) => return Err(DatasetError::SchemaVersionMismatch { found }),
        None => return Err(parse_err(1, "header has no integer version")),
    }
    let header: DatasetHeader = serde_json::from_value(value).map_err(|e| parse_err(1, e))?;
    if header.units != Units::default() {
        return Err(parse_err(1, "units must be length=m, image=px, angle=rad"));
    }
    Ok(header)
}

fn validate_record(record: usize, line: RecordLine) -> Result<Observation, DatasetError> {
    if let Some(pose) = line.pupil_pose {
        let norm = Vec3::from(pose).norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(DatasetError::UnitViolation { record, norm });
        }
    }
    if line.depth_label.is_nan() || line.depth_label <= 0.0 {
        return Err(DatasetError::InvalidRecord {
            record,
            message: format!("depth_label must be positive, got {}", line.depth_label),
        });
    }
    Ok(line.into())
}
