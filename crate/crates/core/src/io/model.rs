//! Plain-text model files.
//!
//! A file holds one or more model blocks of `key=value` lines; each block
//! starts with a `mapper=` line. Vectors are space-separated, weights are
//! row-major 7x2, angles are radians, lengths meters. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{EulerAngles, Vec3};
use crate::mappers::{
    FittedModel, MapperKind, Model2Dto2D, Model2Dto3D, Model3Dto3D, PupilNormalizer, Weights,
};
use crate::observation::DepthKey;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("model file contains no models")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// A fitted model and the calibration depths it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: FittedModel,
    pub calibration_depths: Vec<DepthKey>,
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn weights_row_major(w: &Weights) -> impl Iterator<Item = f64> + '_ {
    (0..w.nrows()).flat_map(move |i| (0..w.ncols()).map(move |j| w[(i, j)]))
}

impl SavedModel {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("write to string");
        kv("mapper", self.model.kind().to_string());
        kv(
            "calibration_depths_m",
            join(self.calibration_depths.iter().map(DepthKey::meters)),
        );
        let normalizer = |n: &PupilNormalizer| join([n.width, n.height]);
        match &self.model {
            FittedModel::TwoDToTwoD(m) => {
                kv("pupil_image_px", normalizer(&m.normalizer));
                kv("weights", join(weights_row_major(&m.weights)));
            }
            FittedModel::TwoDToThreeD(m) => {
                kv("pupil_image_px", normalizer(&m.normalizer));
                kv("weights", join(weights_row_major(&m.weights)));
                kv("eyeball_center_m", join(m.eyeball_center.iter().copied()));
            }
            FittedModel::ThreeDToThreeD(m) => {
                kv("angles_rad", join(m.angles.as_array()));
                kv("eyeball_center_m", join(m.eyeball_center.iter().copied()));
            }
        }
        s
    }
}

pub fn models_to_text(models: &[SavedModel]) -> String {
    let mut s = String::from("# gaze3d model file\n");
    for (i, m) in models.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        s.push_str(&m.to_text());
    }
    s
}

pub fn save_models(models: &[SavedModel], path: &Path) -> Result<(), ModelFileError> {
    fs::write(path, models_to_text(models)).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_models(path: &Path) -> Result<Vec<SavedModel>, ModelFileError> {
    let text = fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_models(&text)
}

struct Block {
    start: usize,
    fields: BTreeMap<String, (usize, String)>,
}

impl Block {
    fn numbers(&mut self, key: &str, len: usize) -> Result<Vec<f64>, ModelFileError> {
        let (line, value) = self
            .fields
            .remove(key)
            .ok_or_else(|| ModelFileError::Parse {
                line: self.start,
                message: format!("model block is missing `{key}`"),
            })?;
        let values = value
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ModelFileError::Parse {
                line,
                message: format!("`{key}`: {e}"),
            })?;
        if len != usize::MAX && values.len() != len {
            return Err(ModelFileError::Parse {
                line,
                message: format!("`{key}` needs {len} values, got {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelFileError::Parse {
                line,
                message: format!("`{key}` has non-finite values"),
            });
        }
        Ok(values)
    }

    fn into_model(mut self) -> Result<SavedModel, ModelFileError> {
        let (line, mapper) = self
            .fields
            .remove("mapper")
            .expect("blocks start at mapper");
        let kind: MapperKind = mapper
            .parse()
            .map_err(|message| ModelFileError::Parse { line, message })?;
        let calibration_depths = self
            .numbers("calibration_depths_m", usize::MAX)?
            .into_iter()
            .map(DepthKey::from_meters)
            .collect();
        let normalizer = |b: &mut Self| -> Result<PupilNormalizer, ModelFileError> {
            let v = b.numbers("pupil_image_px", 2)?;
            Ok(PupilNormalizer {
                width: v[0],
                height: v[1],
            })
        };
        let weights = |b: &mut Self| -> Result<Weights, ModelFileError> {
            let v = b.numbers("weights", 14)?;
            Ok(Weights::from_row_slice(&v))
        };
        let center = |b: &mut Self| -> Result<Vec3, ModelFileError> {
            Ok(Vec3::from_column_slice(&b.numbers("eyeball_center_m", 3)?))
        };
        let model = match kind {
            MapperKind::TwoDToTwoD => FittedModel::TwoDToTwoD(Model2Dto2D {
                normalizer: normalizer(&mut self)?,
                weights: weights(&mut self)?,
            }),
            MapperKind::TwoDToThreeD => FittedModel::TwoDToThreeD(Model2Dto3D {
                normalizer: normalizer(&mut self)?,
                weights: weights(&mut self)?,
                eyeball_center: center(&mut self)?,
            }),
            MapperKind::ThreeDToThreeD => {
                let a = self.numbers("angles_rad", 3)?;
                let angles =
                    EulerAngles::new([a[0], a[1], a[2]]).map_err(|e| ModelFileError::Parse {
                        line: self.start,
                        message: e.to_string(),
                    })?;
                FittedModel::ThreeDToThreeD(Model3Dto3D {
                    angles,
                    eyeball_center: center(&mut self)?,
                })
            }
        };
        if let Some((key, (line, _))) = self.fields.into_iter().next() {
            return Err(ModelFileError::Parse {
                line,
                message: format!("unexpected key `{key}` for mapper {kind}"),
            });
        }
        Ok(SavedModel {
            model,
            calibration_depths,
        })
    }
}

pub fn parse_models(text: &str) -> Result<Vec<SavedModel>, ModelFileError> {
    let mut blocks: Vec<Block> = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ModelFileError::Parse {
                line,
                message: format!("expected key=value, got `{content}`"),
            })?;
        let (key, value) = (key.trim(), value.trim());
        if key == "mapper" {
            blocks.push(Block {
                start: line,
                fields: BTreeMap::new(),
            });
        }
        let block = blocks.last_mut().ok_or_else(|| ModelFileError::Parse {
            line,
            message: "model block must start with `mapper=`".into(),
        })?;
        if block
            .fields
            .insert(key.to_string(), (line, value.to_string()))
            .is_some()
        {
            return Err(ModelFileError::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    if blocks.is_empty() {
        return Err(ModelFileError::Empty);
    }
    blocks.into_iter().map(Block::into_model).collect()
}
