//! Angular-error metrics and the calibration-depth experiments.
//!
//! Errors are reported in degrees. Standard deviations are population
//! standard deviations (divide by N).

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use itertools::Itertools;
use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{
    angle_between, intersect_ray_depth_plane, GeometryError, PinholeCamera, Vec2, Vec3,
};
use crate::mappers::{
    fit_2d_to_2d, fit_2d_to_3d, fit_3d_to_3d, FitOutcome, FittedModel, GazeEstimate, MapperError,
    MapperKind, MapperOptions, PupilNormalizer,
};
use crate::observation::{DepthKey, Observation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty test set")]
    EmptyTestSet,
    #[error("no usable calibration samples for {0}")]
    NoCalibration(MapperKind),
    #[error(transparent)]
    Mapper(#[from] MapperError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Angle in degrees, seen from `reference`, between the estimated and the true target.
///
/// The estimated target is where the gaze ray meets the plane `z = target.z`;
/// 2D estimates are first back-projected from the scene-camera origin.
pub fn angular_error(
    estimate: &GazeEstimate,
    target: &Vec3,
    reference: &Vec3,
    scene_camera: &PinholeCamera,
) -> Result<f64, GeometryError> {
    let ray = estimate.to_ray(scene_camera);
    let estimated = intersect_ray_depth_plane(&ray, target.z)?;
    angle_between(&(estimated - reference), &(target - reference))
}

/// Per-target errors with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ErrorStats {
    pub fn from_errors(errors: Vec<f64>) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            errors,
            mean,
            std: var.sqrt(),
        })
    }
}

/// Errors of `model` on every test observation, measured from `reference`.
pub fn evaluate(
    model: &FittedModel,
    test: &[Observation],
    reference: &Vec3,
    scene_camera: &PinholeCamera,
) -> Result<ErrorStats, EvalError> {
    let errors = test
        .iter()
        .map(|obs| {
            let estimate = model.predict(&obs.pupil_px, obs.pupil_pose.as_ref())?;
            Ok(angular_error(
                &estimate,
                &obs.target,
                reference,
                scene_camera,
            )?)
        })
        .collect::<Result<Vec<f64>, EvalError>>()?;
    ErrorStats::from_errors(errors).ok_or(EvalError::EmptyTestSet)
}

fn scene_point(obs: &Observation, scene_camera: &PinholeCamera) -> Result<Vec2, GeometryError> {
    match obs.target_px {
        Some(px) => Ok(px),
        None => scene_camera.project_scene(&obs.target),
    }
}

/// Fits one mapper on the given calibration observations.
///
/// Observations without a pupil pose are skipped for 3D-to-3D.
pub fn fit_mapper(
    kind: MapperKind,
    calibration: &[Observation],
    scene_camera: &PinholeCamera,
    normalizer: PupilNormalizer,
    options: &MapperOptions,
) -> Result<FitOutcome<FittedModel>, EvalError> {
    Ok(match kind {
        MapperKind::TwoDToTwoD => {
            let pairs = calibration
                .iter()
                .map(|o| Ok((o.pupil_px, scene_point(o, scene_camera)?)))
                .collect::<Result<Vec<_>, GeometryError>>()?;
            FitOutcome {
                model: FittedModel::TwoDToTwoD(fit_2d_to_2d(&pairs, normalizer)?),
                report: None,
            }
        }
        MapperKind::TwoDToThreeD => {
            let pairs: Vec<_> = calibration.iter().map(|o| (o.pupil_px, o.target)).collect();
            let fit = fit_2d_to_3d(&pairs, normalizer, options)?;
            FitOutcome {
                model: FittedModel::TwoDToThreeD(fit.model),
                report: fit.report,
            }
        }
        MapperKind::ThreeDToThreeD => {
            let pairs: Vec<_> = calibration
                .iter()
                .filter_map(|o| o.pupil_pose.map(|n| (n, o.target)))
                .collect();
            let skipped = calibration.len() - pairs.len();
            if skipped > 0 {
                warn!("{skipped} calibration records without pupil pose skipped for 3d3d");
            }
            if pairs.is_empty() {
                return Err(EvalError::NoCalibration(kind));
            }
            let fit = fit_3d_to_3d(&pairs, options)?;
            FitOutcome {
                model: FittedModel::ThreeDToThreeD(fit.model),
                report: fit.report,
            }
        }
    })
}

/// Calibration and test observations plus the cameras and reference point
/// needed to fit and score mappers.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scene_camera: PinholeCamera,
    pub normalizer: PupilNormalizer,
    /// Point errors are measured from: the true eyeball center in simulation,
    /// the scene-camera origin for recorded data.
    pub reference: Vec3,
    pub calibration: Vec<Observation>,
    pub test: Vec<Observation>,
}

impl Experiment {
    pub fn calibration_depths(&self) -> Vec<DepthKey> {
        unique_depths(&self.calibration)
    }

    pub fn test_depths(&self) -> Vec<DepthKey> {
        unique_depths(&self.test)
    }

    pub fn calibration_at(&self, depths: &[DepthKey]) -> Vec<Observation> {
        self.calibration
            .iter()
            .filter(|o| depths.contains(&o.depth_key()))
            .cloned()
            .collect()
    }

    pub fn test_at(&self, depth: DepthKey) -> Vec<Observation> {
        self.test
            .iter()
            .filter(|o| o.depth_key() == depth)
            .cloned()
            .collect()
    }

    pub fn fit(
        &self,
        kind: MapperKind,
        depths: &[DepthKey],
        options: &MapperOptions,
    ) -> Result<FitOutcome<FittedModel>, EvalError> {
        fit_mapper(
            kind,
            &self.calibration_at(depths),
            &self.scene_camera,
            self.normalizer,
            options,
        )
    }

    pub fn evaluate_at(
        &self,
        model: &FittedModel,
        depth: DepthKey,
    ) -> Result<ErrorStats, EvalError> {
        evaluate(
            model,
            &self.test_at(depth),
            &self.reference,
            &self.scene_camera,
        )
    }
}

fn unique_depths(observations: &[Observation]) -> Vec<DepthKey> {
    observations
        .iter()
        .map(Observation::depth_key)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Errors of one mapper fitted on one calibration-depth subset, tested at one depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub mapper: MapperKind,
    pub calibration_depths: Vec<DepthKey>,
    pub test_depth: DepthKey,
    /// `Err` carries the reason the fit or evaluation failed.
    pub outcome: Result<ErrorStats, String>,
}

impl ErrorRecord {
    pub fn k(&self) -> usize {
        self.calibration_depths.len()
    }

    pub fn stats(&self) -> Option<&ErrorStats> {
        self.outcome.as_ref().ok()
    }

    fn sort_key(&self) -> RecordKey {
        (
            self.mapper,
            self.k(),
            self.calibration_depths.clone(),
            self.test_depth,
        )
    }
}

/// All records of a sweep, ordered by (mapper, k, subset, test depth).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub records: Vec<ErrorRecord>,
}

impl SweepResult {
    pub fn from_records(mut records: Vec<ErrorRecord>) -> Self {
        records.sort_by_key(ErrorRecord::sort_key);
        Self { records }
    }

    pub fn records_for(&self, mapper: MapperKind, k: usize) -> impl Iterator<Item = &ErrorRecord> {
        self.records
            .iter()
            .filter(move |r| r.mapper == mapper && r.k() == k)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ErrorRecord> {
        self.records.iter().filter(|r| r.outcome.is_err())
    }

    /// Mean and std over every per-target error of successful records for (mapper, k).
    pub fn pooled(&self, mapper: MapperKind, k: usize) -> Option<ErrorStats> {
        let errors: Vec<f64> = self
            .records_for(mapper, k)
            .filter_map(ErrorRecord::stats)
            .flat_map(|s| s.errors.iter().copied())
            .collect();
        ErrorStats::from_errors(errors)
    }

    /// Single record lookup.
    pub fn record(
        &self,
        mapper: MapperKind,
        calibration_depths: &[DepthKey],
        test_depth: DepthKey,
    ) -> Option<&ErrorRecord> {
        self.records.iter().find(|r| {
            r.mapper == mapper
                && r.calibration_depths == calibration_depths
                && r.test_depth == test_depth
        })
    }

    pub fn mappers(&self) -> Vec<MapperKind> {
        self.records
            .iter()
            .map(|r| r.mapper)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Fits every mapper on every k-subset of calibration depths (for each k in
/// `k_range`) and evaluates on every test depth.
///
/// Failed fits are kept as failure records.
pub fn depth_combination_sweep(
    experiment: &Experiment,
    mappers: &[MapperKind],
    k_range: RangeInclusive<usize>,
    options: &MapperOptions,
) -> SweepResult {
    let depths = experiment.calibration_depths();
    let test_depths = experiment.test_depths();
    let tasks: Vec<(MapperKind, Vec<DepthKey>)> = mappers
        .iter()
        .flat_map(|&mapper| {
            k_range
                .clone()
                .filter(|&k| k >= 1 && k <= depths.len())
                .flat_map(|k| depths.iter().copied().combinations(k))
                .map(move |subset| (mapper, subset))
                .collect::<Vec<_>>()
        })
        .collect();

    let records: Vec<ErrorRecord> = tasks
        .par_iter()
        .flat_map_iter(|(mapper, subset)| {
            let fit = experiment.fit(*mapper, subset, options);
            test_depths
                .iter()
                .map(|&test_depth| {
                    let outcome = match &fit {
                        Ok(fit) => experiment
                            .evaluate_at(&fit.model, test_depth)
                            .map_err(|e| e.to_string()),
                        Err(e) => Err(e.to_string()),
                    };
                    ErrorRecord {
                        mapper: *mapper,
                        calibration_depths: subset.clone(),
                        test_depth,
                        outcome,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    SweepResult::from_records(records)
}

/// Errors grouped by the signed offset `test depth - calibration depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetBucket {
    pub offset_m: f64,
    pub mean: f64,
    pub std: f64,
    pub records: usize,
}

/// Groups the single-depth records of `mapper` by calibration/test offset.
///
/// Negative offsets mean the test plane is closer than the calibration plane.
/// Mean and std are over the pooled per-target errors of each bucket.
pub fn offset_analysis(sweep: &SweepResult, mapper: MapperKind) -> Vec<OffsetBucket> {
    let mut buckets: BTreeMap<i64, (Vec<f64>, usize)> = BTreeMap::new();
    for record in sweep.records_for(mapper, 1) {
        let Some(stats) = record.stats() else {
            continue;
        };
        let offset = record.test_depth.0 - record.calibration_depths[0].0;
        let entry = buckets.entry(offset).or_default();
        entry.0.extend(&stats.errors);
        entry.1 += 1;
    }
    buckets
        .into_iter()
        .filter_map(|(offset, (errors, records))| {
            ErrorStats::from_errors(errors).map(|s| OffsetBucket {
                offset_m: DepthKey(offset).meters(),
                mean: s.mean,
                std: s.std,
                records,
            })
        })
        .collect()
}

/// Sweeps over several participants, aggregated two ways.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantAggregate {
    pub mapper: MapperKind,
    pub k: usize,
    /// Every per-target error counts once.
    pub sample_weighted_mean: f64,
    /// Each participant's pooled mean counts once.
    pub participant_weighted_mean: f64,
    pub participants: usize,
}

pub fn aggregate_participants(sweeps: &[SweepResult]) -> Vec<ParticipantAggregate> {
    let keys: BTreeSet<(MapperKind, usize)> = sweeps
        .iter()
        .flat_map(|s| s.records.iter().map(|r| (r.mapper, r.k())))
        .collect();
    keys.into_iter()
        .filter_map(|(mapper, k)| {
            let per: Vec<ErrorStats> = sweeps.iter().filter_map(|s| s.pooled(mapper, k)).collect();
            if per.is_empty() {
                return None;
            }
            let all: Vec<f64> = per.iter().flat_map(|s| s.errors.iter().copied()).collect();
            Some(ParticipantAggregate {
                mapper,
                k,
                sample_weighted_mean: ErrorStats::from_errors(all)?.mean,
                participant_weighted_mean: per.iter().map(|s| s.mean).sum::<f64>()
                    / per.len() as f64,
                participants: per.len(),
            })
        })
        .collect()
}

type RecordKey = (MapperKind, usize, Vec<DepthKey>, DepthKey);

/// Concatenates the per-target errors of matching records across participants.
pub fn pool_participants(sweeps: &[SweepResult]) -> SweepResult {
    let mut merged: BTreeMap<RecordKey, Result<Vec<f64>, String>> = BTreeMap::new();
    for record in sweeps.iter().flat_map(|s| &s.records) {
        let entry = merged
            .entry(record.sort_key())
            .or_insert_with(|| Ok(Vec::new()));
        match (&record.outcome, entry) {
            (Ok(stats), Ok(errors)) => errors.extend(&stats.errors),
            (Err(reason), entry @ Ok(_)) => *entry = Err(reason.clone()),
            (_, Err(_)) => {}
        }
    }
    SweepResult::from_records(
        merged
            .into_iter()
            .map(
                |((mapper, _, calibration_depths, test_depth), errors)| ErrorRecord {
                    mapper,
                    calibration_depths,
                    test_depth,
                    outcome: errors.and_then(|e| {
                        ErrorStats::from_errors(e).ok_or_else(|| "no test samples".to_string())
                    }),
                },
            )
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eye::Role;
    use crate::geometry::Ray;
    use approx::assert_relative_eq;

    fn scene() -> PinholeCamera {
        PinholeCamera::centered(720.0, 1280, 720).unwrap()
    }

    #[test]
    fn ray_through_target_has_zero_error() {
        let target = Vec3::new(0.3, -0.1, 1.5);
        let origin = Vec3::new(0.01, 0.02, -0.03);
        let ray = Ray::through(origin, target).unwrap();
        let err = angular_error(&GazeEstimate::Ray(ray), &target, &origin, &scene()).unwrap();
        assert!(err < 1e-6);
        // and from the scene origin, wherever the ray starts
        let err =
            angular_error(&GazeEstimate::Ray(ray), &target, &Vec3::zeros(), &scene()).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn one_degree_construction() {
        let target = Vec3::new(0.0, 0.0, 2.0);
        let estimated = Vec3::new(2.0 * 1f64.to_radians().tan(), 0.0, 2.0);
        let ray = Ray::through(Vec3::zeros(), estimated).unwrap();
        let err =
            angular_error(&GazeEstimate::Ray(ray), &target, &Vec3::zeros(), &scene()).unwrap();
        assert_relative_eq!(err, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn exact_projection_has_zero_error() {
        let cam = scene();
        let target = Vec3::new(-0.4, 0.2, 1.25);
        let px = cam.project_scene(&target).unwrap();
        let err =
            angular_error(&GazeEstimate::ScenePoint(px), &target, &Vec3::zeros(), &cam).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn error_is_scale_invariant() {
        let cam = scene();
        let reference = Vec3::new(0.015, 0.035, -0.025);
        let target = Vec3::new(0.2, 0.1, 1.0);
        let off = Ray::through(Vec3::zeros(), Vec3::new(0.25, 0.1, 1.0)).unwrap();
        let a = angular_error(&GazeEstimate::Ray(off), &target, &reference, &cam).unwrap();
        let scaled_target = reference + (target - reference) * 2.0;
        let estimated = intersect_ray_depth_plane(&off, 1.0).unwrap();
        let scaled_est = reference + (estimated - reference) * 2.0;
        let b = angle_between(&(scaled_est - reference), &(scaled_target - reference)).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn stats_examples() {
        let s = ErrorStats::from_errors(vec![1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        let s = ErrorStats::from_errors(vec![0.7]).unwrap();
        assert_eq!(s.std, 0.0);
        assert!(ErrorStats::from_errors(vec![]).is_none());
        let a = ErrorStats::from_errors(vec![0.5, 1.5, 4.0, 2.0]).unwrap();
        let b = ErrorStats::from_errors(vec![4.0, 2.0, 0.5, 1.5]).unwrap();
        assert_relative_eq!(a.mean, b.mean, epsilon = 1e-15);
        assert_relative_eq!(a.std, b.std, epsilon = 1e-15);
    }

    fn record(cal: i64, test: i64, errors: Vec<f64>) -> ErrorRecord {
        ErrorRecord {
            mapper: MapperKind::TwoDToTwoD,
            calibration_depths: vec![DepthKey(cal)],
            test_depth: DepthKey(test),
            outcome: Ok(ErrorStats::from_errors(errors).unwrap()),
        }
    }

    #[test]
    fn offset_buckets_use_signed_offsets() {
        let sweep = SweepResult::from_records(vec![
            record(1000, 1000, vec![0.1]),
            record(2000, 1000, vec![2.0]),
            record(1000, 2000, vec![1.0, 3.0]),
            record(1500, 1500, vec![0.3]),
        ]);
        let buckets = offset_analysis(&sweep, MapperKind::TwoDToTwoD);
        let offsets: Vec<f64> = buckets.iter().map(|b| b.offset_m).collect();
        assert_eq!(offsets, vec![-1.0, 0.0, 1.0]);
        assert_relative_eq!(buckets[1].mean, 0.2);
        assert_eq!(buckets[1].records, 2);
        assert_eq!(buckets[2].mean, 2.0);
    }

    #[test]
    fn failed_fit_becomes_failure_records() {
        let cam = scene();
        let obs = |depth: f64, role| Observation {
            pupil_px: Vec2::new(320.0, 180.0),
            pupil_pose: None,
            target: Vec3::new(0.0, 0.0, depth),
            target_px: None,
            depth,
            role,
        };
        let experiment = Experiment {
            scene_camera: cam,
            normalizer: PupilNormalizer::new(640, 360),
            reference: Vec3::zeros(),
            calibration: vec![obs(1.0, Role::Calibration); 3],
            test: vec![obs(1.0, Role::Test), obs(2.0, Role::Test)],
        };
        let sweep = depth_combination_sweep(
            &experiment,
            &[MapperKind::TwoDToTwoD, MapperKind::ThreeDToThreeD],
            1..=1,
            &MapperOptions::default(),
        );
        assert_eq!(sweep.records.len(), 4);
        assert_eq!(sweep.failures().count(), 4);
    }

    #[test]
    fn participant_weightings_differ() {
        let a = SweepResult::from_records(vec![record(1000, 1000, vec![1.0])]);
        let b = SweepResult::from_records(vec![record(1000, 1000, vec![3.0, 3.0, 3.0])]);
        let agg = aggregate_participants(&[a.clone(), b.clone()]);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].participant_weighted_mean, 2.0);
        assert_eq!(agg[0].sample_weighted_mean, 2.5);
        assert_eq!(agg[0].participants, 2);
        let pooled = pool_participants(&[a, b]);
        assert_eq!(pooled.records.len(), 1);
        assert_eq!(pooled.records[0].stats().unwrap().errors.len(), 4);
    }
}
