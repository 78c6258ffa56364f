use serde::{Deserialize, Serialize};

use crate::eye::{Role, SimSample};
use crate::geometry::{Vec2, Vec3};

/// Depth label rounded to whole millimeters, used to group samples by plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DepthKey(pub i64);

impl DepthKey {
    pub fn from_meters(depth: f64) -> Self {
        Self((depth * 1000.0).round() as i64)
    }

    pub fn meters(&self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

/// One (pupil, target) record, simulated or recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pupil_px: Vec2,
    /// Unit pupil normal in the eye-camera frame, when available.
    pub pupil_pose: Option<Vec3>,
    /// Target position in the scene-camera frame (m).
    pub target: Vec3,
    /// Target position in the scene image, when available.
    pub target_px: Option<Vec2>,
    pub depth: f64,
    pub role: Role,
}

impl Observation {
    pub fn from_sim(sample: &SimSample, role: Role) -> Self {
        Self {
            pupil_px: sample.pupil_px,
            pupil_pose: Some(sample.pupil_pose),
            target: sample.target,
            target_px: Some(sample.target_px),
            depth: sample.depth,
            role,
        }
    }

    pub fn depth_key(&self) -> DepthKey {
        DepthKey::from_meters(self.depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_keys_group_nearby_labels() {
        assert_eq!(DepthKey::from_meters(1.25), DepthKey(1250));
        assert_eq!(DepthKey::from_meters(1.2500001), DepthKey(1250));
        assert_eq!(DepthKey(1750).meters(), 1.75);
    }
}
