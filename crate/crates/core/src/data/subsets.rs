//! Pose and sequence partitions, and the cross-subject train/test split.

use std::collections::BTreeSet;
use std::fmt;

use crate::data::{FaceSample, Pose};
use crate::error::{Error, Result};

/// Largest absolute angle (degrees, inclusive) for the frontal subset.
pub const FRONTAL_LIMIT_DEG: f64 = 10.0;

/// Test subjects of the standard cross-subject protocol.
pub const DEFAULT_TEST_SUBJECTS: [u32; 4] = [10, 14, 16, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AngleSubset {
    /// Every angle within ±10°.
    A1,
    /// At least one angle beyond ±10°.
    A2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SequenceSubset {
    /// Sequences 1–3: one angle varies at a time.
    S123,
    /// Sequences 4–5: free movement.
    S45,
}

impl fmt::Display for AngleSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::A1 => "A1",
            Self::A2 => "A2",
        })
    }
}

impl fmt::Display for SequenceSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::S123 => "S123",
            Self::S45 => "S45",
        })
    }
}

pub fn pose_subset(pose: &Pose) -> AngleSubset {
    let frontal = [pose.yaw, pose.pitch, pose.roll]
        .iter()
        .all(|a| a.abs() <= FRONTAL_LIMIT_DEG);
    if frontal {
        AngleSubset::A1
    } else {
        AngleSubset::A2
    }
}

pub fn angle_subset(sample: &FaceSample) -> AngleSubset {
    pose_subset(&sample.pose)
}

pub fn sequence_of(sequence_id: u32) -> Result<SequenceSubset> {
    match sequence_id {
        1..=3 => Ok(SequenceSubset::S123),
        4 | 5 => Ok(SequenceSubset::S45),
        other => Err(Error::domain(
            "sequence_subset",
            format!("sequence id {other} outside 1..=5"),
        )),
    }
}

pub fn sequence_subset(sample: &FaceSample) -> Result<SequenceSubset> {
    sequence_of(sample.sequence_id)
}

/// Partitions by subject id; relative order is preserved on both sides.
pub fn split_train_test<'a>(
    samples: &'a [FaceSample],
    test_subjects: &BTreeSet<u32>,
) -> (Vec<&'a FaceSample>, Vec<&'a FaceSample>) {
    samples
        .iter()
        .partition(|s| !test_subjects.contains(&s.subject_id))
}

pub fn default_test_subjects() -> BTreeSet<u32> {
    DEFAULT_TEST_SUBJECTS.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DepthMap, GrayImage};

    fn pose(yaw: f64, pitch: f64, roll: f64) -> Pose {
        Pose { yaw, pitch, roll }
    }

    fn sample(subject: u32, seq: u32) -> FaceSample {
        FaceSample {
            gray: GrayImage::filled(2, 2, 0),
            depth: DepthMap::filled(2, 2, 0),
            subject_id: subject,
            sequence_id: seq,
            frame: 0,
            head_center: (1.0, 1.0),
            pose: Pose::default(),
        }
    }

    #[test]
    fn angle_boundaries() {
        assert_eq!(pose_subset(&pose(0.0, 0.0, 0.0)), AngleSubset::A1);
        assert_eq!(pose_subset(&pose(10.0, -10.0, 10.0)), AngleSubset::A1);
        assert_eq!(pose_subset(&pose(0.0, 0.0, 10.5)), AngleSubset::A2);
    }

    #[test]
    fn sequence_split() {
        assert_eq!(sequence_of(2).unwrap(), SequenceSubset::S123);
        assert_eq!(sequence_of(4).unwrap(), SequenceSubset::S45);
        assert!(sequence_of(6).is_err());
        assert!(sequence_of(0).is_err());
    }

    #[test]
    fn subject_split_is_a_partition() {
        let all: Vec<_> = (1..=20).map(|s| sample(s, 1)).collect();
        let (train, test) = split_train_test(&all, &default_test_subjects());
        assert_eq!(train.len() + test.len(), all.len());
        assert!(test.iter().any(|s| s.subject_id == 14));
        assert!(train.iter().any(|s| s.subject_id == 3));
        assert!(train.iter().all(|s| !DEFAULT_TEST_SUBJECTS.contains(&s.subject_id)));
    }
}
