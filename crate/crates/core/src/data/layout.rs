//! On-disk dataset layout: one directory per subject holding
//! `NNNN_gray.pgm`, `NNNN_depth.pgm` and `annotations.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{pgm, FaceSample, Pose};
use crate::error::{Error, Result};

pub const ANNOTATIONS: &str = "annotations.csv";

/// One `annotations.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame: u32,
    pub sequence: u32,
    pub center_x: f64,
    pub center_y: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Annotation {
    pub fn of(s: &FaceSample) -> Self {
        Self {
            frame: s.frame,
            sequence: s.sequence_id,
            center_x: s.head_center.0,
            center_y: s.head_center.1,
            yaw: s.pose.yaw,
            pitch: s.pose.pitch,
            roll: s.pose.roll,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose {
            yaw: self.yaw,
            pitch: self.pitch,
            roll: self.roll,
        }
    }
}

pub fn subject_dir_name(subject_id: u32) -> String {
    format!("{subject_id:02}")
}

pub fn gray_file_name(frame: u32) -> String {
    format!("{frame:04}_gray.pgm")
}

pub fn depth_file_name(frame: u32) -> String {
    format!("{frame:04}_depth.pgm")
}

/// Depth path relative to the dataset root, as used in pair lists.
pub fn depth_key(subject_id: u32, frame: u32) -> String {
    format!("{}/{}", subject_dir_name(subject_id), depth_file_name(frame))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_annotations(path: &Path, rows: &[Annotation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    if !path.is_file() {
        return Err(Error::format(path, "annotation file missing"));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<Annotation>, _>>()?)
}

/// Writes every sample under `root`, grouped by subject, in
/// (subject, sequence, frame) order.
pub fn write_dataset(root: &Path, samples: &[FaceSample]) -> Result<()> {
    create_dir(root)?;
    let mut sorted: Vec<&FaceSample> = samples.iter().collect();
    sorted.sort_by_key(|s| (s.subject_id, s.sequence_id, s.frame));
    for group in sorted.chunk_by(|a, b| a.subject_id == b.subject_id) {
        let dir = root.join(subject_dir_name(group[0].subject_id));
        create_dir(&dir)?;
        for s in group {
            pgm::write_gray(&dir.join(gray_file_name(s.frame)), &s.gray)?;
            pgm::write_depth(&dir.join(depth_file_name(s.frame)), &s.depth)?;
        }
        let rows: Vec<Annotation> = group.iter().map(|s| Annotation::of(s)).collect();
        write_annotations(&dir.join(ANNOTATIONS), &rows)?;
    }
    Ok(())
}

/// Subject directories under `root` (names parsing as integers), by id.
pub fn subject_dirs(root: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        if let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse().ok()) {
            dirs.push((id, path));
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(root, "no subject directories found"));
    }
    Ok(dirs)
}

pub fn read_subject(dir: &Path, subject_id: u32) -> Result<Vec<FaceSample>> {
    let rows = read_annotations(&dir.join(ANNOTATIONS))?;
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let s = FaceSample {
            gray: pgm::read_gray(&dir.join(gray_file_name(r.frame)))?,
            depth: pgm::read_depth(&dir.join(depth_file_name(r.frame)))?,
            subject_id,
            sequence_id: r.sequence,
            frame: r.frame,
            head_center: (r.center_x, r.center_y),
            pose: r.pose(),
        };
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}

/// Loads a whole dataset ordered by (subject, sequence, frame).
pub fn read_dataset(root: &Path) -> Result<Vec<FaceSample>> {
    let mut all = Vec::new();
    for (id, dir) in subject_dirs(root)? {
        all.extend(read_subject(&dir, id)?);
    }
    all.sort_by_key(|s| (s.subject_id, s.sequence_id, s.frame));
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DepthMap, GrayImage};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |subject, frame, seq| FaceSample {
            gray: GrayImage::filled(4, 4, frame as u8),
            depth: DepthMap::filled(4, 4, 900 + frame as u16),
            subject_id: subject,
            sequence_id: seq,
            frame,
            head_center: (1.5, 2.25),
            pose: Pose { yaw: -12.125, pitch: 0.1, roll: 3.0 },
        };
        let samples = vec![mk(7, 0, 1), mk(7, 1, 2), mk(12, 0, 4)];
        write_dataset(dir.path(), &samples).unwrap();
        assert!(dir.path().join("07/0001_depth.pgm").is_file());
        assert_eq!(read_dataset(dir.path()).unwrap(), samples);
    }

    #[test]
    fn missing_annotations_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("01")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
    }
}
