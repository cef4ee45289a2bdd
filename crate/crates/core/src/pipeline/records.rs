use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Pose;

/// Estimation failed; the pose is the forward-kinematics prediction.
pub const FLAG_PREDICTED_ONLY: &str = "predicted_only";
/// Symmetry modes were paired against the base frame.
pub const FLAG_DISAMBIGUATED: &str = "disambiguated";
/// The frame's own matches were excluded as mode-inconsistent.
pub const FLAG_MODE_REJECTED: &str = "mode_rejected";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Diagnostics {
    pub candidates: usize,
    /// Inliers of the working candidate.
    pub inliers: usize,
    pub pool_size: usize,
    pub keyframes: usize,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_residual_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One line of the estimates file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub frame_id: u64,
    pub pose: Pose,
    pub flags: Vec<String>,
    pub diagnostics: Diagnostics,
}

impl EstimateRecord {
    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::json(path, e))?;
        buf.push(b'\n');
    }
    create_parent(path)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Writes estimates as JSON lines.
pub fn write_estimates(path: &Path, records: &[EstimateRecord]) -> Result<()> {
    write_lines(path, records)
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub frame_id: u64,
    pub wall_seconds: f64,
}

/// `<output>.timing.jsonl`, next to the estimates file.
pub fn timing_path(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".timing.jsonl");
    output.with_file_name(name)
}

pub fn write_timing(path: &Path, timings: &[FrameTiming]) -> Result<()> {
    write_lines(path, timings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Rotation, Vec3};

    #[test]
    fn estimates_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("est.jsonl");
        let recs = vec![
            EstimateRecord {
                frame_id: 0,
                pose: Pose::new(Rotation::rx(0.3), Vec3::new(0.1, -0.2, 0.7)),
                flags: vec![],
                diagnostics: Diagnostics {
                    candidates: 5,
                    inliers: 100,
                    final_cost: Some(1.25),
                    ..Diagnostics::default()
                },
            },
            EstimateRecord {
                frame_id: 1,
                pose: Pose::identity(),
                flags: vec![FLAG_PREDICTED_ONLY.into()],
                diagnostics: Diagnostics {
                    error: Some("no candidate".into()),
                    ..Diagnostics::default()
                },
            },
        ];
        write_estimates(&path, &recs).unwrap();
        assert_eq!(read_estimates(&path).unwrap(), recs);
        assert!(recs[1].has_flag(FLAG_PREDICTED_ONLY));
    }

    #[test]
    fn bad_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "\n{oops}\n").unwrap();
        let err = read_estimates(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn timing_sidecar_name() {
        assert_eq!(
            timing_path(Path::new("out/est.jsonl")),
            PathBuf::from("out/est.jsonl.timing.jsonl")
        );
    }
}
