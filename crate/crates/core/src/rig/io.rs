//! Rig and pose files.
//!
//! A rig is a JSON document
//! `{"joints": [{"name", "parent", "rest_transform": [16 row-major floats]}], "weights": "<sidecar>"}`
//! whose weight sidecar path is relative to the JSON file. The sidecar holds
//! two little-endian `u64` (vertex count, joint count) followed by the
//! row-major `f64` weight table. A pose is
//! `{"rotations": [[x, y, z], ...], "translation": [x, y, z]}`.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::{Joint, Pose, Rig};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointFile {
    name: String,
    parent: Option<usize>,
    rest_transform: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigFile {
    joints: Vec<JointFile>,
    weights: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    rotations: Vec<[f64; 3]>,
    #[serde(default)]
    translation: [f64; 3],
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::parse(path, format!("line {} column {}", e.line(), e.column()), e.to_string())
}

pub fn load_rig(path: impl AsRef<Path>) -> Result<Rig> {
    let path = path.as_ref();
    let file: RigFile = serde_json::from_slice(&read(path)?).map_err(|e| json_error(path, e))?;
    let mut joints = Vec::with_capacity(file.joints.len());
    for (i, j) in file.joints.into_iter().enumerate() {
        if j.rest_transform.len() != 16 {
            return Err(Error::parse(
                path,
                format!("joint {i}"),
                format!("rest_transform has {} entries, expected 16", j.rest_transform.len()),
            ));
        }
        joints.push(Joint {
            name: j.name,
            parent: j.parent,
            rest_transform: Matrix4::from_row_slice(&j.rest_transform),
        });
    }
    let sidecar = path.parent().unwrap_or(Path::new(".")).join(&file.weights);
    let bytes = read(&sidecar)?;
    if bytes.len() < 16 {
        return Err(Error::parse(&sidecar, "byte 0", "weight file header is truncated"));
    }
    let n = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let j = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if j != joints.len() {
        return Err(Error::parse(
            &sidecar,
            "byte 8",
            format!("weight table has {j} joints, rig declares {}", joints.len()),
        ));
    }
    let expected = n.checked_mul(j).and_then(|x| x.checked_mul(8)).map(|x| x + 16);
    if expected != Some(bytes.len()) {
        return Err(Error::parse(&sidecar, "byte 16", format!("expected {n} x {j} weights")));
    }
    let weights = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Rig::new(joints, weights, n)
}

/// Writes the rig JSON and its weight sidecar (`<stem>.weights` next to it).
pub fn save_rig(rig: &Rig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("rig");
    let sidecar_name = PathBuf::from(format!("{stem}.weights"));
    let file = RigFile {
        joints: rig
            .joints()
            .iter()
            .map(|j| JointFile {
                name: j.name.clone(),
                parent: j.parent,
                rest_transform: j.rest_transform.transpose().as_slice().to_vec(),
            })
            .collect(),
        weights: sidecar_name.clone(),
    };
    let json = serde_json::to_string_pretty(&file).expect("rig serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(16 + 8 * rig.weight_table().len());
    bytes.extend_from_slice(&(rig.n_vertices() as u64).to_le_bytes());
    bytes.extend_from_slice(&(rig.n_joints() as u64).to_le_bytes());
    for w in rig.weight_table() {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    let sidecar = path.parent().unwrap_or(Path::new(".")).join(sidecar_name);
    std::fs::write(&sidecar, bytes).map_err(|e| Error::io(&sidecar, e))
}

pub fn load_pose(path: impl AsRef<Path>) -> Result<Pose> {
    let path = path.as_ref();
    let file: PoseFile = serde_json::from_slice(&read(path)?).map_err(|e| json_error(path, e))?;
    let pose = Pose {
        rotations: file.rotations.iter().map(|r| Vector3::from(*r)).collect(),
        translation: Vector3::from(file.translation),
    };
    if pose.rotations.iter().chain(std::iter::once(&pose.translation)).any(|r| r.iter().any(|x| !x.is_finite())) {
        return Err(Error::parse(path, "pose", "non-finite rotation or translation"));
    }
    Ok(pose)
}

pub fn save_pose(pose: &Pose, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = PoseFile {
        rotations: pose.rotations.iter().map(|r| [r.x, r.y, r.z]).collect(),
        translation: [pose.translation.x, pose.translation.y, pose.translation.z],
    };
    let json = serde_json::to_string_pretty(&file).expect("pose serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rig_and_pose_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rig = Rig::new(
            vec![
                Joint {
                    name: "hip".into(),
                    parent: None,
                    rest_transform: Matrix4::new_translation(&Vector3::new(0.0, 1.0, 0.0)),
                },
                Joint {
                    name: "knee".into(),
                    parent: Some(0),
                    rest_transform: Matrix4::new_translation(&Vector3::new(0.1, 0.5, 0.0)),
                },
            ],
            vec![1.0, 0.0, 0.25, 0.75],
            2,
        )
        .unwrap();
        let path = dir.path().join("body.json");
        save_rig(&rig, &path).unwrap();
        assert!(dir.path().join("body.weights").exists());
        assert_eq!(load_rig(&path).unwrap(), rig);

        let pose = Pose {
            rotations: vec![Vector3::new(0.1, 0.2, 0.3), Vector3::new(-1.0, 0.0, 0.5)],
            translation: Vector3::new(1.0, 2.0, 3.0),
        };
        let ppath = dir.path().join("pose.json");
        save_pose(&pose, &ppath).unwrap();
        assert_eq!(load_pose(&ppath).unwrap(), pose);
    }

    #[test]
    fn malformed_files_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.json");
        std::fs::write(&p, r#"{"rotations": [[0, 0]], "translation": [0, 0, 0]}"#).unwrap();
        assert!(matches!(load_pose(&p), Err(Error::Parse { .. })));
        std::fs::write(&p, r#"{"rotations": [], "translaton": [0, 0, 0]}"#).unwrap();
        assert!(matches!(load_pose(&p), Err(Error::Parse { .. })));
        let r = dir.path().join("rig.json");
        std::fs::write(&r, r#"{"joints": [{"name": "a", "parent": null, "rest_transform": [1]}], "weights": "w"}"#).unwrap();
        assert!(matches!(load_rig(&r), Err(Error::Parse { .. })));
        assert!(matches!(load_rig(dir.path().join("missing.json")), Err(Error::Io { .. })));
    }
}
