use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_mesh, row_major, CameraPose, CaptureMeta, MetaFile, SceneError, TriangleMesh, Vec3};
use crate::image::LinearImage;

pub const CAMERAS_FILE: &str = "cameras.json";
pub const META_FILE: &str = "meta.json";
const MESH_FILES: [&str; 2] = ["mesh.obj", "mesh.ply"];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CamerasFile {
    images: Vec<CameraEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraEntry {
    file: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct ProjectImage {
    /// Identifier used for per-image output directories (file stem).
    pub name: String,
    /// Path relative to the project directory, as written in the manifest.
    pub file: String,
    pub image: LinearImage,
    pub pose: CameraPose,
}

#[derive(Debug, Clone)]
pub struct Project {
    pub dir: PathBuf,
    pub images: Vec<ProjectImage>,
    pub mesh: TriangleMesh,
    pub meta: CaptureMeta,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SceneError> {
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| SceneError::Schema {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SceneError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_project(dir: &Path) -> Result<Project, SceneError> {
    let cams_path = dir.join(CAMERAS_FILE);
    let cams: CamerasFile = read_json(&cams_path)?;
    if cams.images.is_empty() {
        return Err(SceneError::Schema {
            path: cams_path.display().to_string(),
            reason: "no images listed".into(),
        });
    }
    let meta_file: MetaFile = read_json(&dir.join(META_FILE))?;
    let meta = CaptureMeta::from_file(meta_file)?;

    let mesh_path = MESH_FILES
        .iter()
        .map(|f| dir.join(f))
        .find(|p| p.exists())
        .ok_or_else(|| SceneError::Schema {
            path: dir.display().to_string(),
            reason: "no mesh.obj or mesh.ply".into(),
        })?;
    let mesh = load_mesh(&mesh_path)?;

    let mut seen = HashSet::new();
    for (index, e) in cams.images.iter().enumerate() {
        if !dir.join(&e.file).is_file() {
            return Err(SceneError::DanglingImage {
                index,
                file: e.file.clone(),
            });
        }
        if !seen.insert(stem(&e.file)) {
            return Err(SceneError::Schema {
                path: cams_path.display().to_string(),
                reason: format!("duplicate image name {:?}", stem(&e.file)),
            });
        }
    }
    let images = cams
        .images
        .par_iter()
        .map(|e| {
            let pose = CameraPose::new(
                e.fx,
                e.fy,
                e.cx,
                e.cy,
                Matrix3::from_row_slice(&e.r),
                Vec3::from_row_slice(&e.t),
            )
            .map_err(|err| SceneError::Schema {
                path: cams_path.display().to_string(),
                reason: format!("{}: {err}", e.file),
            })?;
            let image = LinearImage::load(dir.join(&e.file))?;
            Ok(ProjectImage {
                name: stem(&e.file),
                file: e.file.clone(),
                image,
                pose,
            })
        })
        .collect::<Result<Vec<_>, SceneError>>()?;

    Ok(Project {
        dir: dir.to_path_buf(),
        images,
        mesh,
        meta,
    })
}

fn stem(file: &str) -> String {
    Path::new(file)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file.to_string())
}

/// Writes `cameras.json` for `(relative file, pose)` entries.
pub fn write_cameras(dir: &Path, entries: &[(String, CameraPose)]) -> Result<(), SceneError> {
    let file = CamerasFile {
        images: entries
            .iter()
            .map(|(f, p)| CameraEntry {
                file: f.clone(),
                fx: p.fx,
                fy: p.fy,
                cx: p.cx,
                cy: p.cy,
                r: row_major(&p.rotation),
                t: [p.translation.x, p.translation.y, p.translation.z],
            })
            .collect(),
    };
    write_json(&dir.join(CAMERAS_FILE), &file)
}

pub fn write_meta(dir: &Path, meta: &CaptureMeta) -> Result<(), SceneError> {
    write_json(&dir.join(META_FILE), &meta.to_file())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::write_obj;
    use nalgebra::Point3;

    fn minimal_project(dir: &Path) -> CameraPose {
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(-1.0, -1.0, 0.0),
                Point3::new(1.0, -1.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        write_obj(&mesh, &dir.join("mesh.obj")).unwrap();
        let meta = CaptureMeta::new(
            48.0,
            11.0,
            CaptureMeta::parse_timestamp("2021-06-21T09:00:00Z").unwrap(),
        )
        .unwrap();
        write_meta(dir, &meta).unwrap();
        fs::create_dir_all(dir.join("images")).unwrap();
        LinearImage::filled(4, 3, [0.2; 3])
            .unwrap()
            .save(dir.join("images/a.pfm"))
            .unwrap();
        let pose = CameraPose::look_at(
            Vec3::new(0.1, 0.2, 10.0),
            Vec3::zeros(),
            Vec3::y(),
            100.0,
            4,
            3,
        )
        .unwrap();
        write_cameras(dir, &[("images/a.pfm".into(), pose.clone())]).unwrap();
        pose
    }

    #[test]
    fn loads_with_identical_pose() {
        let dir = tempfile::tempdir().unwrap();
        let pose = minimal_project(dir.path());
        let p = load_project(dir.path()).unwrap();
        assert_eq!(p.images.len(), 1);
        assert_eq!(p.images[0].pose, pose);
        assert_eq!(p.images[0].name, "a");
        assert_eq!(p.meta.format_timestamp(), "2021-06-21T09:00:00Z");
    }

    #[test]
    fn dangling_reference_names_entry() {
        let dir = tempfile::tempdir().unwrap();
        let pose = minimal_project(dir.path());
        write_cameras(
            dir.path(),
            &[
                ("images/a.pfm".into(), pose.clone()),
                ("images/missing.pfm".into(), pose),
            ],
        )
        .unwrap();
        let err = load_project(dir.path()).unwrap_err();
        assert!(matches!(err, SceneError::DanglingImage { index: 1, .. }));
        assert!(err.to_string().contains("images/missing.pfm"));
    }

    #[test]
    fn schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        minimal_project(dir.path());
        fs::write(
            dir.path().join(CAMERAS_FILE),
            r#"{"images":[{"file":"images/a.pfm","fx":1}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_project(dir.path()),
            Err(SceneError::Schema { .. })
        ));
    }

    #[test]
    fn loading_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        minimal_project(dir.path());
        let a = load_project(dir.path()).unwrap();
        let b = load_project(dir.path()).unwrap();
        assert_eq!(a.mesh, b.mesh);
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.images[0].image, b.images[0].image);
    }
}
