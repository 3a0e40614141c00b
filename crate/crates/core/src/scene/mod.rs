//! Scene data model: cameras, geometry, capture metadata, and the on-disk
//! project layout produced by an upstream photogrammetry tool.

mod mesh_io;
mod project;

pub use mesh_io::{load_mesh, write_obj, write_ply};
pub use project::{load_project, write_cameras, write_meta, Project, ProjectImage, CAMERAS_FILE, META_FILE};

use chrono::{DateTime, Datelike, NaiveDateTime, Utc};
use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageError;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: schema mismatch: {reason}")]
    Schema { path: String, reason: String },
    #[error("cameras manifest entry {index} references missing image {file}")]
    DanglingImage { index: usize, file: String },
    #[error("{path}: mesh has no faces")]
    EmptyMesh { path: String },
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    FaceIndex { face: usize, index: usize, count: usize },
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid capture metadata: {0}")]
    Meta(String),
    #[error("{path}: unsupported mesh format: {reason}")]
    MeshFormat { path: String, reason: String },
}

/// Pinhole camera with world-to-camera extrinsics: `x_cam = R x_world + t`.
/// The camera looks down +z, image x to the right and y downward; integer
/// pixel coordinates are pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vec3,
    ) -> Result<Self, SceneError> {
        let pose = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SceneError::Camera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(SceneError::Camera(format!(
                "rotation is not a proper orthonormal matrix (|RᵀR − I| = {err:.3e}, det = {:.12})",
                r.determinant()
            )));
        }
        Ok(())
    }

    /// Camera built from an eye point looking at `target`, with `up` used to
    /// fix the roll.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, SceneError> {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::y());
        }
        let right = right.normalize();
        // image y points down
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
        )
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-space unit direction of the ray through pixel (u, v).
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        let d_cam = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.rotation.transpose() * d_cam).normalize()
    }

    /// Camera-space depth (z) of a world point.
    pub fn depth_of(&self, p: &Vec3) -> f64 {
        (self.rotation * p + self.translation).z
    }

    /// Projects a world point to pixel coordinates; `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.rotation * p + self.translation;
        if c.z <= 0.0 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }

    /// World point at camera-space depth `depth` along pixel (u, v).
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let c = Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        self.rotation.transpose() * (c - self.translation)
    }
}

/// Triangle mesh in the world frame (z up).
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub vertex_normals: Vec<Vec3>,
}

impl TriangleMesh {
    /// Validates indices and fills in vertex normals when `normals` is `None`.
    pub fn new(
        vertices: Vec<Point3<f64>>,
        faces: Vec<[u32; 3]>,
        normals: Option<Vec<Vec3>>,
    ) -> Result<Self, SceneError> {
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i as usize >= vertices.len() {
                    return Err(SceneError::FaceIndex {
                        face: fi,
                        index: i as usize,
                        count: vertices.len(),
                    });
                }
            }
        }
        let vertex_normals = match normals {
            Some(n) if n.len() == vertices.len() => n
                .into_iter()
                .map(|v| {
                    let len = v.norm();
                    if len > 0.0 && len.is_finite() {
                        v / len
                    } else {
                        Vec3::z()
                    }
                })
                .collect(),
            _ => area_weighted_normals(&vertices, &faces),
        };
        Ok(Self {
            vertices,
            faces,
            vertex_normals,
        })
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0] as usize].coords,
            self.vertices[f[1] as usize].coords,
            self.vertices[f[2] as usize].coords,
        ]
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Diagonal of the axis-aligned bounding box.
    pub fn diagonal(&self) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(&v.coords);
            hi = hi.sup(&v.coords);
        }
        (hi - lo).norm()
    }

    /// Appends another mesh, offsetting its indices.
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.vertex_normals.extend_from_slice(&other.vertex_normals);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }
}

/// Vertex normals as the area-weighted average of incident face normals.
pub fn area_weighted_normals(vertices: &[Point3<f64>], faces: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i as usize].coords);
        // |cross| is twice the triangle area
        let n = (b - a).cross(&(c - a));
        for &i in f {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vec3::z()
            }
        })
        .collect()
}

/// Geotag and capture time of a collection.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureMeta {
    pub latitude: f64,
    pub longitude: f64,
    pub timestamp_utc: DateTime<Utc>,
    /// Maps world coordinates to East/North/Up. Identity when the world
    /// frame already is ENU.
    pub world_to_enu: Matrix3<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct MetaFile {
    pub latitude: f64,
    pub longitude: f64,
    pub timestamp_utc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_to_enu: Option<[f64; 9]>,
}

impl CaptureMeta {
    pub fn new(latitude: f64, longitude: f64, timestamp_utc: DateTime<Utc>) -> Result<Self, SceneError> {
        let meta = Self {
            latitude,
            longitude,
            timestamp_utc,
            world_to_enu: Matrix3::identity(),
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(SceneError::Meta(format!("latitude {} outside [-90, 90]", self.latitude)));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(SceneError::Meta(format!(
                "longitude {} outside [-180, 180]",
                self.longitude
            )));
        }
        let year = self.timestamp_utc.year();
        if !(1900..=2100).contains(&year) {
            return Err(SceneError::Meta(format!("year {year} outside 1900–2100")));
        }
        let r = &self.world_to_enu;
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(SceneError::Meta("world_to_enu is not a rotation".into()));
        }
        Ok(())
    }

    /// Parses `YYYY-MM-DDThh:mm:ssZ`.
    pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, SceneError> {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%SZ")
            .map(|t| t.and_utc())
            .map_err(|e| SceneError::Meta(format!("timestamp {s:?}: {e} (expected YYYY-MM-DDThh:mm:ssZ)")))
    }

    pub fn format_timestamp(&self) -> String {
        self.timestamp_utc.format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }

    /// Zenith direction expressed in world coordinates.
    pub fn zenith_world(&self) -> Vec3 {
        self.enu_to_world(&Vec3::z())
    }

    pub fn enu_to_world(&self, v: &Vec3) -> Vec3 {
        self.world_to_enu.transpose() * v
    }

    pub(crate) fn from_file(m: MetaFile) -> Result<Self, SceneError> {
        let mut meta = Self {
            latitude: m.latitude,
            longitude: m.longitude,
            timestamp_utc: Self::parse_timestamp(&m.timestamp_utc)?,
            world_to_enu: Matrix3::identity(),
        };
        if let Some(r) = m.world_to_enu {
            meta.world_to_enu = Matrix3::from_row_slice(&r);
        }
        meta.validate()?;
        Ok(meta)
    }

    pub(crate) fn to_file(&self) -> MetaFile {
        let identity = self.world_to_enu == Matrix3::identity();
        MetaFile {
            latitude: self.latitude,
            longitude: self.longitude,
            timestamp_utc: self.format_timestamp(),
            world_to_enu: (!identity).then(|| row_major(&self.world_to_enu)),
        }
    }
}

pub(crate) fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}
