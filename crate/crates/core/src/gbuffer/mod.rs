//! Per-pixel geometric attributes projected from the scene mesh, sun
//! visibility by shadow rays, and the synthetic forward renderer used as a
//! test oracle.

mod bvh;
pub mod render;

pub use bvh::{brute_force_intersect, intersect_triangle, Aabb, Bvh, Hit, Ray, MAX_LEAF};

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::image::{ImageError, PfmData, ScalarImage};
use crate::scene::{CameraPose, TriangleMesh, Vec3};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Shading coefficient of the uniform-sky term: `0.5 + 0.5 cos(angle to zenith)`.
#[inline]
pub fn k_sky(normal: &Vec3, zenith: &Vec3) -> f64 {
    (0.5 + 0.5 * normal.dot(zenith)).clamp(0.0, 1.0)
}

/// Sun cosine term, clamped at zero for surfaces facing away.
#[inline]
pub fn k_sun(normal: &Vec3, sun: &Vec3) -> f64 {
    normal.dot(sun).clamp(0.0, 1.0)
}

/// Shadow-ray origin offset along the normal for a scene.
pub fn shadow_bias(mesh: &TriangleMesh) -> f64 {
    1e-4 * mesh.diagonal()
}

/// Binary visibility of the sun from a surface point. Back-facing points
/// (`sun · n <= 0`) are never lit.
pub fn trace_sun_visibility(bvh: &Bvh, point: &Vec3, normal: &Vec3, sun: &Vec3, bias: f64) -> f32 {
    if normal.dot(sun) <= 0.0 {
        return 0.0;
    }
    let ray = Ray {
        origin: point + normal * bias,
        dir: *sun,
    };
    if bvh.occluded(&ray, 0.0, f64::INFINITY) {
        0.0
    } else {
        1.0
    }
}

/// Closest surface seen through one pixel.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceHit {
    pub point: Vec3,
    /// Interpolated, renormalized vertex normal.
    pub normal: Vec3,
    pub face: u32,
    pub depth: f64,
}

/// Primary-ray hits for every pixel, row-major.
pub fn primary_hits(mesh: &TriangleMesh, bvh: &Bvh, cam: &CameraPose, width: usize, height: usize) -> Vec<Option<SurfaceHit>> {
    let origin = cam.center();
    (0..height)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..width).map(move |x| {
                let ray = Ray {
                    origin,
                    dir: cam.ray_direction(x as f64, y as f64),
                };
                bvh.intersect(&ray, 0.0).map(|h| {
                    let f = mesh.faces[h.face as usize];
                    let n = mesh.vertex_normals[f[0] as usize] * (1.0 - h.u - h.v)
                        + mesh.vertex_normals[f[1] as usize] * h.u
                        + mesh.vertex_normals[f[2] as usize] * h.v;
                    let normal = n.try_normalize(1e-12).unwrap_or_else(|| mesh.face_normal(h.face as usize));
                    let point = ray.origin + ray.dir * h.t;
                    SurfaceHit {
                        point,
                        normal,
                        face: h.face,
                        depth: cam.depth_of(&point),
                    }
                })
            })
        })
        .collect()
}

/// Per-pixel geometric attributes of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    /// Camera-space depth; `+inf` on background.
    pub depth: ScalarImage,
    /// World-frame unit normals (zero on background).
    pub normal: Vec<[f32; 3]>,
    pub k_sun: ScalarImage,
    pub k_sky: ScalarImage,
    pub alpha_sun: ScalarImage,
    pub valid: Vec<bool>,
}

pub const GBUFFER_LAYERS: [&str; 5] = ["depth", "normal", "ksun", "ksky", "alpha"];

impl GBuffer {
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[self.index(x, y)]
    }

    #[inline]
    pub fn normal_at(&self, x: usize, y: usize) -> Vec3 {
        let n = self.normal[self.index(x, y)];
        Vec3::new(n[0] as f64, n[1] as f64, n[2] as f64)
    }

    pub fn from_hits(
        hits: &[Option<SurfaceHit>],
        width: usize,
        height: usize,
        bvh: &Bvh,
        sun: &Vec3,
        zenith: &Vec3,
        bias: f64,
    ) -> Self {
        let n = width * height;
        let rows: Vec<_> = hits
            .par_iter()
            .map(|h| match h {
                Some(h) => (
                    h.depth as f32,
                    [h.normal.x as f32, h.normal.y as f32, h.normal.z as f32],
                    k_sun(&h.normal, sun) as f32,
                    k_sky(&h.normal, zenith) as f32,
                    trace_sun_visibility(bvh, &h.point, &h.normal, sun, bias),
                    true,
                ),
                None => (f32::INFINITY, [0.0; 3], 0.0, 0.0, 0.0, false),
            })
            .collect();
        let mut depth = Vec::with_capacity(n);
        let mut normal = Vec::with_capacity(n);
        let mut ks = Vec::with_capacity(n);
        let mut kk = Vec::with_capacity(n);
        let mut alpha = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for (d, nn, a, b, al, v) in rows {
            depth.push(d);
            normal.push(nn);
            ks.push(a);
            kk.push(b);
            alpha.push(al);
            valid.push(v);
        }
        let img = |d| ScalarImage::new(width, height, d).expect("sized");
        Self {
            width,
            height,
            depth: img(depth),
            normal,
            k_sun: img(ks),
            k_sky: img(kk),
            alpha_sun: img(alpha),
            valid,
        }
    }

    /// Writes the five layers as PFM files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), GeometryError> {
        fs::create_dir_all(dir).map_err(|source| GeometryError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        self.depth.save(dir.join("depth.pfm"))?;
        let normal = PfmData {
            width: self.width,
            height: self.height,
            channels: 3,
            data: self.normal.iter().flatten().copied().collect(),
        };
        crate::image::write_pfm(&normal, &dir.join("normal.pfm"))?;
        self.k_sun.save(dir.join("ksun.pfm"))?;
        self.k_sky.save(dir.join("ksky.pfm"))?;
        self.alpha_sun.save(dir.join("alpha.pfm"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, GeometryError> {
        let depth = ScalarImage::load(dir.join("depth.pfm"))?;
        let (width, height) = (depth.width(), depth.height());
        let npath = dir.join("normal.pfm");
        let normal_pfm = crate::image::read_pfm(&npath)?;
        let k_sun = ScalarImage::load(dir.join("ksun.pfm"))?;
        let k_sky = ScalarImage::load(dir.join("ksky.pfm"))?;
        let alpha_sun = ScalarImage::load(dir.join("alpha.pfm"))?;
        for (what, w, h) in [
            ("normal", normal_pfm.width, normal_pfm.height),
            ("ksun", k_sun.width(), k_sun.height()),
            ("ksky", k_sky.width(), k_sky.height()),
            ("alpha", alpha_sun.width(), alpha_sun.height()),
        ] {
            if (w, h) != (width, height) || (what == "normal" && normal_pfm.channels != 3) {
                return Err(ImageError::DimensionMismatch {
                    what: format!("{}/{what}.pfm", dir.display()),
                    expected_w: width,
                    expected_h: height,
                    found_w: w,
                    found_h: h,
                }
                .into());
            }
        }
        let valid = depth.data().iter().map(|d| d.is_finite()).collect();
        let normal = normal_pfm.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Self {
            width,
            height,
            depth,
            normal,
            k_sun,
            k_sky,
            alpha_sun,
            valid,
        })
    }
}

/// Rasterizes the G-buffer of one view: primary ray through each pixel
/// center, nearest hit, Eq.-4 shading coefficients and shadow-ray
/// visibility. `sun` and `zenith` are world-frame unit vectors.
pub fn rasterize_gbuffer(
    mesh: &TriangleMesh,
    bvh: &Bvh,
    cam: &CameraPose,
    sun: &Vec3,
    zenith: &Vec3,
    width: usize,
    height: usize,
) -> GBuffer {
    let hits = primary_hits(mesh, bvh, cam, width, height);
    GBuffer::from_hits(&hits, width, height, bvh, sun, zenith, shadow_bias(mesh))
}
