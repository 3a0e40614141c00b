//! Synthetic forward renderer.
//!
//! Renders Lambertian scenes under the sun + uniform-sky model
//! `I = R ⊗ (L_sun α k_sun + L_sky k_sky)` with exactly the coefficients the
//! G-buffer computes, so decomposition results can be checked against known
//! albedo, shading and visibility. An extended sun disk produces penumbrae;
//! an optional constant ambient term stands in for indirect light when
//! studying its effect.

use std::fs;
use std::path::Path;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{k_sky, k_sun, primary_hits, shadow_bias, trace_sun_visibility, Bvh, GBuffer, GeometryError, Ray};
use crate::image::{LinearImage, ScalarImage};
use crate::scene::{write_cameras, write_meta, write_obj, CameraPose, CaptureMeta, TriangleMesh, Vec3};
use crate::solar::{sun_direction, sun_below_horizon, SunDirection};

/// Number of sun-disk samples per pixel for area lights.
pub const SUN_DISK_SAMPLES: usize = 16;

/// Mesh plus a constant diffuse albedo per face.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub mesh: TriangleMesh,
    pub face_albedo: Vec<[f64; 3]>,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self::new()
    }
}

impl SyntheticScene {
    pub fn new() -> Self {
        Self {
            mesh: TriangleMesh {
                vertices: vec![],
                faces: vec![],
                vertex_normals: vec![],
            },
            face_albedo: vec![],
        }
    }

    /// Adds a planar quad with flat normals; corners counter-clockwise seen
    /// from the side the normal points to.
    pub fn add_quad(&mut self, corners: [Vec3; 4], albedo: [f64; 3]) {
        let n = (corners[1] - corners[0]).cross(&(corners[2] - corners[0])).normalize();
        let quad = TriangleMesh {
            vertices: corners.iter().map(|c| Point3::from(*c)).collect(),
            faces: vec![[0, 1, 2], [0, 2, 3]],
            vertex_normals: vec![n; 4],
        };
        self.mesh.append(&quad);
        self.face_albedo.extend([albedo, albedo]);
    }

    /// Horizontal ground square `[-half, half]²` at z = 0.
    pub fn add_ground(&mut self, half: f64, albedo: [f64; 3]) {
        self.add_quad(
            [
                Vec3::new(-half, -half, 0.0),
                Vec3::new(half, -half, 0.0),
                Vec3::new(half, half, 0.0),
                Vec3::new(-half, half, 0.0),
            ],
            albedo,
        );
    }

    /// Axis-aligned box standing on the ground: roof plus four walls, each
    /// face with its own vertices so normals stay flat.
    pub fn add_box(&mut self, center: [f64; 2], size: [f64; 2], height: f64, roof: [f64; 3], walls: [f64; 3]) {
        let (x0, x1) = (center[0] - size[0] / 2.0, center[0] + size[0] / 2.0);
        let (y0, y1) = (center[1] - size[1] / 2.0, center[1] + size[1] / 2.0);
        let h = height;
        let v = |x, y, z| Vec3::new(x, y, z);
        self.add_quad([v(x0, y0, h), v(x1, y0, h), v(x1, y1, h), v(x0, y1, h)], roof);
        // south (-y), east (+x), north (+y), west (-x)
        self.add_quad([v(x0, y0, 0.0), v(x1, y0, 0.0), v(x1, y0, h), v(x0, y0, h)], walls);
        self.add_quad([v(x1, y0, 0.0), v(x1, y1, 0.0), v(x1, y1, h), v(x1, y0, h)], walls);
        self.add_quad([v(x1, y1, 0.0), v(x0, y1, 0.0), v(x0, y1, h), v(x1, y1, h)], walls);
        self.add_quad([v(x0, y1, 0.0), v(x0, y0, 0.0), v(x0, y0, h), v(x0, y1, h)], walls);
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.mesh.faces.is_empty() {
            return Err(GeometryError::DegenerateScene("no faces".into()));
        }
        if self.face_albedo.len() != self.mesh.faces.len() {
            return Err(GeometryError::DegenerateScene(format!(
                "{} albedo entries for {} faces",
                self.face_albedo.len(),
                self.mesh.faces.len()
            )));
        }
        if self
            .face_albedo
            .iter()
            .flatten()
            .any(|&a| !(a > 0.0 && a <= 1.0))
        {
            return Err(GeometryError::DegenerateScene("albedo components must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Light and sun-disk settings of a rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Illumination {
    pub l_sun: [f64; 3],
    pub l_sky: [f64; 3],
    /// Angular radius of the sun disk; 0 gives hard shadows.
    pub sun_radius_deg: f64,
    /// Constant ambient irradiance standing in for indirect light.
    #[serde(default)]
    pub ambient: Option<[f64; 3]>,
}

impl Illumination {
    fn validate(&self) -> Result<(), GeometryError> {
        if self.l_sun.iter().chain(&self.l_sky).any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(GeometryError::DegenerateScene("light intensities must be positive".into()));
        }
        if !(0.0..5.0).contains(&self.sun_radius_deg) {
            return Err(GeometryError::DegenerateScene("sun radius must lie in [0, 5) degrees".into()));
        }
        Ok(())
    }
}

/// Rendered image plus ground-truth layers.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: LinearImage,
    pub albedo: LinearImage,
    pub shading: LinearImage,
    pub alpha: ScalarImage,
    pub gbuffer: GBuffer,
}

/// Fraction of the sun disk visible from a surface point, from
/// [`SUN_DISK_SAMPLES`] stratified samples jittered by `rng`.
///
/// The center and eight rim directions are traced first; when they all
/// agree the point is treated as fully lit or fully shadowed.
pub fn area_sun_visibility(
    bvh: &Bvh,
    point: &Vec3,
    normal: &Vec3,
    sun: &Vec3,
    radius_rad: f64,
    bias: f64,
    rng: &mut impl Rng,
) -> f32 {
    if radius_rad <= 0.0 {
        return trace_sun_visibility(bvh, point, normal, sun, bias);
    }
    let e1 = sun.cross(&Vec3::z()).try_normalize(1e-9).unwrap_or_else(Vec3::x);
    let e2 = sun.cross(&e1);
    let spread = radius_rad.tan();
    let origin = point + normal * bias;
    let lit = |dir: Vec3| -> bool {
        let dir = dir.normalize();
        dir.dot(normal) > 0.0 && !bvh.occluded(&Ray { origin, dir }, 0.0, f64::INFINITY)
    };
    let center = lit(*sun);
    let uniform = (0..8).all(|k| {
        let th = k as f64 * std::f64::consts::FRAC_PI_4;
        lit(sun + (e1 * th.cos() + e2 * th.sin()) * spread) == center
    });
    if uniform {
        return if center { 1.0 } else { 0.0 };
    }
    let strata = (SUN_DISK_SAMPLES as f64).sqrt() as usize;
    let mut visible = 0usize;
    for i in 0..strata {
        for j in 0..strata {
            let r = ((i as f64 + rng.random::<f64>()) / strata as f64).sqrt();
            let th = std::f64::consts::TAU * (j as f64 + rng.random::<f64>()) / strata as f64;
            if lit(sun + (e1 * th.cos() + e2 * th.sin()) * (spread * r)) {
                visible += 1;
            }
        }
    }
    visible as f32 / (strata * strata) as f32
}

fn pixel_rng(seed: u64, pixel: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ pixel as u64)
}

/// Renders one view. `sun` and `zenith` are world-frame unit vectors.
#[allow(clippy::too_many_arguments)]
pub fn render_view(
    scene: &SyntheticScene,
    bvh: &Bvh,
    cam: &CameraPose,
    sun: &Vec3,
    zenith: &Vec3,
    illum: &Illumination,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<RenderedView, GeometryError> {
    scene.validate()?;
    illum.validate()?;
    let hits = primary_hits(&scene.mesh, bvh, cam, width, height);
    let bias = shadow_bias(&scene.mesh);
    let gbuffer = GBuffer::from_hits(&hits, width, height, bvh, sun, zenith, bias);
    let radius = illum.sun_radius_deg.to_radians();
    let ambient = illum.ambient.unwrap_or([0.0; 3]);

    let pixels: Vec<([f32; 3], [f32; 3], [f32; 3], f32)> = hits
        .par_iter()
        .enumerate()
        .map(|(i, h)| match h {
            None => {
                let sky = illum.l_sky.map(|l| l as f32);
                (sky, [0.0; 3], [0.0; 3], 0.0)
            }
            Some(h) => {
                let mut rng = pixel_rng(seed, i);
                let alpha = area_sun_visibility(bvh, &h.point, &h.normal, sun, radius, bias, &mut rng);
                let ks = k_sun(&h.normal, sun);
                let kk = k_sky(&h.normal, zenith);
                let albedo = scene.face_albedo[h.face as usize];
                let mut rgb = [0f32; 3];
                let mut shading = [0f32; 3];
                for c in 0..3 {
                    let s = illum.l_sun[c] * alpha as f64 * ks + illum.l_sky[c] * kk + ambient[c];
                    shading[c] = s as f32;
                    rgb[c] = (albedo[c] * s) as f32;
                }
                (rgb, albedo.map(|a| a as f32), shading, alpha)
            }
        })
        .collect();

    let mut img = Vec::with_capacity(width * height * 3);
    let mut alb = Vec::with_capacity(width * height * 3);
    let mut sh = Vec::with_capacity(width * height * 3);
    let mut alpha = Vec::with_capacity(width * height);
    for (p, a, s, al) in pixels {
        img.extend_from_slice(&p);
        alb.extend_from_slice(&a);
        sh.extend_from_slice(&s);
        alpha.push(al);
    }
    Ok(RenderedView {
        image: LinearImage::new(width, height, img)?,
        albedo: LinearImage::new(width, height, alb)?,
        shading: LinearImage::new(width, height, sh)?,
        alpha: ScalarImage::new(width, height, alpha)?,
        gbuffer,
    })
}

/// Record of the true lighting, written next to a synthetic project.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SunRecord {
    pub sun: SunDirection,
    pub illumination: Illumination,
    pub ratio: [f64; 3],
}

pub const SUN_RECORD_FILE: &str = "sun.json";
pub const TRUTH_DIR: &str = "truth";

/// Writes a complete project directory: `images/*.pfm`, `cameras.json`,
/// `meta.json`, `mesh.obj`, `sun.json`, and per-image ground truth under
/// `truth/<name>/{albedo,shading,alpha}.pfm`. The sun direction is derived
/// from `meta`, so the project is self-consistent for the pipeline.
#[allow(clippy::too_many_arguments)]
pub fn render_synthetic_project(
    dir: &Path,
    scene: &SyntheticScene,
    meta: &CaptureMeta,
    cams: &[CameraPose],
    illum: &Illumination,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<SunDirection, GeometryError> {
    scene.validate()?;
    illum.validate()?;
    if cams.is_empty() {
        return Err(GeometryError::DegenerateScene("no cameras".into()));
    }
    let sun = sun_direction(meta).map_err(|e| GeometryError::DegenerateScene(e.to_string()))?;
    if sun_below_horizon(&sun) {
        return Err(GeometryError::DegenerateScene(format!(
            "sun below horizon at {}",
            meta.format_timestamp()
        )));
    }
    let sun_w = sun.world(meta);
    let zenith = meta.zenith_world();
    let bvh = Bvh::build(&scene.mesh)?;
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|source| GeometryError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    mkdir(&dir.join("images"))?;
    let mut entries = Vec::new();
    for (k, cam) in cams.iter().enumerate() {
        let name = format!("view_{k:02}");
        let view = render_view(scene, &bvh, cam, &sun_w, &zenith, illum, width, height, seed.wrapping_add(k as u64))?;
        let file = format!("images/{name}.pfm");
        view.image.save(dir.join(&file))?;
        let tdir = dir.join(TRUTH_DIR).join(&name);
        mkdir(&tdir)?;
        view.albedo.save(tdir.join("albedo.pfm"))?;
        view.shading.save(tdir.join("shading.pfm"))?;
        view.alpha.save(tdir.join("alpha.pfm"))?;
        entries.push((file, cam.clone()));
    }
    write_cameras(dir, &entries)?;
    write_meta(dir, meta)?;
    write_obj(&scene.mesh, &dir.join("mesh.obj"))?;
    let record = SunRecord {
        sun,
        illumination: *illum,
        ratio: [0, 1, 2].map(|c| illum.l_sun[c] / illum.l_sky[c]),
    };
    let path = dir.join(SUN_RECORD_FILE);
    fs::write(&path, serde_json::to_string_pretty(&record).expect("serializable") + "\n").map_err(|source| {
        GeometryError::Io {
            path: path.display().to_string(),
            source,
        }
    })?;
    Ok(sun)
}

/// Width of the penumbra cast on flat ground by a horizontal edge at
/// `height` perpendicular to the sun azimuth.
pub fn analytic_penumbra_width(height: f64, elevation_deg: f64, radius_deg: f64) -> f64 {
    let cot = |deg: f64| 1.0 / deg.to_radians().tan();
    height * (cot(elevation_deg - radius_deg) - cot(elevation_deg + radius_deg))
}
