//! Stage computations and their on-disk layouts, shared by the pipeline
//! runner and the stage-wise commands.
//!
//! Per-image outputs live in `<dir>/<image name>/`: G-buffer layers
//! (`depth.pfm`, `normal.pfm`, `ksun.pfm`, `ksky.pfm`, `alpha.pfm`),
//! refined masks (`mask.pfm`), soft visibility (`alpha.pfm`,
//! `blend_weight.pfm`) and decompositions (`albedo.pfm`, `shading.pfm`,
//! `flags.png`).

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::EvalParams;
use crate::crf::{refine_visibility, CrfParams, Provenance, VisibilityMask};
use crate::decompose::eval::{evaluate, masked_median, near_shadow_boundary, patch_consistency, umbra_contrast, Metrics};
use crate::decompose::{assemble_shading, decompose_albedo, load_flags, save_flags, AlbedoResult, DecomposeParams, PixelFlag};
use crate::gbuffer::{rasterize_gbuffer, Bvh, GBuffer};
use crate::image::{LinearImage, ScalarImage};
use crate::light::{estimate_ratio, extract_boundary_pairs, filter_pairs, white_level, IlluminationRatio, LightError, LightParams};
use crate::penumbra::{soften_view, PenumbraParams, SoftVisibility, SoftenStats};
use crate::scene::{CameraPose, Project};
use crate::solar::{sun_below_horizon, sun_direction, SunDirection};

pub const MASK_FILE: &str = "mask.pfm";
pub const SOFT_ALPHA_FILE: &str = "alpha.pfm";
pub const BLEND_WEIGHT_FILE: &str = "blend_weight.pfm";

/// Error message of a stage, without the stage name.
pub type StageResult<T> = Result<T, String>;

fn io<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Creates `dir` empty, removing whatever a previous run left there.
pub fn fresh_dir(dir: &Path) -> StageResult<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> StageResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(io)? + "\n";
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> StageResult<T> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn compute_sun(project: &Project) -> StageResult<SunDirection> {
    let sun = sun_direction(&project.meta).map_err(io)?;
    if sun_below_horizon(&sun) {
        return Err(format!(
            "sun is below the horizon (elevation {:.2}°) at {}",
            sun.elevation_deg,
            project.meta.format_timestamp()
        ));
    }
    Ok(sun)
}

pub fn compute_gbuffers(project: &Project, sun: &SunDirection) -> StageResult<Vec<GBuffer>> {
    let bvh = Bvh::build(&project.mesh).map_err(io)?;
    let sun_w = sun.world(&project.meta);
    let zenith = project.meta.zenith_world();
    Ok(project
        .images
        .iter()
        .map(|im| rasterize_gbuffer(&project.mesh, &bvh, &im.pose, &sun_w, &zenith, im.image.width(), im.image.height()))
        .collect())
}

pub fn save_gbuffers(dir: &Path, names: &[String], gbufs: &[GBuffer]) -> StageResult<()> {
    fresh_dir(dir)?;
    for (name, g) in names.iter().zip(gbufs) {
        g.save(&dir.join(name)).map_err(io)?;
    }
    Ok(())
}

pub fn load_gbuffers(dir: &Path, names: &[String]) -> StageResult<Vec<GBuffer>> {
    names.iter().map(|n| GBuffer::load(&dir.join(n)).map_err(io)).collect()
}

pub fn refine_masks(project: &Project, gbufs: &[GBuffer], params: &CrfParams) -> StageResult<Vec<VisibilityMask>> {
    project
        .images
        .par_iter()
        .zip(gbufs)
        .map(|(im, g)| {
            let init = VisibilityMask::from_gbuffer(g, params.unary_confidence as f32);
            refine_visibility(&init, &im.image, g, params).map_err(|e| format!("{}: {e}", im.name))
        })
        .collect()
}

pub fn save_masks(dir: &Path, names: &[String], masks: &[VisibilityMask]) -> StageResult<()> {
    fresh_dir(dir)?;
    for (name, m) in names.iter().zip(masks) {
        fs::create_dir_all(dir.join(name)).map_err(io)?;
        m.save(dir.join(name).join(MASK_FILE)).map_err(io)?;
    }
    Ok(())
}

pub fn load_masks(dir: &Path, names: &[String]) -> StageResult<Vec<VisibilityMask>> {
    names
        .iter()
        .map(|n| VisibilityMask::load(dir.join(n).join(MASK_FILE), Provenance::Refined).map_err(io))
        .collect()
}

/// Pools filtered pairs over all images and fits the ratio. A collection
/// without usable pairs yields a rejected estimate rather than an error.
pub fn estimate_light(
    project: &Project,
    masks: &[VisibilityMask],
    gbufs: &[GBuffer],
    params: &LightParams,
) -> StageResult<IlluminationRatio> {
    params.validate().map_err(io)?;
    let per_image: Vec<_> = project
        .images
        .par_iter()
        .zip(masks)
        .zip(gbufs)
        .enumerate()
        .map(|(i, ((im, m), g))| {
            let raw = extract_boundary_pairs(i, &im.image, m, g, params.d_off)?;
            Ok(filter_pairs(raw, white_level(&im.image, params.white_quantile), params))
        })
        .collect::<Result<Vec<_>, LightError>>()
        .map_err(io)?;
    let counts: Vec<usize> = per_image.iter().map(Vec::len).collect();
    let pooled: Vec<_> = per_image.into_iter().flatten().collect();
    let n = pooled.len();
    match estimate_ratio(&pooled, params) {
        Ok(mut est) => {
            est.pairs_per_image = counts;
            Ok(est)
        }
        Err(e @ (LightError::NoPairs | LightError::TooFewSamples { .. })) => {
            Ok(IlluminationRatio::rejected(format!("{e}; the collection shows no usable shadow boundaries"), n, counts))
        }
        Err(e) => Err(e.to_string()),
    }
}

pub fn soften_all(
    project: &Project,
    masks: &[VisibilityMask],
    gbufs: &[GBuffer],
    ratio: &IlluminationRatio,
    params: &PenumbraParams,
) -> StageResult<Vec<(SoftVisibility, SoftenStats)>> {
    project
        .images
        .iter()
        .zip(masks)
        .zip(gbufs)
        .map(|((im, m), g)| {
            let (soft, _, stats) = soften_view(m, g, &im.image, ratio, params).map_err(|e| format!("{}: {e}", im.name))?;
            Ok((soft, stats))
        })
        .collect()
}

pub fn save_soft(dir: &Path, names: &[String], soft: &[(SoftVisibility, SoftenStats)]) -> StageResult<()> {
    fresh_dir(dir)?;
    for (name, (s, stats)) in names.iter().zip(soft) {
        let d = dir.join(name);
        fs::create_dir_all(&d).map_err(io)?;
        s.alpha.save(d.join(SOFT_ALPHA_FILE)).map_err(io)?;
        s.blend_weight.save(d.join(BLEND_WEIGHT_FILE)).map_err(io)?;
        write_json(stats, &d.join("profiles.json"))?;
    }
    Ok(())
}

pub fn load_soft(dir: &Path, names: &[String]) -> StageResult<Vec<(SoftVisibility, SoftenStats)>> {
    names
        .iter()
        .map(|n| {
            let d = dir.join(n);
            Ok((
                SoftVisibility {
                    alpha: ScalarImage::load(d.join(SOFT_ALPHA_FILE)).map_err(io)?,
                    blend_weight: ScalarImage::load(d.join(BLEND_WEIGHT_FILE)).map_err(io)?,
                },
                read_json(&d.join("profiles.json"))?,
            ))
        })
        .collect()
}

/// Visibility for decomposition: the soft `alpha.pfm` when present,
/// otherwise a binary `mask.pfm`.
pub fn load_visibility(dir: &Path, name: &str) -> StageResult<ScalarImage> {
    let soft = dir.join(name).join(SOFT_ALPHA_FILE);
    if soft.exists() {
        return ScalarImage::load(soft).map_err(io);
    }
    ScalarImage::load(dir.join(name).join(MASK_FILE)).map_err(io)
}

pub fn decompose_all(
    project: &Project,
    gbufs: &[GBuffer],
    alphas: &[&ScalarImage],
    ratio: &IlluminationRatio,
    params: &DecomposeParams,
) -> StageResult<Vec<AlbedoResult>> {
    if !ratio.accepted {
        return Err("illumination ratio was not accepted".into());
    }
    project
        .images
        .iter()
        .zip(gbufs)
        .zip(alphas)
        .map(|((im, g), a)| {
            let s = assemble_shading(g, a, ratio.ratio).map_err(|e| format!("{}: {e}", im.name))?;
            decompose_albedo(&im.image, &s, &g.valid, params).map_err(|e| format!("{}: {e}", im.name))
        })
        .collect()
}

pub fn save_decomposed(dir: &Path, names: &[String], results: &[AlbedoResult]) -> StageResult<()> {
    fresh_dir(dir)?;
    for (name, r) in names.iter().zip(results) {
        let d = dir.join(name);
        fs::create_dir_all(&d).map_err(io)?;
        r.albedo.save(d.join("albedo.pfm")).map_err(io)?;
        r.shading.save(d.join("shading.pfm")).map_err(io)?;
        save_flags(&r.flags, r.albedo.width(), r.albedo.height(), &d.join("flags.png")).map_err(io)?;
    }
    Ok(())
}

pub fn load_decomposed(dir: &Path, name: &str) -> StageResult<AlbedoResult> {
    let d = dir.join(name);
    let albedo = LinearImage::load(d.join("albedo.pfm")).map_err(io)?;
    let shading = LinearImage::load(d.join("shading.pfm")).map_err(io)?;
    let (flags, w, h) = load_flags(&d.join("flags.png")).map_err(io)?;
    if (w, h) != (albedo.width(), albedo.height()) || (w, h) != (shading.width(), shading.height()) {
        return Err(format!("{}: layer sizes differ", d.display()));
    }
    Ok(AlbedoResult { albedo, shading, flags })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagCounts {
    pub ok: usize,
    pub invalid_geometry: usize,
    pub shading_floor: usize,
    pub overexposed: usize,
}

impl FlagCounts {
    pub fn of(r: &AlbedoResult) -> Self {
        Self {
            ok: r.count(PixelFlag::Ok),
            invalid_geometry: r.count(PixelFlag::InvalidGeometry),
            shading_floor: r.count(PixelFlag::ShadingFloor),
            overexposed: r.count(PixelFlag::Overexposed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEval {
    pub name: String,
    /// Pixels scored: flag ok and outside the boundary band.
    pub scored_pixels: usize,
    pub albedo: Metrics,
    pub shading: Metrics,
    /// Relative mean-albedo difference between true umbra and lit pixels of
    /// one surface; the same statistic on the input image for comparison.
    pub umbra_contrast_albedo: Option<f64>,
    pub umbra_contrast_image: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewEval>,
    pub max_albedo_si_rmse: f64,
    pub mean_albedo_si_rmse: f64,
    /// Coefficient of variation of the tracked patch's median albedo across
    /// images; unset when fewer than two images see the patch.
    pub patch_consistency: Option<f64>,
}

impl EvalReport {
    pub fn from_views(views: Vec<ViewEval>, patch_consistency: Option<f64>) -> Self {
        let si: Vec<f64> = views.iter().map(|v| v.albedo.si_rmse).collect();
        Self {
            max_albedo_si_rmse: si.iter().copied().fold(0.0, f64::max),
            mean_albedo_si_rmse: si.iter().sum::<f64>() / si.len().max(1) as f64,
            patch_consistency,
            views,
        }
    }
}

struct Truth {
    albedo: LinearImage,
    shading: LinearImage,
    alpha: ScalarImage,
}

fn load_truth(dir: &Path) -> StageResult<Truth> {
    Ok(Truth {
        albedo: LinearImage::load(dir.join("albedo.pfm")).map_err(io)?,
        shading: LinearImage::load(dir.join("shading.pfm")).map_err(io)?,
        alpha: ScalarImage::load(dir.join("alpha.pfm")).map_err(io)?,
    })
}

fn scored_mask(pred: &AlbedoResult, truth: &Truth, params: &EvalParams) -> Vec<bool> {
    let band = near_shadow_boundary(&truth.alpha, params.boundary_exclusion);
    pred.flags.iter().zip(&band).map(|(&f, &b)| f == PixelFlag::Ok && !b).collect()
}

/// Scores one decomposition against `truth_dir/{albedo,shading,alpha}.pfm`.
/// `k_sun` (from the G-buffer) selects sun-facing umbra pixels; without it
/// every `α = 0` pixel counts as umbra.
pub fn evaluate_view(
    name: &str,
    pred: &AlbedoResult,
    image: Option<&LinearImage>,
    k_sun: Option<&ScalarImage>,
    truth_dir: &Path,
    params: &EvalParams,
) -> StageResult<ViewEval> {
    let truth = load_truth(truth_dir)?;
    let (w, h) = (pred.albedo.width(), pred.albedo.height());
    if (truth.albedo.width(), truth.albedo.height()) != (w, h) {
        return Err(format!("{name}: truth and prediction sizes differ"));
    }
    let mask = scored_mask(pred, &truth, params);
    let albedo = evaluate(&pred.albedo, &truth.albedo, &mask).map_err(|e| format!("{name}: {e}"))?;
    let shading = evaluate(&pred.shading, &truth.shading, &mask).map_err(|e| format!("{name}: {e}"))?;
    let ones = ScalarImage::filled(w, h, 1.0);
    let ks = k_sun.unwrap_or(&ones);
    Ok(ViewEval {
        name: name.to_string(),
        scored_pixels: albedo.n_pixels,
        umbra_contrast_albedo: umbra_contrast(&pred.albedo, &truth.albedo, &truth.alpha, ks, &mask),
        umbra_contrast_image: image.and_then(|im| umbra_contrast(im, &truth.albedo, &truth.alpha, ks, &mask)),
        albedo,
        shading,
    })
}

fn patch_pixels(cam: &CameraPose, g: &GBuffer, center: [f64; 2], radius: f64) -> Vec<bool> {
    (0..g.width * g.height)
        .map(|i| {
            if !g.valid[i] {
                return false;
            }
            let p = cam.unproject((i % g.width) as f64, (i / g.width) as f64, g.depth.data()[i] as f64);
            (p.x - center[0]).hypot(p.y - center[1]) <= radius
        })
        .collect()
}

pub fn evaluate_project(
    project: &Project,
    gbufs: &[GBuffer],
    results: &[AlbedoResult],
    params: &EvalParams,
) -> StageResult<EvalReport> {
    let truth_root = project.dir.join(crate::gbuffer::render::TRUTH_DIR);
    let views: Vec<ViewEval> = project
        .images
        .iter()
        .zip(gbufs)
        .zip(results)
        .map(|((im, g), r)| evaluate_view(&im.name, r, Some(&im.image), Some(&g.k_sun), &truth_root.join(&im.name), params))
        .collect::<StageResult<_>>()?;
    let center = params.patch_center.unwrap_or_else(|| {
        let (lo, hi) = project.mesh.vertices.iter().fold(([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]), |(lo, hi), v| {
            ([lo[0].min(v.x), lo[1].min(v.y)], [hi[0].max(v.x), hi[1].max(v.y)])
        });
        [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0]
    });
    let medians: Vec<[f64; 3]> = project
        .images
        .iter()
        .zip(gbufs)
        .zip(results)
        .filter_map(|((im, g), r)| {
            let sel: Vec<bool> = patch_pixels(&im.pose, g, center, params.patch_radius)
                .into_iter()
                .zip(&r.flags)
                .map(|(p, &f)| p && f == PixelFlag::Ok)
                .collect();
            masked_median(&r.albedo, &sel)
        })
        .collect();
    Ok(EvalReport::from_views(views, patch_consistency(&medians)))
}
