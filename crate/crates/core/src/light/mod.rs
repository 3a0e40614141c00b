//! Sun-to-sky illumination ratio from lit/shadow pixel pairs across shadow
//! boundaries, pooled over all images of a capture.

mod gmm;

pub use gmm::{fit_gmm2, Gmm2, MIN_SAMPLES};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crf::VisibilityMask;
use crate::gbuffer::GBuffer;
use crate::image::{percentile, ImageError, LinearImage};
use crate::scene::Vec3;

#[derive(Debug, Error)]
pub enum LightError {
    #[error("no lit/shadow pairs survived filtering")]
    NoPairs,
    #[error("{found} samples, at least {needed} needed for the mixture fit")]
    TooFewSamples { found: usize, needed: usize },
    #[error("non-finite ratio sample")]
    NonFinite,
    #[error("dimension mismatch between image, mask and G-buffer")]
    Dimensions,
    #[error("invalid light parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightParams {
    /// Pixel offset from the boundary to each side of a pair.
    pub d_off: f64,
    /// Exposure window as fractions of the image white level.
    pub exposure_lo: f64,
    pub exposure_hi: f64,
    pub white_quantile: f64,
    pub max_normal_angle_deg: f64,
    /// Largest depth difference between the two pixels, scene units.
    pub max_depth_diff: f64,
    /// Open interval for `k_sky / k_sun` at the lit pixel.
    pub kratio_min: f64,
    pub kratio_max: f64,
    pub min_major_weight: f64,
    /// The major component's variance must be at most this fraction of the
    /// minor component's.
    pub max_variance_ratio: f64,
}

impl Default for LightParams {
    fn default() -> Self {
        Self {
            d_off: 3.0,
            exposure_lo: 0.02,
            exposure_hi: 0.98,
            white_quantile: 0.999,
            max_normal_angle_deg: 5.0,
            max_depth_diff: 0.5,
            kratio_min: 0.1,
            kratio_max: 10.0,
            min_major_weight: 0.95,
            max_variance_ratio: 0.25,
        }
    }
}

impl LightParams {
    pub fn validate(&self) -> Result<(), LightError> {
        let bad = |m: &str| Err(LightError::Param(m.into()));
        if !(self.d_off >= 1.0 && self.d_off <= 64.0) {
            return bad("d_off must lie in [1, 64]");
        }
        if !(0.0 <= self.exposure_lo && self.exposure_lo < self.exposure_hi && self.exposure_hi <= 1.0) {
            return bad("exposure window must satisfy 0 <= lo < hi <= 1");
        }
        if !(self.white_quantile > 0.5 && self.white_quantile <= 1.0) {
            return bad("white_quantile must lie in (0.5, 1]");
        }
        if !(self.max_normal_angle_deg > 0.0 && self.max_depth_diff > 0.0) {
            return bad("normal and depth tolerances must be positive");
        }
        if !(0.0 < self.kratio_min && self.kratio_min < self.kratio_max) {
            return bad("k ratio bounds must satisfy 0 < min < max");
        }
        if !(self.min_major_weight > 0.5 && self.min_major_weight <= 1.0) {
            return bad("min_major_weight must lie in (0.5, 1]");
        }
        if !(self.max_variance_ratio > 0.0) {
            return bad("max_variance_ratio must be positive");
        }
        Ok(())
    }
}

/// Two pixels on either side of a shadow boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LitShadowPair {
    pub image: usize,
    pub lit_px: (usize, usize),
    pub shadow_px: (usize, usize),
    pub i_lit: [f64; 3],
    pub i_shadow: [f64; 3],
    pub k_sun: f64,
    pub k_sky: f64,
    pub n_lit: [f64; 3],
    pub n_shadow: [f64; 3],
    pub depth_lit: f64,
    pub depth_shadow: f64,
}

impl LitShadowPair {
    /// Per-channel sun/sky ratio implied by the pair under the shading model:
    /// `(I_lit − I_sh) / I_sh · k_sky / k_sun`.
    pub fn ratio(&self) -> [f64; 3] {
        std::array::from_fn(|c| (self.i_lit[c] - self.i_shadow[c]) / self.i_shadow[c] * self.k_sky / self.k_sun)
    }

    pub fn normal_angle_deg(&self) -> f64 {
        let a = Vec3::from(self.n_lit);
        let b = Vec3::from(self.n_shadow);
        let c = a.dot(&b) / (a.norm() * b.norm());
        if c.is_finite() {
            c.clamp(-1.0, 1.0).acos().to_degrees()
        } else {
            180.0
        }
    }
}

/// Unit direction across the boundary at `(x, y)` pointing towards the lit
/// side: the Sobel gradient of the label field with edge replication.
fn boundary_normal(mask: &VisibilityMask, x: usize, y: usize) -> Option<(f64, f64)> {
    let at = |dx: isize, dy: isize| {
        let xx = (x as isize + dx).clamp(0, mask.width as isize - 1) as usize;
        let yy = (y as isize + dy).clamp(0, mask.height as isize - 1) as usize;
        mask.get(xx, yy) as f64
    };
    let gx = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
    let gy = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
    let n = gx.hypot(gy);
    (n > 0.0).then(|| (gx / n, gy / n))
}

fn offset(x: usize, y: usize, d: (f64, f64), s: f64, w: usize, h: usize) -> Option<(usize, usize)> {
    let xx = (x as f64 + d.0 * s).round();
    let yy = (y as f64 + d.1 * s).round();
    (xx >= 0.0 && yy >= 0.0 && (xx as usize) < w && (yy as usize) < h).then_some((xx as usize, yy as usize))
}

/// Collects one pair per shadow-side boundary pixel: a shadow pixel with a
/// lit 4-neighbor. The pair samples `d_off` pixels from it along the
/// boundary normal on each side. Pairs whose ends fall outside the image,
/// off the geometry, or on the wrong label are dropped.
pub fn extract_boundary_pairs(
    image_index: usize,
    img: &LinearImage,
    mask: &VisibilityMask,
    gbuf: &GBuffer,
    d_off: f64,
) -> Result<Vec<LitShadowPair>, LightError> {
    let (w, h) = (mask.width, mask.height);
    if (img.width(), img.height()) != (w, h) || (gbuf.width, gbuf.height) != (w, h) {
        return Err(LightError::Dimensions);
    }
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) != 0 || !gbuf.is_valid(x, y) {
                continue;
            }
            let lit_neighbor = (x > 0 && mask.get(x - 1, y) == 1)
                || (x + 1 < w && mask.get(x + 1, y) == 1)
                || (y > 0 && mask.get(x, y - 1) == 1)
                || (y + 1 < h && mask.get(x, y + 1) == 1);
            if !lit_neighbor {
                continue;
            }
            let Some(dir) = boundary_normal(mask, x, y) else {
                continue;
            };
            let (Some(l), Some(s)) = (offset(x, y, dir, d_off, w, h), offset(x, y, dir, -d_off, w, h)) else {
                continue;
            };
            if mask.get(l.0, l.1) != 1 || mask.get(s.0, s.1) != 0 || !gbuf.is_valid(l.0, l.1) || !gbuf.is_valid(s.0, s.1) {
                continue;
            }
            let li = gbuf.index(l.0, l.1);
            let si = gbuf.index(s.0, s.1);
            out.push(LitShadowPair {
                image: image_index,
                lit_px: l,
                shadow_px: s,
                i_lit: img.get_f64(l.0, l.1),
                i_shadow: img.get_f64(s.0, s.1),
                k_sun: gbuf.k_sun.data()[li] as f64,
                k_sky: gbuf.k_sky.data()[li] as f64,
                n_lit: gbuf.normal[li].map(f64::from),
                n_shadow: gbuf.normal[si].map(f64::from),
                depth_lit: gbuf.depth.data()[li] as f64,
                depth_shadow: gbuf.depth.data()[si] as f64,
            });
        }
    }
    Ok(out)
}

/// Robust white level of an image: the given quantile over all channels.
pub fn white_level(img: &LinearImage, quantile: f64) -> f64 {
    let mut v = img.data().to_vec();
    percentile(&mut v, quantile).unwrap_or(0.0) as f64
}

/// Why a pair was dropped; `None` when it passes every test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRejection {
    Exposure,
    NormalAngle,
    Depth,
    ShadingRatio,
    NonFinite,
}

pub fn classify_pair(pair: &LitShadowPair, white: f64, params: &LightParams) -> Option<PairRejection> {
    let (lo, hi) = (params.exposure_lo * white, params.exposure_hi * white);
    let exposed = |v: &[f64; 3]| v.iter().all(|&c| c >= lo && c <= hi);
    if !exposed(&pair.i_lit) || !exposed(&pair.i_shadow) {
        return Some(PairRejection::Exposure);
    }
    if pair.normal_angle_deg() >= params.max_normal_angle_deg {
        return Some(PairRejection::NormalAngle);
    }
    if !((pair.depth_lit - pair.depth_shadow).abs() < params.max_depth_diff) {
        return Some(PairRejection::Depth);
    }
    let kr = pair.k_sky / pair.k_sun;
    if !(kr > params.kratio_min && kr < params.kratio_max) {
        return Some(PairRejection::ShadingRatio);
    }
    if pair.ratio().iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Some(PairRejection::NonFinite);
    }
    None
}

/// Keeps pairs passing the exposure, normal, depth and shading-ratio tests
/// against the white level of their image.
pub fn filter_pairs(pairs: Vec<LitShadowPair>, white: f64, params: &LightParams) -> Vec<LitShadowPair> {
    pairs.into_iter().filter(|p| classify_pair(p, white, params).is_none()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFit {
    pub gmm: Gmm2,
    pub accepted: bool,
}

/// Collection-wide sun/sky ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminationRatio {
    /// Per-channel `L_sun / L_sky` (the major component means).
    pub ratio: [f64; 3],
    pub accepted: bool,
    pub n_pairs: usize,
    /// Pairs assigned to the major component in every channel.
    pub n_inliers: usize,
    /// One fit per channel; empty when there was nothing to fit.
    #[serde(default)]
    pub channels: Vec<ChannelFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Filtered pairs contributed by each image, in project order.
    #[serde(default)]
    pub pairs_per_image: Vec<usize>,
}

/// Fits the per-channel mixtures to the pooled, filtered pairs. Rejection
/// is reported through `accepted` and `reason`; missing pairs are an error.
pub fn estimate_ratio(pairs: &[LitShadowPair], params: &LightParams) -> Result<IlluminationRatio, LightError> {
    if pairs.is_empty() {
        return Err(LightError::NoPairs);
    }
    let samples: Vec<[f64; 3]> = pairs.iter().map(|p| p.ratio()).collect();
    let mut fits = Vec::with_capacity(3);
    for c in 0..3 {
        let xs: Vec<f64> = samples.iter().map(|s| s[c]).collect();
        let gmm = fit_gmm2(&xs)?;
        let accepted = gmm.weights[0] >= params.min_major_weight
            && (gmm.merged || gmm.variances[0] <= params.max_variance_ratio * gmm.variances[1]);
        fits.push(ChannelFit { gmm, accepted });
    }
    let channels = fits;
    let n_inliers = samples
        .iter()
        .filter(|s| (0..3).all(|c| channels[c].gmm.major_responsibility(s[c]) > 0.5))
        .count();
    let accepted = channels.iter().all(|c| c.accepted);
    let reason = (!accepted).then(|| {
        let bad: Vec<String> = channels
            .iter()
            .zip(["r", "g", "b"])
            .filter(|(c, _)| !c.accepted)
            .map(|(c, name)| {
                format!(
                    "{name}: major weight {:.3}, variance {:.3e} vs minor {:.3e}",
                    c.gmm.weights[0], c.gmm.variances[0], c.gmm.variances[1]
                )
            })
            .collect();
        format!("mixture not dominated by one tight component ({})", bad.join("; "))
    });
    Ok(IlluminationRatio {
        ratio: std::array::from_fn(|c| channels[c].gmm.means[0]),
        accepted,
        n_pairs: pairs.len(),
        n_inliers,
        channels,
        reason,
        pairs_per_image: Vec::new(),
    })
}

/// Extracts, filters and pools pairs over a collection, then estimates the
/// ratio. Also returns the surviving pair count per image.
pub fn estimate_from_views(
    views: &[(&LinearImage, &VisibilityMask, &GBuffer)],
    params: &LightParams,
) -> Result<(IlluminationRatio, Vec<usize>), LightError> {
    params.validate()?;
    let mut pooled = Vec::new();
    let mut counts = Vec::with_capacity(views.len());
    for (i, (img, mask, gbuf)) in views.iter().enumerate() {
        let raw = extract_boundary_pairs(i, img, mask, gbuf, params.d_off)?;
        let kept = filter_pairs(raw, white_level(img, params.white_quantile), params);
        counts.push(kept.len());
        pooled.extend(kept);
    }
    let mut est = estimate_ratio(&pooled, params)?;
    est.pairs_per_image = counts.clone();
    Ok((est, counts))
}

impl IlluminationRatio {
    /// Record of an estimate that could not be made at all.
    pub fn rejected(reason: impl Into<String>, n_pairs: usize, pairs_per_image: Vec<usize>) -> Self {
        Self {
            ratio: [0.0; 3],
            accepted: false,
            n_pairs,
            n_inliers: 0,
            channels: Vec::new(),
            reason: Some(reason.into()),
            pairs_per_image,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LightError> {
        let path = path.as_ref();
        let err = |message: String| LightError::File {
            path: path.display().to_string(),
            message,
        };
        let text = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LightError> {
        let path = path.as_ref();
        let err = |message: String| LightError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}
