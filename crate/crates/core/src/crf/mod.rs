//! Image-guided refinement of the projected sun-visibility mask with a
//! fully connected two-label CRF (Krähenbühl & Koltun, 2011).
//!
//! Pairwise potentials are Potts with two Gaussian kernels: an appearance
//! kernel over position and guide color and a smoothness kernel over
//! position only. The smoothness kernel is filtered exactly (separable).
//! The appearance kernel is filtered exactly over its truncated window when
//! that is affordable and on a permutohedral lattice otherwise.

mod lattice;

pub use lattice::Lattice;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbuffer::GBuffer;
use crate::image::{percentile, ImageError, LinearImage, ScalarImage};

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("dimension mismatch: mask {mask_w}x{mask_h}, {other} {other_w}x{other_h}")]
    Dimensions {
        mask_w: usize,
        mask_h: usize,
        other: &'static str,
        other_w: usize,
        other_h: usize,
    },
    #[error("invalid CRF parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Projected,
    Refined,
}

/// Binary sun visibility (1 = lit) with a per-pixel confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
    pub confidence: Vec<f32>,
    pub provenance: Provenance,
}

impl VisibilityMask {
    pub fn from_labels(width: usize, height: usize, labels: Vec<u8>, confidence: f32, provenance: Provenance) -> Self {
        assert_eq!(labels.len(), width * height);
        Self {
            width,
            height,
            confidence: vec![confidence; labels.len()],
            labels,
            provenance,
        }
    }

    /// The ray-traced visibility of a G-buffer, binarized at 0.5.
    pub fn from_gbuffer(gbuf: &GBuffer, confidence: f32) -> Self {
        let labels = gbuf.alpha_sun.data().iter().map(|&a| (a >= 0.5) as u8).collect();
        Self::from_labels(gbuf.width, gbuf.height, labels, confidence, Provenance::Projected)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn to_image(&self) -> ScalarImage {
        ScalarImage::new(self.width, self.height, self.labels.iter().map(|&l| l as f32).collect()).expect("sized")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        self.to_image().save(path)
    }

    /// Loads a single-channel PFM; values ≥ 0.5 are lit.
    pub fn load(path: impl AsRef<Path>, provenance: Provenance) -> Result<Self, ImageError> {
        let img = ScalarImage::load(path)?;
        let labels = img.data().iter().map(|&a| (a >= 0.5) as u8).collect();
        Ok(Self::from_labels(img.width(), img.height(), labels, 1.0, provenance))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfParams {
    /// Probability given to the projected label in the unary term.
    pub unary_confidence: f64,
    pub sigma_xy: f64,
    /// On the guide scaled to 0–255 by its robust maximum.
    pub sigma_rgb: f64,
    pub sigma_s: f64,
    pub w_appearance: f64,
    pub w_smooth: f64,
    pub iterations: usize,
    /// Kernel support in standard deviations.
    pub truncate: f64,
    pub appearance_filter: FilterMode,
    /// Quantile of the guide mapped to 255.
    pub white_quantile: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            unary_confidence: 0.8,
            sigma_xy: 40.0,
            sigma_rgb: 13.0,
            sigma_s: 3.0,
            w_appearance: 10.0,
            w_smooth: 3.0,
            iterations: 5,
            truncate: 2.0,
            appearance_filter: FilterMode::Auto,
            white_quantile: 0.999,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<(), CrfError> {
        let bad = |m: &str| Err(CrfError::Param(m.into()));
        if !(self.unary_confidence > 0.5 && self.unary_confidence < 1.0) {
            return bad("unary_confidence must lie in (0.5, 1)");
        }
        if !(self.sigma_xy > 0.0 && self.sigma_rgb > 0.0 && self.sigma_s > 0.0) {
            return bad("kernel widths must be positive");
        }
        if !(self.w_appearance >= 0.0 && self.w_smooth >= 0.0) {
            return bad("kernel weights must be non-negative");
        }
        if self.iterations == 0 || self.iterations > 100 {
            return bad("iterations must lie in 1..=100");
        }
        if !(self.truncate >= 1.0 && self.truncate <= 5.0) {
            return bad("truncate must lie in [1, 5]");
        }
        if !(self.white_quantile > 0.5 && self.white_quantile <= 1.0) {
            return bad("white_quantile must lie in (0.5, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    /// Exact when `pixels × window area` stays under [`EXACT_BUDGET`].
    Auto,
    Exact,
    Lattice,
}

pub const EXACT_BUDGET: usize = 50_000_000;
const LATTICE_CALIBRATION_SAMPLES: usize = 256;

/// Pairwise kernels over one image. Only `active` pixels send or receive
/// messages.
pub struct Kernels {
    width: usize,
    height: usize,
    /// Guide color divided by `sigma_rgb`.
    features: Vec<[f32; 3]>,
    active: Vec<bool>,
    w_appearance: f64,
    w_smooth: f64,
    inv_sigma_xy: f32,
    radius: isize,
    lattice: Option<Lattice<5>>,
    /// Fitted so lattice output matches the exact kernel sum on a pixel sample.
    lattice_scale: f64,
    smooth_taps: Vec<f64>,
    /// Kernel sums over all active neighbors; with two labels the shadow
    /// message is the norm minus the lit message.
    appearance_norm: Vec<f64>,
    smooth_norm: Vec<f64>,
}

impl Kernels {
    /// `guide` values are already on the 0–255 scale.
    pub fn new(width: usize, height: usize, guide: &[[f32; 3]], active: Vec<bool>, params: &CrfParams) -> Self {
        let inv = 1.0 / params.sigma_rgb as f32;
        let features: Vec<[f32; 3]> = guide.iter().map(|c| [c[0] * inv, c[1] * inv, c[2] * inv]).collect();
        let radius = (params.truncate * params.sigma_xy).ceil() as isize;
        let inv_sigma_xy = 1.0 / params.sigma_xy as f32;

        let window = (2 * radius as usize + 1).min(width) * (2 * radius as usize + 1).min(height);
        let exact = match params.appearance_filter {
            FilterMode::Exact => true,
            FilterMode::Lattice => false,
            FilterMode::Auto => width * height * window <= EXACT_BUDGET,
        };
        let lattice = (!exact && params.w_appearance > 0.0).then(|| {
            let f: Vec<[f32; 5]> = features
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let (x, y) = ((i % width) as f32, (i / width) as f32);
                    [x * inv_sigma_xy, y * inv_sigma_xy, c[0], c[1], c[2]]
                })
                .collect();
            Lattice::new(&f)
        });

        let rs = (params.truncate.max(3.0) * params.sigma_s).ceil() as isize;
        let smooth_taps = (-rs..=rs)
            .map(|d| (-(d * d) as f64 / (2.0 * params.sigma_s * params.sigma_s)).exp())
            .collect();

        let mut k = Self {
            width,
            height,
            features,
            active,
            w_appearance: params.w_appearance,
            w_smooth: params.w_smooth,
            inv_sigma_xy,
            radius,
            lattice,
            lattice_scale: 1.0,
            smooth_taps,
            appearance_norm: Vec::new(),
            smooth_norm: Vec::new(),
        };
        let ones = vec![1.0; width * height];
        if k.lattice.is_some() {
            let raw = k.appearance(&ones);
            let n = width * height;
            let (mut exact, mut approx) = (0.0, 0.0);
            for s in 0..LATTICE_CALIBRATION_SAMPLES.min(n) {
                let i = s * n / LATTICE_CALIBRATION_SAMPLES.min(n);
                if k.active[i] {
                    exact += k.appearance_exact_at(i, &ones);
                    approx += raw[i];
                }
            }
            if approx > 0.0 && exact > 0.0 {
                k.lattice_scale = exact / approx;
            }
        }
        k.appearance_norm = k.appearance(&ones);
        k.smooth_norm = k.smooth(&ones);
        k
    }

    fn len(&self) -> usize {
        self.width * self.height
    }

    /// Σ_{j≠i} k_app(i, j) v_j over active j.
    fn appearance(&self, v: &[f64]) -> Vec<f64> {
        if self.w_appearance == 0.0 {
            return vec![0.0; self.len()];
        }
        if let Some(lattice) = &self.lattice {
            let masked: Vec<f64> = v.iter().zip(&self.active).map(|(&x, &a)| if a { x } else { 0.0 }).collect();
            let out = lattice.filter(&masked);
            // the lattice includes the self term with weight ~1
            return out
                .iter()
                .zip(&masked)
                .zip(&self.active)
                .map(|((o, m), &a)| if a { (o * self.lattice_scale - m).max(0.0) } else { 0.0 })
                .collect();
        }
        (0..self.len())
            .into_par_iter()
            .map(|i| if self.active[i] { self.appearance_exact_at(i, v) } else { 0.0 })
            .collect()
    }

    fn appearance_exact_at(&self, i: usize, v: &[f64]) -> f64 {
        let (w, h) = (self.width as isize, self.height as isize);
        let r = self.radius;
        let s2 = self.inv_sigma_xy * self.inv_sigma_xy;
        let (x, y) = ((i % self.width) as isize, (i / self.width) as isize);
        let fi = self.features[i];
        let mut acc = 0.0f64;
        for yy in (y - r).max(0)..=(y + r).min(h - 1) {
            let dy = (yy - y) as f32;
            for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                let j = (yy * w + xx) as usize;
                if j == i || !self.active[j] {
                    continue;
                }
                let dx = (xx - x) as f32;
                let fj = self.features[j];
                let d = (dx * dx + dy * dy) * s2 + (fi[0] - fj[0]).powi(2) + (fi[1] - fj[1]).powi(2) + (fi[2] - fj[2]).powi(2);
                acc += (-0.5 * d).exp() as f64 * v[j];
            }
        }
        acc
    }

    /// Σ_{j≠i} k_smooth(i, j) v_j over active j, separable.
    fn smooth(&self, v: &[f64]) -> Vec<f64> {
        if self.w_smooth == 0.0 {
            return vec![0.0; self.len()];
        }
        let (w, h) = (self.width, self.height);
        let r = (self.smooth_taps.len() / 2) as isize;
        let masked: Vec<f64> = v.iter().zip(&self.active).map(|(&x, &a)| if a { x } else { 0.0 }).collect();
        let horiz: Vec<f64> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (x, y) = ((i % w) as isize, i / w);
                let mut acc = 0.0;
                for (k, wt) in self.smooth_taps.iter().enumerate() {
                    let xx = x + k as isize - r;
                    if xx >= 0 && xx < w as isize {
                        acc += wt * masked[y * w + xx as usize];
                    }
                }
                acc
            })
            .collect();
        (0..w * h)
            .into_par_iter()
            .map(|i| {
                if !self.active[i] {
                    return 0.0;
                }
                let (x, y) = (i % w, (i / w) as isize);
                let mut acc = 0.0;
                for (k, wt) in self.smooth_taps.iter().enumerate() {
                    let yy = y + k as isize - r;
                    if yy >= 0 && yy < h as isize {
                        acc += wt * horiz[yy as usize * w + x];
                    }
                }
                // remove the self term (kernel value 1 at zero offset)
                acc - masked[i]
            })
            .collect()
    }
}

/// Unary energies −log p for labels (shadow, lit), where p is the
/// per-pixel confidence in the given label.
pub fn unary_from_mask(mask: &VisibilityMask) -> Vec<[f64; 2]> {
    mask.labels
        .iter()
        .zip(&mask.confidence)
        .map(|(&l, &c)| {
            let p = (c as f64).clamp(0.5 + 1e-6, 1.0 - 1e-6);
            let (keep, flip) = (-p.ln(), -(1.0 - p).ln());
            if l == 1 {
                [flip, keep]
            } else {
                [keep, flip]
            }
        })
        .collect()
}

pub fn softmax_neg(e: [f64; 2]) -> [f64; 2] {
    let m = e[0].min(e[1]);
    let a = (-(e[0] - m)).exp();
    let b = (-(e[1] - m)).exp();
    [a / (a + b), b / (a + b)]
}

/// One parallel mean-field update with Potts compatibility scaled by
/// `potts`: filter Q under both kernels, apply the compatibility
/// transform, add the unary, renormalize.
pub fn meanfield_step(q: &[[f64; 2]], unary: &[[f64; 2]], kernels: &Kernels, potts: f64) -> Vec<[f64; 2]> {
    let q_lit: Vec<f64> = q.iter().map(|p| p[1]).collect();
    let app_lit = kernels.appearance(&q_lit);
    let sm_lit = kernels.smooth(&q_lit);
    (0..q.len())
        .map(|i| {
            if !kernels.active[i] {
                return q[i];
            }
            let msg_lit = kernels.w_appearance * app_lit[i] + kernels.w_smooth * sm_lit[i];
            let msg_shadow = kernels.w_appearance * (kernels.appearance_norm[i] - app_lit[i])
                + kernels.w_smooth * (kernels.smooth_norm[i] - sm_lit[i]);
            // Potts: label l pays for neighbors holding the other label
            softmax_neg([unary[i][0] + potts * msg_lit, unary[i][1] + potts * msg_shadow])
        })
        .collect()
}

/// Maps the linear guide to 0–255 by its robust maximum over valid pixels.
/// The linear image itself is left untouched.
pub fn normalized_guide(guide: &LinearImage, valid: &[bool], white_quantile: f64) -> Vec<[f32; 3]> {
    let mut vals: Vec<f32> = guide
        .data()
        .chunks_exact(3)
        .zip(valid)
        .filter(|(_, &v)| v)
        .flat_map(|(p, _)| p.iter().copied())
        .collect();
    let white = percentile(&mut vals, white_quantile).filter(|w| *w > 0.0).unwrap_or(1.0);
    let s = 255.0 / white;
    guide
        .data()
        .chunks_exact(3)
        .map(|p| [p[0] * s, p[1] * s, p[2] * s])
        .collect()
}

/// Refines a projected binary mask. Pixels without geometry and surfaces
/// facing away from the sun keep their label and take no part in
/// inference.
pub fn refine_visibility(
    init: &VisibilityMask,
    guide: &LinearImage,
    gbuf: &GBuffer,
    params: &CrfParams,
) -> Result<VisibilityMask, CrfError> {
    params.validate()?;
    for (what, w, h) in [("guide", guide.width(), guide.height()), ("gbuffer", gbuf.width, gbuf.height)] {
        if (w, h) != (init.width, init.height) {
            return Err(CrfError::Dimensions {
                mask_w: init.width,
                mask_h: init.height,
                other: what,
                other_w: w,
                other_h: h,
            });
        }
    }
    let active: Vec<bool> = (0..init.labels.len())
        .map(|i| gbuf.valid[i] && gbuf.k_sun.data()[i] > 0.0)
        .collect();
    let features = normalized_guide(guide, &gbuf.valid, params.white_quantile);
    let kernels = Kernels::new(init.width, init.height, &features, active, params);

    let unary = unary_from_mask(init);
    let mut q: Vec<[f64; 2]> = unary.iter().map(|&u| softmax_neg(u)).collect();
    for _ in 0..params.iterations {
        q = meanfield_step(&q, &unary, &kernels, 1.0);
    }
    let labels = q
        .iter()
        .zip(&init.labels)
        .zip(&kernels.active)
        .map(|((p, &l), &a)| {
            if !a || p[0] == p[1] {
                l
            } else {
                (p[1] > p[0]) as u8
            }
        })
        .collect();
    Ok(VisibilityMask {
        width: init.width,
        height: init.height,
        labels,
        confidence: q.iter().map(|p| p[0].max(p[1]) as f32).collect(),
        provenance: Provenance::Refined,
    })
}

/// Intersection-over-union of the shadow class (label 0) on `valid`
/// pixels; 1 when both masks have no shadow.
pub fn shadow_iou(pred: &VisibilityMask, truth: &VisibilityMask, valid: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..pred.labels.len() {
        if !valid[i] {
            continue;
        }
        let (a, b) = (pred.labels[i] == 0, truth.labels[i] == 0);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
