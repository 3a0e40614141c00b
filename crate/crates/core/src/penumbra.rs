//! Soft sun visibility along shadow boundaries.
//!
//! Each boundary pixel yields a 1-D profile across the edge. Along it the
//! inverse albedo is affine in visibility, `1/R(t) = a(t) α(t) + b(t)` with
//! `a = r k_sun / I` and `b = k_sky / I`, so a visibility that makes `1/R`
//! smooth is found by minimizing
//!
//! `½ (α − α⁰)ᵀ P (α − α⁰) + ½ λ ‖D (A α + b)‖²`
//!
//! over `α ∈ [0, 1]` with both profile ends held at their initial values.
//! The unconstrained minimizer solves a tridiagonal system; the box is
//! enforced by block principal pivoting on the same system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crf::VisibilityMask;
use crate::gbuffer::GBuffer;
use crate::image::{bilinear_taps, percentile, LinearImage, ScalarImage};
use crate::light::IlluminationRatio;
use crate::scene::Vec3;

#[derive(Debug, Error)]
pub enum PenumbraError {
    #[error("invalid penumbra parameter: {0}")]
    Param(String),
    #[error("profile of {n} samples with {weights} weights")]
    WeightCount { n: usize, weights: usize },
    #[error("prior weights must be non-negative and positive at both profile ends")]
    Weights,
    #[error("singular profile system")]
    Singular,
    #[error("dimension mismatch between image, mask and G-buffer")]
    Dimensions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenumbraParams {
    /// Samples on each side of the boundary pixel (unit spacing).
    pub half_length: usize,
    /// Take every `stride`-th boundary pixel.
    pub stride: usize,
    pub lambda: f64,
    pub end_weight: f64,
    /// Prior weight at the transition, ramping linearly up to `far_weight`
    /// at `ramp_width` pixels from it.
    pub near_weight: f64,
    pub far_weight: f64,
    pub ramp_width: f64,
    /// Luminance floor as a fraction of the image white level.
    pub exposure_floor: f64,
    pub white_quantile: f64,
    /// Largest normal deviation from the anchor along a profile.
    pub max_normal_angle_deg: f64,
    /// Across-line Gaussian footprint when compositing.
    pub sigma_across: f64,
}

impl Default for PenumbraParams {
    fn default() -> Self {
        Self {
            half_length: 12,
            stride: 2,
            lambda: 1.0,
            end_weight: 1e4,
            near_weight: 0.01,
            far_weight: 1.0,
            ramp_width: 4.0,
            exposure_floor: 0.02,
            white_quantile: 0.999,
            max_normal_angle_deg: 5.0,
            sigma_across: 1.0,
        }
    }
}

impl PenumbraParams {
    pub fn validate(&self) -> Result<(), PenumbraError> {
        let bad = |m: &str| Err(PenumbraError::Param(m.into()));
        if !(2..=256).contains(&self.half_length) {
            return bad("half_length must lie in 2..=256");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.end_weight > 0.0 && self.near_weight > 0.0 && self.far_weight >= self.near_weight) {
            return bad("weights must satisfy end > 0, 0 < near <= far");
        }
        if !(self.ramp_width > 0.0) {
            return bad("ramp_width must be positive");
        }
        if !(0.0..1.0).contains(&self.exposure_floor) {
            return bad("exposure_floor must lie in [0, 1)");
        }
        if !(self.white_quantile > 0.5 && self.white_quantile <= 1.0) {
            return bad("white_quantile must lie in (0.5, 1]");
        }
        if !(self.max_normal_angle_deg > 0.0) {
            return bad("max_normal_angle_deg must be positive");
        }
        if !(self.sigma_across > 0.0) {
            return bad("sigma_across must be positive");
        }
        Ok(())
    }
}

/// Samples along one line across a shadow boundary, from shadow to lit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowProfile {
    /// Boundary pixel the line passes through.
    pub anchor: (f64, f64),
    /// Unit direction towards the lit side.
    pub dir: (f64, f64),
    pub t: Vec<f64>,
    pub alpha0: Vec<f64>,
    /// Luminance (channel mean).
    pub lum: Vec<f64>,
    pub k_sun: Vec<f64>,
    pub k_sky: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Position of the 0→1 step, halfway between the last 0 and first 1.
    pub transition: f64,
}

impl ShadowProfile {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Image position of sample `k`.
    pub fn position(&self, k: usize) -> (f64, f64) {
        (self.anchor.0 + self.t[k] * self.dir.0, self.anchor.1 + self.t[k] * self.dir.1)
    }

    /// `1/R(t) = a α + b` for a visibility profile.
    pub fn inverse_albedo(&self, alpha: &[f64]) -> Vec<f64> {
        self.a.iter().zip(&self.b).zip(alpha).map(|((a, b), x)| a * x + b).collect()
    }

    /// Total variation of `1/R` along the profile.
    pub fn inverse_albedo_tv(&self, alpha: &[f64]) -> f64 {
        self.inverse_albedo(alpha).windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    /// Prior weights: `end_weight` at both ends, `near_weight` at the
    /// transition rising linearly to `far_weight` at `ramp_width`.
    pub fn prior_weights(&self, params: &PenumbraParams) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|k| {
                if k == 0 || k + 1 == n {
                    return params.end_weight;
                }
                let d = ((self.t[k] - self.transition).abs() / params.ramp_width).min(1.0);
                params.near_weight + (params.far_weight - params.near_weight) * d
            })
            .collect()
    }
}

/// `½ (α − α⁰)ᵀ P (α − α⁰) + ½ λ ‖D (A α + b)‖²`.
pub fn profile_objective(p: &ShadowProfile, weights: &[f64], lambda: f64, alpha: &[f64]) -> f64 {
    let prior: f64 = weights.iter().zip(alpha).zip(&p.alpha0).map(|((w, x), x0)| w * (x - x0).powi(2)).sum();
    let inv = p.inverse_albedo(alpha);
    let smooth: f64 = inv.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    0.5 * prior + 0.5 * lambda * smooth
}

fn luminance_white(img: &LinearImage, valid: &[bool], q: f64) -> f64 {
    let mut v: Vec<f32> = img
        .data()
        .chunks_exact(3)
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|(p, _)| (p[0] + p[1] + p[2]) / 3.0)
        .collect();
    percentile(&mut v, q).unwrap_or(0.0) as f64
}

fn boundary_dir(mask: &VisibilityMask, x: usize, y: usize) -> Option<(f64, f64)> {
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

/// Shadow-side pixels with a lit 4-neighbor, in raster order.
pub fn boundary_pixels(mask: &VisibilityMask, gbuf: &GBuffer) -> Vec<(usize, usize)> {
    let (w, h) = (mask.width, mask.height);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) != 0 || !gbuf.is_valid(x, y) {
                continue;
            }
            if (x > 0 && mask.get(x - 1, y) == 1)
                || (x + 1 < w && mask.get(x + 1, y) == 1)
                || (y > 0 && mask.get(x, y - 1) == 1)
                || (y + 1 < h && mask.get(x, y + 1) == 1)
            {
                out.push((x, y));
            }
        }
    }
    out
}

/// Builds profiles through every `stride`-th boundary pixel. A profile is
/// dropped when it leaves the image or the geometry, crosses a surface
/// crease, falls below the exposure floor, or its binary visibility is not
/// a single 0→1 step.
pub fn extract_profiles(
    mask: &VisibilityMask,
    gbuf: &GBuffer,
    img: &LinearImage,
    ratio: &IlluminationRatio,
    params: &PenumbraParams,
) -> Result<Vec<ShadowProfile>, PenumbraError> {
    params.validate()?;
    let (w, h) = (mask.width, mask.height);
    if (img.width(), img.height()) != (w, h) || (gbuf.width, gbuf.height) != (w, h) {
        return Err(PenumbraError::Dimensions);
    }
    let r = ratio.ratio.iter().sum::<f64>() / 3.0;
    let lum = img.luminance();
    let floor = params.exposure_floor * luminance_white(img, &gbuf.valid, params.white_quantile);
    let cos_max = params.max_normal_angle_deg.to_radians().cos();
    let anchors: Vec<(usize, usize)> = boundary_pixels(mask, gbuf).into_iter().step_by(params.stride).collect();
    let half = params.half_length as isize;

    let profiles = anchors
        .par_iter()
        .filter_map(|&(x, y)| {
            let dir = boundary_dir(mask, x, y)?;
            let n0 = gbuf.normal_at(x, y);
            let n = 2 * params.half_length + 1;
            let mut p = ShadowProfile {
                anchor: (x as f64, y as f64),
                dir,
                t: Vec::with_capacity(n),
                alpha0: Vec::with_capacity(n),
                lum: Vec::with_capacity(n),
                k_sun: Vec::with_capacity(n),
                k_sky: Vec::with_capacity(n),
                a: Vec::with_capacity(n),
                b: Vec::with_capacity(n),
                transition: 0.0,
            };
            for k in -half..=half {
                let t = k as f64;
                let (px, py) = (x as f64 + t * dir.0, y as f64 + t * dir.1);
                let (taps, nt) = bilinear_taps(w, h, px, py)?;
                for &(ix, iy, _) in &taps[..nt] {
                    if !gbuf.is_valid(ix, iy) {
                        return None;
                    }
                    let nn: Vec3 = gbuf.normal_at(ix, iy);
                    if nn.dot(&n0) < cos_max {
                        return None;
                    }
                }
                let l = lum.sample_bilinear(px, py)?;
                if !(l > floor && l > 0.0) {
                    return None;
                }
                let ks = gbuf.k_sun.sample_bilinear(px, py)?;
                let kk = gbuf.k_sky.sample_bilinear(px, py)?;
                let (rx, ry) = (px.round() as usize, py.round() as usize);
                p.t.push(t);
                p.alpha0.push(mask.get(rx, ry) as f64);
                p.lum.push(l);
                p.k_sun.push(ks);
                p.k_sky.push(kk);
                p.a.push(r * ks / l);
                p.b.push(kk / l);
            }
            let steps: Vec<usize> = (1..n).filter(|&k| p.alpha0[k] != p.alpha0[k - 1]).collect();
            if steps.len() != 1 || p.alpha0[0] != 0.0 || p.alpha0[n - 1] != 1.0 {
                return None;
            }
            if p.a.iter().chain(&p.b).any(|v| !v.is_finite()) {
                return None;
            }
            p.transition = 0.5 * (p.t[steps[0] - 1] + p.t[steps[0]]);
            Some(p)
        })
        .collect();
    Ok(profiles)
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[i]`
/// couples rows i+1 and i, `upper[i]` rows i and i+1.
fn thomas(diag: &[f64], off: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut m = diag[0];
    if m == 0.0 || !m.is_finite() {
        return None;
    }
    c[0] = if n > 1 { off[0] / m } else { 0.0 };
    d[0] = rhs[0] / m;
    for i in 1..n {
        m = diag[i] - off[i - 1] * c[i - 1];
        if m == 0.0 || !m.is_finite() {
            return None;
        }
        c[i] = if i + 1 < n { off[i] / m } else { 0.0 };
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Var {
    Free,
    Lower,
    Upper,
    Pinned,
}

/// Hessian `P + λ A DᵀD A` (diagonal and off-diagonal) and linear term
/// `P α⁰ − λ A DᵀD b`.
fn normal_equations(p: &ShadowProfile, weights: &[f64], lambda: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = p.len();
    let dtd_diag = |i: usize| if i == 0 || i + 1 == n { 1.0 } else { 2.0 };
    let diag = (0..n).map(|i| weights[i] + lambda * p.a[i] * p.a[i] * dtd_diag(i)).collect();
    let off = (0..n - 1).map(|i| -lambda * p.a[i] * p.a[i + 1]).collect();
    let rhs = (0..n)
        .map(|i| {
            let mut dtdb = dtd_diag(i) * p.b[i];
            if i > 0 {
                dtdb -= p.b[i - 1];
            }
            if i + 1 < n {
                dtdb -= p.b[i + 1];
            }
            weights[i] * p.alpha0[i] - lambda * p.a[i] * dtdb
        })
        .collect();
    (diag, off, rhs)
}

fn solve_with(state: &[Var], x: &[f64], diag: &[f64], off: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut d2 = diag.to_vec();
    let mut o2 = off.to_vec();
    let mut r2 = rhs.to_vec();
    for i in 0..n {
        if state[i] != Var::Free {
            d2[i] = 1.0;
            r2[i] = x[i];
            if i > 0 {
                o2[i - 1] = 0.0;
                if state[i - 1] == Var::Free {
                    r2[i - 1] -= off[i - 1] * x[i];
                }
            }
            if i + 1 < n {
                o2[i] = 0.0;
                if state[i + 1] == Var::Free {
                    r2[i + 1] -= off[i] * x[i];
                }
            }
        }
    }
    thomas(&d2, &o2, &r2)
}

/// Minimizes the profile objective over `α ∈ [0, 1]` with both ends fixed
/// at `α⁰`. Without active bounds this is the closed-form solve of
/// `(P + λ AᵀDᵀDA) α = P α⁰ − λ AᵀDᵀD b`.
pub fn solve_profile(p: &ShadowProfile, weights: &[f64], lambda: f64) -> Result<Vec<f64>, PenumbraError> {
    let n = p.len();
    if weights.len() != n {
        return Err(PenumbraError::WeightCount { n, weights: weights.len() });
    }
    if n < 2 || weights.iter().any(|w| !(*w >= 0.0)) || weights[0] <= 0.0 || weights[n - 1] <= 0.0 {
        return Err(PenumbraError::Weights);
    }
    let (diag, off, rhs) = normal_equations(p, weights, lambda);
    let mut state = vec![Var::Free; n];
    let mut x = vec![0.0; n];
    state[0] = Var::Pinned;
    state[n - 1] = Var::Pinned;
    x[0] = p.alpha0[0];
    x[n - 1] = p.alpha0[n - 1];

    const EPS: f64 = 1e-13;
    for _ in 0..4 * n + 8 {
        let sol = solve_with(&state, &x, &diag, &off, &rhs).ok_or(PenumbraError::Singular)?;
        let grad = |i: usize| {
            let mut g = diag[i] * sol[i] - rhs[i];
            if i > 0 {
                g += off[i - 1] * sol[i - 1];
            }
            if i + 1 < n {
                g += off[i] * sol[i + 1];
            }
            g
        };
        let mut changed = false;
        for i in 0..n {
            let next = match state[i] {
                Var::Free if sol[i] < -EPS => Var::Lower,
                Var::Free if sol[i] > 1.0 + EPS => Var::Upper,
                Var::Lower if grad(i) < -EPS => Var::Free,
                Var::Upper if grad(i) > EPS => Var::Free,
                s => s,
            };
            if next != state[i] {
                changed = true;
                state[i] = next;
            }
        }
        for i in 0..n {
            x[i] = match state[i] {
                Var::Lower => 0.0,
                Var::Upper => 1.0,
                _ => sol[i],
            };
        }
        if !changed {
            return Ok(x.iter().map(|v| v.clamp(0.0, 1.0)).collect());
        }
    }
    // Pivoting did not settle; finish by projected Gauss-Seidel.
    for _ in 0..100_000 {
        let mut delta = 0.0f64;
        for i in 1..n - 1 {
            let mut r = rhs[i];
            r -= off[i - 1] * x[i - 1];
            r -= off[i] * x[i + 1];
            let v = (r / diag[i]).clamp(0.0, 1.0);
            delta = delta.max((v - x[i]).abs());
            x[i] = v;
        }
        if delta < 1e-15 {
            break;
        }
    }
    Ok(x)
}

/// Soft visibility after compositing solved profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftVisibility {
    pub alpha: ScalarImage,
    pub blend_weight: ScalarImage,
}

impl SoftVisibility {
    pub fn from_mask(mask: &VisibilityMask) -> Self {
        Self {
            alpha: mask.to_image(),
            blend_weight: ScalarImage::filled(mask.width, mask.height, 0.0),
        }
    }
}

/// Splats each solved profile back along its line, linear in the
/// along-line coordinate and Gaussian across it, and normalizes by the
/// accumulated weight. What is splatted is the correction `α* − α⁰`, added
/// to the pixel's own binary label, so a profile the solver left unchanged
/// keeps a hard edge hard even when the line runs diagonally. Pixels no profile reaches keep the binary label;
/// pixels without geometry are never touched. Accumulation runs in
/// profile order, so the result does not depend on scheduling.
pub fn composite_soft_mask(
    mask: &VisibilityMask,
    gbuf: &GBuffer,
    solved: &[(ShadowProfile, Vec<f64>)],
    sigma_across: f64,
) -> SoftVisibility {
    let (w, h) = (mask.width, mask.height);
    let reach = 3.0 * sigma_across;
    let parts: Vec<Vec<(usize, f64, f64)>> = solved
        .par_iter()
        .map(|(p, alpha)| {
            let mut out = Vec::new();
            if p.len() < 2 {
                return out;
            }
            let (t0, t1) = (p.t[0], p.t[p.len() - 1]);
            let ends = [p.position(0), p.position(p.len() - 1)];
            let x0 = (ends[0].0.min(ends[1].0) - reach).floor().max(0.0) as usize;
            let x1 = (ends[0].0.max(ends[1].0) + reach).ceil().min((w - 1) as f64) as usize;
            let y0 = (ends[0].1.min(ends[1].1) - reach).floor().max(0.0) as usize;
            let y1 = (ends[0].1.max(ends[1].1) + reach).ceil().min((h - 1) as f64) as usize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if !gbuf.is_valid(x, y) {
                        continue;
                    }
                    let (rx, ry) = (x as f64 - p.anchor.0, y as f64 - p.anchor.1);
                    let s = rx * p.dir.0 + ry * p.dir.1;
                    let d = -rx * p.dir.1 + ry * p.dir.0;
                    if s < t0 || s > t1 || d.abs() > reach {
                        continue;
                    }
                    // unit spacing: sample k sits at t0 + k
                    let u = s - t0;
                    let k = (u.floor() as usize).min(p.len() - 2);
                    let f = u - k as f64;
                    let corr = (alpha[k] - p.alpha0[k]) * (1.0 - f) + (alpha[k + 1] - p.alpha0[k + 1]) * f;
                    let a = mask.labels[y * w + x] as f64 + corr;
                    let wt = (-0.5 * d * d / (sigma_across * sigma_across)).exp();
                    out.push((y * w + x, wt, wt * a));
                }
            }
            out
        })
        .collect();

    let mut acc = vec![0.0f64; w * h];
    let mut wsum = vec![0.0f64; w * h];
    for part in &parts {
        for &(i, wt, wa) in part {
            wsum[i] += wt;
            acc[i] += wa;
        }
    }
    let alpha: Vec<f32> = (0..w * h)
        .map(|i| {
            if wsum[i] > 0.0 {
                (acc[i] / wsum[i]).clamp(0.0, 1.0) as f32
            } else {
                mask.labels[i] as f32
            }
        })
        .collect();
    SoftVisibility {
        alpha: ScalarImage::new(w, h, alpha).expect("sized"),
        blend_weight: ScalarImage::new(w, h, wsum.iter().map(|&v| v as f32).collect()).expect("sized"),
    }
}

/// Summary of one softening run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftenStats {
    pub boundary_pixels: usize,
    pub profiles: usize,
    pub tv_before: f64,
    pub tv_after: f64,
}

/// Extracts, solves and composites all profiles of one view.
pub fn soften_view(
    mask: &VisibilityMask,
    gbuf: &GBuffer,
    img: &LinearImage,
    ratio: &IlluminationRatio,
    params: &PenumbraParams,
) -> Result<(SoftVisibility, Vec<(ShadowProfile, Vec<f64>)>, SoftenStats), PenumbraError> {
    let profiles = extract_profiles(mask, gbuf, img, ratio, params)?;
    let solved: Vec<(ShadowProfile, Vec<f64>)> = profiles
        .into_par_iter()
        .map(|p| {
            let wts = p.prior_weights(params);
            let a = solve_profile(&p, &wts, params.lambda)?;
            Ok((p, a))
        })
        .collect::<Result<_, PenumbraError>>()?;
    let stats = SoftenStats {
        boundary_pixels: boundary_pixels(mask, gbuf).len(),
        profiles: solved.len(),
        tv_before: solved.iter().map(|(p, _)| p.inverse_albedo_tv(&p.alpha0)).sum(),
        tv_after: solved.iter().map(|(p, a)| p.inverse_albedo_tv(a)).sum(),
    };
    let soft = composite_soft_mask(mask, gbuf, &solved, params.sigma_across);
    Ok((soft, solved, stats))
}

/// Random profile satisfying the solver preconditions, for testing and
/// benchmarking.
pub fn random_profile(rng: &mut impl rand::Rng, half_length: usize) -> ShadowProfile {
    let n = 2 * half_length + 1;
    let step = rng.random_range(2..n - 2);
    let t: Vec<f64> = (0..n).map(|k| k as f64 - half_length as f64).collect();
    let alpha0: Vec<f64> = (0..n).map(|k| (k >= step) as u8 as f64).collect();
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    ShadowProfile {
        anchor: (0.0, 0.0),
        dir: (1.0, 0.0),
        transition: 0.5 * (t[step - 1] + t[step]),
        t,
        alpha0,
        lum: vec![1.0; n],
        k_sun: vec![1.0; n],
        k_sky: vec![1.0; n],
        a,
        b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::Provenance;
    use crate::light::{ChannelFit, Gmm2};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Projected-gradient (FISTA with restart) minimizer of the dense QP
    /// `½ xᵀHx − cᵀx` over the box with both ends fixed.
    fn qp_oracle(p: &ShadowProfile, weights: &[f64], lambda: f64) -> Vec<f64> {
        let n = p.len();
        let mut d = DMatrix::<f64>::zeros(n - 1, n);
        for k in 0..n - 1 {
            d[(k, k)] = -1.0;
            d[(k, k + 1)] = 1.0;
        }
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(&p.a));
        let pm = DMatrix::from_diagonal(&DVector::from_column_slice(weights));
        let da = &d * &a;
        let h = &pm + (da.transpose() * &da) * lambda;
        let c = &pm * DVector::from_column_slice(&p.alpha0) - (da.transpose() * (&d * DVector::from_column_slice(&p.b))) * lambda;
        // the ends are fixed by the projection, so only the interior block sets the step
        let lip = h.view((1, 1), (n - 2, n - 2)).into_owned().symmetric_eigenvalues().max();
        let project = |x: &mut DVector<f64>| {
            for i in 0..n {
                x[i] = x[i].clamp(0.0, 1.0);
            }
            x[0] = p.alpha0[0];
            x[n - 1] = p.alpha0[n - 1];
        };
        let f = |x: &DVector<f64>| 0.5 * x.dot(&(&h * x)) - c.dot(x);
        let mut x = DVector::from_column_slice(&p.alpha0);
        let mut y = x.clone();
        let (mut tk, mut fx) = (1.0f64, f(&x));
        for _ in 0..100_000 {
            let mut xn = &y - (&h * &y - &c) / lip;
            project(&mut xn);
            let fxn = f(&xn);
            if fxn > fx {
                if (&y - &x).amax() < 1e-12 {
                    break;
                }
                // restart momentum
                tk = 1.0;
                y = x.clone();
                continue;
            }
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
            y = &xn + (&xn - &x) * ((tk - 1.0) / tn);
            let step = (&xn - &x).amax();
            (x, fx, tk) = (xn, fxn, tn);
            if step < 1e-12 {
                break;
            }
        }
        x.iter().copied().collect()
    }

    #[test]
    fn matches_qp_oracle_on_random_profiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = PenumbraParams::default();
        for _ in 0..200 {
            let p = random_profile(&mut rng, 12);
            let w = p.prior_weights(&params);
            let ours = solve_profile(&p, &w, params.lambda).unwrap();
            let oracle = qp_oracle(&p, &w, params.lambda);
            let (fo, fq) = (profile_objective(&p, &w, 1.0, &ours), profile_objective(&p, &w, 1.0, &oracle));
            assert!((fo - fq).abs() < 1e-6, "objective {fo} vs oracle {fq}");
            assert!((ours[0] - p.alpha0[0]).abs() <= 1e-6);
            assert!((ours[24] - p.alpha0[24]).abs() <= 1e-6);
            assert!(ours.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zero_lambda_returns_initial_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_profile(&mut rng, 12);
        let w = p.prior_weights(&PenumbraParams::default());
        assert_eq!(solve_profile(&p, &w, 0.0).unwrap(), p.alpha0);
    }

    #[test]
    fn constant_profile_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = random_profile(&mut rng, 6);
        p.a = vec![1.5; 13];
        p.b = vec![0.7; 13];
        p.alpha0 = vec![1.0; 13];
        let w = vec![1.0; 13];
        let out = solve_profile(&p, &w, 1.0).unwrap();
        for v in out {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unconstrained_solution_satisfies_normal_equations() {
        let n = 25;
        let t: Vec<f64> = (0..n).map(|k| k as f64 - 12.0).collect();
        let alpha_true: Vec<f64> = t.iter().map(|&t| 1.0 / (1.0 + (-t / 2.0).exp())).collect();
        let (r, ks, kk, rho) = (4.0, 0.7, 1.0, 0.5);
        let lum: Vec<f64> = alpha_true.iter().map(|a| rho * (r * ks * a + kk)).collect();
        let p = ShadowProfile {
            anchor: (0.0, 0.0),
            dir: (1.0, 0.0),
            alpha0: t.iter().map(|&t| (t > 0.0) as u8 as f64).collect(),
            transition: 0.5,
            a: lum.iter().map(|l| r * ks / l).collect(),
            b: lum.iter().map(|l| kk / l).collect(),
            k_sun: vec![ks; n],
            k_sky: vec![kk; n],
            lum,
            t,
        };
        let w = p.prior_weights(&PenumbraParams::default());
        let x = solve_profile(&p, &w, 1.0).unwrap();
        let (diag, off, rhs) = normal_equations(&p, &w, 1.0);
        for i in (1..n - 1).filter(|&i| x[i] > 0.0 && x[i] < 1.0) {
            let r = diag[i] * x[i] + off[i - 1] * x[i - 1] + off[i] * x[i + 1] - rhs[i];
            assert!(r.abs() < 1e-9, "residual {r} at {i}");
        }
        let rmse = (x.iter().zip(&alpha_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(rmse < 0.05, "rmse {rmse}");
        assert!(p.inverse_albedo_tv(&x) < p.inverse_albedo_tv(&p.alpha0));
    }

    #[test]
    fn objective_never_exceeds_binary_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = PenumbraParams::default();
        for _ in 0..100 {
            let p = random_profile(&mut rng, 12);
            let w = p.prior_weights(&params);
            let x = solve_profile(&p, &w, 1.0).unwrap();
            assert!(profile_objective(&p, &w, 1.0, &x) <= profile_objective(&p, &w, 1.0, &p.alpha0) + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_profile(&mut rng, 4);
        let mut w = vec![1.0; 9];
        w[0] = 0.0;
        assert!(matches!(solve_profile(&p, &w, 1.0), Err(PenumbraError::Weights)));
        assert!(matches!(solve_profile(&p, &w[..5], 1.0), Err(PenumbraError::WeightCount { .. })));
    }

    fn ratio(r: f64) -> IlluminationRatio {
        let gmm = Gmm2 {
            weights: [1.0, 0.0],
            means: [r, r],
            variances: [1e-6, 1e-6],
            loglik: vec![],
            merged: true,
        };
        let fit = ChannelFit { gmm, accepted: true };
        IlluminationRatio {
            ratio: [r; 3],
            accepted: true,
            n_pairs: 100,
            n_inliers: 100,
            channels: vec![fit.clone(), fit.clone(), fit],
            reason: None,
            pairs_per_image: vec![100],
        }
    }

    /// Flat ground with a vertical shadow edge at column `c` and a linear
    /// penumbra of the given width.
    fn edge_scene(w: usize, h: usize, c: f64, width: f64) -> (LinearImage, GBuffer, VisibilityMask, Vec<f64>) {
        let (r, ks, kk) = (4.0f64, 0.7f64, 1.0f64);
        // shadow on the right (x > c), lit on the left
        let alpha_at = |x: f64| {
            if width == 0.0 {
                ((x < c) as u8) as f64
            } else {
                ((c + width / 2.0 - x) / width).clamp(0.0, 1.0)
            }
        };
        let truth: Vec<f64> = (0..w * h).map(|i| alpha_at((i % w) as f64)).collect();
        let img = LinearImage::from_fn(w, h, |x, y| {
            let rho = if (x, y) == (0, 0) { 0.9 } else { 0.4 };
            let v = (rho * (r * ks * alpha_at(x as f64) + kk)) as f32;
            [v; 3]
        })
        .unwrap();
        let gbuf = GBuffer {
            width: w,
            height: h,
            depth: ScalarImage::filled(w, h, 30.0),
            normal: vec![[0.0, 0.0, 1.0]; w * h],
            k_sun: ScalarImage::filled(w, h, ks as f32),
            k_sky: ScalarImage::filled(w, h, kk as f32),
            alpha_sun: ScalarImage::new(w, h, truth.iter().map(|&a| a as f32).collect()).unwrap(),
            valid: vec![true; w * h],
        };
        let labels = truth.iter().map(|&a| (a >= 0.5) as u8).collect();
        let mask = VisibilityMask::from_labels(w, h, labels, 1.0, Provenance::Projected);
        (img, gbuf, mask, truth)
    }

    #[test]
    fn straight_edge_profiles() {
        let (img, gbuf, mask, _) = edge_scene(48, 20, 24.0, 0.0);
        let params = PenumbraParams::default();
        let ps = extract_profiles(&mask, &gbuf, &img, &ratio(4.0), &params).unwrap();
        // boundary pixels: one per row, every second kept
        assert_eq!(ps.len(), 10);
        for p in &ps {
            assert_eq!(p.dir, (-1.0, 0.0));
            assert!(p.transition.abs() <= 1.0);
        }
    }

    #[test]
    fn border_profiles_are_dropped_and_no_boundary_gives_none() {
        let (img, gbuf, mask, _) = edge_scene(48, 20, 5.0, 0.0);
        let ps = extract_profiles(&mask, &gbuf, &img, &ratio(4.0), &PenumbraParams::default()).unwrap();
        assert!(ps.is_empty());
        let lit = VisibilityMask::from_labels(48, 20, vec![1; 960], 1.0, Provenance::Projected);
        let ps = extract_profiles(&lit, &gbuf, &img, &ratio(4.0), &PenumbraParams::default()).unwrap();
        assert!(ps.is_empty());
    }

    #[test]
    fn recovers_linear_penumbra_and_composites_monotone() {
        let (img, gbuf, mask, truth) = edge_scene(64, 24, 31.5, 6.0);
        let params = PenumbraParams::default();
        let (soft, solved, stats) = soften_view(&mask, &gbuf, &img, &ratio(4.0), &params).unwrap();
        assert!(!solved.is_empty());
        assert!(stats.tv_after < stats.tv_before);
        for (p, a) in &solved {
            let gt: Vec<f64> = (0..p.len()).map(|k| {
                let (x, _) = p.position(k);
                ((31.5 + 3.0 - x) / 6.0).clamp(0.0, 1.0)
            }).collect();
            let rmse = (a.iter().zip(&gt).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
            assert!(rmse < 0.05, "rmse {rmse}");
        }
        let row = 12;
        for x in 1..64 {
            assert!(soft.alpha.get(x, row) <= soft.alpha.get(x - 1, row) + 1e-6);
        }
        assert!(soft.alpha.data().iter().all(|a| (0.0..=1.0).contains(a)));
        let err: f64 = (0..64).map(|x| (soft.alpha.get(x, row) as f64 - truth[row * 64 + x]).abs()).fold(0.0, f64::max);
        assert!(err < 0.15, "max composite error {err}");
    }

    #[test]
    fn no_profiles_keeps_binary_mask() {
        let (_, gbuf, mask, _) = edge_scene(16, 8, 8.0, 0.0);
        let soft = composite_soft_mask(&mask, &gbuf, &[], 1.0);
        assert_eq!(soft, SoftVisibility::from_mask(&mask));
    }
}
