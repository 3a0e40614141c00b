//! Comparison of recovered layers against ground truth.
//!
//! Albedo and shading are only defined up to a per-channel scale (the sky
//! radiance gauge), so the headline number is the scale-invariant RMSE:
//! each channel of the prediction is scaled by its least-squares factor
//! before the residual is taken, and the residual norm is divided by the
//! truth norm.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::image::{LinearImage, ScalarImage};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("evaluation mask selects no pixels")]
    EmptyMask,
    #[error("dimension mismatch between prediction, truth and mask")]
    Dimensions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_pixels: usize,
    /// Peak is the largest masked truth value; `inf` for identical inputs.
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub psnr_db: f64,
    pub rmse: f64,
    /// RMS of per-value relative errors, over truth values > 0.
    pub relative_rmse: f64,
    /// Residual norm over truth norm after per-channel scale fitting.
    pub si_rmse: f64,
    pub scales: [f64; 3],
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_psnr<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum V {
        N(f64),
        S(String),
    }
    match V::deserialize(d)? {
        V::N(x) => Ok(x),
        V::S(s) if s == "inf" => Ok(f64::INFINITY),
        V::S(s) => Err(serde::de::Error::custom(format!("bad PSNR value {s:?}"))),
    }
}

pub fn evaluate(pred: &LinearImage, truth: &LinearImage, mask: &[bool]) -> Result<Metrics, EvalError> {
    let n = truth.width() * truth.height();
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) || mask.len() != n {
        return Err(EvalError::Dimensions);
    }
    let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    let (p, t) = (pred.data(), truth.data());
    let mut se = 0.0;
    let mut rel = (0.0, 0usize);
    let mut peak = 0.0f64;
    let mut pt = [0.0f64; 3];
    let mut pp = [0.0f64; 3];
    let mut tt = 0.0;
    for &i in &idx {
        for c in 0..3 {
            let (a, b) = (p[3 * i + c] as f64, t[3 * i + c] as f64);
            se += (a - b).powi(2);
            if b > 0.0 {
                rel.0 += ((a - b) / b).powi(2);
                rel.1 += 1;
            }
            peak = peak.max(b);
            pt[c] += a * b;
            pp[c] += a * a;
            tt += b * b;
        }
    }
    let count = (3 * idx.len()) as f64;
    let mse = se / count;
    let scales = [0, 1, 2].map(|c| if pp[c] > 0.0 { pt[c] / pp[c] } else { 0.0 });
    let mut res = 0.0;
    for &i in &idx {
        for c in 0..3 {
            res += (scales[c] * p[3 * i + c] as f64 - t[3 * i + c] as f64).powi(2);
        }
    }
    Ok(Metrics {
        n_pixels: idx.len(),
        psnr_db: if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (peak * peak / mse).log10()
        },
        rmse: mse.sqrt(),
        relative_rmse: if rel.1 > 0 { (rel.0 / rel.1 as f64).sqrt() } else { 0.0 },
        si_rmse: if tt > 0.0 { (res / tt).sqrt() } else { 0.0 },
        scales,
    })
}

/// Pixels within `radius` (Chebyshev distance) of a true shadow boundary:
/// any pixel with fractional visibility, or whose visibility differs from
/// a 4-neighbor's.
pub fn near_shadow_boundary(alpha: &ScalarImage, radius: usize) -> Vec<bool> {
    let (w, h) = (alpha.width(), alpha.height());
    let seed: Vec<bool> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let a = alpha.get(x, y);
            if a > 0.0 && a < 1.0 {
                return true;
            }
            let diff = |xx: usize, yy: usize| alpha.get(xx, yy) != a;
            (x > 0 && diff(x - 1, y)) || (x + 1 < w && diff(x + 1, y)) || (y > 0 && diff(x, y - 1)) || (y + 1 < h && diff(x, y + 1))
        })
        .collect();
    // separable max filter
    let mut rows = vec![false; w * h];
    for y in 0..h {
        let mut last: Option<usize> = None;
        for x in 0..w {
            if seed[y * w + x] {
                last = Some(x);
            }
            if last.is_some_and(|l| x - l <= radius) {
                rows[y * w + x] = true;
            }
        }
        let mut next: Option<usize> = None;
        for x in (0..w).rev() {
            if seed[y * w + x] {
                next = Some(x);
            }
            if next.is_some_and(|n| n - x <= radius) {
                rows[y * w + x] = true;
            }
        }
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if rows[y * w + x] {
                last = Some(y);
            }
            if last.is_some_and(|l| y - l <= radius) {
                out[y * w + x] = true;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if rows[y * w + x] {
                next = Some(y);
            }
            if next.is_some_and(|n| n - y <= radius) {
                out[y * w + x] = true;
            }
        }
    }
    out
}

/// Relative difference of the mean of `layer` inside true umbra
/// (`α = 0`, surface facing the sun) versus fully lit pixels, restricted to
/// the most frequent truth albedo that occurs in both. Largest over
/// channels; `None` when no such surface exists.
pub fn umbra_contrast(
    layer: &LinearImage,
    truth_albedo: &LinearImage,
    truth_alpha: &ScalarImage,
    k_sun: &ScalarImage,
    mask: &[bool],
) -> Option<f64> {
    use std::collections::HashMap;
    let n = mask.len();
    let key = |i: usize| {
        let a = &truth_albedo.data()[3 * i..3 * i + 3];
        [a[0].to_bits(), a[1].to_bits(), a[2].to_bits()]
    };
    let mut groups: HashMap<[u32; 3], (usize, usize)> = HashMap::new();
    for i in (0..n).filter(|&i| mask[i]) {
        let e = groups.entry(key(i)).or_default();
        if truth_alpha.data()[i] == 0.0 && k_sun.data()[i] > 0.0 {
            e.0 += 1;
        } else if truth_alpha.data()[i] == 1.0 {
            e.1 += 1;
        }
    }
    let (&best, _) = groups
        .iter()
        .filter(|(_, &(u, l))| u > 0 && l > 0)
        .max_by_key(|(k, &(u, l))| (u.min(l), **k))?;
    let mut sums = [[0.0f64; 3]; 2];
    let mut counts = [0usize; 2];
    for i in (0..n).filter(|&i| mask[i] && key(i) == best) {
        let side = if truth_alpha.data()[i] == 0.0 && k_sun.data()[i] > 0.0 {
            0
        } else if truth_alpha.data()[i] == 1.0 {
            1
        } else {
            continue;
        };
        counts[side] += 1;
        for c in 0..3 {
            sums[side][c] += layer.data()[3 * i + c] as f64;
        }
    }
    (0..3)
        .map(|c| {
            let (u, l) = (sums[0][c] / counts[0] as f64, sums[1][c] / counts[1] as f64);
            (u - l).abs() / l
        })
        .reduce(f64::max)
}

/// Cross-image consistency of a tracked patch: mean over channels of the
/// coefficient of variation of per-image median albedo.
pub fn patch_consistency(medians: &[[f64; 3]]) -> Option<f64> {
    if medians.len() < 2 {
        return None;
    }
    let n = medians.len() as f64;
    let cv: f64 = (0..3)
        .map(|c| {
            let m = medians.iter().map(|v| v[c]).sum::<f64>() / n;
            let var = medians.iter().map(|v| (v[c] - m).powi(2)).sum::<f64>() / n;
            if m > 0.0 {
                var.sqrt() / m
            } else {
                0.0
            }
        })
        .sum();
    Some(cv / 3.0)
}

/// Per-channel median of the selected pixels.
pub fn masked_median(img: &LinearImage, mask: &[bool]) -> Option<[f64; 3]> {
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut v: Vec<f32> = (0..mask.len()).filter(|&i| mask[i]).map(|i| img.data()[3 * i + c]).collect();
        if v.is_empty() {
            return None;
        }
        let mid = v.len() / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, f32::total_cmp);
        *o = *m as f64;
    }
    Some(out)
}
