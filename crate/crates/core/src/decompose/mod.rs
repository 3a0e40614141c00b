//! Shading assembly and albedo division.
//!
//! Shading is expressed in sky units (`L_sky ≡ 1` per channel): only the
//! ratio `r = L_sun / L_sky` is observable, so
//! `S = r ⊗ (α k_sun) + k_sky` and the recovered albedo carries the
//! unknown per-channel sky radiance as a global scale. Albedo is therefore
//! relative, not absolute reflectance.

pub mod eval;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbuffer::GBuffer;
use crate::image::{ImageError, LinearImage, ScalarImage};

pub use eval::{evaluate, EvalError, Metrics};

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("dimension mismatch between {0}")]
    Dimensions(&'static str),
    #[error("invalid decomposition parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {message}")]
    Flags { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeParams {
    /// Smallest shading value (sky units) divided by.
    pub s_floor: f64,
    /// Sensor clip level; pixels with a channel at or above it are flagged
    /// overexposed. Unset for unclipped (e.g. rendered) radiance.
    pub clip_level: Option<f64>,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        Self {
            s_floor: 1e-4,
            clip_level: None,
        }
    }
}

impl DecomposeParams {
    pub fn validate(&self) -> Result<(), DecomposeError> {
        if !(self.s_floor > 0.0 && self.s_floor < 1.0) {
            return Err(DecomposeError::Param("s_floor must lie in (0, 1)".into()));
        }
        if let Some(c) = self.clip_level {
            if !(c > 0.0 && c.is_finite()) {
                return Err(DecomposeError::Param("clip_level must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum PixelFlag {
    Ok = 0,
    InvalidGeometry = 1,
    ShadingFloor = 2,
    Overexposed = 3,
}

impl PixelFlag {
    const ALL: [PixelFlag; 4] = [PixelFlag::Ok, PixelFlag::InvalidGeometry, PixelFlag::ShadingFloor, PixelFlag::Overexposed];
    const PALETTE: [u8; 12] = [0, 160, 0, 0, 0, 0, 255, 0, 255, 255, 220, 0];

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlbedoResult {
    pub albedo: LinearImage,
    pub shading: LinearImage,
    pub flags: Vec<PixelFlag>,
}

impl AlbedoResult {
    pub fn count(&self, flag: PixelFlag) -> usize {
        self.flags.iter().filter(|&&f| f == flag).count()
    }
}

/// `S = r ⊗ (α k_sun) + k_sky` on valid pixels; zero elsewhere.
pub fn assemble_shading(gbuf: &GBuffer, alpha: &ScalarImage, ratio: [f64; 3]) -> Result<LinearImage, DecomposeError> {
    if (alpha.width(), alpha.height()) != (gbuf.width, gbuf.height) {
        return Err(DecomposeError::Dimensions("visibility and G-buffer"));
    }
    let data: Vec<f32> = (0..gbuf.width * gbuf.height)
        .into_par_iter()
        .flat_map_iter(|i| {
            let s = if gbuf.valid[i] {
                let sun = alpha.data()[i] as f64 * gbuf.k_sun.data()[i] as f64;
                let sky = gbuf.k_sky.data()[i] as f64;
                ratio.map(|r| (r * sun + sky) as f32)
            } else {
                [0.0; 3]
            };
            s.into_iter()
        })
        .collect();
    Ok(LinearImage::new(gbuf.width, gbuf.height, data)?)
}

/// `R = I ⊘ S`. Pixels without geometry copy the input; pixels with a
/// shading channel below the floor divide by the floor instead.
pub fn decompose_albedo(
    img: &LinearImage,
    shading: &LinearImage,
    valid: &[bool],
    params: &DecomposeParams,
) -> Result<AlbedoResult, DecomposeError> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    if (shading.width(), shading.height()) != (w, h) {
        return Err(DecomposeError::Dimensions("image and shading"));
    }
    if valid.len() != w * h {
        return Err(DecomposeError::Dimensions("image and validity mask"));
    }
    let clip = params.clip_level.unwrap_or(f64::INFINITY);
    let px: Vec<([f32; 3], PixelFlag)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ii: [f64; 3] = [0, 1, 2].map(|c| img.data()[3 * i + c] as f64);
            let ss: [f64; 3] = [0, 1, 2].map(|c| shading.data()[3 * i + c] as f64);
            if !valid[i] {
                return (ii.map(|v| v as f32), PixelFlag::InvalidGeometry);
            }
            let floored = ss.iter().any(|&s| !(s >= params.s_floor));
            let r = [0, 1, 2].map(|c| (ii[c] / ss[c].max(params.s_floor)) as f32);
            let flag = if floored {
                PixelFlag::ShadingFloor
            } else if ii.iter().any(|&v| v >= clip) {
                PixelFlag::Overexposed
            } else {
                PixelFlag::Ok
            };
            (r, flag)
        })
        .collect();
    let mut data = Vec::with_capacity(3 * w * h);
    let mut flags = Vec::with_capacity(w * h);
    for (r, f) in px {
        data.extend_from_slice(&r);
        flags.push(f);
    }
    Ok(AlbedoResult {
        albedo: LinearImage::new(w, h, data)?,
        shading: shading.clone(),
        flags,
    })
}

/// Writes flags as an 8-bit palette PNG (index = flag code).
pub fn save_flags(flags: &[PixelFlag], width: usize, height: usize, path: &Path) -> Result<(), DecomposeError> {
    let err = |message: String| DecomposeError::Flags {
        path: path.display().to_string(),
        message,
    };
    if flags.len() != width * height {
        return Err(DecomposeError::Dimensions("flags and image"));
    }
    let file = File::create(path).map_err(|e| err(e.to_string()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(PixelFlag::PALETTE.to_vec());
    let mut writer = enc.write_header().map_err(|e| err(e.to_string()))?;
    let bytes: Vec<u8> = flags.iter().map(|&f| f as u8).collect();
    writer.write_image_data(&bytes).map_err(|e| err(e.to_string()))?;
    writer.finish().map_err(|e| err(e.to_string()))
}

pub fn load_flags(path: &Path) -> Result<(Vec<PixelFlag>, usize, usize), DecomposeError> {
    let err = |message: String| DecomposeError::Flags {
        path: path.display().to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| err(e.to_string()))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| err(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(err("expected an 8-bit palette image".into()));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| err("image too large".into()))?];
    reader.next_frame(&mut buf).map_err(|e| err(e.to_string()))?;
    let flags = buf[..w * h]
        .iter()
        .map(|&b| PixelFlag::from_index(b).ok_or_else(|| err(format!("unknown flag index {b}"))))
        .collect::<Result<_, _>>()?;
    Ok((flags, w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gbuf(w: usize, h: usize, ks: f32, kk: f32) -> GBuffer {
        GBuffer {
            width: w,
            height: h,
            depth: ScalarImage::filled(w, h, 10.0),
            normal: vec![[0.0, 0.0, 1.0]; w * h],
            k_sun: ScalarImage::filled(w, h, ks),
            k_sky: ScalarImage::filled(w, h, kk),
            alpha_sun: ScalarImage::filled(w, h, 1.0),
            valid: vec![true; w * h],
        }
    }

    #[test]
    fn shading_from_ratio() {
        let g = gbuf(2, 1, 1.0, 1.0);
        let mut a = ScalarImage::filled(2, 1, 1.0);
        a.set(1, 0, 0.0);
        let s = assemble_shading(&g, &a, [4.0; 3]).unwrap();
        assert_eq!(s.get(0, 0), [5.0; 3]);
        assert_eq!(s.get(1, 0), [1.0; 3]);
    }

    #[test]
    fn unit_division() {
        let img = LinearImage::filled(1, 1, [1.0; 3]).unwrap();
        let s = LinearImage::filled(1, 1, [5.0; 3]).unwrap();
        let r = decompose_albedo(&img, &s, &[true], &DecomposeParams::default()).unwrap();
        assert_eq!(r.albedo.get(0, 0), [0.2; 3]);
        assert_eq!(r.flags, vec![PixelFlag::Ok]);
    }

    #[test]
    fn zero_shading_is_flagged_and_finite() {
        let img = LinearImage::filled(2, 1, [0.3; 3]).unwrap();
        let s = LinearImage::new(2, 1, vec![0.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let r = decompose_albedo(&img, &s, &[true, false], &DecomposeParams::default()).unwrap();
        assert_eq!(r.flags, vec![PixelFlag::ShadingFloor, PixelFlag::InvalidGeometry]);
        assert!(r.albedo.data().iter().all(|v| v.is_finite()));
        assert_eq!(r.albedo.get(1, 0), [0.3; 3]);
    }

    #[test]
    fn clip_level_flags_overexposure() {
        let img = LinearImage::new(2, 1, vec![0.5, 0.5, 0.5, 0.5, 1.0, 0.5]).unwrap();
        let s = LinearImage::filled(2, 1, [1.0; 3]).unwrap();
        let p = DecomposeParams {
            clip_level: Some(1.0),
            ..Default::default()
        };
        let r = decompose_albedo(&img, &s, &[true, true], &p).unwrap();
        assert_eq!(r.flags, vec![PixelFlag::Ok, PixelFlag::Overexposed]);
    }

    #[test]
    fn flags_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flags.png");
        let flags: Vec<PixelFlag> = (0..35).map(|i| PixelFlag::from_index((i % 4) as u8).unwrap()).collect();
        save_flags(&flags, 7, 5, &path).unwrap();
        assert_eq!(load_flags(&path).unwrap(), (flags, 7, 5));
    }

    proptest! {
        #[test]
        fn reconstruction_on_ok_pixels(
            vals in prop::collection::vec((0.0f32..10.0, 0.0f32..1.0, 0.0f32..1.0, 0.0f32..1.0), 1..64),
            r in (0.5f64..10.0, 0.5f64..10.0, 0.5f64..10.0),
            scale in 0.01f32..100.0,
        ) {
            let n = vals.len();
            let mut g = gbuf(n, 1, 0.0, 0.0);
            let mut alpha = ScalarImage::filled(n, 1, 0.0);
            let mut pix = Vec::new();
            for (i, &(v, ks, kk, a)) in vals.iter().enumerate() {
                g.k_sun.set(i, 0, ks);
                g.k_sky.set(i, 0, kk);
                alpha.set(i, 0, a);
                pix.extend_from_slice(&[v, v * 0.5, v * 0.25]);
            }
            let img = LinearImage::new(n, 1, pix).unwrap();
            let s = assemble_shading(&g, &alpha, [r.0, r.1, r.2]).unwrap();
            let out = decompose_albedo(&img, &s, &g.valid, &DecomposeParams::default()).unwrap();
            let scaled = decompose_albedo(&img.scaled(scale), &s, &g.valid, &DecomposeParams::default()).unwrap();
            for i in 0..n {
                prop_assert!(out.albedo.data()[3 * i..3 * i + 3].iter().all(|v| v.is_finite() && *v >= 0.0));
                if out.flags[i] != PixelFlag::Ok {
                    continue;
                }
                for c in 0..3 {
                    let recon = out.albedo.data()[3 * i + c] as f64 * s.data()[3 * i + c] as f64;
                    let orig = img.data()[3 * i + c] as f64;
                    prop_assert!((recon - orig).abs() <= 1e-5 * orig.abs().max(f64::MIN_POSITIVE));
                    let ratio = scaled.albedo.data()[3 * i + c] as f64 / scale as f64;
                    prop_assert!((ratio - out.albedo.data()[3 * i + c] as f64).abs() <= 1e-6 * (1.0 + ratio.abs()));
                }
            }
        }
    }
}
