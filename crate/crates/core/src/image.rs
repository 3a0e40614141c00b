//! Linear floating-point rasters and their on-disk formats.
//!
//! PFM is the native interchange format: every layer the pipeline writes
//! (images, G-buffer attributes, masks) is a PFM file. Single-part scanline
//! EXR is accepted on input for RGB images.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: file not found")]
    NotFound { path: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: non-linear encoding rejected ({format} stores display-referred integer data; convert to linear PFM first)")]
    NonLinearEncoding { path: String, format: &'static str },
    #[error("{path}: expected 3 channels (RGB), found {found}")]
    ChannelCount { path: String, found: usize },
    #[error("{path}: malformed {format} file: {reason}")]
    Malformed {
        path: String,
        format: &'static str,
        reason: String,
    },
    #[error("image must have non-zero width and height (got {width}x{height})")]
    Empty { width: usize, height: usize },
    #[error("pixel buffer holds {found} values, {width}x{height}x{channels} requires {expected}")]
    BufferSize {
        width: usize,
        height: usize,
        channels: usize,
        expected: usize,
        found: usize,
    },
    #[error("pixel ({x}, {y}) channel {channel} is {value}; linear radiance must be finite and non-negative")]
    InvalidValue {
        x: usize,
        y: usize,
        channel: usize,
        value: f32,
    },
    #[error("dimension mismatch: {what} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch {
        what: String,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
}

/// Raw PFM payload: rows top-to-bottom, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmData {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// RGB raster in linear radiometric space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl LinearImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        check_layout(width, height, 3, data.len())?;
        for (i, &v) in data.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                let p = i / 3;
                return Err(ImageError::InvalidValue {
                    x: p % width,
                    y: p / width,
                    channel: i % 3,
                    value: v,
                });
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from a per-pixel function; negative or non-finite
    /// outputs are rejected.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, value: [f32; 3]) -> Result<Self, ImageError> {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Pixel as f64 triple.
    #[inline]
    pub fn get_f64(&self, x: usize, y: usize) -> [f64; 3] {
        let p = self.get(x, y);
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer positions). `None` outside the image.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let (taps, n) = bilinear_taps(self.width, self.height, x, y)?;
        let mut out = [0.0; 3];
        for &(ix, iy, w) in &taps[..n] {
            let p = self.get_f64(ix, iy);
            for c in 0..3 {
                out[c] += w * p[c];
            }
        }
        Some(out)
    }

    /// Multiplies every value by `factor` (> 0), as an exposure change would.
    pub fn scaled(&self, factor: f32) -> Self {
        assert!(factor > 0.0 && factor.is_finite(), "exposure factor must be positive");
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Mean of the three channels per pixel.
    pub fn luminance(&self) -> ScalarImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| ((p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0) as f32)
            .collect();
        ScalarImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn to_pfm(&self) -> PfmData {
        PfmData {
            width: self.width,
            height: self.height,
            channels: 3,
            data: self.data.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        load_linear_image(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        write_linear_image(self, path.as_ref())
    }
}

/// Single-channel f32 raster. Unlike [`LinearImage`] it carries arbitrary
/// values (depth uses `+inf` for background).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ScalarImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        check_layout(width, height, 1, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (taps, n) = bilinear_taps(self.width, self.height, x, y)?;
        Some(
            taps[..n]
                .iter()
                .map(|&(ix, iy, w)| w * self.get(ix, iy) as f64)
                .sum(),
        )
    }

    pub fn to_pfm(&self) -> PfmData {
        PfmData {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }

    pub fn from_pfm(pfm: PfmData, path: &str) -> Result<Self, ImageError> {
        if pfm.channels != 1 {
            return Err(ImageError::Malformed {
                path: path.to_string(),
                format: "PFM",
                reason: format!("expected single-channel Pf, found {} channels", pfm.channels),
            });
        }
        Self::new(pfm.width, pfm.height, pfm.data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        Self::from_pfm(read_pfm(path)?, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        write_pfm(&self.to_pfm(), path.as_ref())
    }
}

fn check_layout(width: usize, height: usize, channels: usize, len: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::Empty { width, height });
    }
    let expected = width * height * channels;
    if len != expected {
        return Err(ImageError::BufferSize {
            width,
            height,
            channels,
            expected,
            found: len,
        });
    }
    Ok(())
}

/// Up to four (x, y, weight) taps; a coordinate exactly on the last
/// row/column is accepted without reading past the edge.
pub(crate) fn bilinear_taps(
    width: usize,
    height: usize,
    x: f64,
    y: f64,
) -> Option<([(usize, usize, f64); 4], usize)> {
    if !(x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ];
    Some((taps, 4))
}

/// Loads an RGB linear image from PFM or single-part scanline EXR.
/// Display-referred formats (PNG, JPEG, TIFF, PPM) are rejected.
pub fn load_linear_image(path: &Path) -> Result<LinearImage, ImageError> {
    let name = path.display().to_string();
    let mut magic = [0u8; 8];
    let n = {
        let mut f = open(path)?;
        read_up_to(&mut f, &mut magic).map_err(|source| ImageError::Io {
            path: name.clone(),
            source,
        })?
    };
    let magic = &magic[..n];
    if magic.starts_with(b"PF") || magic.starts_with(b"Pf") {
        let pfm = read_pfm(path)?;
        if pfm.channels != 3 {
            return Err(ImageError::ChannelCount {
                path: name,
                found: pfm.channels,
            });
        }
        return LinearImage::new(pfm.width, pfm.height, pfm.data);
    }
    if magic.starts_with(&[0x76, 0x2f, 0x31, 0x01]) {
        return read_exr(path);
    }
    let format = if magic.starts_with(b"\x89PNG") {
        "PNG"
    } else if magic.starts_with(&[0xff, 0xd8, 0xff]) {
        "JPEG"
    } else if magic.starts_with(b"II*\0") || magic.starts_with(b"MM\0*") {
        "TIFF"
    } else if magic.starts_with(b"P6") || magic.starts_with(b"P3") {
        "PPM"
    } else {
        return Err(ImageError::Malformed {
            path: name,
            format: "image",
            reason: "unrecognized file signature".into(),
        });
    };
    Err(ImageError::NonLinearEncoding { path: name, format })
}

pub fn write_linear_image(img: &LinearImage, path: &Path) -> Result<(), ImageError> {
    write_pfm(&img.to_pfm(), path)
}

fn open(path: &Path) -> Result<File, ImageError> {
    File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ImageError::NotFound {
                path: path.display().to_string(),
            }
        } else {
            ImageError::Io {
                path: path.display().to_string(),
                source,
            }
        }
    })
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            k => filled += k,
        }
    }
    Ok(filled)
}

fn read_token(r: &mut impl BufRead) -> std::io::Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(byte[0]);
    }
    Ok(String::from_utf8_lossy(&tok).into_owned())
}

/// Reads a PFM file of either byte order. Rows are returned top-to-bottom.
pub fn read_pfm(path: &Path) -> Result<PfmData, ImageError> {
    let name = path.display().to_string();
    let malformed = |reason: String| ImageError::Malformed {
        path: name.clone(),
        format: "PFM",
        reason,
    };
    let io_err = |source| ImageError::Io {
        path: name.clone(),
        source,
    };
    let mut r = BufReader::new(open(path)?);
    let header = read_token(&mut r).map_err(io_err)?;
    let channels = match header.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(malformed(format!("bad header {other:?}"))),
    };
    let width: usize = read_token(&mut r)
        .map_err(io_err)?
        .parse()
        .map_err(|_| malformed("bad width".into()))?;
    let height: usize = read_token(&mut r)
        .map_err(io_err)?
        .parse()
        .map_err(|_| malformed("bad height".into()))?;
    let scale: f32 = read_token(&mut r)
        .map_err(io_err)?
        .parse()
        .map_err(|_| malformed("bad scale".into()))?;
    if width == 0 || height == 0 {
        return Err(ImageError::Empty { width, height });
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(malformed("scale must be non-zero".into()));
    }
    let little_endian = scale < 0.0;
    let row_len = width * channels;
    let mut raw = vec![0u8; row_len * height * 4];
    r.read_exact(&mut raw)
        .map_err(|_| malformed("truncated pixel data".into()))?;
    let mut data = vec![0f32; row_len * height];
    // PFM stores rows bottom-to-top.
    for (file_row, chunk) in raw.chunks_exact(row_len * 4).enumerate() {
        let y = height - 1 - file_row;
        let dst = &mut data[y * row_len..(y + 1) * row_len];
        for (d, b) in dst.iter_mut().zip(chunk.chunks_exact(4)) {
            let bytes = [b[0], b[1], b[2], b[3]];
            *d = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
        }
    }
    Ok(PfmData {
        width,
        height,
        channels,
        data,
    })
}

/// Writes little-endian PFM (scale -1).
pub fn write_pfm(pfm: &PfmData, path: &Path) -> Result<(), ImageError> {
    check_layout(pfm.width, pfm.height, pfm.channels, pfm.data.len())?;
    let header = match pfm.channels {
        3 => "PF",
        1 => "Pf",
        c => {
            return Err(ImageError::ChannelCount {
                path: path.display().to_string(),
                found: c,
            })
        }
    };
    let io_err = |source| ImageError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write!(w, "{header}\n{} {}\n-1.0\n", pfm.width, pfm.height).map_err(io_err)?;
    let row_len = pfm.width * pfm.channels;
    let mut buf = Vec::with_capacity(row_len * 4);
    for y in (0..pfm.height).rev() {
        buf.clear();
        for v in &pfm.data[y * row_len..(y + 1) * row_len] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn read_exr(path: &Path) -> Result<LinearImage, ImageError> {
    use exr::prelude::*;

    let name = path.display().to_string();
    let malformed = |reason: String| ImageError::Malformed {
        path: name.clone(),
        format: "EXR",
        reason,
    };
    let meta = exr::meta::MetaData::read_from_file(path, false)
        .map_err(|e| malformed(e.to_string()))?;
    let header = meta
        .headers
        .first()
        .ok_or_else(|| malformed("no parts".into()))?;
    if meta.headers.len() != 1 {
        return Err(malformed("multi-part files are not supported".into()));
    }
    let names: Vec<String> = header
        .channels
        .list
        .iter()
        .map(|c| c.name.to_string())
        .collect();
    for want in ["R", "G", "B"] {
        if !names.iter().any(|n| n == want) {
            return Err(ImageError::ChannelCount {
                path: name,
                found: names.len(),
            });
        }
    }
    if header
        .channels
        .list
        .iter()
        .any(|c| c.sample_type == SampleType::U32)
    {
        return Err(ImageError::NonLinearEncoding {
            path: name,
            format: "integer EXR",
        });
    }
    let image = read_first_rgba_layer_from_file(
        path,
        |resolution, _| {
            let (w, h) = (resolution.width(), resolution.height());
            (w, vec![0f32; w * h * 3])
        },
        |(w, buf), pos, (r, g, b, _a): (f32, f32, f32, f32)| {
            let i = (pos.y() * *w + pos.x()) * 3;
            buf[i] = r;
            buf[i + 1] = g;
            buf[i + 2] = b;
        },
    )
    .map_err(|e| malformed(e.to_string()))?;
    let size = image.layer_data.size;
    let (_, data) = image.layer_data.channel_data.pixels;
    LinearImage::new(size.width(), size.height(), data)
}

/// Value at quantile `q` in [0, 1] (nearest-rank on the sorted values).
pub fn percentile(values: &mut [f32], q: f64) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f32::total_cmp);
    let rank = ((values.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    Some(values[rank])
}
