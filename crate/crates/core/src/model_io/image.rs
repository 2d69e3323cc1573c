use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::ImagingMode;

/// Single-channel scan image with 16-bit-range intensities stored as reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanImage {
    pub scan_id: String,
    pub mode: ImagingMode,
    pub width: usize,
    pub height: usize,
    /// Row-major, `width * height` values.
    pub pixels: Vec<f64>,
    /// Opaque millimetre-per-pixel metadata `(x, y)`; never used in computation.
    pub spacing: [f64; 2],
}

impl ScanImage {
    pub fn new(scan_id: impl Into<String>, mode: ImagingMode, width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            scan_id: scan_id.into(),
            mode,
            width,
            height,
            pixels,
            spacing: [1.0, 1.0],
        })
    }

    pub fn filled(scan_id: impl Into<String>, mode: ImagingMode, width: usize, height: usize, value: f64) -> Self {
        Self {
            scan_id: scan_id.into(),
            mode,
            width,
            height,
            pixels: vec![value; width * height],
            spacing: [1.0, 1.0],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear sample at continuous pixel-centre coordinates, clamping
    /// out-of-bounds locations to the nearest edge pixel.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        sample_bilinear(&self.pixels, self.width, self.height, x, y)
    }

    /// Canonical file name `<scan_id>_<mode>.<ext>`.
    pub fn file_name(&self, ext: &str) -> String {
        format!("{}_{}.{ext}", self.scan_id, self.mode)
    }
}

pub(crate) fn sample_bilinear(pixels: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = pixels[y0 * width + x0] * (1.0 - fx) + pixels[y0 * width + x1] * fx;
    let bottom = pixels[y1 * width + x0] * (1.0 - fx) + pixels[y1 * width + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Splits `<scan_id>_<mode>` into its parts, preferring the longest mode suffix.
fn parse_mode_suffix(stem: &str) -> Option<(String, ImagingMode)> {
    ImagingMode::ALL
        .into_iter()
        .filter_map(|m| {
            stem.strip_suffix(m.as_str())
                .and_then(|rest| rest.strip_suffix('_'))
                .map(|id| (id.to_string(), m))
        })
        .max_by_key(|(id, _)| std::cmp::Reverse(id.len()))
}

/// Reads a 16-bit single-channel PGM (P5) or grayscale PNG. The imaging
/// mode comes from the `_<mode>` filename suffix.
pub fn read_image(path: impl AsRef<Path>) -> Result<ScanImage> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(path, "cannot derive scan id from file name"))?;
    let (scan_id, mode) = parse_mode_suffix(stem).ok_or_else(|| {
        Error::format(path, format!("unknown mode suffix in {stem:?}; valid modes: {}", ImagingMode::valid_list()))
    })?;
    let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
    let (width, height, pixels, spacing) = match ext.as_deref() {
        Some("pgm") => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_pgm(&bytes).map_err(|m| Error::format(path, m))?
        }
        Some("png") => {
            let (w, h, px) = read_png(path)?;
            (w, h, px, [1.0, 1.0])
        }
        _ => return Err(Error::format(path, "unsupported image extension (expected .pgm or .png)")),
    };
    Ok(ScanImage {
        scan_id,
        mode,
        width,
        height,
        pixels,
        spacing,
    })
}

/// Reads an image and upsamples it with bicubic interpolation by an
/// integer factor.
pub fn read_image_upsampled(path: impl AsRef<Path>, factor: usize) -> Result<ScanImage> {
    let img = read_image(path)?;
    upsample_bicubic(&img, factor)
}

type Decoded = (usize, usize, Vec<f64>, [f64; 2]);

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Decoded, String> {
    let mut pos = 0usize;
    let mut spacing = [1.0, 1.0];

    let next_token = |pos: &mut usize, spacing: &mut [f64; 2]| -> std::result::Result<String, String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                let start = *pos;
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                let comment = String::from_utf8_lossy(&bytes[start + 1..*pos]).trim().to_string();
                if let Some(rest) = comment.strip_prefix("spacing") {
                    let vals: Vec<f64> = rest.split_whitespace().filter_map(|s| s.parse().ok()).collect();
                    if vals.len() == 2 {
                        *spacing = [vals[0], vals[1]];
                    }
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        if start == *pos {
            return Err("truncated PGM header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = next_token(&mut pos, &mut spacing)?;
    match magic.as_str() {
        "P5" => {}
        "P6" | "P3" => return Err("multi-channel image; expected single-channel grayscale".into()),
        other => return Err(format!("unsupported PNM magic {other:?}; expected P5")),
    }
    let mut header_int = |name: &str, pos: &mut usize| -> std::result::Result<usize, String> {
        let tok = next_token(pos, &mut spacing)?;
        tok.parse().map_err(|_| format!("invalid PGM {name} {tok:?}"))
    };
    let width = header_int("width", &mut pos)?;
    let height = header_int("height", &mut pos)?;
    let maxval = header_int("maxval", &mut pos)?;
    if width == 0 || height == 0 {
        return Err("empty image".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let needed = width * height * bytes_per_sample;
    let raster = bytes
        .get(pos..pos + needed)
        .ok_or_else(|| format!("truncated raster: need {needed} bytes, have {}", bytes.len().saturating_sub(pos)))?;
    let pixels = if bytes_per_sample == 1 {
        raster.iter().map(|&b| b as f64).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    };
    Ok((width, height, pixels, spacing))
}

fn read_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path).map_err(|e| Error::format(path, format!("cannot decode PNG: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        other => {
            return Err(Error::format(
                path,
                format!("multi-channel image ({:?}); expected single-channel grayscale", other.color()),
            ))
        }
    };
    Ok((w, h, pixels))
}

fn to_u16(v: f64) -> u16 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 65535.0) as u16
    }
}

/// Writes a 16-bit binary PGM; intensities are rounded and clamped to
/// `[0, 65535]`. Spacing is recorded in a header comment.
pub fn write_pgm(img: &ScanImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!(
        "P5\n# spacing {} {}\n{} {}\n65535\n",
        img.spacing[0], img.spacing[1], img.width, img.height
    )
    .into_bytes();
    out.reserve(img.pixels.len() * 2);
    for &v in &img.pixels {
        out.extend_from_slice(&to_u16(v).to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a 16-bit grayscale PNG with the same clamping as [`write_pgm`].
pub fn write_png(img: &ScanImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u16> = img.pixels.iter().map(|&v| to_u16(v)).collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| Error::invalid("pixel buffer does not match image dimensions"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, format!("cannot encode PNG: {e}")))
}

fn cubic_weight(t: f64) -> f64 {
    // Keys kernel, a = -0.5
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Bicubic upsampling by an integer factor with edge clamping. Output
/// intensities are clipped at zero.
pub fn upsample_bicubic(img: &ScanImage, factor: usize) -> Result<ScanImage> {
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width, img.height);
    let (ow, oh) = (w * factor, h * factor);
    let f = factor as f64;
    // separable: rows first, then columns
    let taps = |out_len: usize, in_len: usize| -> Vec<([usize; 4], [f64; 4])> {
        (0..out_len)
            .map(|o| {
                let src = (o as f64 + 0.5) / f - 0.5;
                let base = src.floor();
                let frac = src - base;
                let mut idx = [0usize; 4];
                let mut wts = [0.0; 4];
                for k in 0..4 {
                    let off = k as f64 - 1.0;
                    let i = (base + off).clamp(0.0, (in_len - 1) as f64) as usize;
                    idx[k] = i;
                    wts[k] = cubic_weight(frac - off);
                }
                let s: f64 = wts.iter().sum();
                wts.iter_mut().for_each(|w| *w /= s);
                (idx, wts)
            })
            .collect()
    };
    let xt = taps(ow, w);
    let yt = taps(oh, h);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &img.pixels[y * w..(y + 1) * w];
        for (x, (idx, wts)) in xt.iter().enumerate() {
            tmp[y * ow + x] = (0..4).map(|k| row[idx[k]] * wts[k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for (y, (idx, wts)) in yt.iter().enumerate() {
        for x in 0..ow {
            let v: f64 = (0..4).map(|k| tmp[idx[k] * ow + x] * wts[k]).sum();
            out[y * ow + x] = v.max(0.0);
        }
    }
    Ok(ScanImage {
        scan_id: img.scan_id.clone(),
        mode: img.mode,
        width: ow,
        height: oh,
        pixels: out,
        spacing: [img.spacing[0] / f, img.spacing[1] / f],
    })
}
