//! Image decoding, resampling, brightness normalization and turbidity scoring.

use image::{DynamicImage, ImageFormat, Rgb, RgbImage};

use super::{DataError, IMAGE_SIZE};
use crate::tensor::Tensor;

/// Luma weights (ITU-R BT.601).
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Target mean luminance of [`normalize_brightness`].
pub const TARGET_LUMINANCE: f64 = 0.5;

fn planes(image: &Tensor<f64>) -> Result<(usize, usize), DataError> {
    match *image.shape() {
        [3, h, w] => Ok((h, w)),
        ref s => Err(DataError::InvalidImage(format!("expected a [3, H, W] tensor, got {s:?}"))),
    }
}

/// Decodes PNG or JPEG bytes into a `[3, 64, 64]` tensor in [0, 1].
///
/// Grayscale and alpha inputs are converted to RGB (alpha is dropped), then
/// bilinearly resampled with pixel-center alignment. A source that is
/// already 64x64 is copied without resampling.
pub fn decode_and_resize(bytes: &[u8]) -> Result<Tensor<f64>, DataError> {
    let format = image::guess_format(bytes).map_err(|e| DataError::Format(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(DataError::Format(format!("unsupported image format {format:?}")));
    }
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| DataError::Format(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(DataError::InvalidImage(format!("image has zero size {w}x{h}")));
    }
    let data = rgb_planes(&img);
    resize_bilinear(&data, h, w, IMAGE_SIZE, IMAGE_SIZE)
}

fn rgb_planes(img: &DynamicImage) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0.0; 3 * h * w];
    let sixteen_bit = matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    if sixteen_bit {
        for (x, y, px) in img.to_rgb16().enumerate_pixels() {
            for c in 0..3 {
                out[(c * h + y as usize) * w + x as usize] = f64::from(px[c]) / 65535.0;
            }
        }
    } else {
        for (x, y, px) in img.to_rgb8().enumerate_pixels() {
            for c in 0..3 {
                out[(c * h + y as usize) * w + x as usize] = f64::from(px[c]) / 255.0;
            }
        }
    }
    out
}

/// Bilinear resampling of `[3, h, w]` planar data to `[3, out_h, out_w]`.
pub fn resize_bilinear(data: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Tensor<f64>, DataError> {
    if h == out_h && w == out_w {
        return Ok(Tensor::new(vec![3, h, w], data.to_vec())?);
    }
    let sample_axis = |dst: usize, src_len: usize, dst_len: usize| {
        let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut out = Vec::with_capacity(3 * out_h * out_w);
    for c in 0..3 {
        let plane = &data[c * h * w..][..h * w];
        for oy in 0..out_h {
            let (y0, y1, fy) = sample_axis(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1, fx) = sample_axis(ox, w, out_w);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(Tensor::new(vec![3, out_h, out_w], out)?)
}

/// Encodes a `[3, H, W]` tensor as an 8-bit RGB PNG.
pub fn encode_png(image: &Tensor<f64>) -> Result<Vec<u8>, DataError> {
    let (h, w) = planes(image)?;
    let d = image.data();
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(d[i]), to_u8(d[h * w + i]), to_u8(d[2 * h * w + i])])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| DataError::Format(e.to_string()))?;
    Ok(out.into_inner())
}

/// Per-pixel luminance plane.
pub fn luminance(image: &Tensor<f64>) -> Result<Vec<f64>, DataError> {
    let (h, w) = planes(image)?;
    let d = image.data();
    let n = h * w;
    Ok((0..n)
        .map(|i| LUMA[0] * d[i] + LUMA[1] * d[n + i] + LUMA[2] * d[2 * n + i])
        .collect())
}

pub fn mean_luminance(image: &Tensor<f64>) -> Result<f64, DataError> {
    let lum = luminance(image)?;
    Ok(lum.iter().sum::<f64>() / lum.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BrightnessStatus {
    /// Mean luminance was already on target.
    Unchanged,
    Rescaled { factor: f64 },
    /// Zero luminance everywhere; returned as-is.
    AllBlack,
    /// Even full saturation cannot reach the target; the saturating scale was used.
    Unreachable { factor: f64 },
}

impl BrightnessStatus {
    pub fn is_flagged(&self) -> bool {
        matches!(self, BrightnessStatus::AllBlack | BrightnessStatus::Unreachable { .. })
    }
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub image: Tensor<f64>,
    pub status: BrightnessStatus,
}

fn scaled_luminance(image: &[f64], n: usize, s: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        for (c, weight) in LUMA.iter().enumerate() {
            total += weight * (s * image[c * n + i]).min(1.0);
        }
    }
    total / n as f64
}

/// Scales an image so its mean luminance is 0.5, clipping to [0, 1].
///
/// The scale factor accounts for clipping: it is the factor `s` for which
/// `clip(s * x)` has mean luminance 0.5, found by bisection when clipping
/// is active. Proportional inputs (`x` and `k * x`) therefore normalize to
/// the same output.
pub fn normalize_brightness(image: &Tensor<f64>) -> Result<Normalized, DataError> {
    let (h, w) = planes(image)?;
    let n = h * w;
    let lum = luminance(image)?;
    let mean = lum.iter().sum::<f64>() / n as f64;
    if (mean - TARGET_LUMINANCE).abs() <= 1e-6 {
        return Ok(Normalized {
            image: image.clone(),
            status: BrightnessStatus::Unchanged,
        });
    }
    if mean <= 1e-12 {
        log::warn!("all-black image left unnormalized");
        return Ok(Normalized {
            image: image.clone(),
            status: BrightnessStatus::AllBlack,
        });
    }
    let x = image.data();
    let f = |s: f64| scaled_luminance(x, n, s);

    let mut factor = TARGET_LUMINANCE / mean;
    let mut reachable = true;
    if f(factor) < TARGET_LUMINANCE - 1e-9 {
        // the smallest scale that saturates every nonzero channel value
        let min_positive = x.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
        let saturating = 1.0 / min_positive;
        if f(saturating) < TARGET_LUMINANCE {
            factor = saturating;
            reachable = false;
        } else {
            let (mut lo, mut hi) = (factor, saturating);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < TARGET_LUMINANCE {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            factor = hi;
        }
    }
    let out = image.map(|v| (v * factor).clamp(0.0, 1.0));
    let status = if reachable {
        BrightnessStatus::Rescaled { factor }
    } else {
        log::warn!("mean luminance {mean:.4} cannot reach the target; saturated instead");
        BrightnessStatus::Unreachable { factor }
    };
    Ok(Normalized { image: out, status })
}

/// Turbidity proxy: mean over 8x8 blocks of the luminance variance within
/// each block. Partial blocks at the right and bottom edges are ignored.
pub fn turbidity_score(image: &Tensor<f64>) -> Result<f64, DataError> {
    const BLOCK: usize = 8;
    let (h, w) = planes(image)?;
    let lum = luminance(image)?;
    let (by, bx) = (h / BLOCK, w / BLOCK);
    if by == 0 || bx == 0 {
        return Err(DataError::InvalidImage(format!("{h}x{w} is smaller than one 8x8 block")));
    }
    let mut total = 0.0;
    for j in 0..by {
        for i in 0..bx {
            let vals = (0..BLOCK).flat_map(|dy| {
                let row = (j * BLOCK + dy) * w + i * BLOCK;
                lum[row..row + BLOCK].iter().copied()
            });
            let (s, s2) = vals.fold((0.0, 0.0), |(s, s2), v| (s + v, s2 + v * v));
            let m = s / (BLOCK * BLOCK) as f64;
            total += (s2 / (BLOCK * BLOCK) as f64 - m * m).max(0.0);
        }
    }
    Ok(total / (by * bx) as f64)
}
