use super::field::DisplacementField;
use crate::error::{Error, Result};

pub const DEFAULT_IMAGE_W: usize = 64;
pub const DEFAULT_IMAGE_H: usize = 48;

/// Downsampled indentation map, row-major with row 0 at the top, mm.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn max(&self) -> f32 {
        self.pixels.iter().copied().fold(0.0, f32::max)
    }
}

/// Source cells and overlap weights for each output index along one axis.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let w = hi.min((i + 1) as f64) - lo.max(i as f64);
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

/// Area-weighted downsampling, rescaled so the image peak matches the field
/// peak.
pub fn render_depth_image(field: &DisplacementField, out_w: usize, out_h: usize) -> Result<DepthImage> {
    if out_w < 8 || out_h < 8 {
        return Err(Error::Contract(format!(
            "image must be at least 8x8, got {out_w}x{out_h}"
        )));
    }
    let (nx, ny) = (field.nx(), field.ny());
    let wx = axis_weights(nx, out_w);
    let wy = axis_weights(ny, out_h);
    let mut px = vec![0.0f64; out_w * out_h];
    for (oy, rows) in wy.iter().enumerate() {
        for (ox, cols) in wx.iter().enumerate() {
            let mut acc = 0.0;
            let mut total = 0.0;
            for &(r, a) in rows {
                for &(c, b) in cols {
                    acc += a * b * field.get(c, r);
                    total += a * b;
                }
            }
            px[oy * out_w + ox] = acc / total;
        }
    }
    let peak = px.iter().copied().fold(0.0, f64::max);
    let target = field.max();
    if peak > 0.0 && peak != target {
        let k = target / peak;
        px.iter_mut().for_each(|v| *v *= k);
    }
    Ok(DepthImage {
        width: out_w,
        height: out_h,
        pixels: px.into_iter().map(|v| v as f32).collect(),
    })
}
