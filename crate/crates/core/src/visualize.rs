//! Attention heat-map overlays written as binary PPM.

use crate::error::{MafError, Result};
use crate::model::{infer, MafConfig, MafParams};
use crate::tensor::Tensor;

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &[f64], (sh, sw): (usize, usize), (dh, dw): (usize, usize)) -> Vec<f64> {
    assert_eq!(src.len(), sh * sw, "source length");
    let coord = |d: usize, s: usize, n: usize| {
        let x = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let lo = x.floor() as usize;
        (lo, (lo + 1).min(s - 1), x - lo as f64)
    };
    let mut out = Vec::with_capacity(dh * dw);
    for y in 0..dh {
        let (y0, y1, fy) = coord(y, sh, dh);
        for x in 0..dw {
            let (x0, x1, fx) = coord(x, sw, dw);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Min-max scaling to `0..=255`; a constant input maps to all zeros.
pub fn normalize_to_u8(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

const STOPS: [(f64, [f64; 3]); 4] = [
    (0.0, [0.0, 0.0, 255.0]),
    (85.0, [0.0, 255.0, 255.0]),
    (170.0, [255.0, 255.0, 0.0]),
    (255.0, [255.0, 0.0, 0.0]),
];

/// Piecewise-linear blue → cyan → yellow → red.
pub fn colormap(v: u8) -> [u8; 3] {
    let v = v as f64;
    let k = STOPS.windows(2).position(|w| v <= w[1].0).unwrap_or(STOPS.len() - 2);
    let ((a, ca), (b, cb)) = (STOPS[k], STOPS[k + 1]);
    let t = (v - a) / (b - a);
    std::array::from_fn(|i| (ca[i] + (cb[i] - ca[i]) * t).round() as u8)
}

/// An RGB image, row-major, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    /// Binary PPM (`P6`, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Blends the colour-mapped heat values 50/50 with a grayscale image in `[0, 1]`.
pub fn blend(gray: &[f64], heat: &[u8], width: usize, height: usize) -> RgbImage {
    let pixels = gray
        .iter()
        .zip(heat)
        .flat_map(|(&g, &h)| {
            let g = g.clamp(0.0, 1.0) * 255.0;
            colormap(h).map(|c| (0.5 * c as f64 + 0.5 * g).round() as u8)
        })
        .collect();
    RgbImage {
        width,
        height,
        pixels,
    }
}

/// Overlay of an `h×w` attention map on a `1×H×W` image.
pub fn overlay(image: &Tensor, map: &[f64], map_size: (usize, usize)) -> Result<RgbImage> {
    let [1, h, w] = image.shape() else {
        return Err(MafError::dim("overlay", image.shape(), &[1, 0, 0]));
    };
    let (h, w) = (*h, *w);
    if map.len() != map_size.0 * map_size.1 || map.is_empty() {
        return Err(MafError::Contract(format!(
            "attention map has {} values, expected {}×{}",
            map.len(),
            map_size.0,
            map_size.1
        )));
    }
    let heat = normalize_to_u8(&resize_bilinear(map, map_size, (h, w)));
    Ok(blend(image.data(), &heat, w, h))
}

/// Eval-mode fused attention map of `image` rendered over the image.
pub fn attention_overlay(params: &MafParams, config: &MafConfig, image: &Tensor) -> Result<RgbImage> {
    let (_, diag) = infer(params, config, image)?;
    let fused = diag
        .fused
        .ok_or_else(|| MafError::Config("visualisation needs use_mlfe=true".into()))?;
    overlay(image, fused.data(), (fused.shape()[1], fused.shape()[2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_stops() {
        assert_eq!(colormap(0), [0, 0, 255]);
        assert_eq!(colormap(85), [0, 255, 255]);
        assert_eq!(colormap(170), [255, 255, 0]);
        assert_eq!(colormap(255), [255, 0, 0]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let src = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(resize_bilinear(&src, (2, 2), (2, 2)), src.to_vec());
        assert!(resize_bilinear(&[0.7; 4], (2, 2), (5, 3)).iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_to_u8(&[0.2, 0.6, 0.4]), vec![0, 255, 128]);
        assert_eq!(normalize_to_u8(&[0.3; 3]), vec![0, 0, 0]);
    }

    #[test]
    fn ppm_header() {
        let img = RgbImage {
            width: 3,
            height: 2,
            pixels: vec![0; 18],
        };
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(ppm.len(), 11 + 18);
    }
}
