// SPDX-License-Identifier: Apache-2.0

//! Heat-map rendering of displacement magnitude with sparse arrow glyphs.

use image::{Rgb, RgbImage};

use super::DeformationMap;

#[derive(Clone, Copy, Debug)]
pub struct RenderOptions {
    /// Magnitude mapped to the top of the colormap; `None` uses the map's maximum.
    pub scale: Option<f64>,
    /// Arrow anchor spacing in pixels; 0 disables arrows.
    pub arrow_step: usize,
    /// Pixels per unit displacement when drawing arrows.
    pub arrow_gain: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            scale: None,
            arrow_step: 8,
            arrow_gain: 1.0,
        }
    }
}

const ARROW: Rgb<u8> = Rgb([0, 200, 255]);

/// Black -> red -> yellow -> white; every channel is non-decreasing in `t`.
fn heat(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0) * 3.0;
    let ch = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([ch(t), ch(t - 1.0), ch(t - 2.0)])
}

pub fn render_deformation(m: &DeformationMap, opts: &RenderOptions) -> RgbImage {
    let (w, h) = m.dims();
    let scale = opts.scale.unwrap_or_else(|| m.max_magnitude());
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = m.at(x, y);
            let t = if scale > 0.0 { dx.hypot(dy) / scale } else { 0.0 };
            img.put_pixel(x as u32, y as u32, heat(t));
        }
    }
    if opts.arrow_step == 0 {
        return img;
    }
    let half = opts.arrow_step / 2;
    for ay in (half..h).step_by(opts.arrow_step) {
        for ax in (half..w).step_by(opts.arrow_step) {
            let (dx, dy) = m.at(ax, ay);
            let (ex, ey) = (dx * opts.arrow_gain, dy * opts.arrow_gain);
            let len = ex.hypot(ey);
            if len < 0.5 {
                continue;
            }
            let steps = len.ceil() as usize * 2;
            for s in 0..=steps {
                let f = s as f64 / steps as f64;
                let px = (ax as f64 + f * ex).round();
                let py = (ay as f64 + f * ey).round();
                if px >= 0.0 && py >= 0.0 && (px as usize) < w && (py as usize) < h {
                    img.put_pixel(px as u32, py as u32, ARROW);
                }
            }
        }
    }
    img
}
