// SPDX-License-Identifier: Apache-2.0

//! Composite figures: the layout/map/prediction triptych and the
//! parameter-sweep strip.

use image::{Rgb, RgbImage};
use vmlitho::diffwarp::{render_deformation, DeformationMap, RenderOptions};
use vmlitho::raster::{to_byte, Raster};

const GAP: u32 = 2;
const BORDER: u32 = 2;
const BACKGROUND: Rgb<u8> = Rgb([96, 96, 96]);
/// Marks tiles whose parameter value was not seen in training.
pub const UNSEEN: Rgb<u8> = Rgb([220, 30, 30]);

fn grey(r: &Raster) -> RgbImage {
    let (w, h) = r.dims();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = to_byte(r.get(x as usize, y as usize));
        Rgb([v, v, v])
    })
}

/// Tiles laid out left to right with a gap; each tile optionally framed.
fn row(tiles: &[(RgbImage, Option<Rgb<u8>>)]) -> RgbImage {
    let tw = tiles.iter().map(|(t, _)| t.width()).max().unwrap_or(0);
    let th = tiles.iter().map(|(t, _)| t.height()).max().unwrap_or(0);
    let cell_w = tw + 2 * BORDER;
    let n = tiles.len() as u32;
    let mut out = RgbImage::from_pixel(n * cell_w + (n + 1) * GAP, th + 2 * BORDER + 2 * GAP, BACKGROUND);
    for (i, (tile, frame)) in tiles.iter().enumerate() {
        let x0 = GAP + i as u32 * (cell_w + GAP);
        let y0 = GAP;
        if let Some(c) = frame {
            for y in 0..th + 2 * BORDER {
                for x in 0..cell_w {
                    out.put_pixel(x0 + x, y0 + y, *c);
                }
            }
        }
        for (x, y, p) in tile.enumerate_pixels() {
            out.put_pixel(x0 + BORDER + x, y0 + BORDER + y, *p);
        }
    }
    out
}

/// Layout, rendered deformation map and prediction side by side.
pub fn triptych(layout: &Raster, map: &DeformationMap, prediction: &Raster) -> RgbImage {
    row(&[
        (grey(layout), None),
        (render_deformation(map, &RenderOptions::default()), None),
        (grey(prediction), None),
    ])
}

/// One row: the layout followed by its prediction at every swept parameter;
/// predictions at unseen parameters are framed in red.
pub fn sweep_strip(layout: &Raster, predictions: &[(Raster, bool)]) -> RgbImage {
    let mut tiles = vec![(grey(layout), None)];
    for (p, seen) in predictions {
        tiles.push((grey(p), if *seen { None } else { Some(UNSEEN) }));
    }
    row(&tiles)
}
