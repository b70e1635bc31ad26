// SPDX-License-Identifier: Apache-2.0

//! Synthetic Manhattan layout patterns.
//!
//! Layouts are unions of axis-aligned rectangles drawn from a handful of
//! pattern families. Shapes are placed one at a time and rejected if they
//! would violate the width/spacing rules against what is already placed.

mod dataset;
pub mod probes;

pub use dataset::{build_dataset, manifest_hash, DatasetManifest, ManifestEntry, Split, MANIFEST_FILE};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryRaster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    ParallelWires,
    Comb,
    TipToLine,
    IsolatedLine,
    LBend,
    DenseArray,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::ParallelWires,
        Family::Comb,
        Family::TipToLine,
        Family::IsolatedLine,
        Family::LBend,
        Family::DenseArray,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSpec {
    pub width: usize,
    pub height: usize,
    pub min_line_width: usize,
    pub min_spacing: usize,
    pub families: Vec<Family>,
    /// Target foreground fraction; placement stops once it is reached.
    pub density: f64,
    pub count: usize,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        LayoutSpec {
            width: 64,
            height: 64,
            min_line_width: 4,
            min_spacing: 3,
            families: Family::ALL.to_vec(),
            density: 0.3,
            count: 512,
        }
    }
}

impl LayoutSpec {
    pub fn validate(&self) -> Result<()> {
        let w = self.min_line_width;
        let s = self.min_spacing;
        if w < 3 {
            return Err(Error::InvalidSpec(format!("min_line_width {w} < 3")));
        }
        if s < 2 {
            return Err(Error::InvalidSpec(format!("min_spacing {s} < 2")));
        }
        if !(0.05..=0.6).contains(&self.density) {
            return Err(Error::InvalidSpec(format!(
                "density {} outside [0.05, 0.6]",
                self.density
            )));
        }
        let densest = w as f64 / (w + s) as f64;
        if self.density > densest {
            return Err(Error::InvalidSpec(format!(
                "density {} unreachable with width {w} and spacing {s} (max {densest:.3})",
                self.density
            )));
        }
        let need = 4 * w + 2 * s;
        if self.width < need || self.height < need {
            return Err(Error::InvalidSpec(format!(
                "grid {}x{} too small for width {w} and spacing {s} (need {need})",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Derives the seed of sample `index` from a run seed.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    seed ^ splitmix64(index)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const PLACEMENT_ATTEMPTS: usize = 400;

pub fn generate_layout(spec: &LayoutSpec, seed: u64) -> Result<BinaryRaster> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BinaryRaster::empty(spec.width, spec.height);
    if spec.families.is_empty() {
        return Ok(out);
    }
    let target = (spec.density * (spec.width * spec.height) as f64).ceil() as usize;
    for _ in 0..PLACEMENT_ATTEMPTS {
        if out.area() >= target {
            break;
        }
        let family = *spec.families.choose(&mut rng).expect("nonempty");
        let Some(rects) = shape(family, spec, &mut rng) else {
            continue;
        };
        if !clear_of(&out, &rects, spec.min_spacing) {
            continue;
        }
        let mut next = out.clone();
        for r in &rects {
            next.fill_rect(r.x0, r.y0, r.x1, r.y1);
        }
        if check_rules(&next, spec.min_line_width, spec.min_spacing).is_ok() {
            out = next;
        }
    }
    Ok(out)
}

/// Half-open rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Rect {
    fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Rect { x0, y0, x1, y1 }
    }
}

/// True if no existing foreground pixel lies within Chebyshev distance
/// `spacing` of the new rectangles.
fn clear_of(existing: &BinaryRaster, rects: &[Rect], spacing: usize) -> bool {
    let (w, h) = existing.dims();
    rects.iter().all(|r| {
        let x0 = r.x0.saturating_sub(spacing);
        let y0 = r.y0.saturating_sub(spacing);
        let x1 = (r.x1 + spacing).min(w);
        let y1 = (r.y1 + spacing).min(h);
        (y0..y1).all(|y| (x0..x1).all(|x| !existing.get(x, y)))
    })
}

/// A family instance drawn in a canvas where lines run vertically, then
/// randomly flipped and transposed into the layout frame.
fn shape(family: Family, spec: &LayoutSpec, rng: &mut ChaCha8Rng) -> Option<Vec<Rect>> {
    let transpose = rng.gen_bool(0.5);
    let (cw, ch) = if transpose {
        (spec.height, spec.width)
    } else {
        (spec.width, spec.height)
    };
    let w = spec.min_line_width;
    let s = spec.min_spacing;
    let lw = rng.gen_range(w..=w + 3);
    let span = |rng: &mut ChaCha8Rng, min_len: usize| -> Option<(usize, usize)> {
        if min_len > ch {
            return None;
        }
        if rng.gen_bool(0.4) {
            Some((0, ch))
        } else {
            let len = rng.gen_range(min_len..=ch);
            let y0 = rng.gen_range(0..=ch - len);
            Some((y0, y0 + len))
        }
    };

    let rects = match family {
        Family::IsolatedLine => {
            let x0 = rng.gen_range(0..=cw - lw);
            let (y0, y1) = span(rng, 4 * w)?;
            vec![Rect::new(x0, y0, x0 + lw, y1)]
        }
        Family::ParallelWires => {
            let k = rng.gen_range(2..=5);
            let sp = rng.gen_range(s..=s + 6);
            let total = k * lw + (k - 1) * sp;
            if total > cw {
                return None;
            }
            let x0 = rng.gen_range(0..=cw - total);
            let (y0, y1) = span(rng, 4 * w)?;
            (0..k)
                .map(|i| {
                    let x = x0 + i * (lw + sp);
                    Rect::new(x, y0, x + lw, y1)
                })
                .collect()
        }
        Family::Comb => {
            let k = rng.gen_range(2..=4);
            let tw = rng.gen_range(w..=w + 2);
            let gap = rng.gen_range(s..=s + 5);
            let spine_w = rng.gen_range(w..=w + 2);
            let total = k * tw + (k - 1) * gap;
            let tooth = rng.gen_range(2 * w..=4 * w);
            if total > cw || spine_w + tooth > ch {
                return None;
            }
            let x0 = rng.gen_range(0..=cw - total);
            let y0 = rng.gen_range(0..=ch - spine_w - tooth);
            let mut v = vec![Rect::new(x0, y0, x0 + total, y0 + spine_w)];
            for i in 0..k {
                let x = x0 + i * (tw + gap);
                v.push(Rect::new(x, y0 + spine_w, x + tw, y0 + spine_w + tooth));
            }
            v
        }
        Family::TipToLine => {
            let gap = rng.gen_range(s.max(3)..=s.max(8));
            let line_w = rng.gen_range(w..=w + 2);
            let tip_len = rng.gen_range(2 * w..=5 * w);
            if tip_len + gap + line_w > ch || lw > cw {
                return None;
            }
            let ty0 = rng.gen_range(0..=ch - tip_len - gap - line_w);
            let ly0 = ty0 + tip_len + gap;
            let tx0 = rng.gen_range(0..=cw - lw);
            let (lx0, lx1) = if rng.gen_bool(0.5) {
                (0, cw)
            } else {
                let half = rng.gen_range(2 * w..=4 * w);
                (tx0.saturating_sub(half), (tx0 + lw + half).min(cw))
            };
            vec![
                Rect::new(tx0, ty0, tx0 + lw, ty0 + tip_len),
                Rect::new(lx0, ly0, lx1, ly0 + line_w),
            ]
        }
        Family::LBend => {
            let lw2 = rng.gen_range(w..=w + 3);
            let la = rng.gen_range(3 * w..=ch.min(10 * w));
            let lb = rng.gen_range(3 * w..=cw.min(10 * w));
            if la > ch || lb > cw {
                return None;
            }
            let x0 = rng.gen_range(0..=cw - lb);
            let y0 = rng.gen_range(0..=ch - la);
            vec![
                Rect::new(x0, y0, x0 + lw, y0 + la),
                Rect::new(x0, y0, x0 + lb, y0 + lw2),
            ]
        }
        Family::DenseArray => {
            let nx = rng.gen_range(2..=4);
            let ny = rng.gen_range(2..=4);
            let bw = rng.gen_range(w..=w + 3);
            let bh = rng.gen_range(w..=w + 3);
            let gx = rng.gen_range(s..=s + 3);
            let gy = rng.gen_range(s..=s + 3);
            let tw = nx * bw + (nx - 1) * gx;
            let th = ny * bh + (ny - 1) * gy;
            if tw > cw || th > ch {
                return None;
            }
            let x0 = rng.gen_range(0..=cw - tw);
            let y0 = rng.gen_range(0..=ch - th);
            let mut v = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let x = x0 + i * (bw + gx);
                    let y = y0 + j * (bh + gy);
                    v.push(Rect::new(x, y, x + bw, y + bh));
                }
            }
            v
        }
    };

    let flip_x = rng.gen_bool(0.5);
    let flip_y = rng.gen_bool(0.5);
    Some(
        rects
            .into_iter()
            .map(|r| {
                let (x0, x1) = if flip_x { (cw - r.x1, cw - r.x0) } else { (r.x0, r.x1) };
                let (y0, y1) = if flip_y { (ch - r.y1, ch - r.y0) } else { (r.y0, r.y1) };
                if transpose {
                    Rect::new(y0, x0, y1, x1)
                } else {
                    Rect::new(x0, y0, x1, y1)
                }
            })
            .collect(),
    )
}

/// Width/spacing rule check by run-length scanning of every row and column:
/// each foreground run must be at least `min_width` long and each background
/// run between two foreground runs at least `min_spacing` long.
pub fn check_rules(r: &BinaryRaster, min_width: usize, min_spacing: usize) -> Result<(), String> {
    let (w, h) = r.dims();
    for y in 0..h {
        let line: Vec<bool> = (0..w).map(|x| r.get(x, y)).collect();
        check_line(&line, min_width, min_spacing).map_err(|m| format!("row {y}: {m}"))?;
    }
    for x in 0..w {
        let line: Vec<bool> = (0..h).map(|y| r.get(x, y)).collect();
        check_line(&line, min_width, min_spacing).map_err(|m| format!("column {x}: {m}"))?;
    }
    Ok(())
}

fn check_line(line: &[bool], min_width: usize, min_spacing: usize) -> Result<(), String> {
    let mut i = 0;
    let mut seen_fg = false;
    while i < line.len() {
        let on = line[i];
        let start = i;
        while i < line.len() && line[i] == on {
            i += 1;
        }
        let len = i - start;
        if on {
            if len < min_width {
                return Err(format!("foreground run of {len} at {start}"));
            }
            seen_fg = true;
        } else if seen_fg && i < line.len() && len < min_spacing {
            return Err(format!("gap of {len} at {start}"));
        }
    }
    Ok(())
}
