// SPDX-License-Identifier: Apache-2.0

//! Fixed 64x64 probe layouts for the geometric situations where
//! fabrication deforms shapes most visibly, plus the width measurements
//! taken on them.

use crate::raster::BinaryRaster;

pub const PROBE_SIZE: usize = 64;

/// Tip-to-line gaps covered by the probe set.
pub const TIP_GAPS: [usize; 3] = [3, 5, 8];

#[derive(Clone, Debug, PartialEq)]
pub enum ProbeKind {
    /// One vertical line occupying columns `x0..x1` over the full height.
    IsolatedLine { x0: usize, x1: usize },
    /// Vertical lines, each `(x0, x1)`, over the full height.
    DenseLines { lines: Vec<(usize, usize)> },
    /// A vertical line in columns `x0..x1` ending at row `tip_end` (exclusive),
    /// `gap` rows above a horizontal line occupying rows `line_y0..line_y1`.
    TipToLine {
        gap: usize,
        x0: usize,
        x1: usize,
        tip_end: usize,
        line_y0: usize,
        line_y1: usize,
    },
    /// An L whose convex outer corner is the pixel `corner`.
    LBend { corner: (usize, usize) },
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub name: String,
    pub kind: ProbeKind,
    pub raster: BinaryRaster,
}

pub fn probe_layouts() -> Vec<Probe> {
    let n = PROBE_SIZE;
    let mut out = Vec::new();

    let mut iso = BinaryRaster::empty(n, n);
    iso.fill_rect(30, 0, 34, n);
    out.push(Probe {
        name: "isolated-line".into(),
        kind: ProbeKind::IsolatedLine { x0: 30, x1: 34 },
        raster: iso,
    });

    let lines: Vec<(usize, usize)> = (0..5).map(|i| (14 + 8 * i, 18 + 8 * i)).collect();
    let mut dense = BinaryRaster::empty(n, n);
    for &(x0, x1) in &lines {
        dense.fill_rect(x0, 0, x1, n);
    }
    out.push(Probe {
        name: "dense-lines".into(),
        kind: ProbeKind::DenseLines { lines },
        raster: dense,
    });

    for gap in TIP_GAPS {
        let (line_y0, line_y1) = (40, 44);
        let tip_end = line_y0 - gap;
        let mut r = BinaryRaster::empty(n, n);
        r.fill_rect(0, line_y0, n, line_y1);
        r.fill_rect(30, 0, 34, tip_end);
        out.push(Probe {
            name: format!("tip-to-line-{gap}"),
            kind: ProbeKind::TipToLine {
                gap,
                x0: 30,
                x1: 34,
                tip_end,
                line_y0,
                line_y1,
            },
            raster: r,
        });
    }

    let mut l = BinaryRaster::empty(n, n);
    l.fill_rect(20, 20, 24, n);
    l.fill_rect(20, 20, n, 24);
    out.push(Probe {
        name: "l-bend".into(),
        kind: ProbeKind::LBend { corner: (20, 20) },
        raster: l,
    });
    out
}

/// Longest horizontal foreground run in row `y` that overlaps columns `x0..x1`.
pub fn horizontal_run(r: &BinaryRaster, y: usize, x0: usize, x1: usize) -> usize {
    longest_overlapping_run((0..r.width()).map(|x| r.get(x, y)), x0, x1)
}

/// Longest vertical foreground run in column `x` that overlaps rows `y0..y1`.
pub fn vertical_run(r: &BinaryRaster, x: usize, y0: usize, y1: usize) -> usize {
    longest_overlapping_run((0..r.height()).map(|y| r.get(x, y)), y0, y1)
}

fn longest_overlapping_run(cells: impl Iterator<Item = bool>, lo: usize, hi: usize) -> usize {
    let mut best = 0;
    let mut start = None;
    let cells: Vec<bool> = cells.collect();
    for i in 0..=cells.len() {
        let on = i < cells.len() && cells[i];
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if s < hi && i > lo {
                    best = best.max(i - s);
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

/// Width of a vertical line spanning columns `x0..x1`, measured on the middle row.
pub fn line_width(r: &BinaryRaster, x0: usize, x1: usize) -> usize {
    horizontal_run(r, r.height() / 2, x0, x1)
}

/// Narrowest cross-section around a tip-to-line gap: the tip line's width on
/// the four rows ending at the tip, and the horizontal line's thickness under
/// the tip. Returns `None` for other probe kinds.
pub fn neck_width(r: &BinaryRaster, kind: &ProbeKind) -> Option<usize> {
    let ProbeKind::TipToLine {
        x0,
        x1,
        tip_end,
        line_y0,
        line_y1,
        ..
    } = *kind
    else {
        return None;
    };
    let tip_rows = tip_end.saturating_sub(4)..tip_end;
    let tip_min = tip_rows.map(|y| horizontal_run(r, y, x0, x1)).min();
    let line_min = (x0..x1).map(|x| vertical_run(r, x, line_y0, line_y1)).min();
    tip_min.into_iter().chain(line_min).min()
}

/// Width of an interior line of the dense probe (the middle one).
pub fn dense_interior_width(r: &BinaryRaster, kind: &ProbeKind) -> Option<usize> {
    let ProbeKind::DenseLines { lines } = kind else {
        return None;
    };
    let interior = &lines[1..lines.len() - 1];
    interior.iter().map(|&(x0, x1)| line_width(r, x0, x1)).min()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_set_contents() {
        let probes = probe_layouts();
        let names: Vec<&str> = probes.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "isolated-line",
                "dense-lines",
                "tip-to-line-3",
                "tip-to-line-5",
                "tip-to-line-8",
                "l-bend"
            ]
        );
        for p in &probes {
            assert_eq!(p.raster.dims(), (64, 64));
        }
        assert_eq!(probes[0].raster.area(), 4 * 64);
        assert_eq!(probes[1].raster.area(), 5 * 4 * 64);
    }

    #[test]
    fn tip_gap_by_distance_scan() {
        for p in probe_layouts() {
            if let ProbeKind::TipToLine { gap, x0, x1, .. } = p.kind {
                // background rows between the two shapes in every tip column
                for x in x0..x1 {
                    let col: Vec<bool> = (0..64).map(|y| p.raster.get(x, y)).collect();
                    let last_tip = col.iter().position(|&c| !c).unwrap();
                    let next = (last_tip..64).find(|&y| col[y]).unwrap();
                    assert_eq!(next - last_tip, gap);
                }
            }
        }
    }

    #[test]
    fn measurements_on_layouts() {
        let probes = probe_layouts();
        let ProbeKind::IsolatedLine { x0, x1 } = probes[0].kind else {
            unreachable!()
        };
        assert_eq!(line_width(&probes[0].raster, x0, x1), 4);
        assert_eq!(dense_interior_width(&probes[1].raster, &probes[1].kind), Some(4));
        assert_eq!(neck_width(&probes[2].raster, &probes[2].kind), Some(4));
        assert_eq!(neck_width(&probes[0].raster, &probes[0].kind), None);
    }
}
