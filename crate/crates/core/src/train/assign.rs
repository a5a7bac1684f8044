use serde::{Deserialize, Serialize};

use crate::neck::AnchorSet;

/// A ground-truth box in letterboxed input pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBox {
    /// Index of the image within the batch.
    pub image: usize,
    pub class: usize,
    /// `[x1, y1, x2, y2]`.
    pub bbox: [f64; 4],
}

impl TargetBox {
    /// Center and extent divided by `stride`.
    pub fn grid_xywh(&self, stride: f64) -> [f64; 4] {
        let [x1, y1, x2, y2] = self.bbox;
        [(x1 + x2) / 2.0 / stride, (y1 + y2) / 2.0 / stride, (x2 - x1) / stride, (y2 - y1) / stride]
    }
}

/// One (target, anchor, cell) triple responsible for a ground-truth box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assigned {
    pub target: usize,
    pub image: usize,
    pub class: usize,
    pub anchor: usize,
    /// Column.
    pub gi: usize,
    /// Row.
    pub gj: usize,
    /// Center relative to the cell's corner, then width and height, in grid units.
    pub tbox: [f64; 4],
    /// Anchor extent in grid units.
    pub anchor_wh: [f64; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub levels: Vec<Vec<Assigned>>,
}

impl Assignment {
    pub fn total(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }
}

/// `max(w/aw, aw/w, h/ah, ah/h)`.
pub fn anchor_ratio(wh: [f64; 2], anchor: [f64; 2]) -> f64 {
    let r = |a: f64, b: f64| (a / b).max(b / a);
    r(wh[0], anchor[0]).max(r(wh[1], anchor[1]))
}

/// Matches every target to each anchor whose shape ratio is below `anchor_t`,
/// at its center cell plus the nearer horizontal and nearer vertical neighbor
/// (when inside the grid). A center exactly on a cell's midline takes the
/// lower-index neighbor.
///
/// `grids[l]` is the `(rows, cols)` of level `l`. Order: target, anchor, then
/// center, horizontal, vertical cell.
pub fn assign_targets(targets: &[TargetBox], anchors: &AnchorSet, grids: &[(usize, usize)], anchor_t: f64) -> Assignment {
    let mut levels = Vec::with_capacity(grids.len());
    for (l, &(h, w)) in grids.iter().enumerate() {
        let stride = anchors.strides[l] as f64;
        let mut out = Vec::new();
        for (ti, t) in targets.iter().enumerate() {
            let [gx, gy, gw, gh] = t.grid_xywh(stride);
            if !(gw > 0.0 && gh > 0.0) {
                continue;
            }
            let ci = (gx.floor().max(0.0) as usize).min(w - 1);
            let cj = (gy.floor().max(0.0) as usize).min(h - 1);
            let neighbor = |g: f64, c: usize, n: usize| -> Option<usize> {
                if g - c as f64 <= 0.5 {
                    c.checked_sub(1)
                } else {
                    (c + 1 < n).then_some(c + 1)
                }
            };
            let mut cells = vec![(ci, cj)];
            if let Some(i) = neighbor(gx, ci, w) {
                cells.push((i, cj));
            }
            if let Some(j) = neighbor(gy, cj, h) {
                cells.push((ci, j));
            }
            for (a, &[aw_px, ah_px]) in anchors.anchors[l].iter().enumerate() {
                let anchor_wh = [aw_px / stride, ah_px / stride];
                if anchor_ratio([gw, gh], anchor_wh) >= anchor_t {
                    continue;
                }
                for &(gi, gj) in &cells {
                    out.push(Assigned {
                        target: ti,
                        image: t.image,
                        class: t.class,
                        anchor: a,
                        gi,
                        gj,
                        tbox: [gx - gi as f64, gy - gj as f64, gw, gh],
                        anchor_wh,
                    });
                }
            }
        }
        levels.push(out);
    }
    Assignment { levels }
}
