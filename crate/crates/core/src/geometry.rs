//! Box representations and overlap metrics.
//!
//! Boxes live in arbitrary scene units in double precision. Image
//! convention: `y` grows downwards, so the top edge is `cy - t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in center/size form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCxCyWH {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Distances from an anchor center to the four edges of a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeDistances {
    pub cx: f64,
    pub cy: f64,
    pub t: f64,
    pub b: f64,
    pub l: f64,
    pub r: f64,
}

impl BoxCxCyWH {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoxCxCyWH { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from `(x1, y1, x2, y2)` corners.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::InvalidInput("non-finite corner".into()));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::DegenerateBox(format!("corners ({x1}, {y1}, {x2}, {y2}) have no area")));
        }
        Ok(BoxCxCyWH { cx: 0.5 * (x1 + x2), cy: 0.5 * (y1 + y2), w: x2 - x1, h: y2 - y1 })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite box {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidInput(format!("box size must be positive, got w={} h={}", self.w, self.h)));
        }
        Ok(())
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.cx - 0.5 * self.w, self.cy - 0.5 * self.h, self.cx + 0.5 * self.w, self.cy + 0.5 * self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

impl EdgeDistances {
    /// Edge distances as `[t, b, l, r]`.
    pub fn as_array(&self) -> [f64; 4] {
        [self.t, self.b, self.l, self.r]
    }

    pub fn with_edges(&self, edges: [f64; 4]) -> Self {
        EdgeDistances { cx: self.cx, cy: self.cy, t: edges[0], b: edges[1], l: edges[2], r: edges[3] }
    }
}

pub fn to_edge_distances(bx: &BoxCxCyWH) -> Result<EdgeDistances> {
    bx.validate()?;
    Ok(EdgeDistances { cx: bx.cx, cy: bx.cy, t: 0.5 * bx.h, b: 0.5 * bx.h, l: 0.5 * bx.w, r: 0.5 * bx.w })
}

/// Reconstructs the box with corners `(cx - l, cy - t, cx + r, cy + b)`.
///
/// The returned center is the corner midpoint, which moves away from the
/// anchor whenever the distances are asymmetric.
pub fn from_edge_distances(d: &EdgeDistances) -> Result<BoxCxCyWH> {
    let all = [d.cx, d.cy, d.t, d.b, d.l, d.r];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite edge distances {d:?}")));
    }
    if d.t + d.b <= 0.0 || d.l + d.r <= 0.0 {
        return Err(Error::DegenerateBox(format!(
            "edge distances t+b={} l+r={} must be positive",
            d.t + d.b,
            d.l + d.r
        )));
    }
    let (x1, y1, x2, y2) = (d.cx - d.l, d.cy - d.t, d.cx + d.r, d.cy + d.b);
    Ok(BoxCxCyWH { cx: 0.5 * (x1 + x2), cy: 0.5 * (y1 + y2), w: x2 - x1, h: y2 - y1 })
}

fn intersection_and_union(x: &BoxCxCyWH, y: &BoxCxCyWH) -> (f64, f64) {
    let [ax1, ay1, ax2, ay2] = x.corners();
    let [bx1, by1, bx2, by2] = y.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    (inter, x.area() + y.area() - inter)
}

pub fn iou(x: &BoxCxCyWH, y: &BoxCxCyWH) -> Result<f64> {
    x.validate()?;
    y.validate()?;
    let (inter, union) = intersection_and_union(x, y);
    Ok(inter / union)
}

pub fn giou(x: &BoxCxCyWH, y: &BoxCxCyWH) -> Result<f64> {
    x.validate()?;
    y.validate()?;
    let (inter, union) = intersection_and_union(x, y);
    let [ax1, ay1, ax2, ay2] = x.corners();
    let [bx1, by1, bx2, by2] = y.corners();
    let enclosing = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    Ok(inter / union - (enclosing - union) / enclosing)
}
