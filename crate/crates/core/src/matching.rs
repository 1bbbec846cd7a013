//! Prediction to ground-truth assignment.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{giou, BoxCxCyWH};
use crate::refinement::LayerState;

pub const CLASS_COST_WEIGHT: f64 = 1.0;
pub const L1_COST_WEIGHT: f64 = 5.0;
pub const GIOU_COST_WEIGHT: f64 = 2.0;

/// Dense `rows x cols` cost matrix; rows are predictions, columns ground truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!("{rows}x{cols} entries"), format!("{} entries", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "cost entry ({}, {}) is not finite",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::shape(format!("{cols} columns"), format!("{} columns in row {r}", rows[r].len())));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    fn transposed(&self) -> CostMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        CostMatrix { rows: self.cols, cols: self.rows, data }
    }
}

/// Partial injective mapping from predictions to ground truths.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Assignment {
    /// `(prediction, gt)` pairs sorted by prediction.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn gt_for(&self, prediction: usize) -> Option<usize> {
        self.pairs.iter().find(|(p, _)| *p == prediction).map(|&(_, g)| g)
    }
}

/// Minimum-cost assignment of size `min(K, G)`.
///
/// Shortest augmenting paths with row/column potentials, `O(n^2 m)`. The
/// scan order is fixed, so equal-cost optima always resolve the same way.
pub fn hungarian(cost: &CostMatrix) -> Assignment {
    if cost.rows == 0 || cost.cols == 0 {
        return Assignment::default();
    }
    if cost.rows > cost.cols {
        let t = hungarian(&cost.transposed());
        let mut pairs: Vec<(usize, usize)> = t.pairs.into_iter().map(|(g, p)| (p, g)).collect();
        pairs.sort_unstable();
        let total_cost = pairs.iter().map(|&(r, c)| cost.get(r, c)).sum();
        return Assignment { pairs, total_cost };
    }

    let (n, m) = (cost.rows, cost.cols);
    let a = |i: usize, j: usize| cost.get(i - 1, j - 1);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row matched to column j (1-based, 0 = free).
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, c)| cost.get(r, c)).sum();
    Assignment { pairs, total_cost }
}

/// Matching cost `1 * (1 - conf) + 5 * L1 + 2 * (1 - GIoU)`.
///
/// L1 is the mean absolute difference of `(cx, cy, w, h)` after dividing by
/// `scene_size`. Confidences are single-class scores for each prediction.
pub fn detr_cost(layer: &LayerState, gts: &[BoxCxCyWH], scene_size: f64) -> Result<CostMatrix> {
    if !(scene_size.is_finite() && scene_size > 0.0) {
        return Err(Error::InvalidInput(format!("scene size must be positive, got {scene_size}")));
    }
    let k = layer.boxes.len();
    let mut data = Vec::with_capacity(k * gts.len());
    for (bx, conf) in layer.boxes.iter().zip(&layer.confidences) {
        let pa = bx.as_array();
        for gt in gts {
            let ga = gt.as_array();
            let l1 = pa.iter().zip(ga).map(|(p, g)| (p - g).abs() / scene_size).sum::<f64>() / 4.0;
            let g = giou(bx, gt)?;
            data.push(CLASS_COST_WEIGHT * (1.0 - conf) + L1_COST_WEIGHT * l1 + GIOU_COST_WEIGHT * (1.0 - g));
        }
    }
    CostMatrix::new(k, gts.len(), data)
}

/// Matches aggregated over every layer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UnionSet {
    pub matched_pairs: Vec<(usize, usize)>,
    pub matched_predictions: Vec<usize>,
    pub unmatched_predictions: Vec<usize>,
}

pub fn union_set(assignments: &[Assignment], k: usize) -> Result<UnionSet> {
    let mut pairs = BTreeSet::new();
    for a in assignments {
        for &(p, g) in &a.pairs {
            if p >= k {
                return Err(Error::Index { index: p, len: k });
            }
            pairs.insert((p, g));
        }
    }
    let matched: BTreeSet<usize> = pairs.iter().map(|&(p, _)| p).collect();
    Ok(UnionSet {
        matched_pairs: pairs.into_iter().collect(),
        unmatched_predictions: (0..k).filter(|p| !matched.contains(p)).collect(),
        matched_predictions: matched.into_iter().collect(),
    })
}
