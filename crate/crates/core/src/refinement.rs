//! Residual refinement of per-edge offset distributions.
//!
//! Layer `l` holds logits `logits^l = logits^(l-1) + delta^l`, with an
//! implicit all-zero prior before layer 1. Each edge distribution is the
//! softmax of its logits and its expected knot value is a relative offset;
//! top/bottom offsets are scaled by the reference height and left/right by
//! the reference width. The reference boxes never change across layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{from_edge_distances, to_edge_distances, BoxCxCyWH, EdgeDistances};
use crate::weighting::WeightingSpec;
use crate::EDGES;

/// Logits for `K` predictions x 4 edges x `bins`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDistributions {
    predictions: usize,
    bins: usize,
    logits: Vec<f64>,
}

impl EdgeDistributions {
    pub fn zeros(predictions: usize, bins: usize) -> Self {
        EdgeDistributions { predictions, bins, logits: vec![0.0; predictions * EDGES * bins] }
    }

    pub fn from_logits(predictions: usize, bins: usize, logits: Vec<f64>) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidInput("distributions need at least one bin".into()));
        }
        let expected = predictions * EDGES * bins;
        if logits.len() != expected {
            return Err(Error::shape(
                format!("{predictions}x{EDGES}x{bins} = {expected} logits"),
                format!("{} logits", logits.len()),
            ));
        }
        Ok(EdgeDistributions { predictions, bins, logits })
    }

    pub fn predictions(&self) -> usize {
        self.predictions
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn into_logits(self) -> Vec<f64> {
        self.logits
    }

    pub fn row(&self, prediction: usize, edge: usize) -> &[f64] {
        let start = (prediction * EDGES + edge) * self.bins;
        &self.logits[start..start + self.bins]
    }

    pub fn row_mut(&mut self, prediction: usize, edge: usize) -> &mut [f64] {
        let start = (prediction * EDGES + edge) * self.bins;
        &mut self.logits[start..start + self.bins]
    }

    /// Iterates the rows in `(prediction, edge)` order.
    pub fn rows(&self) -> std::slice::Chunks<'_, f64> {
        self.logits.chunks(self.bins)
    }

    pub fn same_shape(&self, other: &EdgeDistributions) -> bool {
        self.predictions == other.predictions && self.bins == other.bins
    }

    fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.predictions, EDGES, self.bins)
    }

    /// Softmax of every row, same layout as the logits.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.logits.len());
        for row in self.rows() {
            out.extend(probabilities(row)?);
        }
        Ok(out)
    }
}

/// Max-shifted softmax of one logit row.
pub fn probabilities(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    Ok(softmax(logits))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn apply_residual(prev_logits: &EdgeDistributions, delta_logits: &EdgeDistributions) -> Result<EdgeDistributions> {
    if !prev_logits.same_shape(delta_logits) {
        return Err(Error::shape(prev_logits.shape_string(), delta_logits.shape_string()));
    }
    let logits = prev_logits.logits.iter().zip(&delta_logits.logits).map(|(p, d)| p + d).collect();
    Ok(EdgeDistributions { logits, ..*prev_logits })
}

/// Expected knot value per `(prediction, edge)`.
pub fn decode_offsets(dist: &EdgeDistributions, spec: &WeightingSpec) -> Result<Vec<[f64; EDGES]>> {
    if dist.bins != spec.bin_count() {
        return Err(Error::shape(format!("{} bins", spec.bin_count()), format!("{} bins", dist.bins)));
    }
    let knots = spec.knots();
    let mut out = vec![[0.0; EDGES]; dist.predictions];
    for (k, offsets) in out.iter_mut().enumerate() {
        for (e, offset) in offsets.iter_mut().enumerate() {
            let p = probabilities(dist.row(k, e))?;
            *offset = p.iter().zip(knots).map(|(p, w)| p * w).sum();
        }
    }
    Ok(out)
}

/// `d = d0 + {H, H, W, W} * offsets`, anchored at the center of `d0`.
pub fn refine_edges(d0: &EdgeDistances, init_w: f64, init_h: f64, offsets: &[f64; EDGES]) -> Result<EdgeDistances> {
    if !(init_w.is_finite() && init_w > 0.0 && init_h.is_finite() && init_h > 0.0) {
        return Err(Error::InvalidInput(format!("reference size must be positive, got w={init_w} h={init_h}")));
    }
    let scale = [init_h, init_h, init_w, init_w];
    let base = d0.as_array();
    let mut edges = [0.0; EDGES];
    for e in 0..EDGES {
        edges[e] = base[e] + scale[e] * offsets[e];
    }
    Ok(d0.with_edges(edges))
}

/// One decoder layer's view of all predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    /// 1-based layer index.
    pub layer_index: usize,
    /// Reference boxes shared by every layer; their centers anchor the edges.
    pub reference_boxes: Vec<BoxCxCyWH>,
    pub boxes: Vec<BoxCxCyWH>,
    /// Refined edge distances, anchored at the reference centers.
    pub edge_distances: Vec<EdgeDistances>,
    pub distributions: EdgeDistributions,
    pub confidences: Vec<f64>,
}

impl LayerState {
    /// Decodes layer 1 from raw logits (zero prior).
    pub fn first(
        reference_boxes: Vec<BoxCxCyWH>,
        logits: EdgeDistributions,
        confidences: Vec<f64>,
        spec: &WeightingSpec,
    ) -> Result<Self> {
        Self::decode(1, reference_boxes, logits, confidences, spec)
    }

    pub fn decode(
        layer_index: usize,
        reference_boxes: Vec<BoxCxCyWH>,
        distributions: EdgeDistributions,
        confidences: Vec<f64>,
        spec: &WeightingSpec,
    ) -> Result<Self> {
        let k = reference_boxes.len();
        if distributions.predictions != k {
            return Err(Error::shape(format!("{k} predictions"), format!("{} predictions", distributions.predictions)));
        }
        if confidences.len() != k {
            return Err(Error::shape(format!("{k} confidences"), format!("{} confidences", confidences.len())));
        }
        if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::InvalidInput(format!("confidence {c} outside [0, 1]")));
        }
        let offsets = decode_offsets(&distributions, spec)?;
        let mut edge_distances = Vec::with_capacity(k);
        let mut boxes = Vec::with_capacity(k);
        for (reference, offsets) in reference_boxes.iter().zip(&offsets) {
            let d0 = to_edge_distances(reference)?;
            let d = refine_edges(&d0, reference.w, reference.h, offsets)?;
            boxes.push(from_edge_distances(&d)?);
            edge_distances.push(d);
        }
        Ok(LayerState { layer_index, reference_boxes, boxes, edge_distances, distributions, confidences })
    }

    pub fn predictions(&self) -> usize {
        self.boxes.len()
    }
}

/// Chains `deltas` onto the first layer's logits and decodes every layer.
pub fn run_pipeline(
    initial: &LayerState,
    deltas: &[EdgeDistributions],
    spec: &WeightingSpec,
) -> Result<Vec<LayerState>> {
    if initial.layer_index != 1 {
        return Err(Error::InvalidInput(format!("pipeline must start at layer 1, got {}", initial.layer_index)));
    }
    let mut layers = Vec::with_capacity(deltas.len() + 1);
    let mut logits = initial.distributions.clone();
    layers.push(LayerState::decode(
        1,
        initial.reference_boxes.clone(),
        logits.clone(),
        initial.confidences.clone(),
        spec,
    )?);
    for (i, delta) in deltas.iter().enumerate() {
        logits = apply_residual(&logits, delta)?;
        layers.push(LayerState::decode(
            i + 2,
            initial.reference_boxes.clone(),
            logits.clone(),
            initial.confidences.clone(),
            spec,
        )?);
    }
    Ok(layers)
}

/// Uniform-grid baseline: the anchor-to-edge distance limited by `d_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GFocalSpec {
    d_max: f64,
    n_bins: usize,
}

impl GFocalSpec {
    pub fn new(d_max: f64, n_bins: usize) -> Result<Self> {
        if !(d_max.is_finite() && d_max > 0.0) {
            return Err(Error::Configuration(format!("d_max must be positive, got {d_max}")));
        }
        if n_bins == 0 {
            return Err(Error::Configuration("n_bins must be positive".into()));
        }
        Ok(GFocalSpec { d_max, n_bins })
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }
}

/// `d_max * sum_n (n / N) P(n)` for a normalized distribution over `N + 1` bins.
pub fn gfocal_decode(dist: &[f64], gspec: &GFocalSpec) -> Result<f64> {
    if dist.len() != gspec.n_bins + 1 {
        return Err(Error::shape(format!("{} bins", gspec.n_bins + 1), format!("{} bins", dist.len())));
    }
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidInput("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!("distribution sums to {total}, not 1")));
    }
    let n = gspec.n_bins as f64;
    Ok(gspec.d_max * dist.iter().enumerate().map(|(i, p)| i as f64 / n * p).sum::<f64>())
}
