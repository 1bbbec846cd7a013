//! Localization losses with closed-form logit gradients.
//!
//! Both losses are plain sums over layers, predictions and edges. Gradients
//! are returned in the same row-major layout as [`EdgeDistributions`] logits,
//! one buffer per layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{to_edge_distances, BoxCxCyWH};
use crate::refinement::{log_softmax, softmax, EdgeDistributions};
use crate::weighting::{bracket, Bracket, WeightingSpec};
use crate::EDGES;

/// Smallest probability allowed inside a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Supervision for one prediction in one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FglTarget {
    pub prediction: usize,
    /// Brackets of the clamped relative offsets, `t, b, l, r`.
    pub brackets: [Bracket; EDGES],
    /// Weight of this prediction, the IoU of its decoded box with the target.
    pub iou: f64,
}

impl FglTarget {
    /// Brackets the offsets that move `reference` onto `gt`.
    ///
    /// The ground-truth edge distances are measured from the reference
    /// center and divided by `{H, H, W, W}` of the reference box.
    pub fn new(
        prediction: usize,
        reference: &BoxCxCyWH,
        gt: &BoxCxCyWH,
        iou: f64,
        spec: &WeightingSpec,
    ) -> Result<Self> {
        let phi = relative_offsets(reference, gt)?;
        let mut brackets = [Bracket { n_left: 0, n_right: 1, w_left: 1.0, w_right: 0.0 }; EDGES];
        for (b, phi) in brackets.iter_mut().zip(phi) {
            *b = bracket(spec, phi)?;
        }
        Ok(FglTarget { prediction, brackets, iou })
    }
}

/// Unclamped `(d_gt - d0) / {H, H, W, W}` for each edge.
pub fn relative_offsets(reference: &BoxCxCyWH, gt: &BoxCxCyWH) -> Result<[f64; EDGES]> {
    let d0 = to_edge_distances(reference)?;
    gt.validate()?;
    let [x1, y1, x2, y2] = gt.corners();
    let d_gt = [d0.cy - y1, y2 - d0.cy, d0.cx - x1, x2 - d0.cx];
    let scale = [reference.h, reference.h, reference.w, reference.w];
    let base = d0.as_array();
    let mut phi = [0.0; EDGES];
    for e in 0..EDGES {
        phi[e] = (d_gt[e] - base[e]) / scale[e];
    }
    Ok(phi)
}

/// Loss value together with per-layer gradients and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub per_layer: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
    /// Number of log arguments that hit [`PROB_FLOOR`].
    pub floored: usize,
}

impl LossOutput {
    fn zeros(layers: &[&EdgeDistributions]) -> Self {
        LossOutput {
            value: 0.0,
            per_layer: vec![0.0; layers.len()],
            gradients: layers.iter().map(|d| vec![0.0; d.logits().len()]).collect(),
            floored: 0,
        }
    }
}

/// Fine-grained localization loss over every layer.
///
/// Each target edge contributes `iou * (w_left * CE(n_left) + w_right * CE(n_right))`
/// with gradient `iou * ((w_left + w_right) * p - w_left * e_left - w_right * e_right)`.
pub fn fgl_loss(dists: &[EdgeDistributions], targets: &[Vec<FglTarget>], spec: &WeightingSpec) -> Result<LossOutput> {
    if dists.len() != targets.len() {
        return Err(Error::shape(format!("{} target layers", dists.len()), format!("{} target layers", targets.len())));
    }
    let refs: Vec<&EdgeDistributions> = dists.iter().collect();
    let mut out = LossOutput::zeros(&refs);
    let log_floor = PROB_FLOOR.ln();
    for (layer, (dist, layer_targets)) in dists.iter().zip(targets).enumerate() {
        if dist.bins() != spec.bin_count() {
            return Err(Error::shape(format!("{} bins", spec.bin_count()), format!("{} bins", dist.bins())));
        }
        let bins = dist.bins();
        let mut layer_loss = 0.0;
        for target in layer_targets {
            let k = target.prediction;
            if k >= dist.predictions() {
                return Err(Error::Index { index: k, len: dist.predictions() });
            }
            if !(0.0..=1.0).contains(&target.iou) {
                return Err(Error::InvalidInput(format!("iou weight {} outside [0, 1]", target.iou)));
            }
            if target.iou == 0.0 {
                continue;
            }
            for (e, br) in target.brackets.iter().enumerate() {
                if br.n_right >= bins || br.n_left >= br.n_right {
                    return Err(Error::InvalidInput(format!("bracket {br:?} does not fit {bins} bins")));
                }
                let row = dist.row(k, e);
                let logp = log_softmax(row);
                let mut ce = |n: usize, w: f64| {
                    if w == 0.0 {
                        0.0
                    } else if logp[n] < log_floor {
                        out.floored += 1;
                        -log_floor
                    } else {
                        -logp[n]
                    }
                };
                let edge_loss = br.w_left * ce(br.n_left, br.w_left) + br.w_right * ce(br.n_right, br.w_right);
                layer_loss += target.iou * edge_loss;

                let start = (k * EDGES + e) * bins;
                let grad = &mut out.gradients[layer][start..start + bins];
                let mass = br.w_left + br.w_right;
                for (g, lp) in grad.iter_mut().zip(&logp) {
                    *g += target.iou * mass * lp.exp();
                }
                grad[br.n_left] -= target.iou * br.w_left;
                grad[br.n_right] -= target.iou * br.w_right;
            }
        }
        out.per_layer[layer] = layer_loss;
        out.value += layer_loss;
    }
    Ok(out)
}

/// Which way the distillation divergence is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(teacher || student)`; student gradient is `student - teacher`.
    #[default]
    TeacherStudent,
    /// `KL(student || teacher)`.
    StudentTeacher,
}

/// Per-prediction distillation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdfWeights {
    pub k_matched: usize,
    pub k_unmatched: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub temperature: f64,
}

impl DdfWeights {
    /// `alpha_k = IoU_k * sqrt(Km) / (sqrt(Km) + sqrt(Ku))` and
    /// `beta_k = Conf_k * sqrt(Ku) / (sqrt(Km) + sqrt(Ku))`.
    pub fn new(matched_ious: &[f64], unmatched_confidences: &[f64], temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::Configuration(format!("temperature must be positive, got {temperature}")));
        }
        for v in matched_ious.iter().chain(unmatched_confidences) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::InvalidInput(format!("weight input {v} outside [0, 1]")));
            }
        }
        let k_matched = matched_ious.len();
        let k_unmatched = unmatched_confidences.len();
        let (wm, wu) = normalizers(k_matched, k_unmatched);
        Ok(DdfWeights {
            k_matched,
            k_unmatched,
            alpha: matched_ious.iter().map(|iou| iou * wm).collect(),
            beta: unmatched_confidences.iter().map(|c| c * wu).collect(),
            temperature,
        })
    }
}

/// Branch normalizers `(sqrt(Km), sqrt(Ku)) / (sqrt(Km) + sqrt(Ku))`, zero when both counts are zero.
pub fn normalizers(k_matched: usize, k_unmatched: usize) -> (f64, f64) {
    let (sm, su) = ((k_matched as f64).sqrt(), (k_unmatched as f64).sqrt());
    if sm + su == 0.0 {
        return (0.0, 0.0);
    }
    (sm / (sm + su), su / (sm + su))
}

/// Decoupled distillation loss of `students` against a detached `teacher`.
pub fn ddf_loss(
    students: &[EdgeDistributions],
    teacher: &EdgeDistributions,
    weights: &DdfWeights,
    matched_idx: &[usize],
    unmatched_idx: &[usize],
) -> Result<LossOutput> {
    ddf_loss_with_direction(students, teacher, weights, matched_idx, unmatched_idx, KlDirection::default())
}

pub fn ddf_loss_with_direction(
    students: &[EdgeDistributions],
    teacher: &EdgeDistributions,
    weights: &DdfWeights,
    matched_idx: &[usize],
    unmatched_idx: &[usize],
    direction: KlDirection,
) -> Result<LossOutput> {
    let t = weights.temperature;
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Configuration(format!("temperature must be positive, got {t}")));
    }
    if weights.alpha.len() != matched_idx.len() || weights.beta.len() != unmatched_idx.len() {
        return Err(Error::shape(
            format!("{} alpha / {} beta weights", matched_idx.len(), unmatched_idx.len()),
            format!("{} alpha / {} beta weights", weights.alpha.len(), weights.beta.len()),
        ));
    }
    let k = teacher.predictions();
    let mut seen = vec![false; k];
    for &i in matched_idx.iter().chain(unmatched_idx) {
        if i >= k {
            return Err(Error::Index { index: i, len: k });
        }
        if seen[i] {
            return Err(Error::InvalidInput(format!("prediction {i} listed twice in matched/unmatched sets")));
        }
        seen[i] = true;
    }
    if let Some(s) = students.iter().find(|s| !s.same_shape(teacher)) {
        return Err(Error::shape(
            format!("{}x{}x{}", k, EDGES, teacher.bins()),
            format!("{}x{}x{}", s.predictions(), EDGES, s.bins()),
        ));
    }

    let refs: Vec<&EdgeDistributions> = students.iter().collect();
    let mut out = LossOutput::zeros(&refs);
    if weights.k_matched == 0 && weights.k_unmatched == 0 {
        return Ok(out);
    }

    let bins = teacher.bins();
    let scaled = |row: &[f64]| row.iter().map(|z| z / t).collect::<Vec<f64>>();
    let weighted: Vec<(usize, f64)> = matched_idx
        .iter()
        .copied()
        .zip(weights.alpha.iter().copied())
        .chain(unmatched_idx.iter().copied().zip(weights.beta.iter().copied()))
        .collect();

    for (layer, student) in students.iter().enumerate() {
        let mut layer_loss = 0.0;
        for &(k, w) in &weighted {
            for e in 0..EDGES {
                let log_t = log_softmax(&scaled(teacher.row(k, e)));
                let log_s = log_softmax(&scaled(student.row(k, e)));
                let start = (k * EDGES + e) * bins;
                let grad = &mut out.gradients[layer][start..start + bins];
                match direction {
                    KlDirection::TeacherStudent => {
                        let kl: f64 = log_t.iter().zip(&log_s).map(|(lt, ls)| lt.exp() * (lt - ls)).sum();
                        layer_loss += w * kl;
                        for ((g, lt), ls) in grad.iter_mut().zip(&log_t).zip(&log_s) {
                            *g += t * w * (ls.exp() - lt.exp());
                        }
                    }
                    KlDirection::StudentTeacher => {
                        let kl: f64 = log_s.iter().zip(&log_t).map(|(ls, lt)| ls.exp() * (ls - lt)).sum();
                        layer_loss += w * kl;
                        for ((g, lt), ls) in grad.iter_mut().zip(&log_t).zip(&log_s) {
                            *g += t * w * ls.exp() * (ls - lt - kl);
                        }
                    }
                }
            }
        }
        layer_loss *= t * t;
        out.per_layer[layer] = layer_loss;
        out.value += layer_loss;
    }
    Ok(out)
}

/// A divergence value and how many `q` entries were floored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kl {
    pub value: f64,
    pub floored: usize,
}

/// `sum p log(p / q)`, with zero-mass `p` entries skipped and `q` floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<Kl> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("{} entries", p.len()), format!("{} entries", q.len())));
    }
    for dist in [p, q] {
        if dist.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = dist.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("distribution sums to {total}, not 1")));
        }
    }
    let mut kl = Kl { value: 0.0, floored: 0 };
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        let qi = if qi < PROB_FLOOR {
            kl.floored += 1;
            PROB_FLOOR
        } else {
            qi
        };
        kl.value += pi * (pi / qi).ln();
    }
    Ok(kl)
}

/// Softmax with temperature, as used on both sides of the distillation loss.
pub fn tempered_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    softmax(&logits.iter().map(|z| z / temperature).collect::<Vec<_>>())
}

/// Compares an analytic gradient against central differences.
///
/// `loss_fn` returns the loss and its analytic gradient at a point. The
/// result is `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`.
pub fn finite_difference_check<F>(mut loss_fn: F, point: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Configuration(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let (_, analytic) = loss_fn(point);
    if analytic.len() != point.len() {
        return Err(Error::shape(
            format!("{} gradient entries", point.len()),
            format!("{} gradient entries", analytic.len()),
        ));
    }
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = loss_fn(&x).0;
        x[i] = orig - epsilon;
        let minus = loss_fn(&x).0;
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}
