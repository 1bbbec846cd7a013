//! Desk-scale training of refinement logits on synthetic scenes.
//!
//! The trainable parameters are the first layer's logits plus one residual
//! tensor per later layer. Every step decodes all layers, matches each layer
//! to the ground truths, and takes a plain gradient-descent step on
//! `w_fgl * FGL + w_ddf * DDF`. The last layer is the distillation teacher
//! and receives no gradient from the distillation term.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoxCxCyWH};
use crate::losses::{ddf_loss_with_direction, fgl_loss, DdfWeights, FglTarget, KlDirection, LossOutput};
use crate::matching::{detr_cost, hungarian, union_set, Assignment, UnionSet};
use crate::refinement::{run_pipeline, EdgeDistributions, LayerState};
use crate::weighting::{build_spec, WeightingSpec, DEFAULT_A, DEFAULT_BINS, DEFAULT_C};

/// Confidence given to queries that start near a ground truth.
pub const MATCHED_CONFIDENCE: f64 = 0.9;
/// Confidence given to distractor queries.
pub const DISTRACTOR_CONFIDENCE: f64 = 0.1;

const MIN_SIZE_FRACTION: f64 = 0.15;
const MAX_SIZE_FRACTION: f64 = 0.4;
const MIN_JITTERED_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyProblem {
    pub scene_size: f64,
    pub gt_boxes: Vec<BoxCxCyWH>,
    pub initial_boxes: Vec<BoxCxCyWH>,
    pub confidences: Vec<f64>,
    pub layers: usize,
    pub seed: u64,
}

fn random_box(rng: &mut ChaCha8Rng, scene: f64) -> BoxCxCyWH {
    let w = scene * rng.random_range(MIN_SIZE_FRACTION..MAX_SIZE_FRACTION);
    let h = scene * rng.random_range(MIN_SIZE_FRACTION..MAX_SIZE_FRACTION);
    let cx = rng.random_range(0.5 * w..scene - 0.5 * w);
    let cy = rng.random_range(0.5 * h..scene - 0.5 * h);
    BoxCxCyWH { cx, cy, w, h }
}

/// Clamps a box so it stays inside `[0, scene]^2` with a minimum size.
fn fit_in_scene(mut b: BoxCxCyWH, scene: f64) -> BoxCxCyWH {
    let min = MIN_JITTERED_FRACTION * scene;
    b.w = b.w.clamp(min, scene);
    b.h = b.h.clamp(min, scene);
    b.cx = b.cx.clamp(0.5 * b.w, scene - 0.5 * b.w);
    b.cy = b.cy.clamp(0.5 * b.h, scene - 0.5 * b.h);
    b
}

/// Builds a seeded scene.
///
/// The first `g` initial boxes are the ground truths jittered by Gaussian
/// noise of standard deviation `noise * scene_size` on `(cx, cy, w, h)`;
/// the remaining `k - g` are uniform distractors.
pub fn generate_problem(
    seed: u64,
    k: usize,
    g: usize,
    scene_size: f64,
    noise: f64,
    layers: usize,
) -> Result<ToyProblem> {
    if g == 0 || k < g {
        return Err(Error::Configuration(format!("need k >= g >= 1, got k={k} g={g}")));
    }
    if !(scene_size.is_finite() && scene_size > 0.0) {
        return Err(Error::Configuration(format!("scene size must be positive, got {scene_size}")));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Configuration(format!("noise must be non-negative, got {noise}")));
    }
    if layers < 2 {
        return Err(Error::Configuration(format!("need at least 2 layers, got {layers}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt_boxes: Vec<BoxCxCyWH> = (0..g).map(|_| random_box(&mut rng, scene_size)).collect();
    let jitter =
        Normal::new(0.0, noise * scene_size).map_err(|e| Error::Configuration(format!("noise distribution: {e}")))?;
    let mut initial_boxes = Vec::with_capacity(k);
    for gt in &gt_boxes {
        let jittered = BoxCxCyWH {
            cx: gt.cx + jitter.sample(&mut rng),
            cy: gt.cy + jitter.sample(&mut rng),
            w: gt.w + jitter.sample(&mut rng),
            h: gt.h + jitter.sample(&mut rng),
        };
        initial_boxes.push(fit_in_scene(jittered, scene_size));
    }
    for _ in g..k {
        initial_boxes.push(random_box(&mut rng, scene_size));
    }
    let confidences = (0..k).map(|i| if i < g { MATCHED_CONFIDENCE } else { DISTRACTOR_CONFIDENCE }).collect();
    Ok(ToyProblem { scene_size, gt_boxes, initial_boxes, confidences, layers, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub a: f64,
    pub c: f64,
    pub n_bins: usize,
    pub temperature: f64,
    pub w_fgl: f64,
    pub w_ddf: f64,
    pub distill: bool,
    pub rematch_every: usize,
    pub kl_direction: KlDirection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            learning_rate: 0.5,
            a: DEFAULT_A,
            c: DEFAULT_C,
            n_bins: DEFAULT_BINS,
            temperature: 5.0,
            w_fgl: 0.15,
            w_ddf: 1.5,
            distill: true,
            rematch_every: 10,
            kl_direction: KlDirection::TeacherStudent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<WeightingSpec> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Configuration(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Configuration(format!("temperature must be positive, got {}", self.temperature)));
        }
        for (name, w) in [("w_fgl", self.w_fgl), ("w_ddf", self.w_ddf)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Configuration(format!("{name} must be non-negative, got {w}")));
            }
        }
        if self.rematch_every == 0 {
            return Err(Error::Configuration("rematch_every must be at least 1".into()));
        }
        build_spec(self.a, self.c, self.n_bins)
    }
}

/// Metrics of one layer at one step, taken before the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// 1-based layer index.
    pub layer: usize,
    pub mean_iou: Option<f64>,
    pub fgl: f64,
    pub ddf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    /// Objective value at each step.
    pub total_loss: Vec<f64>,
    pub final_iou_per_layer: Vec<Option<f64>>,
    /// Final-layer assignment after training.
    pub final_assignment: Assignment,
    pub final_union: UnionSet,
    pub final_layers: Vec<LayerState>,
    /// Number of floored log arguments seen in the localization loss.
    pub floored: usize,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl TrainReport {
    pub fn layers(&self) -> usize {
        self.final_iou_per_layer.len()
    }
}

/// Mean IoU of each layer's boxes over the pairs of `assignment`; `None` when empty.
pub fn evaluate(states: &[LayerState], gts: &[BoxCxCyWH], assignment: &Assignment) -> Result<Vec<Option<f64>>> {
    states
        .iter()
        .map(|s| {
            if assignment.pairs.is_empty() {
                return Ok(None);
            }
            let mut sum = 0.0;
            for &(p, g) in &assignment.pairs {
                let pred = s.boxes.get(p).ok_or(Error::Index { index: p, len: s.boxes.len() })?;
                let gt = gts.get(g).ok_or(Error::Index { index: g, len: gts.len() })?;
                sum += iou(pred, gt)?;
            }
            Ok(Some(sum / assignment.pairs.len() as f64))
        })
        .collect()
}

/// Trainable state: first-layer logits and residuals for layers `2..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub base: EdgeDistributions,
    pub deltas: Vec<EdgeDistributions>,
}

impl Parameters {
    pub fn zeros(predictions: usize, bins: usize, layers: usize) -> Self {
        Parameters {
            base: EdgeDistributions::zeros(predictions, bins),
            deltas: vec![EdgeDistributions::zeros(predictions, bins); layers - 1],
        }
    }
}

/// Everything computed at one parameter point.
#[derive(Debug, Clone)]
pub struct StepEvaluation {
    pub layers: Vec<LayerState>,
    pub union: UnionSet,
    pub fgl: LossOutput,
    /// Distillation loss over layers `1..L-1`; computed even when disabled.
    pub ddf: LossOutput,
    pub total_loss: f64,
}

/// Chain rule through `logits^l = base + sum_{j <= l} delta_j`.
///
/// `layer_grads[l]` is the gradient with respect to layer `l + 1`'s logits;
/// the result holds the base gradient followed by one per residual.
pub fn parameter_gradients(layer_grads: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = layer_grads.first().map_or(0, Vec::len);
    let mut suffix = vec![0.0; n];
    let mut out = vec![Vec::new(); layer_grads.len()];
    for (l, g) in layer_grads.iter().enumerate().rev() {
        suffix.iter_mut().zip(g).for_each(|(s, v)| *s += v);
        out[l] = suffix.clone();
    }
    out
}

pub struct Trainer<'a> {
    problem: &'a ToyProblem,
    config: &'a TrainConfig,
    spec: WeightingSpec,
    params: Parameters,
    assignments: Vec<Assignment>,
}

impl<'a> Trainer<'a> {
    pub fn new(problem: &'a ToyProblem, config: &'a TrainConfig) -> Result<Self> {
        let spec = config.validate()?;
        if problem.layers < 2 {
            return Err(Error::Configuration(format!("need at least 2 layers, got {}", problem.layers)));
        }
        let k = problem.initial_boxes.len();
        if k < problem.gt_boxes.len() {
            return Err(Error::Configuration("fewer queries than ground truths".into()));
        }
        if problem.confidences.len() != k {
            return Err(Error::shape(format!("{k} confidences"), problem.confidences.len()));
        }
        let params = Parameters::zeros(k, spec.bin_count(), problem.layers);
        Ok(Trainer { problem, config, spec, params, assignments: Vec::new() })
    }

    pub fn parameters(&self) -> &Parameters {
        &self.params
    }

    pub fn spec(&self) -> &WeightingSpec {
        &self.spec
    }

    /// Decodes every layer at the current parameters.
    pub fn decode(&self) -> Result<Vec<LayerState>> {
        let first = LayerState::first(
            self.problem.initial_boxes.clone(),
            self.params.base.clone(),
            self.problem.confidences.clone(),
            &self.spec,
        )?;
        run_pipeline(&first, &self.params.deltas, &self.spec)
    }

    /// Recomputes each layer's assignment against the ground truths.
    pub fn rematch(&mut self, layers: &[LayerState]) -> Result<()> {
        self.assignments = layers
            .iter()
            .map(|s| Ok(hungarian(&detr_cost(s, &self.problem.gt_boxes, self.problem.scene_size)?)))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Evaluates both losses on decoded `layers` with the current matching.
    pub fn evaluate_step(&self, layers: Vec<LayerState>) -> Result<StepEvaluation> {
        let gts = &self.problem.gt_boxes;
        let k = self.problem.initial_boxes.len();
        let union = union_set(&self.assignments, k)?;

        let mut targets = Vec::with_capacity(layers.len());
        for (state, assignment) in layers.iter().zip(&self.assignments) {
            let mut layer_targets = Vec::with_capacity(assignment.pairs.len());
            for &(p, g) in &assignment.pairs {
                let weight = iou(&state.boxes[p], &gts[g])?;
                layer_targets.push(FglTarget::new(p, &state.reference_boxes[p], &gts[g], weight, &self.spec)?);
            }
            targets.push(layer_targets);
        }
        let dists: Vec<EdgeDistributions> = layers.iter().map(|s| s.distributions.clone()).collect();
        let fgl = fgl_loss(&dists, &targets, &self.spec)?;

        let (teacher_state, students) = layers.split_last().expect("at least two layers");
        let teacher_assignment = self.assignments.last().expect("one assignment per layer");
        let mut matched_ious = Vec::with_capacity(union.matched_predictions.len());
        for &p in &union.matched_predictions {
            matched_ious.push(self.distillation_iou(p, teacher_state, teacher_assignment, &union)?);
        }
        let unmatched_conf: Vec<f64> =
            union.unmatched_predictions.iter().map(|&p| teacher_state.confidences[p]).collect();
        let weights = DdfWeights::new(&matched_ious, &unmatched_conf, self.config.temperature)?;
        let student_dists: Vec<EdgeDistributions> = students.iter().map(|s| s.distributions.clone()).collect();
        let ddf = ddf_loss_with_direction(
            &student_dists,
            &teacher_state.distributions,
            &weights,
            &union.matched_predictions,
            &union.unmatched_predictions,
            self.config.kl_direction,
        )?;

        let mut total_loss = self.config.w_fgl * fgl.value;
        if self.config.distill {
            total_loss += self.config.w_ddf * ddf.value;
        }
        Ok(StepEvaluation { layers, union, fgl, ddf, total_loss })
    }

    /// IoU of the teacher box against the final-layer gt, else the best gt in the union.
    fn distillation_iou(
        &self,
        prediction: usize,
        teacher: &LayerState,
        teacher_assignment: &Assignment,
        union: &UnionSet,
    ) -> Result<f64> {
        let gts = &self.problem.gt_boxes;
        let bx = &teacher.boxes[prediction];
        if let Some(g) = teacher_assignment.gt_for(prediction) {
            return iou(bx, &gts[g]);
        }
        let mut best: f64 = 0.0;
        for &(_, g) in union.matched_pairs.iter().filter(|(p, _)| *p == prediction) {
            best = best.max(iou(bx, &gts[g])?);
        }
        Ok(best)
    }

    /// Gradient of the training objective with respect to each layer's logits.
    pub fn layer_gradients(&self, eval: &StepEvaluation) -> Vec<Vec<f64>> {
        let layers = eval.layers.len();
        (0..layers)
            .map(|l| {
                let mut g: Vec<f64> = eval.fgl.gradients[l].iter().map(|v| self.config.w_fgl * v).collect();
                if self.config.distill && l + 1 < layers {
                    g.iter_mut().zip(&eval.ddf.gradients[l]).for_each(|(a, b)| *a += self.config.w_ddf * b);
                }
                g
            })
            .collect()
    }

    fn apply(&mut self, layer_grads: &[Vec<f64>]) {
        let lr = self.config.learning_rate;
        let grads = parameter_gradients(layer_grads);
        let targets = std::iter::once(&mut self.params.base).chain(self.params.deltas.iter_mut());
        for (param, g) in targets.zip(&grads) {
            param.logits_mut().iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
    }

    pub fn run(mut self) -> Result<TrainReport> {
        let started = Instant::now();
        let layer_count = self.problem.layers;
        let mut records = Vec::with_capacity(self.config.steps * layer_count);
        let mut total_loss = Vec::with_capacity(self.config.steps);
        let mut floored = 0;

        for step in 0..self.config.steps {
            let layers = self.decode().map_err(|e| diverged(step, e))?;
            if step % self.config.rematch_every == 0 {
                self.rematch(&layers)?;
            }
            let eval = self.evaluate_step(layers).map_err(|e| diverged(step, e))?;
            if !eval.total_loss.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: format!("loss became {} (fgl {}, ddf {})", eval.total_loss, eval.fgl.value, eval.ddf.value),
                });
            }
            floored += eval.fgl.floored;
            let ious = evaluate(&eval.layers, &self.problem.gt_boxes, self.assignments.last().expect("matched"))?;
            for (l, mean_iou) in ious.into_iter().enumerate() {
                records.push(StepRecord {
                    step,
                    layer: l + 1,
                    mean_iou,
                    fgl: eval.fgl.per_layer[l],
                    ddf: eval.ddf.per_layer.get(l).copied().unwrap_or(0.0),
                });
            }
            total_loss.push(eval.total_loss);
            let grads = self.layer_gradients(&eval);
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { step, detail: "non-finite gradient".into() });
            }
            self.apply(&grads);
        }

        let layers = self.decode().map_err(|e| diverged(self.config.steps, e))?;
        self.rematch(&layers)?;
        let final_assignment = self.assignments.last().cloned().expect("matched");
        let final_iou_per_layer = evaluate(&layers, &self.problem.gt_boxes, &final_assignment)?;
        let final_union = union_set(&self.assignments, self.problem.initial_boxes.len())?;
        Ok(TrainReport {
            records,
            total_loss,
            final_iou_per_layer,
            final_assignment,
            final_union,
            final_layers: layers,
            floored,
            elapsed: started.elapsed(),
        })
    }
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::DegenerateBox(detail) | Error::InvalidInput(detail) => Error::Divergence { step, detail },
        other => other,
    }
}

pub fn train(problem: &ToyProblem, config: &TrainConfig) -> Result<TrainReport> {
    Trainer::new(problem, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corners(x0: f64, y0: f64, x1: f64, y1: f64) -> BoxCxCyWH {
        BoxCxCyWH::from_corners(x0, y0, x1, y1).unwrap()
    }

    fn state(boxes: Vec<BoxCxCyWH>) -> LayerState {
        let k = boxes.len();
        let spec = WeightingSpec::default();
        LayerState::first(boxes, EdgeDistributions::zeros(k, spec.bin_count()), vec![0.5; k], &spec).unwrap()
    }

    #[test]
    fn generator_contract() {
        let p = generate_problem(3, 8, 4, 100.0, 0.05, 3).unwrap();
        assert_eq!(p, generate_problem(3, 8, 4, 100.0, 0.05, 3).unwrap());
        assert_ne!(p, generate_problem(4, 8, 4, 100.0, 0.05, 3).unwrap());
        assert_eq!((p.gt_boxes.len(), p.initial_boxes.len(), p.layers), (4, 8, 3));
        assert_eq!(p.confidences, vec![0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1]);
        for b in p.gt_boxes.iter().chain(&p.initial_boxes) {
            let [x0, y0, x1, y1] = b.corners();
            assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= 100.0 && y1 <= 100.0, "{b:?}");
        }
    }

    #[test]
    fn generator_rejects_bad_arguments() {
        for (k, g) in [(3, 4), (2, 0)] {
            assert!(matches!(generate_problem(0, k, g, 100.0, 0.0, 3), Err(Error::Configuration(_))));
        }
        assert!(generate_problem(0, 4, 2, 100.0, -0.1, 3).is_err());
        assert!(generate_problem(0, 4, 2, 0.0, 0.1, 3).is_err());
        assert!(generate_problem(0, 4, 2, 100.0, 0.1, 1).is_err());
    }

    #[test]
    fn noiseless_problem_starts_perfect() {
        let p = generate_problem(11, 6, 3, 50.0, 0.0, 2).unwrap();
        assert_eq!(&p.initial_boxes[..3], &p.gt_boxes[..]);
        let cfg = TrainConfig { steps: 0, ..Default::default() };
        let r = train(&p, &cfg).unwrap();
        for v in r.final_iou_per_layer {
            assert!((v.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_examples() {
        let gts = vec![corners(0.0, 0.0, 2.0, 2.0), corners(5.0, 5.0, 6.0, 6.0)];
        let both = Assignment { pairs: vec![(0, 0), (1, 1)], total_cost: 0.0 };

        let perfect = state(gts.clone());
        assert_eq!(evaluate(&[perfect.clone(), perfect], &gts, &both).unwrap(), vec![Some(1.0), Some(1.0)]);

        let disjoint = state(vec![corners(10.0, 10.0, 11.0, 11.0), corners(20.0, 0.0, 21.0, 1.0)]);
        assert_eq!(evaluate(&[disjoint], &gts, &both).unwrap(), vec![Some(0.0)]);

        let mixed = state(vec![corners(1.0, 1.0, 3.0, 3.0), gts[1]]);
        let v = evaluate(std::slice::from_ref(&mixed), &gts, &both).unwrap()[0].unwrap();
        assert!((v - 4.0 / 7.0).abs() < 1e-15);

        assert_eq!(evaluate(&[mixed], &gts, &Assignment::default()).unwrap(), vec![None]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { temperature: -1.0, ..Default::default() },
            TrainConfig { w_ddf: f64::NAN, ..Default::default() },
            TrainConfig { rematch_every: 0, ..Default::default() },
            TrainConfig { n_bins: 7, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Configuration(_))), "{cfg:?}");
        }
    }

    #[test]
    fn parameter_gradients_sum_suffixes() {
        let g = parameter_gradients(&[vec![1.0, 0.0], vec![10.0, 1.0], vec![100.0, 2.0]]);
        assert_eq!(g, vec![vec![111.0, 3.0], vec![110.0, 3.0], vec![100.0, 2.0]]);
        assert!(parameter_gradients(&[]).is_empty());
    }

    #[test]
    fn zero_steps_reports_untrained_pipeline() {
        let p = generate_problem(5, 8, 4, 100.0, 0.05, 3).unwrap();
        let cfg = TrainConfig { steps: 0, ..Default::default() };
        let r = train(&p, &cfg).unwrap();
        assert!(r.records.is_empty() && r.total_loss.is_empty());

        let mut t = Trainer::new(&p, &cfg).unwrap();
        let layers = t.decode().unwrap();
        t.rematch(&layers).unwrap();
        let expected = evaluate(&layers, &p.gt_boxes, t.assignments.last().unwrap()).unwrap();
        assert_eq!(r.final_iou_per_layer, expected);
        assert_eq!(r.final_layers, layers);
        for s in &layers[1..] {
            assert_eq!(s.boxes, layers[0].boxes);
        }
    }

    #[test]
    fn records_cover_every_step_and_layer() {
        let p = generate_problem(1, 6, 3, 100.0, 0.05, 4).unwrap();
        let cfg = TrainConfig { steps: 7, ..Default::default() };
        let r = train(&p, &cfg).unwrap();
        assert_eq!(r.records.len(), 7 * 4);
        assert_eq!(r.total_loss.len(), 7);
        for (i, rec) in r.records.iter().enumerate() {
            assert_eq!((rec.step, rec.layer), (i / 4, i % 4 + 1));
        }
        assert!(r.records.iter().filter(|x| x.layer == 4).all(|x| x.ddf == 0.0));
    }

    #[test]
    fn training_is_reproducible() {
        let p = generate_problem(2, 8, 4, 100.0, 0.05, 3).unwrap();
        let cfg = TrainConfig { steps: 40, ..Default::default() };
        let a = train(&p, &cfg).unwrap();
        let b = train(&p, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(
            a.total_loss.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.total_loss.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.final_layers, b.final_layers);
    }

    #[test]
    fn teacher_receives_no_distillation_gradient() {
        let p = generate_problem(9, 8, 4, 100.0, 0.05, 3).unwrap();
        let on = TrainConfig { steps: 0, ..Default::default() };
        let off = TrainConfig { distill: false, ..on.clone() };
        // Move away from the zero-logit start so the distillation term is non-trivial.
        let warm = train(&p, &TrainConfig { steps: 25, ..on.clone() }).unwrap();

        let mut t_on = Trainer::new(&p, &on).unwrap();
        let mut t_off = Trainer::new(&p, &off).unwrap();
        for t in [&mut t_on, &mut t_off] {
            t.params.base = warm.final_layers[0].distributions.clone();
            for (l, d) in t.params.deltas.iter_mut().enumerate() {
                let hi = warm.final_layers[l + 1].distributions.logits();
                let lo = warm.final_layers[l].distributions.logits();
                *d = EdgeDistributions::from_logits(
                    d.predictions(),
                    d.bins(),
                    hi.iter().zip(lo).map(|(a, b)| a - b).collect(),
                )
                .unwrap();
            }
            let layers = t.decode().unwrap();
            t.rematch(&layers).unwrap();
        }
        let e_on = t_on.evaluate_step(t_on.decode().unwrap()).unwrap();
        let e_off = t_off.evaluate_step(t_off.decode().unwrap()).unwrap();
        assert!(e_on.ddf.value > 0.0);
        assert_eq!(e_on.ddf.gradients.len(), 2);

        let g_on = t_on.layer_gradients(&e_on);
        let g_off = t_off.layer_gradients(&e_off);
        assert_eq!(g_on[2], g_off[2]);
        assert_ne!(g_on[0], g_off[0]);
        let p_on = parameter_gradients(&g_on);
        let p_off = parameter_gradients(&g_off);
        assert_eq!(p_on[2], p_off[2]);
    }

    #[test]
    fn loss_descends_without_distillation() {
        let p = generate_problem(0, 8, 4, 100.0, 0.05, 3).unwrap();
        let cfg = TrainConfig { steps: 150, distill: false, ..Default::default() };
        let r = train(&p, &cfg).unwrap();
        let down = r.total_loss.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(down as f64 >= 0.95 * (r.total_loss.len() - 1) as f64, "{down}");
    }

    #[test]
    fn short_run_improves_every_layer() {
        let p = generate_problem(4, 8, 4, 100.0, 0.05, 3).unwrap();
        let before = train(&p, &TrainConfig { steps: 0, ..Default::default() }).unwrap();
        let after = train(&p, &TrainConfig { steps: 60, ..Default::default() }).unwrap();
        for (b, a) in before.final_iou_per_layer.iter().zip(&after.final_iou_per_layer) {
            assert!(a.unwrap() > b.unwrap(), "{b:?} -> {a:?}");
        }
    }
}
