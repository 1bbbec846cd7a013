//! Finite-difference verification of the analytic gradients.

use boxrefine::gating::{gate_backward, gate_forward, GateParams};
use boxrefine::losses::{ddf_loss_with_direction, fgl_loss, finite_difference_check, DdfWeights, FglTarget};
use boxrefine::refinement::EdgeDistributions;
use boxrefine::weighting::{bracket, build_spec, WeightingSpec};
use boxrefine::EDGES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::CliError;

const MAX_PREDICTIONS: usize = 4;
const MAX_STUDENTS: usize = 2;
const MAX_GATE_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub fgl: f64,
    pub ddf: f64,
    pub gate: f64,
    pub instances: usize,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.fgl.max(self.ddf).max(self.gate)
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.tolerance
    }

    pub fn render(&self) -> String {
        let mut s = format!("instances {} epsilon {:e} tolerance {:e}\n", self.instances, self.epsilon, self.tolerance);
        for (name, v) in [("fgl", self.fgl), ("ddf", self.ddf), ("gate", self.gate)] {
            let verdict = if v < self.tolerance { "ok" } else { "FAIL" };
            s.push_str(&format!("{name:<5} max_rel_err {v:.3e} {verdict}\n"));
        }
        s.push_str(if self.passed() { "PASS\n" } else { "FAIL\n" });
        s
    }
}

fn random_dist(rng: &mut ChaCha8Rng, k: usize, bins: usize, scale: f64) -> EdgeDistributions {
    let logits = (0..k * EDGES * bins).map(|_| rng.random_range(-scale..scale)).collect();
    EdgeDistributions::from_logits(k, bins, logits).expect("shape is consistent")
}

fn random_targets(rng: &mut ChaCha8Rng, k: usize, spec: &WeightingSpec) -> Result<Vec<FglTarget>, CliError> {
    let mut targets = Vec::new();
    for prediction in 0..k {
        if !rng.random_bool(0.8) {
            continue;
        }
        let mut brackets = [bracket(spec, 0.0)?; EDGES];
        for b in &mut brackets {
            *b = bracket(spec, rng.random_range(-1.2 * spec.max_offset()..1.2 * spec.max_offset()))?;
        }
        targets.push(FglTarget { prediction, brackets, iou: rng.random_range(0.0..=1.0) });
    }
    Ok(targets)
}

fn unflatten(x: &[f64], k: usize, bins: usize) -> Vec<EdgeDistributions> {
    x.chunks(k * EDGES * bins)
        .map(|c| EdgeDistributions::from_logits(k, bins, c.to_vec()).expect("chunk has one layer"))
        .collect()
}

pub fn run(config: &RunConfig) -> Result<GradcheckReport, CliError> {
    run_with(config, |_| {})
}

/// Like [`run`], with a hook that may rewrite the analytic FGL gradient.
pub(crate) fn run_with(config: &RunConfig, tamper_fgl: impl Fn(&mut [f64])) -> Result<GradcheckReport, CliError> {
    config.validate()?;
    let w = &config.weighting;
    let spec = build_spec(w.a, w.c, w.n_bins)?;
    let bins = spec.bin_count();
    let g = &config.gradcheck;
    let eps = g.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let mut report =
        GradcheckReport { fgl: 0.0, ddf: 0.0, gate: 0.0, instances: g.instances, epsilon: eps, tolerance: g.tolerance };

    for _ in 0..g.instances {
        let k = rng.random_range(1..=MAX_PREDICTIONS);
        let layers = rng.random_range(1..=MAX_STUDENTS);
        let dists: Vec<_> = (0..layers).map(|_| random_dist(&mut rng, k, bins, 3.0)).collect();
        let targets = (0..layers).map(|_| random_targets(&mut rng, k, &spec)).collect::<Result<Vec<_>, _>>()?;
        let point: Vec<f64> = dists.iter().flat_map(|d| d.logits().to_vec()).collect();
        let err = finite_difference_check(
            |x| {
                let out = fgl_loss(&unflatten(x, k, bins), &targets, &spec).expect("valid FGL instance");
                let mut grad = out.gradients.concat();
                tamper_fgl(&mut grad);
                (out.value, grad)
            },
            &point,
            eps,
        )?;
        report.fgl = report.fgl.max(err);
    }

    for _ in 0..g.instances {
        let k = rng.random_range(1..=MAX_PREDICTIONS);
        let layers = rng.random_range(1..=MAX_STUDENTS);
        let teacher = random_dist(&mut rng, k, bins, 6.0);
        let students: Vec<_> = (0..layers).map(|_| random_dist(&mut rng, k, bins, 6.0)).collect();
        let (mut matched, mut unmatched) = (Vec::new(), Vec::new());
        for i in 0..k {
            if rng.random_bool(0.5) {
                matched.push(i);
            } else {
                unmatched.push(i);
            }
        }
        let ious: Vec<f64> = matched.iter().map(|_| rng.random_range(0.0..=1.0)).collect();
        let confs: Vec<f64> = unmatched.iter().map(|_| rng.random_range(0.0..=1.0)).collect();
        let weights = DdfWeights::new(&ious, &confs, config.temperature)?;
        let point: Vec<f64> = students.iter().flat_map(|d| d.logits().to_vec()).collect();
        let err = finite_difference_check(
            |x| {
                let out = ddf_loss_with_direction(
                    &unflatten(x, k, bins),
                    &teacher,
                    &weights,
                    &matched,
                    &unmatched,
                    config.train.kl_direction,
                )
                .expect("valid DDF instance");
                (out.value, out.gradients.concat())
            },
            &point,
            eps,
        )?;
        report.ddf = report.ddf.max(err);
    }

    for _ in 0..g.instances {
        let d = rng.random_range(1..=MAX_GATE_DIM);
        let point: Vec<f64> = (0..6 * d + 2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let upstream: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = finite_difference_check(
            |x| {
                let (x1, rest) = x.split_at(d);
                let (x2, rest) = rest.split_at(d);
                let (weight, bias) = rest.split_at(4 * d);
                let p = GateParams::new(d, weight.to_vec(), [bias[0], bias[1]]).expect("gate shape");
                let y = gate_forward(x1, x2, &p).expect("gate shape");
                let loss = y.iter().zip(&upstream).map(|(a, u)| a * u).sum();
                let g = gate_backward(x1, x2, &p, &upstream).expect("gate shape");
                (loss, [g.x1, g.x2, g.weight, g.bias.to_vec()].concat())
            },
            &point,
            eps,
        )?;
        report.gate = report.gate.max(err);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> RunConfig {
        let mut c = RunConfig::default();
        c.gradcheck.instances = 8;
        c
    }

    #[test]
    fn defaults_pass() {
        let r = run(&quick()).unwrap();
        assert!(r.passed(), "{}", r.render());
        assert!(r.render().ends_with("PASS\n"));
    }

    #[test]
    fn sign_flip_in_fgl_gradient_is_caught() {
        let r = run_with(&quick(), |g| g.iter_mut().for_each(|v| *v = -*v)).unwrap();
        assert!(!r.passed());
        assert!(r.fgl > 1e-2);
        assert!(r.ddf < 1e-5 && r.gate < 1e-5);
        assert!(r.render().ends_with("FAIL\n"));
    }

    #[test]
    fn epsilon_out_of_range_is_a_configuration_error() {
        for eps in [1e-8, 1e-2] {
            let mut c = quick();
            c.gradcheck.epsilon = eps;
            assert!(matches!(run(&c), Err(CliError::Config(_))));
        }
    }
}
