//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use boxrefine::geometry::BoxCxCyWH;
use boxrefine::losses::{ddf_loss, normalizers, DdfWeights};
use boxrefine::matching::{hungarian, CostMatrix};
use boxrefine::refinement::{decode_offsets, run_pipeline, EdgeDistributions, LayerState};
use boxrefine::toytrain::{generate_problem, train, TrainConfig};
use boxrefine::weighting::{build_spec, eval_w};
use boxrefine::EDGES;
use boxrefine_cli::commands::gradcheck;
use boxrefine_cli::config::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ANTISYMMETRY_TOL: f64 = 1e-12;
const GRADIENT_TOL: f64 = 1e-5;
const GRADIENT_INSTANCES: usize = 50;
const HUNGARIAN_TRIALS: usize = 200;
const HUNGARIAN_REAL_TOL: f64 = 1e-9;
const UNIFORM_DECODE_TOL: f64 = 1e-15;
const RANDOM_DISTRIBUTIONS: usize = 1000;
const CONVERGENCE_IOU: f64 = 0.90;
const DEPTH_TOL: f64 = 1e-3;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const NORMALIZER_TOL: f64 = 1e-15;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn weighting_goldens() -> Outcome {
    let spec = build_spec(0.5, 0.25, 32).unwrap();
    let w = |n| eval_w(&spec, n).unwrap();
    let ends = w(0) == -1.0 && w(16) == 0.0 && w(32) == 1.0;
    let antisym = (1..32).map(|n| (w(n) + w(32 - n)).abs()).fold(0.0, f64::max);
    let monotone = spec.knots().windows(2).all(|p| p[1] > p[0]);
    outcome(
        ends && antisym < ANTISYMMETRY_TOL && monotone,
        format!("W(0),W(16),W(32) exact={ends} max|W(n)+W(N-n)|={antisym:.1e} strictly increasing={monotone}"),
    )
}

fn gradient_oracle() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.gradcheck.instances = GRADIENT_INSTANCES;
    cfg.gradcheck.tolerance = GRADIENT_TOL;
    let r = gradcheck::run(&cfg).unwrap();
    outcome(
        r.passed() && cfg.temperature == 5.0,
        format!(
            "{} instances each, T={}: fgl {:.2e} ddf {:.2e} gate {:.2e} (< {GRADIENT_TOL:e})",
            r.instances, cfg.temperature, r.fgl, r.ddf, r.gate
        ),
    )
}

/// Minimum over injective row-to-column maps, for rows <= cols.
fn brute_force(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
    if row == cost.len() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for c in 0..used.len() {
        if !used[c] {
            used[c] = true;
            best = best.min(cost[row][c] + brute_force(cost, row + 1, used));
            used[c] = false;
        }
    }
    best
}

fn hungarian_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_real: f64 = 0.0;
    let mut integer_mismatches = 0;
    for trial in 0..HUNGARIAN_TRIALS {
        let small = rng.random_range(1..=7);
        let large = rng.random_range(small..=8);
        let integer = trial % 2 == 0;
        let narrow: Vec<Vec<f64>> = (0..small)
            .map(|_| {
                (0..large)
                    .map(|_| if integer { rng.random_range(0..20) as f64 } else { rng.random_range(-5.0..5.0) })
                    .collect()
            })
            .collect();
        let expected = brute_force(&narrow, 0, &mut vec![false; large]);
        // Alternate orientation so both wide and tall matrices are exercised.
        let rows = if rng.random_bool(0.5) {
            narrow
        } else {
            (0..large).map(|c| narrow.iter().map(|r| r[c]).collect()).collect()
        };
        let got = hungarian(&CostMatrix::from_rows(&rows).unwrap()).total_cost;
        if integer {
            integer_mismatches += usize::from(got != expected);
        } else {
            worst_real = worst_real.max((got - expected).abs());
        }
    }
    outcome(
        integer_mismatches == 0 && worst_real < HUNGARIAN_REAL_TOL,
        format!(
            "{HUNGARIAN_TRIALS} matrices: integer mismatches {integer_mismatches}, max real error {worst_real:.1e}"
        ),
    )
}

fn refinement_invariants() -> Outcome {
    let spec = build_spec(0.5, 0.25, 32).unwrap();
    let bins = spec.bin_count();
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    let boxes: Vec<BoxCxCyWH> = (0..6)
        .map(|_| {
            BoxCxCyWH::new(
                rng.random_range(20.0..80.0),
                rng.random_range(20.0..80.0),
                rng.random_range(5.0..30.0),
                rng.random_range(5.0..30.0),
            )
            .unwrap()
        })
        .collect();
    let logits = (0..6 * EDGES * bins).map(|_| rng.random_range(-0.5..0.5)).collect();
    let first = LayerState::first(boxes, EdgeDistributions::from_logits(6, bins, logits).unwrap(), vec![0.5; 6], &spec)
        .unwrap();
    let layers = run_pipeline(&first, &vec![EdgeDistributions::zeros(6, bins); 5], &spec).unwrap();
    let identical = layers.iter().all(|s| {
        s.boxes.iter().zip(&first.boxes).all(|(a, b)| a.as_array().map(f64::to_bits) == b.as_array().map(f64::to_bits))
    });

    let uniform = decode_offsets(&EdgeDistributions::zeros(4, bins), &spec).unwrap();
    let uniform_err = uniform.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut max_abs: f64 = 0.0;
    for _ in 0..RANDOM_DISTRIBUTIONS {
        let scale = rng.random_range(0.1..50.0);
        let logits = (0..EDGES * bins).map(|_| rng.random_range(-scale..scale)).collect();
        let d = EdgeDistributions::from_logits(1, bins, logits).unwrap();
        max_abs = decode_offsets(&d, &spec).unwrap()[0].iter().fold(max_abs, |m, v| m.max(v.abs()));
    }
    let bound = 2.0 * spec.a();
    outcome(
        identical && uniform_err < UNIFORM_DECODE_TOL && max_abs <= bound,
        format!(
            "zero deltas bit-identical={identical}, uniform decode max|offset|={uniform_err:.1e}, \
             {RANDOM_DISTRIBUTIONS} random max|offset|={max_abs:.4} <= {bound}"
        ),
    )
}

struct PairedRuns {
    on: Vec<Vec<f64>>,
    off: Vec<Vec<f64>>,
    elapsed: Duration,
}

fn paired_runs() -> PairedRuns {
    let started = Instant::now();
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let problem = generate_problem(seed, 8, 4, 100.0, 0.05, 3).unwrap();
        for (distill, sink) in [(true, &mut on), (false, &mut off)] {
            let cfg = TrainConfig { distill, ..TrainConfig::default() };
            assert_eq!(cfg.steps, 500);
            let report = train(&problem, &cfg).unwrap();
            sink.push(report.final_iou_per_layer.iter().map(|v| v.expect("non-empty assignment")).collect());
        }
    }
    PairedRuns { on, off, elapsed: started.elapsed() }
}

fn toy_convergence(runs: &PairedRuns) -> Outcome {
    let layers = runs.on[0].len();
    let mean: Vec<f64> =
        (0..layers).map(|l| runs.on.iter().map(|r| r[l]).sum::<f64>() / runs.on.len() as f64).collect();
    let final_iou = mean[layers - 1];
    let monotone = mean.windows(2).all(|p| p[1] >= p[0] - DEPTH_TOL);
    outcome(
        final_iou >= CONVERGENCE_IOU && monotone,
        format!(
            "mean IoU per layer over {} seeds {:?}, final {final_iou:.4} >= {CONVERGENCE_IOU}, \
             non-decreasing within {DEPTH_TOL:e}={monotone}",
            SEEDS.len(),
            mean.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
        ),
    )
}

fn distillation_direction(runs: &PairedRuns) -> Outcome {
    let pairs: Vec<(f64, f64)> = runs.on.iter().zip(&runs.off).map(|(a, b)| (a[0], b[0])).collect();
    let wins = pairs.iter().filter(|(on, off)| on > off).count();
    let gaps: Vec<String> = pairs.iter().map(|(on, off)| format!("{:+.4}", on - off)).collect();
    outcome(
        wins == pairs.len(),
        format!("layer-1 IoU higher with distillation in {wins}/{} pairs, gaps [{}]", pairs.len(), gaps.join(", ")),
    )
}

fn ddf_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = (0..5 * EDGES * 33).map(|_| rng.random_range(-4.0..4.0)).collect();
    let teacher = EdgeDistributions::from_logits(5, 33, logits).unwrap();
    let w = DdfWeights::new(&[0.9, 0.3, 0.6], &[0.2, 0.8], 5.0).unwrap();
    let out = ddf_loss(&[teacher.clone(), teacher.clone()], &teacher, &w, &[0, 2, 4], &[1, 3]).unwrap();
    let zero = out.value == 0.0;
    let mut worst: f64 = 0.0;
    for k in 1..=64 {
        let (m, u) = normalizers(k, k);
        worst = worst.max((m - 0.5).abs()).max((u - 0.5).abs());
    }
    outcome(
        zero && worst <= NORMALIZER_TOL,
        format!("identical logits loss={}, max |normalizer - 1/2| for K_m=K_u={worst:.1e}", out.value),
    )
}

fn run_cli(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_boxrefine"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("costs.csv"), "4,1,3\n2,0,5\n3,2,2\n0.5,7,1\n").unwrap();
    std::fs::write(root.join("config.json"), r#"{"train": {"steps": 60}, "gradcheck": {"instances": 5}}"#).unwrap();

    let mut compared = 0;
    let mut differing = Vec::new();
    for run in ["a", "b"] {
        std::fs::create_dir_all(root.join(run)).unwrap();
        let ok = run_cli(&["weights", "--config", "config.json", "--out", &format!("{run}/weights.csv")], root)
            && run_cli(&["train", "--config", "config.json", "--seed", "11", "--out", &format!("{run}/train")], root)
            && run_cli(
                &["gradcheck", "--config", "config.json", "--seed", "11", "--out", &format!("{run}/gradcheck.txt")],
                root,
            )
            && run_cli(&["match", "costs.csv", "--out", &format!("{run}/match.json")], root);
        if !ok {
            return outcome(false, format!("command failed in run {run}"));
        }
    }
    for file in
        ["weights.csv", "train/metrics.csv", "train/summary.json", "train/config.json", "gradcheck.txt", "match.json"]
    {
        compared += 1;
        if std::fs::read(root.join("a").join(file)).unwrap() != std::fs::read(root.join("b").join(file)).unwrap() {
            differing.push(file);
        }
    }
    outcome(differing.is_empty(), format!("{compared} output files compared across reruns, differing: {differing:?}"))
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let started = Instant::now();
    let o = f();
    (o, started.elapsed())
}

fn main() {
    let runs = paired_runs();
    let results = [
        ("1 weighting goldens", timed(weighting_goldens)),
        ("2 gradient oracle", timed(gradient_oracle)),
        ("3 hungarian oracle", timed(hungarian_oracle)),
        ("4 refinement invariants", timed(refinement_invariants)),
        ("5 toy convergence", (toy_convergence(&runs), runs.elapsed)),
        ("6 distillation direction", (distillation_direction(&runs), runs.elapsed)),
        ("7 ddf identities", timed(ddf_identities)),
        ("8 determinism", timed(determinism)),
    ];
    let mut failed = 0;
    for (name, (o, elapsed)) in &results {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {name}: {verdict} - {} [{elapsed:.2?}]", o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/{} passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
