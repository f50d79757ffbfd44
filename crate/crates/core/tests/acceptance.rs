//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use citymove_core::calibration::{calibrate, objective, rmse, CriteriaSpace, ObservedData};
use citymove_core::choice::{choose_mode, mode_score, shannon_diversity, NormalizationConstants};
use citymove_core::geodata::RoadNetwork;
use citymove_core::geometry::Point;
use citymove_core::population::{Access, MobilityCriteria, MobilityMode};
use citymove_core::report::{agent_rows, summarize};
use citymove_core::scenario::{Model, Scenario};
use citymove_core::simulation::{initialize, run_to_convergence, step};

type Outcome = Result<String, String>;

fn smalltown() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/smalltown/scenario.toml")
}

fn load() -> Model {
    let scenario = Scenario::from_file(&smalltown()).expect("smalltown scenario");
    Model::load(&scenario).expect("smalltown model")
}

fn ground_truth_observed(model: &Model) -> ObservedData {
    let state = run_to_convergence(model).expect("ground-truth run");
    ObservedData::from_summary(&summarize(model, &state))
}

fn calibration_recovery() -> Outcome {
    let model = load();
    let observed = ground_truth_observed(&model);
    let config = model.scenario.calibration;
    if config.restarts != 5 || config.max_evaluations > 3000 {
        return Err(format!("fixture config is {config:?}"));
    }
    let started = Instant::now();
    let result = calibrate(&model, &observed, &config).map_err(|e| e.to_string())?;
    let detail = format!(
        "total {:.4} (housing {:.4}, mobility {:.4}), {} evaluations, {:.0} s",
        result.total,
        result.housing_error,
        result.mobility_error,
        result.evaluations,
        started.elapsed().as_secs_f64()
    );
    if result.evaluations <= 3000 && result.total <= 2.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn self_consistency() -> Outcome {
    let model = load();
    let observed = ground_truth_observed(&model);
    let space = CriteriaSpace::for_model(&model);
    let truth = space.encode(&model.profiles).map_err(|e| e.to_string())?;
    let e = objective(&model, &space, &truth, &observed).map_err(|e| e.to_string())?;
    let detail = format!("housing {}, mobility {}", e.housing, e.mobility);
    if e.housing == 0.0 && e.mobility == 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn brute_rmse(y: &[f64], y_hat: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut i = 0;
    while i < y.len() {
        let d = y[i] - y_hat[i];
        sum += d * d;
        i += 1;
    }
    (sum / y.len() as f64).sqrt()
}

fn rmse_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=1000);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
        let y_hat: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
        let got = rmse(&y, &y_hat).map_err(|e| e.to_string())?;
        worst = worst.max((got - brute_rmse(&y, &y_hat)).abs());
    }
    let a = rmse(&[25.0; 4], &[20.0, 30.0, 25.0, 25.0]).map_err(|e| e.to_string())?;
    let b = rmse(&[20.0; 5], &[25.0, 15.0, 20.0, 20.0, 20.0]).map_err(|e| e.to_string())?;
    let detail = format!("max deviation {worst:e}; worked values {a:.4}, {b:.4}");
    if worst <= 1e-12 && (a - 3.5355).abs() < 1e-4 && (b - 3.1623).abs() < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn diversity_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..10_000 {
        let k = rng.gen_range(1..=8usize);
        let counts: Vec<u32> = if rng.gen_bool(0.2) {
            vec![rng.gen_range(1..50); k]
        } else {
            (0..k).map(|_| rng.gen_range(1..50)).collect()
        };
        let h = shannon_diversity(counts.iter().copied()).ok_or("no diversity for positive counts")?;
        let ln_k = (k as f64).ln();
        let single = k == 1;
        let uniform = counts.iter().all(|&c| c == counts[0]);
        if !(h >= 0.0 && h <= ln_k + 1e-12) {
            return Err(format!("case {case}: H = {h} outside [0, ln {k}] for {counts:?}"));
        }
        if (h == 0.0) != single {
            return Err(format!("case {case}: H = {h} for {counts:?}"));
        }
        if ((ln_k - h).abs() <= 1e-12) != uniform {
            return Err(format!("case {case}: H = {h} vs ln k = {ln_k} for {counts:?}"));
        }
    }
    let two = shannon_diversity([5u32, 5]).unwrap_or(f64::NAN);
    let three = shannon_diversity([1u32, 1, 2]).unwrap_or(f64::NAN);
    let detail = format!("10000 maps; worked values {two:.4}, {three:.4}");
    if (two - 2f64.ln()).abs() < 1e-4 && (three - 1.0397).abs() < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_mode(rng: &mut ChaCha8Rng, i: usize) -> MobilityMode {
    let access = [
        Access::Walk,
        Access::PrivateBike,
        Access::PublicBus,
        Access::PublicT,
        Access::PrivateCar,
    ][i % 5];
    MobilityMode {
        mode_id: format!("m{i}"),
        price_per_km: rng.gen_range(0.0..0.5),
        mean_speed: rng.gen_range(3.0..60.0),
        waiting_time: rng.gen_range(0.0..15.0),
        difficulty: rng.gen_range(0.0..1.0),
        pattern: rng.gen_range(0.0..1.0),
        access,
    }
}

fn choice_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let consts = NormalizationConstants::default();
    for case in 0..1000 {
        let modes: Vec<MobilityMode> = (0..5).map(|i| random_mode(&mut rng, i)).collect();
        let criteria = MobilityCriteria {
            w_price: rng.gen_range(-1.0..=0.0),
            w_time: rng.gen_range(-1.0..=0.0),
            w_difficulty: rng.gen_range(-1.0..=0.0),
            w_pattern: rng.gen_range(0.0..=1.0),
        };
        let distance = rng.gen_range(0.0..20_000.0);
        let candidates: Vec<(usize, f64)> = (0..5).filter(|_| rng.gen_bool(0.6)).map(|i| (i, distance)).collect();
        let lambda = rng.gen_range(0.01..100.0);
        let scaled = MobilityCriteria {
            w_price: criteria.w_price * lambda,
            w_time: criteria.w_time * lambda,
            w_difficulty: criteria.w_difficulty * lambda,
            w_pattern: criteria.w_pattern * lambda,
        };
        let a = choose_mode(&criteria, &modes, candidates.iter().copied(), &consts).map(|e| e.mode);
        let b = choose_mode(&scaled, &modes, candidates.iter().copied(), &consts).map(|e| e.mode);
        if a != b {
            return Err(format!("case {case}: argmax {a:?} became {b:?} under λ = {lambda}"));
        }
    }
    Ok("1000 cases".into())
}

fn snapshot(model: &Model) -> Result<String, String> {
    let state = run_to_convergence(model).map_err(|e| e.to_string())?;
    let summary = serde_json::to_string(&summarize(model, &state)).map_err(|e| e.to_string())?;
    let agents = serde_json::to_string(&agent_rows(model, &state)).map_err(|e| e.to_string())?;
    Ok(summary + &agents)
}

fn convergence_and_conservation() -> Outcome {
    let model = load();
    let conv = model.scenario.convergence;
    let mut state = initialize(&model).map_err(|e| e.to_string())?;
    state.check_conservation()?;
    let mut steps = 0;
    while state.quiet_streak < conv.window && steps < 500 {
        step(&model, &mut state);
        state.check_conservation().map_err(|e| format!("iteration {}: {e}", state.iteration))?;
        steps += 1;
    }
    if state.quiet_streak < conv.window {
        return Err(format!("not converged after {steps} iterations"));
    }
    let reference = snapshot(&model)?;
    if snapshot(&model)? != reference {
        return Err("two runs with the same seed differ".into());
    }
    for threads in [1, 2, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        if pool.install(|| snapshot(&model))? != reference {
            return Err(format!("output differs with {threads} threads"));
        }
    }
    Ok(format!("converged at iteration {}; conservation held throughout", state.iteration))
}

/// Shortest allowed path by enumerating every simple path.
fn exhaustive(n: usize, edges: &[(usize, usize, f64, bool)], from: usize, to: usize) -> Option<f64> {
    fn walk(
        at: usize,
        to: usize,
        edges: &[(usize, usize, f64, bool)],
        seen: &mut Vec<bool>,
        len: f64,
        best: &mut Option<f64>,
    ) {
        if at == to {
            if best.is_none_or(|b| len < b) {
                *best = Some(len);
            }
            return;
        }
        for &(a, b, l, ok) in edges {
            if !ok {
                continue;
            }
            for (x, y) in [(a, b), (b, a)] {
                if x == at && !seen[y] {
                    seen[y] = true;
                    walk(y, to, edges, seen, len + l, best);
                    seen[y] = false;
                }
            }
        }
    }
    let mut seen = vec![false; n];
    seen[from] = true;
    let mut best = None;
    walk(from, to, edges, &mut seen, 0.0, &mut best);
    best
}

fn routing_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let tags = ["walk", "bike", "car"];
    for case in 0..200 {
        let n = rng.gen_range(1..=6);
        let mut net = RoadNetwork::new();
        for i in 0..n {
            net.add_node(Point {
                x: i as f64 * 100.0,
                y: rng.gen_range(0.0..50.0),
            });
        }
        let mode = tags[rng.gen_range(0..tags.len())];
        let mut edges = Vec::new();
        for _ in 0..rng.gen_range(0..=10) {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b {
                continue;
            }
            let length = rng.gen_range(1.0..500.0);
            let modes: Vec<&str> = tags.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
            net.add_edge(a, b, length, &modes);
            edges.push((a, b, length, modes.contains(&mode)));
        }
        let from = rng.gen_range(0..n);
        let to = rng.gen_range(0..n);
        let expected = exhaustive(n, &edges, from, to);
        let got = net.route_nodes(from, to, mode).map(|r| r.distance);
        let agree = match (expected, got) {
            (None, None) => true,
            (Some(e), Some(g)) => (e - g).abs() <= 1e-9 * e.max(1.0),
            _ => false,
        };
        if !agree {
            return Err(format!("case {case}: {from}->{to} by {mode}: expected {expected:?}, got {got:?}"));
        }
    }
    Ok("200 graphs".into())
}

fn mode_score_example() -> Outcome {
    let criteria = MobilityCriteria {
        w_price: -0.7,
        w_time: -0.85,
        w_difficulty: -0.75,
        w_pattern: 0.8,
    };
    let bus = MobilityMode {
        mode_id: "bus".into(),
        price_per_km: 0.1,
        mean_speed: 20.0,
        waiting_time: 7.0,
        difficulty: 0.3,
        pattern: 0.4,
        access: Access::PublicBus,
    };
    let score = mode_score(&criteria, &bus, 5000.0, &NormalizationConstants::default());
    let detail = format!("score {score:.6}, expected -0.2267 ± 1e-4");
    if (score - -0.2267).abs() <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("RMSE oracle", rmse_oracle),
        ("Diversity properties", diversity_properties),
        ("Choice invariance", choice_invariance),
        ("Routing oracle", routing_oracle),
        ("Mode-score worked example", mode_score_example),
        ("Self-consistency zero", self_consistency),
        ("Convergence and conservation", convergence_and_conservation),
        ("Calibration recovery", calibration_recovery),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
