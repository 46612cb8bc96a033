//! Acceptance suite. Prints one line per criterion and exits nonzero when
//! any of them fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use oco_core::controller::GVariant;
use oco_core::convexsets::Zonotope;
use oco_core::invariance::{certify_rpi, mrpi_outer, tail_set};
use oco_core::matlin::Matrix;
use oco_core::oracle;
use oco_core::plant::QuadraticCost;
use oco_core::simkit::{regret_scaling_experiment, switching_targets, RunConfig};
use oco_core::controller::ControllerOptions;
use oco_vehicle::{run_scenario_with, ScenarioConfig, ScenarioOutcome, VehicleParams, VehicleSetup};
use rayon::prelude::*;

const SEEDS: u64 = 100;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u32, name: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict { id, name, pass, detail };
    println!(
        "criterion {:>2} {:<34} {}  {}",
        v.id,
        v.name,
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    v
}

struct Fleet {
    optimized: Vec<ScenarioOutcome>,
    explicit: Vec<ScenarioOutcome>,
    seconds: f64,
}

fn vehicle_fleet() -> Fleet {
    let start = Instant::now();
    let setup = VehicleSetup::new(&VehicleParams::default()).expect("vehicle model");
    let runs = |variant: GVariant| -> Vec<ScenarioOutcome> {
        (0..SEEDS)
            .into_par_iter()
            .map(|seed| {
                let cfg = ScenarioConfig {
                    variant,
                    seed,
                    ..Default::default()
                };
                run_scenario_with(&setup, &cfg).expect("scenario setup")
            })
            .collect()
    };
    let optimized = runs(GVariant::Optimized);
    let explicit = runs(GVariant::Explicit);
    Fleet {
        optimized,
        explicit,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn all_runs(f: &Fleet) -> impl Iterator<Item = &ScenarioOutcome> {
    f.optimized.iter().chain(&f.explicit)
}

fn constraint_satisfaction(f: &Fleet) -> Verdict {
    let (mut state, mut input, mut truth, mut aborted) = (0, 0, 0, 0);
    for o in all_runs(f) {
        state += o.report.counts.state;
        input += o.report.counts.input;
        truth += o.metrics.constraint_violations;
        aborted += o.metrics.aborted.is_some() as usize;
    }
    verdict(
        1,
        "robust constraint satisfaction",
        state + input + truth + aborted == 0 && f.seconds < 60.0,
        format!(
            "{} runs, state {state}, input {input}, truth-model {truth}, aborted {aborted}, {:.1} s",
            2 * SEEDS,
            f.seconds
        ),
    )
}

fn recursive_feasibility(f: &Fleet) -> Verdict {
    let mut candidate = 0;
    let mut aborted = 0;
    let mut steps = 0;
    for o in all_runs(f) {
        candidate += o.report.counts.candidate;
        aborted += o.metrics.aborted.is_some() as usize;
        steps += o.report.steps;
    }
    verdict(
        2,
        "recursive feasibility",
        candidate == 0 && aborted == 0,
        format!("{steps} steps, candidate failures {candidate}, controller errors {aborted}"),
    )
}

fn tube_invariant(f: &Fleet) -> Verdict {
    let (mut checked, mut marginal, mut violation) = (0, 0, 0);
    for o in all_runs(f) {
        checked += o.report.counts.tube_checked;
        marginal += o.report.counts.tube_marginal;
        violation += o.report.counts.tube_violation;
    }
    let share = marginal as f64 / checked.max(1) as f64;
    verdict(
        3,
        "tube invariant",
        checked > 0 && violation == 0 && share <= 0.01,
        format!("{checked} checks, marginal {marginal} ({:.3}%), violations {violation}", 100.0 * share),
    )
}

fn anchors(f: &Fleet) -> Verdict {
    let in_band = |o: &ScenarioOutcome| {
        let gap = o.metrics.follow_gap.is_some_and(|g| (50.0..=60.0).contains(&g));
        let speed = o.metrics.overtake_speed_kmh.is_some_and(|v| (122.0..=126.0).contains(&v));
        (gap, speed)
    };
    let count = |runs: &[ScenarioOutcome]| {
        let b: Vec<_> = runs.iter().map(in_band).collect();
        (
            b.iter().filter(|(g, s)| *g && *s).count(),
            b.iter().filter(|(g, _)| *g).count(),
            b.iter().filter(|(_, s)| *s).count(),
        )
    };
    let mean = |runs: &[ScenarioOutcome], pick: fn(&ScenarioOutcome) -> Option<f64>| {
        let v: Vec<f64> = runs.iter().filter_map(pick).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let (both, gap, speed) = count(&f.optimized);
    let (e_both, _, _) = count(&f.explicit);
    verdict(
        4,
        "settled speed and standoff gap",
        both >= 90,
        format!(
            "optimized: both {both}/100 (gap {gap}, speed {speed}), mean gap {:.1} m, mean speed {:.1} km/h; explicit: both {e_both}/100, {:.1} m, {:.1} km/h",
            mean(&f.optimized, |o| o.metrics.follow_gap),
            mean(&f.optimized, |o| o.metrics.overtake_speed_kmh),
            mean(&f.explicit, |o| o.metrics.follow_gap),
            mean(&f.explicit, |o| o.metrics.overtake_speed_kmh),
        ),
    )
}

fn contraction() -> Verdict {
    let results: Vec<_> = (0..1000u64).into_par_iter().map(oracle::contraction_instance).collect();
    let mut failures = 0;
    let mut errors = 0;
    let mut worst: f64 = 0.0;
    for r in &results {
        match r {
            Ok(c) => {
                if c.step_distance > c.bound + 1e-8 {
                    failures += 1;
                }
                if c.bound > 0.0 {
                    worst = worst.max(c.step_distance / c.bound);
                }
            }
            Err(_) => errors += 1,
        }
    }
    verdict(
        5,
        "gradient step contraction",
        failures == 0 && errors == 0,
        format!("1000 instances, failures {failures}, errors {errors}, max ratio {worst:.4}"),
    )
}

fn regret_linearity() -> Verdict {
    let start = Instant::now();
    let plant = oracle::random_plant(1, 3).expect("random plant");
    let base = QuadraticCost::diagonal(&[1.0, 1.0], &[0.1, 0.1], &[0.5, -0.3], &[0.0, 0.0]).expect("cost");
    let horizon = 200;
    let gamma = 0.5 * base.max_step(&plant.model).expect("curvature");
    let config = RunConfig::new(ControllerOptions::defaults(&plant.model, gamma), horizon);
    let seeds: Vec<u64> = (0..10).collect();
    let table = regret_scaling_experiment(
        &plant.model,
        &plant.tables,
        &plant.manifold,
        &config,
        |level, seed| switching_targets(&base, 0.6, level as usize, seed, horizon),
        &[0.0, 4.0, 8.0],
        &[0.0, 0.5, 1.0],
        &seeds,
    );
    let secs = start.elapsed().as_secs_f64();
    let table = match table {
        Ok(t) => t,
        Err(e) => return verdict(6, "regret linearity", false, format!("experiment failed: {e}")),
    };
    let zero_cell = table
        .rows
        .iter()
        .filter(|r| r.path_level == 0.0 && r.dist_level == 0.0)
        .map(|r| r.regret.abs())
        .fold(0.0, f64::max);
    let fit = &table.fit;
    let slopes_ok = table.ols.as_ref().is_some_and(|o| o.slopes_nonnegative());
    let ols = table.ols.as_ref().map_or("none".to_string(), |o| {
        format!("ols slopes ({:.3}, {:.4})", o.c_path, o.c_noise)
    });
    verdict(
        6,
        "regret linearity",
        fit.nonnegative() && slopes_ok && fit.r_squared >= 0.8 && zero_cell <= 1e-6 && secs < 120.0,
        format!(
            "R² {:.3}, c0 {:.3}, c_path {:.3}, c_noise {:.4}, {ols}, zero cell {zero_cell:.1e}, {secs:.1} s",
            fit.r_squared, fit.c0, fit.c_path, fit.c_noise
        ),
    )
}

fn mrpi_scalar() -> Verdict {
    let a = Matrix::from_diag(&[0.5]);
    let w = Zonotope::symmetric_box(&[1.0]);
    let (radius, certified, tail) = match mrpi_outer(&a, &w, 0.01, 200) {
        Ok(res) => (
            res.p.radius(),
            certify_rpi(&res.p, &a, &w, 1e-12),
            tail_set(&a, 2, &res).map(|t| t.radius()).unwrap_or(f64::NAN),
        ),
        Err(_) => (f64::NAN, false, f64::NAN),
    };
    verdict(
        7,
        "mRPI correctness",
        (2.0..=2.01).contains(&radius) && certified && (0.5..=0.51).contains(&tail),
        format!("radius {radius:.6}, certified {certified}, tail radius {tail:.6}"),
    )
}

fn set_oracle() -> Verdict {
    let checks: Vec<_> = (0..50u64).into_par_iter().map(|s| oracle::planar_grid_check(s, 0.01)).collect();
    let points: usize = checks.iter().map(|c| c.points).sum();
    let disagreements: usize = checks.iter().map(|c| c.disagreements).sum();
    let support = checks.iter().map(|c| c.support_error).fold(0.0, f64::max);
    verdict(
        8,
        "set arithmetic vs grid oracle",
        disagreements == 0 && support <= 1e-9,
        format!("50 instances, {points} grid points, disagreements {disagreements}, support error {support:.1e}"),
    )
}

fn beta_exactness() -> Verdict {
    let results: Vec<_> = (0..500u64).into_par_iter().map(oracle::beta_instance).collect();
    let mut worst: f64 = 0.0;
    let mut errors = 0;
    let mut interior = 0;
    for r in &results {
        match r {
            Ok((ratio, bisect)) => {
                worst = worst.max((ratio - bisect).abs());
                interior += (*ratio > 0.0 && *ratio < 1.0) as usize;
            }
            Err(_) => errors += 1,
        }
    }
    verdict(
        9,
        "beta ratio test vs bisection",
        worst <= 1e-8 && errors == 0,
        format!("500 instances ({interior} with 0 < β < 1), max difference {worst:.1e}, errors {errors}"),
    )
}

fn determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_robust-oco");
    let config_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("config");
    let tmp = std::env::temp_dir().join(format!("oco-acceptance-{}", std::process::id()));
    let jobs = [
        ("run", "vehicle_optimized.cfg"),
        ("run", "vehicle_explicit.cfg"),
        ("run", "linear.cfg"),
        ("regret-sweep", "sweep.cfg"),
    ];
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for (cmd, cfg) in jobs {
        let dirs = [tmp.join(format!("{cfg}.a")), tmp.join(format!("{cfg}.b"))];
        for d in &dirs {
            let status = Command::new(bin)
                .args([cmd, "--config"])
                .arg(config_dir.join(cfg))
                .arg("--out")
                .arg(d)
                .arg("--quiet")
                .status();
            if !status.is_ok_and(|s| s.success()) {
                mismatched.push(format!("{cfg}: run failed"));
            }
        }
        let mut names: Vec<_> = std::fs::read_dir(&dirs[0])
            .map(|it| it.filter_map(|e| e.ok()).map(|e| e.file_name()).collect())
            .unwrap_or_default();
        names.sort();
        for name in names {
            let a = std::fs::read(dirs[0].join(&name)).ok();
            let b = std::fs::read(dirs[1].join(&name)).ok();
            compared += 1;
            if a.is_none() || a != b {
                mismatched.push(format!("{cfg}/{}", name.to_string_lossy()));
            }
        }
    }
    let _ = std::fs::remove_dir_all(&tmp);
    verdict(
        10,
        "determinism",
        compared > 0 && mismatched.is_empty(),
        format!("{compared} output files compared across 4 bundled configs, mismatches {mismatched:?}"),
    )
}

fn lemma2(f: &Fleet) -> Verdict {
    let mut runs = 0;
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for o in all_runs(f).filter(|o| o.metrics.aborted.is_none()) {
        runs += 1;
        failures += o.report.lemma2_failures.len();
        if let Some(p) = o.report.max_beta_product {
            worst = worst.max(p);
        }
    }
    verdict(
        11,
        "beta product windows",
        failures == 0 && runs > 0,
        format!("{runs} accepted runs, failed windows {failures}, largest product {worst:.6}"),
    )
}

fn main() {
    let fleet = vehicle_fleet();
    let verdicts = [
        constraint_satisfaction(&fleet),
        recursive_feasibility(&fleet),
        tube_invariant(&fleet),
        anchors(&fleet),
        contraction(),
        regret_linearity(),
        mrpi_scalar(),
        set_oracle(),
        beta_exactness(),
        determinism(),
        lemma2(&fleet),
    ];
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    let names: Vec<&str> = verdicts.iter().filter(|v| !v.pass).map(|v| v.name).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", verdicts.len());
    } else {
        println!("acceptance: failed criteria {failed:?} {names:?}");
        std::process::exit(1);
    }
}
