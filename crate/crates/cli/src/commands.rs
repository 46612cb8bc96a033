use std::fmt::Write as _;

use oco_core::oracle::PlantBundle;
use oco_core::simkit::{
    regret_scaling_experiment, run_closed_loop, AffineFit, switching_targets, InitChoice, RunConfig, SimError,
};
use oco_vehicle::{run_scenario_with, VehicleSetup};

use crate::config::{ConfigError, FileConfig, ScenarioKind};
use crate::output::{self, num};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug)]
pub enum CmdError {
    /// Bad configuration, or a plant that cannot be built from it.
    Config(String),
    /// The simulation itself failed.
    Runtime(String),
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Config(e.0)
    }
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => EXIT_CONFIG,
            CmdError::Runtime(_) => EXIT_VIOLATION,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Config(m) | CmdError::Runtime(m) => m,
        }
    }
}

fn io_err(e: std::io::Error) -> CmdError {
    CmdError::Runtime(format!("writing output: {e}"))
}

/// What a command produced: its exit code and the summary line.
#[derive(Clone, Debug)]
pub struct Report {
    pub code: i32,
    pub summary: String,
}

pub fn bundle(cfg: &FileConfig) -> Result<PlantBundle, CmdError> {
    let spec = cfg.model_spec()?;
    PlantBundle::from_spec(&spec, cfg.controller.shrink).map_err(|e| CmdError::Config(format!("model: {e}")))
}

fn run_config(cfg: &FileConfig, b: &PlantBundle, horizon: usize) -> RunConfig<f64> {
    let mut rc = RunConfig::new(cfg.controller_options(&b.model), horizon);
    rc.init = InitChoice::OptimalForFirstCost;
    rc.x0 = cfg.x0();
    rc.abort_on_violation = cfg.controller.abort_on_violation;
    if let Some(m) = cfg.controller.lemma2_margin {
        rc.lemma2_margin = m;
    }
    rc
}

pub fn run(cfg: &FileConfig) -> Result<Report, CmdError> {
    match cfg.scenario {
        ScenarioKind::Linear => run_linear(cfg),
        ScenarioKind::Vehicle => run_vehicle(cfg),
    }
}

fn run_linear(cfg: &FileConfig) -> Result<Report, CmdError> {
    let b = bundle(cfg)?;
    let horizon = cfg.experiment.horizon.expect("checked");
    let costs = cfg.costs(b.model.n(), b.model.m())?;
    let rc = run_config(cfg, &b, horizon);
    let out = run_closed_loop(&b.model, &b.tables, &b.manifold, &rc, &costs, &cfg.policy())
        .map_err(|e| match e {
            SimError::Horizon | SimError::SequenceTooShort { .. } => CmdError::Config(e.to_string()),
            other => CmdError::Runtime(other.to_string()),
        })?;
    output::write(&cfg.out_path(&cfg.output.trace), &output::trace_csv(&out.trace, b.model.n(), b.model.m()))
        .map_err(io_err)?;
    output::write(&cfg.out_path(&cfg.output.ledger), &output::ledger_csv(&out.ledger)).map_err(io_err)?;
    let mut report = out.report.to_text();
    if let Some(reason) = &out.aborted {
        let _ = writeln!(report, "aborted = {reason:?}");
    }
    output::write(&cfg.out_path(&cfg.output.report), &report).map_err(io_err)?;
    let violations = out.report.counts.total();
    let ok = violations == 0 && out.aborted.is_none();
    let summary = format!(
        "run scenario=linear variant={} seed={} steps={} cum_regret={} path_length={} violations={} status={}",
        cfg.controller.variant.name(),
        cfg.disturbance.seed,
        out.trace.len(),
        num(out.ledger.cum_regret),
        num(out.ledger.path_length),
        violations,
        if ok { "ok" } else { "violation" }
    );
    Ok(Report {
        code: if ok { EXIT_OK } else { EXIT_VIOLATION },
        summary,
    })
}

fn run_vehicle(cfg: &FileConfig) -> Result<Report, CmdError> {
    let sc = cfg.scenario_config();
    let setup = VehicleSetup::new(&sc.params).map_err(|e| CmdError::Config(format!("model: {e}")))?;
    let out = run_scenario_with(&setup, &sc).map_err(|e| CmdError::Runtime(e.to_string()))?;
    let (n, m) = (setup.model.n(), setup.model.m());
    output::write(&cfg.out_path(&cfg.output.trace), &output::trace_csv(&out.trace, n, m)).map_err(io_err)?;
    output::write(&cfg.out_path(&cfg.output.ledger), &output::ledger_csv(&out.ledger)).map_err(io_err)?;
    output::write(&cfg.out_path(&cfg.output.vehicle), &output::vehicle_csv(&out.vehicle)).map_err(io_err)?;
    let mx = &out.metrics;
    let opt = |v: Option<f64>| v.map_or("none".to_string(), num);
    let mut report = out.report.to_text();
    let _ = writeln!(report, "min_gap = {}", num(mx.min_gap));
    let _ = writeln!(report, "follow_gap = {}", opt(mx.follow_gap));
    let _ = writeln!(report, "overtake_speed_kmh = {}", opt(mx.overtake_speed_kmh));
    let _ = writeln!(report, "follow_start = {}", opt(mx.follow_start));
    let _ = writeln!(report, "overtake_start = {}", opt(mx.overtake_start));
    let _ = writeln!(report, "constraint_violations = {}", mx.constraint_violations);
    let _ = writeln!(report, "mismatch_violations = {}", mx.mismatch_violations);
    let _ = writeln!(report, "g_fallbacks = {}", mx.g_fallbacks);
    if let Some(a) = &mx.aborted {
        let _ = writeln!(report, "aborted = {a}");
    }
    output::write(&cfg.out_path(&cfg.output.report), &report).map_err(io_err)?;
    let violations = out.report.counts.total() + mx.constraint_violations + mx.mismatch_violations;
    let ok = violations == 0 && mx.aborted.is_none();
    let summary = format!(
        "run scenario=vehicle variant={} seed={} steps={} follow_gap_m={} overtake_speed_kmh={} cum_regret={} violations={} status={}",
        cfg.controller.variant.name(),
        sc.seed,
        out.trace.len(),
        opt(mx.follow_gap),
        opt(mx.overtake_speed_kmh),
        num(out.ledger.cum_regret),
        violations,
        if ok { "ok" } else { "violation" }
    );
    Ok(Report {
        code: if ok { EXIT_OK } else { EXIT_VIOLATION },
        summary,
    })
}

/// Sign checks on both fits plus the optional R² floor.
pub fn fit_passes(fit: &AffineFit, ols: Option<&AffineFit>, min_r_squared: Option<f64>) -> bool {
    fit.nonnegative()
        && ols.is_none_or(AffineFit::slopes_nonnegative)
        && min_r_squared.is_none_or(|m| fit.r_squared >= m)
}

/// Runs the regret design on the current rayon pool.
pub fn regret_sweep(cfg: &FileConfig) -> Result<Report, CmdError> {
    if cfg.scenario != ScenarioKind::Linear {
        return Err(CmdError::Config("field `scenario`: regret-sweep needs scenario = \"linear\"".into()));
    }
    let e = &cfg.experiment;
    if e.path_levels.is_empty() || e.dist_levels.is_empty() || e.seeds.is_empty() {
        return Err(CmdError::Config(
            "field `experiment.path_levels`: path_levels, dist_levels and seeds must be non-empty".into(),
        ));
    }
    let b = bundle(cfg)?;
    let horizon = e.horizon.expect("checked");
    let base = cfg.costs(b.model.n(), b.model.m())?.at(0).clone();
    let rc = run_config(cfg, &b, horizon);
    let levels: Vec<f64> = e.path_levels.iter().map(|&k| k as f64).collect();
    let amplitude = e.amplitude;
    let table = regret_scaling_experiment(
        &b.model,
        &b.tables,
        &b.manifold,
        &rc,
        |level, seed| switching_targets(&base, amplitude, level as usize, seed, horizon),
        &levels,
        &e.dist_levels,
        &e.seeds,
    )
    .map_err(|e| CmdError::Runtime(e.to_string()))?;
    output::write(&cfg.out_path(&cfg.output.sweep), &output::sweep_csv(&table)).map_err(io_err)?;

    let violations: usize = table.rows.iter().map(|r| r.violations).sum();
    let single_cell = e.path_levels.len() * e.dist_levels.len() == 1;
    let mut fit_text = String::new();
    let mut ok = violations == 0;
    let summary;
    if single_cell {
        fit_text.push_str("fit = skipped (single-cell design)\n");
        summary = format!("regret-sweep rows={} fit=skipped violations={violations}", table.rows.len());
    } else {
        let f = &table.fit;
        let _ = writeln!(fit_text, "c0 = {}", num(f.c0));
        let _ = writeln!(fit_text, "c_path = {}", num(f.c_path));
        let _ = writeln!(fit_text, "c_noise = {}", num(f.c_noise));
        let _ = writeln!(fit_text, "r_squared = {}", num(f.r_squared));
        let _ = writeln!(fit_text, "nonnegative = {}", f.nonnegative());
        // the constrained fit is nonnegative by construction; the
        // unconstrained slopes are the falsifiable part
        let slopes_ok = table.ols.as_ref().is_none_or(AffineFit::slopes_nonnegative);
        match &table.ols {
            Some(o) => {
                let _ = writeln!(fit_text, "ols_c0 = {}", num(o.c0));
                let _ = writeln!(fit_text, "ols_c_path = {}", num(o.c_path));
                let _ = writeln!(fit_text, "ols_c_noise = {}", num(o.c_noise));
                let _ = writeln!(fit_text, "ols_r_squared = {}", num(o.r_squared));
            }
            None => fit_text.push_str("ols = unavailable (rank-deficient design)\n"),
        }
        let _ = writeln!(fit_text, "slopes_nonnegative = {slopes_ok}");
        ok &= fit_passes(f, table.ols.as_ref(), e.min_r_squared);
        summary = format!(
            "regret-sweep rows={} c0={} c_path={} c_noise={} r_squared={} nonnegative={} violations={violations} status={}",
            table.rows.len(),
            num(f.c0),
            num(f.c_path),
            num(f.c_noise),
            num(f.r_squared),
            f.nonnegative() && slopes_ok,
            if ok { "ok" } else { "fail" }
        );
    }
    let _ = writeln!(fit_text, "violations = {violations}");
    output::write(&cfg.out_path(&cfg.output.fit), &fit_text).map_err(io_err)?;
    Ok(Report {
        code: if ok { EXIT_OK } else { EXIT_VIOLATION },
        summary,
    })
}
