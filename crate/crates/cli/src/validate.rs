//! Assumption checks run before any simulation. Independent checks all run
//! so a report lists every failure, not just the first.

use std::fmt;

use oco_core::controller::Controller;
use oco_core::convexsets::{zonotope_in_polytope, Zonotope};
use oco_core::invariance::{default_epsilon, mrpi_outer, CERTIFICATE_HORIZON};
use oco_core::matlin::{matmul, numeric_rank, power_norm_certificate, Matrix, Vector, RANK_TOL};
use oco_core::plant::{
    build_model, build_tightening, build_w_bar, optimal_steady_state, steady_state_manifold, ModelSpec,
    QuadraticCost,
};
use oco_vehicle::model::{delta_bar, phase_cost, Phase};

use crate::config::{ConfigError, FileConfig, ScenarioKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Reported but does not fail validation.
    Warn,
    /// Not evaluated because a prerequisite failed.
    Skipped,
}

impl Status {
    fn label(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Warn => "warn",
            Status::Skipped => "skipped",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.status.label(), self.name)?;
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn push(&mut self, name: &str, ok: bool, detail: impl Into<String>) -> bool {
        self.0.push(Check {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        });
        ok
    }

    fn warn(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        self.0.push(Check {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Warn },
            detail: detail.into(),
        });
    }

    fn skip(&mut self, names: &[&str]) {
        for n in names {
            self.0.push(Check {
                name: n.to_string(),
                status: Status::Skipped,
                detail: "prerequisite failed".into(),
            });
        }
    }
}

const DOWNSTREAM: [&str; 5] = [
    "tightened constraint stages non-empty",
    "steady-state manifold non-empty with the origin inside",
    "c_g >= ||S_c^+||",
    "step size gamma <= 2 / (alpha_K + l_K)",
    "initialization feasible (Assumption 4)",
];

fn controllability(a_k: &Matrix<f64>, b: &Matrix<f64>, mu: usize) -> Matrix<f64> {
    let (n, m) = b.shape();
    let mut out = Matrix::zeros(n, mu * m);
    let mut block = b.clone();
    for j in (0..mu).rev() {
        out.set_block(0, j * m, &block);
        block = matmul(a_k, &block).expect("square");
    }
    out
}

fn zonotope_ok(z: &Zonotope<f64>) -> bool {
    z.contains_origin_interior() || (z.is_point() && z.center().iter().all(|&v| v == 0.0))
}

/// Every check for the configured plant. `Err` only for config problems.
pub fn run_checks(cfg: &FileConfig) -> Result<Vec<Check>, ConfigError> {
    let spec = cfg.model_spec()?;
    let mut checks = Checks::default();
    let structural = structural_checks(&spec, &mut checks);
    if !structural {
        checks.skip(&DOWNSTREAM);
        return Ok(checks.0);
    }
    let model = match build_model(&spec) {
        Ok(m) => m,
        Err(e) => {
            checks.push("model construction", false, e.to_string());
            checks.skip(&DOWNSTREAM);
            return Ok(checks.0);
        }
    };
    let tables = match build_tightening(&model) {
        Ok(t) => {
            checks.push(DOWNSTREAM[0], true, format!("{} stages", model.mu));
            t
        }
        Err(e) => {
            checks.push(DOWNSTREAM[0], false, e.to_string());
            checks.skip(&DOWNSTREAM[1..]);
            return Ok(checks.0);
        }
    };
    let manifold = match steady_state_manifold(&model, &model.p_rpi, cfg.controller.shrink) {
        Ok(m) => {
            checks.push(DOWNSTREAM[1], true, format!("shrink {}", cfg.controller.shrink));
            m
        }
        Err(e) => {
            checks.push(DOWNSTREAM[1], false, e.to_string());
            checks.skip(&DOWNSTREAM[2..]);
            return Ok(checks.0);
        }
    };

    let (options, costs, x0) = match cfg.scenario {
        ScenarioKind::Linear => {
            let schedule = cfg.costs(model.n(), model.m())?;
            let costs: Vec<QuadraticCost<f64>> = schedule.segments().iter().map(|(_, c)| c.clone()).collect();
            (cfg.controller_options(&model), costs, cfg.x0())
        }
        ScenarioKind::Vehicle => {
            let sc = cfg.scenario_config();
            let setup_opts = {
                let mut o = cfg.controller_options(&model);
                o.c_g = sc.c_g.max(o.c_g);
                o
            };
            let costs = vec![phase_cost(Phase::Cruise, 0.0), phase_cost(Phase::Overtake, 0.0)];
            let x0 = Vector::from_slice(&[0.0, sc.initial_speed - delta_bar()]);
            (setup_opts, costs, Some(x0))
        }
    };

    let min_c_g = model.min_c_g();
    checks.push(DOWNSTREAM[2], options.c_g >= min_c_g, format!("c_g = {}, bound = {min_c_g:.6}", options.c_g));

    for (i, cost) in costs.iter().enumerate() {
        match cost.max_step(&model) {
            Ok(bound) => checks.warn(
                DOWNSTREAM[3],
                options.gamma <= bound,
                format!("cost {i}: gamma = {}, bound = {bound:.6}", options.gamma),
            ),
            Err(e) => {
                checks.push(DOWNSTREAM[3], false, format!("cost {i}: {e}"));
            }
        }
    }

    let init = optimal_steady_state(&manifold, &costs[0], &model).map_err(|e| e.to_string());
    let result = init.and_then(|(theta, eta)| {
        let x0 = x0.unwrap_or_else(|| theta.clone());
        let ctrl = Controller::new(&model, &tables, &manifold, options.clone()).map_err(|e| e.to_string())?;
        ctrl.initialize(&theta, &eta, &x0).map_err(|e| e.to_string())
    });
    match result {
        Ok(_) => checks.push(DOWNSTREAM[4], true, ""),
        Err(e) => checks.push(DOWNSTREAM[4], false, e),
    };
    Ok(checks.0)
}

/// Assumptions 1 and 2, the Schur certificate, controllability and `P ⊆ X`.
fn structural_checks(spec: &ModelSpec<f64>, checks: &mut Checks) -> bool {
    let n = spec.a.rows();
    let shapes = spec.a.is_square()
        && spec.b.rows() == n
        && spec.k.shape() == (spec.b.cols(), n)
        && spec.x_set.dim() == n
        && spec.u_set.dim() == spec.b.cols()
        && spec.w_set.dim() == n
        && spec.v_set.dim() == n;
    if !checks.push("dimensions consistent", shapes, "") {
        return false;
    }
    let mut ok = true;
    ok &= checks.push(
        "X compact with the origin in its interior",
        spec.x_set.is_compact() && spec.x_set.contains_origin_interior(),
        "",
    );
    ok &= checks.push(
        "U compact with the origin in its interior",
        spec.u_set.is_compact() && spec.u_set.contains_origin_interior(),
        "",
    );
    ok &= checks.push("W contains the origin", zonotope_ok(&spec.w_set), "");
    ok &= checks.push("V contains the origin", zonotope_ok(&spec.v_set), "");

    let a_k = spec.a.add(&spec.b.matmul(&spec.k).expect("dims")).expect("dims");
    let schur = matches!(power_norm_certificate(&a_k, CERTIFICATE_HORIZON), Ok(Some(_)));
    ok &= checks.push(
        "A + BK Schur certificate",
        schur,
        if schur { String::new() } else { format!("no k <= {CERTIFICATE_HORIZON} with ||(A+BK)^k|| < 1") },
    );
    let rank = numeric_rank(&controllability(&a_k, &spec.b, spec.mu), RANK_TOL);
    ok &= checks.push(
        "S_c full row rank at horizon mu",
        rank == n,
        format!("rank {rank} of {n}, mu = {}", spec.mu),
    );
    if !schur || !zonotope_ok(&spec.w_set) || !zonotope_ok(&spec.v_set) {
        checks.skip(&["RPI set converged", "P ⊆ X", "K P ⊆ U"]);
        return false;
    }
    let w_bar = match build_w_bar(&spec.a, &spec.w_set, &spec.v_set) {
        Ok(w) => w,
        Err(e) => {
            checks.push("RPI set converged", false, e.to_string());
            return false;
        }
    };
    let eps = spec.rpi_epsilon.unwrap_or_else(|| default_epsilon(&w_bar).max(1e-12));
    match mrpi_outer(&a_k, &w_bar, eps, spec.s_max) {
        Ok(p) => {
            checks.push("RPI set converged", true, format!("s = {}, alpha = {:.3e}", p.s, p.alpha));
            ok &= checks.push("P ⊆ X", zonotope_in_polytope(&p.p, &spec.x_set), "");
            let kp = p.p.linear_image(&spec.k).expect("dims");
            ok &= checks.push("K P ⊆ U", zonotope_in_polytope(&kp, &spec.u_set), "");
        }
        Err(e) => {
            checks.push("RPI set converged", false, e.to_string());
            checks.skip(&["P ⊆ X", "K P ⊆ U"]);
            ok = false;
        }
    }
    ok
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| matches!(c.status, Status::Pass | Status::Warn))
}
