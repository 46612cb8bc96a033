//! Closed-loop simulation, regret accounting and runtime invariant checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::controller::{
    Controller, ControllerError, ControllerOptions, ControllerState, RolloutObjective, StepDiagnostics,
};
use crate::convexsets::{HPolytope, Halfspaces, Zonotope, MEMBERSHIP_TOL};
use crate::matlin::{solve_spd, Matrix, Vector};
use crate::plant::{
    optimal_steady_state, ModelError, PlantModel, QuadraticCost, SteadyStateManifold, TighteningTables,
};
use crate::scalar::Scalar;

/// Slack added to the outer tail set before a tube offset counts as a violation.
pub const TUBE_TOL: f64 = 1e-6;
pub const LEMMA2_GAP: f64 = 1e-6;
pub const LEMMA2_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("horizon must be at least 1")]
    Horizon,
    #[error("disturbance sequence has {have} entries, horizon needs {need}")]
    SequenceTooShort { have: usize, need: usize },
    #[error("sampled {which} at step {t} is outside its set")]
    SampleOutside { which: &'static str, t: usize },
    #[error("initial state has dimension {0}, model has {1}")]
    InitialState(usize, usize),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DisturbanceKind {
    Zero,
    UniformBox,
    /// A random vertex of the generator box each step.
    WorstCorner,
    /// Explicit per-step values.
    Sequence,
}

#[derive(Clone, Debug)]
pub struct DisturbancePolicy<S> {
    pub kind: DisturbanceKind,
    pub seed: u64,
    /// Shrinks every sample towards the set center; in `[0, 1]`.
    pub scale: S,
    pub w_sequence: Vec<Vector<S>>,
    pub v_sequence: Vec<Vector<S>>,
}

impl<S: Scalar> DisturbancePolicy<S> {
    pub fn zero() -> Self {
        Self::random(DisturbanceKind::Zero, 0, S::zero())
    }

    pub fn random(kind: DisturbanceKind, seed: u64, scale: S) -> Self {
        DisturbancePolicy {
            kind,
            seed,
            scale,
            w_sequence: Vec::new(),
            v_sequence: Vec::new(),
        }
    }

    pub fn sequence(w: Vec<Vector<S>>, v: Vec<Vector<S>>) -> Self {
        DisturbancePolicy {
            kind: DisturbanceKind::Sequence,
            seed: 0,
            scale: S::one(),
            w_sequence: w,
            v_sequence: v,
        }
    }
}

/// Draws `w_t` and `v_t` from independent streams and checks membership.
pub struct DisturbanceSampler<S> {
    policy: DisturbancePolicy<S>,
    w_rng: ChaCha8Rng,
    v_rng: ChaCha8Rng,
}

impl<S: Scalar> DisturbanceSampler<S> {
    pub fn new(policy: DisturbancePolicy<S>) -> Self {
        let mut w_rng = ChaCha8Rng::seed_from_u64(policy.seed);
        w_rng.set_stream(1);
        let mut v_rng = ChaCha8Rng::seed_from_u64(policy.seed);
        v_rng.set_stream(2);
        DisturbanceSampler { policy, w_rng, v_rng }
    }

    fn draw(kind: DisturbanceKind, scale: S, set: &Zonotope<S>, rng: &mut ChaCha8Rng) -> Vector<S> {
        let q = set.num_generators();
        let coeffs: Vec<S> = match kind {
            DisturbanceKind::Zero | DisturbanceKind::Sequence => return Vector::zeros(set.dim()),
            DisturbanceKind::UniformBox => (0..q).map(|_| S::lit(rng.gen_range(-1.0..=1.0))).collect(),
            DisturbanceKind::WorstCorner => (0..q)
                .map(|_| if rng.gen::<bool>() { S::one() } else { -S::one() })
                .collect(),
        };
        let offset = set.generators().mul_vec(&coeffs).expect("dims").scaled(scale);
        set.center().add(&offset)
    }

    pub fn sample_w(&mut self, t: usize, set: &Zonotope<S>) -> Result<Vector<S>, SimError> {
        let w = match self.policy.kind {
            DisturbanceKind::Sequence => self.policy.w_sequence[t].clone(),
            kind => Self::draw(kind, self.policy.scale, set, &mut self.w_rng),
        };
        check_sample(set, &w, "w", t)?;
        Ok(w)
    }

    pub fn sample_v(&mut self, t: usize, set: &Zonotope<S>) -> Result<Vector<S>, SimError> {
        let v = match self.policy.kind {
            DisturbanceKind::Sequence => self.policy.v_sequence[t].clone(),
            kind => Self::draw(kind, self.policy.scale, set, &mut self.v_rng),
        };
        check_sample(set, &v, "v", t)?;
        Ok(v)
    }
}

fn check_sample<S: Scalar>(set: &Zonotope<S>, x: &[S], which: &'static str, t: usize) -> Result<(), SimError> {
    // boxes are the common case and need no H-representation
    let inside = if set.is_point() {
        x.iter().zip(set.center().iter()).all(|(&a, &b)| a == b)
    } else {
        let (lo, hi) = set.interval_hull();
        let tol = S::lit(MEMBERSHIP_TOL);
        let in_hull = x.iter().zip(lo.iter().zip(hi.iter())).all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol);
        in_hull && (set.num_generators() <= set.dim() && is_axis_box(set) || set.contains(x, tol))
    };
    if inside {
        Ok(())
    } else {
        Err(SimError::SampleOutside { which, t })
    }
}

fn is_axis_box<S: Scalar>(z: &Zonotope<S>) -> bool {
    let g = z.generators();
    (0..g.cols()).all(|j| (0..g.rows()).filter(|&i| g[(i, j)] != S::zero()).count() <= 1)
}

/// Piecewise-constant cost sequence `L_t`.
#[derive(Clone, Debug)]
pub struct CostSchedule<S> {
    /// `(first step, cost)`, sorted, first entry at step 0.
    segments: Vec<(usize, QuadraticCost<S>)>,
}

impl<S: Scalar> CostSchedule<S> {
    pub fn constant(cost: QuadraticCost<S>) -> Self {
        CostSchedule {
            segments: vec![(0, cost)],
        }
    }

    /// Panics unless the first segment starts at 0 and starts increase.
    pub fn piecewise(segments: Vec<(usize, QuadraticCost<S>)>) -> Self {
        assert!(!segments.is_empty() && segments[0].0 == 0, "first segment must start at 0");
        assert!(segments.windows(2).all(|w| w[0].0 < w[1].0), "segment starts must increase");
        CostSchedule { segments }
    }

    pub fn at(&self, t: usize) -> &QuadraticCost<S> {
        let idx = self.segments.partition_point(|(start, _)| *start <= t);
        &self.segments[idx - 1].1
    }

    pub fn segments(&self) -> &[(usize, QuadraticCost<S>)] {
        &self.segments
    }
}

/// State reference that jumps `switches` times, at evenly spaced steps, to
/// `base.ref_x + amplitude * r_k` with `r_k` uniform in the unit box. With
/// no switches the cost is `base` throughout and the path length is zero.
pub fn switching_targets<S: Scalar>(
    base: &QuadraticCost<S>,
    amplitude: S,
    switches: usize,
    seed: u64,
    horizon: usize,
) -> CostSchedule<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(5);
    let period = (horizon / (switches + 1)).max(1);
    let mut segments = vec![(0, base.clone())];
    for k in 1..=switches {
        let start = k * period;
        if start >= horizon {
            break;
        }
        let mut cost = base.clone();
        for r in cost.ref_x.iter_mut() {
            *r += amplitude * S::lit(rng.gen_range(-1.0..=1.0));
        }
        segments.push((start, cost));
    }
    CostSchedule::piecewise(segments)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerRow<S> {
    pub cost: S,
    pub benchmark_cost: S,
    pub theta: Vector<S>,
    pub eta: Vector<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegretLedger<S> {
    pub per_step: Vec<LedgerRow<S>>,
    pub cum_regret: S,
    pub path_length: S,
    pub w_energy: S,
    pub v_energy: S,
}

impl<S: Scalar> Default for RegretLedger<S> {
    fn default() -> Self {
        RegretLedger {
            per_step: Vec::new(),
            cum_regret: S::zero(),
            path_length: S::zero(),
            w_energy: S::zero(),
            v_energy: S::zero(),
        }
    }
}

impl<S: Scalar> RegretLedger<S> {
    pub fn record(&mut self, row: LedgerRow<S>) {
        if let Some(prev) = self.per_step.last() {
            let dt = row.theta.sub(&prev.theta);
            let de = row.eta.sub(&prev.eta);
            self.path_length += (dt.dot(&dt) + de.dot(&de)).sqrt();
        }
        self.cum_regret += row.cost - row.benchmark_cost;
        self.per_step.push(row);
    }

    pub fn add_noise(&mut self, w: &[S], v: &[S]) {
        self.w_energy += crate::matlin::norm(w);
        self.v_energy += crate::matlin::norm(v);
    }

    /// `sum(cost - benchmark)` recomputed from the rows.
    pub fn recomputed_regret(&self) -> S {
        self.per_step.iter().map(|r| r.cost - r.benchmark_cost).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TubeStatus {
    #[default]
    NotApplicable,
    Inside,
    /// Outside the inner approximation, inside the outer one.
    Marginal,
    Violation,
}

impl TubeStatus {
    pub fn label(self) -> &'static str {
        match self {
            TubeStatus::NotApplicable => "na",
            TubeStatus::Inside => "ok",
            TubeStatus::Marginal => "marginal",
            TubeStatus::Violation => "violation",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepFlags {
    pub state_ok: bool,
    pub input_ok: bool,
    pub candidate_ok: bool,
    pub plan_ok: bool,
    pub steady_ok: bool,
    pub tube: TubeStatus,
    pub g_cap_ok: bool,
}

impl StepFlags {
    pub fn violations(&self) -> usize {
        [
            self.state_ok,
            self.input_ok,
            self.candidate_ok,
            self.plan_ok,
            self.steady_ok,
            self.g_cap_ok,
            self.tube != TubeStatus::Violation,
        ]
        .iter()
        .filter(|ok| !**ok)
        .count()
    }
}

#[derive(Clone, Debug)]
pub struct TraceRecord<S> {
    pub t: usize,
    pub x_true: Vector<S>,
    pub x_meas: Vector<S>,
    pub u: Vector<S>,
    pub w: Vector<S>,
    pub v: Vector<S>,
    pub diagnostics: StepDiagnostics<S>,
    pub cost: S,
    pub benchmark_cost: S,
    pub cum_regret: S,
    pub flags: StepFlags,
}

/// Membership oracles for the sets the monitors use, built once per run.
pub struct Monitor<S> {
    x_set: HPolytope<S>,
    u_set: HPolytope<S>,
    tail_outer: SetOracle<S>,
    tail_inner: SetOracle<S>,
    c_g: S,
    tol: S,
}

enum SetOracle<S> {
    Poly(HPolytope<S>),
    Zono(Zonotope<S>),
}

impl<S: Scalar> SetOracle<S> {
    fn new(z: &Zonotope<S>) -> Self {
        match z.to_hpolytope() {
            Some(h) => SetOracle::Poly(h),
            None => SetOracle::Zono(z.clone()),
        }
    }

    fn contains(&self, x: &[S], tol: S) -> bool {
        match self {
            SetOracle::Poly(h) => h.max_violation(x) <= tol,
            SetOracle::Zono(z) => z.contains(x, tol),
        }
    }
}

impl<S: Scalar> Monitor<S> {
    pub fn new(model: &PlantModel<S>, c_g: S) -> Self {
        Monitor {
            x_set: model.x_set.clone(),
            u_set: model.u_set.clone(),
            tail_outer: SetOracle::new(&model.p_tail),
            tail_inner: SetOracle::new(&model.p_tail_inner),
            c_g,
            tol: S::lit(MEMBERSHIP_TOL),
        }
    }

    /// Classifies `x̂^μ_{t+1} - x̂^s_t` against the tail set approximations.
    pub fn tube(&self, offset: &[S]) -> TubeStatus {
        let tol = S::lit(TUBE_TOL);
        if self.tail_inner.contains(offset, tol) {
            TubeStatus::Inside
        } else if self.tail_outer.contains(offset, tol) {
            TubeStatus::Marginal
        } else {
            TubeStatus::Violation
        }
    }

    /// Per-step checks; `prev_steady` is `x̂^s_{t-1}` when `t >= 1`.
    pub fn flags(
        &self,
        x_true: &[S],
        u: &[S],
        diag: &StepDiagnostics<S>,
        prev_steady: Option<&[S]>,
    ) -> StepFlags {
        StepFlags {
            state_ok: self.x_set.contains(x_true, self.tol),
            input_ok: self.u_set.contains(u, self.tol),
            candidate_ok: diag.candidate_feasible,
            plan_ok: diag.plan_feasible,
            steady_ok: diag.steady_in_sbar,
            tube: match prev_steady {
                Some(s) => self.tube(&diag.pred_state.sub(s)),
                None => TubeStatus::NotApplicable,
            },
            g_cap_ok: diag.g_norm <= self.c_g * diag.target_gap + S::lit(1e-8),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ViolationCounts {
    pub state: usize,
    pub input: usize,
    pub candidate: usize,
    pub plan: usize,
    pub steady: usize,
    pub g_cap: usize,
    pub tube_violation: usize,
    pub tube_marginal: usize,
    pub tube_checked: usize,
    pub lemma2: usize,
}

impl ViolationCounts {
    /// Everything except marginal tube hits.
    pub fn total(&self) -> usize {
        self.state + self.input + self.candidate + self.plan + self.steady + self.g_cap + self.tube_violation + self.lemma2
    }
}

#[derive(Clone, Debug)]
pub struct InvariantReport<S> {
    pub per_step: Vec<StepFlags>,
    /// Steps whose `(mu + 1)`-window failed the product test.
    pub lemma2_failures: Vec<usize>,
    pub counts: ViolationCounts,
    /// Largest windowed product over windows with a nonzero target gap.
    pub max_beta_product: Option<S>,
    pub steps: usize,
}

impl<S: Scalar> InvariantReport<S> {
    pub fn passed(&self) -> bool {
        self.counts.total() == 0
    }

    /// Key/value text, one entry per line.
    pub fn to_text(&self) -> String {
        let c = &self.counts;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("steps", self.steps.to_string());
        line("state_violations", c.state.to_string());
        line("input_violations", c.input.to_string());
        line("candidate_infeasible", c.candidate.to_string());
        line("plan_infeasible", c.plan.to_string());
        line("steady_outside", c.steady.to_string());
        line("g_cap_violations", c.g_cap.to_string());
        line("tube_checked", c.tube_checked.to_string());
        line("tube_marginal", c.tube_marginal.to_string());
        line("tube_violations", c.tube_violation.to_string());
        line("lemma2_violations", c.lemma2.to_string());
        line(
            "max_beta_product",
            self.max_beta_product.map_or("none".into(), |b| b.to_string()),
        );
        line("total_violations", c.total().to_string());
        out
    }
}

/// Recomputes every check from the trace alone.
pub fn invariant_report<S: Scalar>(
    trace: &[TraceRecord<S>],
    model: &PlantModel<S>,
    c_g: S,
    lemma2_margin: S,
) -> InvariantReport<S> {
    let monitor = Monitor::new(model, c_g);
    let mut counts = ViolationCounts::default();
    let mut per_step = Vec::with_capacity(trace.len());
    for (i, rec) in trace.iter().enumerate() {
        let prev = if i > 0 {
            Some(trace[i - 1].diagnostics.steady_state.as_slice())
        } else {
            None
        };
        let f = monitor.flags(&rec.x_true, &rec.u, &rec.diagnostics, prev);
        counts.state += usize::from(!f.state_ok);
        counts.input += usize::from(!f.input_ok);
        counts.candidate += usize::from(!f.candidate_ok);
        counts.plan += usize::from(!f.plan_ok);
        counts.steady += usize::from(!f.steady_ok);
        counts.g_cap += usize::from(!f.g_cap_ok);
        match f.tube {
            TubeStatus::NotApplicable => {}
            TubeStatus::Inside => counts.tube_checked += 1,
            TubeStatus::Marginal => {
                counts.tube_checked += 1;
                counts.tube_marginal += 1;
            }
            TubeStatus::Violation => {
                counts.tube_checked += 1;
                counts.tube_violation += 1;
            }
        }
        per_step.push(f);
    }
    let betas: Vec<S> = trace.iter().map(|r| r.diagnostics.beta).collect();
    let gaps: Vec<S> = trace.iter().map(|r| r.diagnostics.target_gap).collect();
    let (lemma2_failures, max_beta_product) = beta_windows(&betas, &gaps, model.mu, lemma2_margin);
    counts.lemma2 = lemma2_failures.len();
    InvariantReport {
        per_step,
        lemma2_failures,
        counts,
        max_beta_product,
        steps: trace.len(),
    }
}

/// Window products `prod_{k=0}^{mu} (1 - β_{t+k})` over windows in which
/// some target gap exceeds [`LEMMA2_GAP`]; a window fails when its product
/// exceeds `1 - margin`.
pub fn beta_windows<S: Scalar>(betas: &[S], gaps: &[S], mu: usize, margin: S) -> (Vec<usize>, Option<S>) {
    let width = mu + 1;
    let mut failures = Vec::new();
    let mut worst: Option<S> = None;
    if betas.len() < width {
        return (failures, worst);
    }
    for start in 0..=betas.len() - width {
        let window = start..start + width;
        if !gaps[window.clone()].iter().any(|&g| g > S::lit(LEMMA2_GAP)) {
            continue;
        }
        let product = betas[window].iter().fold(S::one(), |acc, &b| acc * (S::one() - b));
        worst = Some(worst.map_or(product, |w| w.max(product)));
        if product > S::one() - margin {
            failures.push(start);
        }
    }
    (failures, worst)
}

/// How the controller's initial steady-state estimate is chosen.
#[derive(Clone, Debug)]
pub enum InitChoice<S> {
    /// The benchmark optimum of `L_0`.
    OptimalForFirstCost,
    Given { theta: Vector<S>, eta: Vector<S> },
}

#[derive(Clone, Debug)]
pub struct RunConfig<S> {
    pub options: ControllerOptions<S>,
    pub init: InitChoice<S>,
    /// True initial state; `None` starts at the initial steady-state estimate.
    pub x0: Option<Vector<S>>,
    pub horizon: usize,
    pub abort_on_violation: bool,
    pub lemma2_margin: S,
    /// Used by the optimized variant; `None` tracks with the previous cost's weights.
    pub objective: Option<RolloutObjective<S>>,
}

impl<S: Scalar> RunConfig<S> {
    pub fn new(options: ControllerOptions<S>, horizon: usize) -> Self {
        RunConfig {
            options,
            init: InitChoice::OptimalForFirstCost,
            x0: None,
            horizon,
            abort_on_violation: false,
            lemma2_margin: S::lit(LEMMA2_MARGIN),
            objective: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AbortReason {
    Controller(ControllerError),
    Invariant { t: usize },
    Benchmark(ModelError),
    Sample(SimError),
}

#[derive(Clone, Debug)]
pub struct SimOutcome<S> {
    pub trace: Vec<TraceRecord<S>>,
    pub ledger: RegretLedger<S>,
    pub report: InvariantReport<S>,
    pub aborted: Option<AbortReason>,
    pub final_state: Option<ControllerState<S>>,
}

/// Simulates `x+ = A x + B u + w`, `x̃ = x + v` under the controller. The cost
/// `L_t` is revealed after `u_t` is applied, so step `t` only sees `L_{t-1}`.
pub fn run_closed_loop<S: Scalar>(
    model: &PlantModel<S>,
    tables: &TighteningTables<S>,
    manifold: &SteadyStateManifold<S>,
    config: &RunConfig<S>,
    costs: &CostSchedule<S>,
    policy: &DisturbancePolicy<S>,
) -> Result<SimOutcome<S>, SimError> {
    let horizon = config.horizon;
    if horizon == 0 {
        return Err(SimError::Horizon);
    }
    if policy.kind == DisturbanceKind::Sequence {
        let have = policy.w_sequence.len().min(policy.v_sequence.len());
        if have < horizon {
            return Err(SimError::SequenceTooShort { have, need: horizon });
        }
    }
    let ctrl = Controller::new(model, tables, manifold, config.options.clone())?;
    let (theta0, eta0) = match &config.init {
        InitChoice::OptimalForFirstCost => optimal_steady_state(manifold, costs.at(0), model)?,
        InitChoice::Given { theta, eta } => (theta.clone(), eta.clone()),
    };
    let mut x = config.x0.clone().unwrap_or_else(|| theta0.clone());
    if x.dim() != model.n() {
        return Err(SimError::InitialState(x.dim(), model.n()));
    }
    let monitor = Monitor::new(model, config.options.c_g);
    let mut sampler = DisturbanceSampler::new(policy.clone());
    let mut ledger = RegretLedger::default();
    let mut trace: Vec<TraceRecord<S>> = Vec::with_capacity(horizon);
    let mut state: Option<ControllerState<S>> = None;
    let mut aborted = None;

    for t in 0..horizon {
        let v = match sampler.sample_v(t, &model.v_set) {
            Ok(v) => v,
            Err(e) => {
                aborted = Some(AbortReason::Sample(e));
                break;
            }
        };
        let x_meas = x.add(&v);
        let outcome = match &state {
            None => ctrl.initialize(&theta0, &eta0, &x_meas),
            Some(s) => ctrl.step(s, &x_meas, costs.at(t - 1), config.objective.as_ref()),
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) if t == 0 => return Err(e.into()),
            Err(e) => {
                aborted = Some(AbortReason::Controller(e));
                break;
            }
        };
        let cost_t = costs.at(t);
        let (theta, eta) = match optimal_steady_state(manifold, cost_t, model) {
            Ok(z) => z,
            Err(e) => {
                aborted = Some(AbortReason::Benchmark(e));
                break;
            }
        };
        let applied_bench = model.k.mul_vec(&theta).expect("dims").add(&eta);
        let cost = cost_t.eval(&x, &outcome.u);
        let benchmark_cost = cost_t.eval(&theta, &applied_bench);
        ledger.record(LedgerRow {
            cost,
            benchmark_cost,
            theta,
            eta,
        });
        let w = match sampler.sample_w(t, &model.w_set) {
            Ok(w) => w,
            Err(e) => {
                aborted = Some(AbortReason::Sample(e));
                break;
            }
        };
        ledger.add_noise(&w, &v);
        let prev_steady = trace.last().map(|r| r.diagnostics.steady_state.as_slice());
        let flags = monitor.flags(&x, &outcome.u, &outcome.diagnostics, prev_steady);
        let x_next = model
            .a
            .mul_vec(&x)
            .expect("dims")
            .add(&model.b.mul_vec(&outcome.u).expect("dims"))
            .add(&w);
        trace.push(TraceRecord {
            t,
            x_true: x,
            x_meas,
            u: outcome.u,
            w,
            v,
            diagnostics: outcome.diagnostics,
            cost,
            benchmark_cost,
            cum_regret: ledger.cum_regret,
            flags,
        });
        state = Some(outcome.state);
        x = x_next;
        if config.abort_on_violation && flags.violations() > 0 {
            aborted = Some(AbortReason::Invariant { t });
            break;
        }
    }
    let report = invariant_report(&trace, model, config.options.c_g, config.lemma2_margin);
    Ok(SimOutcome {
        trace,
        ledger,
        report,
        aborted,
        final_state: state,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegretRow<S> {
    pub path_level: S,
    pub dist_level: S,
    pub seed: u64,
    pub path_length: S,
    pub w_energy: S,
    pub v_energy: S,
    pub regret: S,
    pub violations: usize,
}

/// `regret ≈ c0 + c_path * path_length + c_noise * (w_energy + v_energy)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineFit {
    pub c0: f64,
    pub c_path: f64,
    pub c_noise: f64,
    pub r_squared: f64,
}

impl AffineFit {
    pub fn nonnegative(&self) -> bool {
        self.c0 >= 0.0 && self.c_path >= 0.0 && self.c_noise >= 0.0
    }

    /// Regret does not decrease with path length or noise energy.
    pub fn slopes_nonnegative(&self) -> bool {
        self.c_path >= 0.0 && self.c_noise >= 0.0
    }

    pub fn predict(&self, path_length: f64, noise: f64) -> f64 {
        self.c0 + self.c_path * path_length + self.c_noise * noise
    }
}

/// Least squares with nonnegative coefficients, by enumerating which
/// coefficients are pinned to zero (three unknowns, eight subsets).
pub fn fit_affine_nonnegative(rows: &[(f64, f64, f64)]) -> AffineFit {
    let features = |r: &(f64, f64, f64)| [1.0, r.0, r.1];
    let mut best: Option<(f64, [f64; 3])> = None;
    for mask in 0u8..8 {
        let free: Vec<usize> = (0..3).filter(|i| mask & (1 << i) != 0).collect();
        let mut coef = [0.0; 3];
        if !free.is_empty() {
            let k = free.len();
            let mut gram = Matrix::<f64>::zeros(k, k);
            let mut rhs = vec![0.0; k];
            for r in rows {
                let f = features(r);
                for (a, &i) in free.iter().enumerate() {
                    rhs[a] += f[i] * r.2;
                    for (b, &j) in free.iter().enumerate() {
                        gram[(a, b)] += f[i] * f[j];
                    }
                }
            }
            for a in 0..k {
                gram[(a, a)] += 1e-12;
            }
            let Ok(sol) = solve_spd(&gram, &rhs) else {
                continue;
            };
            if sol.iter().any(|&c| c < 0.0) {
                continue;
            }
            for (a, &i) in free.iter().enumerate() {
                coef[i] = sol[a];
            }
        }
        let sse: f64 = rows
            .iter()
            .map(|r| {
                let f = features(r);
                let e = r.2 - (coef[0] * f[0] + coef[1] * f[1] + coef[2] * f[2]);
                e * e
            })
            .sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, coef));
        }
    }
    let (sse, coef) = best.expect("the all-zero model is always admissible");
    let mean = rows.iter().map(|r| r.2).sum::<f64>() / rows.len().max(1) as f64;
    let sst: f64 = rows.iter().map(|r| (r.2 - mean).powi(2)).sum();
    let r_squared = if sst <= 1e-18 {
        if sse <= 1e-12 { 1.0 } else { 0.0 }
    } else {
        1.0 - sse / sst
    };
    AffineFit {
        c0: coef[0],
        c_path: coef[1],
        c_noise: coef[2],
        r_squared,
    }
}

/// Ordinary least squares for the same affine model, no sign constraints.
/// `None` when the design is rank deficient.
pub fn fit_affine_unconstrained(rows: &[(f64, f64, f64)]) -> Option<AffineFit> {
    let mut gram = Matrix::<f64>::zeros(3, 3);
    let mut rhs = [0.0; 3];
    for r in rows {
        let f = [1.0, r.0, r.1];
        for a in 0..3 {
            rhs[a] += f[a] * r.2;
            for b in 0..3 {
                gram[(a, b)] += f[a] * f[b];
            }
        }
    }
    let coef = solve_spd(&gram, &rhs).ok()?;
    let mean = rows.iter().map(|r| r.2).sum::<f64>() / rows.len().max(1) as f64;
    let (mut sse, mut sst) = (0.0, 0.0);
    for r in rows {
        let e = r.2 - (coef[0] + coef[1] * r.0 + coef[2] * r.1);
        sse += e * e;
        sst += (r.2 - mean).powi(2);
    }
    Some(AffineFit {
        c0: coef[0],
        c_path: coef[1],
        c_noise: coef[2],
        r_squared: if sst > 1e-18 { 1.0 - sse / sst } else { 1.0 },
    })
}

#[derive(Clone, Debug)]
pub struct RegretTable<S> {
    pub rows: Vec<RegretRow<S>>,
    /// Nonnegative least-squares fit.
    pub fit: AffineFit,
    /// Unconstrained fit of the same model, when the design allows one.
    pub ols: Option<AffineFit>,
}

/// Runs every `(path level, disturbance level, seed)` cell and fits regret
/// against path length and total noise energy. Cells run in parallel on the
/// current rayon pool; row order is deterministic.
#[allow(clippy::too_many_arguments)]
pub fn regret_scaling_experiment<S, F>(
    model: &PlantModel<S>,
    tables: &TighteningTables<S>,
    manifold: &SteadyStateManifold<S>,
    config: &RunConfig<S>,
    cost_path: F,
    path_levels: &[S],
    dist_levels: &[S],
    seeds: &[u64],
) -> Result<RegretTable<S>, SimError>
where
    S: Scalar + Send + Sync,
    F: Fn(S, u64) -> CostSchedule<S> + Sync,
{
    let mut cells = Vec::new();
    for &p in path_levels {
        for &d in dist_levels {
            for &seed in seeds {
                cells.push((p, d, seed));
            }
        }
    }
    let rows: Vec<Result<RegretRow<S>, SimError>> = cells
        .par_iter()
        .map(|&(p, d, seed)| {
            let costs = cost_path(p, seed);
            let kind = if d == S::zero() {
                DisturbanceKind::Zero
            } else {
                DisturbanceKind::UniformBox
            };
            let policy = DisturbancePolicy::random(kind, seed, d);
            let out = run_closed_loop(model, tables, manifold, config, &costs, &policy)?;
            if let Some(reason) = out.aborted {
                return Err(match reason {
                    AbortReason::Controller(e) => SimError::Controller(e),
                    AbortReason::Benchmark(e) => SimError::Model(e),
                    AbortReason::Sample(e) => e,
                    AbortReason::Invariant { t } => SimError::Controller(ControllerError::CandidateInfeasible {
                        t,
                        violation: f64::NAN,
                    }),
                });
            }
            Ok(RegretRow {
                path_level: p,
                dist_level: d,
                seed,
                path_length: out.ledger.path_length,
                w_energy: out.ledger.w_energy,
                v_energy: out.ledger.v_energy,
                regret: out.ledger.cum_regret,
                violations: out.report.counts.total(),
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let data: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| {
            (
                r.path_length.as_f64(),
                (r.w_energy + r.v_energy).as_f64(),
                r.regret.as_f64(),
            )
        })
        .collect();
    let fit = fit_affine_nonnegative(&data);
    let ols = fit_affine_unconstrained(&data);
    Ok(RegretTable { rows, fit, ols })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{build_model, build_tightening, steady_state_manifold, ModelSpec};

    fn scalar_plant(w: f64) -> (PlantModel<f64>, TighteningTables<f64>, SteadyStateManifold<f64>) {
        let wz = if w == 0.0 { Zonotope::origin(1) } else { Zonotope::symmetric_box(&[w]) };
        let spec = ModelSpec::new(
            Matrix::from_diag(&[1.0]),
            Matrix::from_diag(&[1.0]),
            Matrix::from_diag(&[-0.5]),
            3,
            HPolytope::from_box(&[-2.0], &[2.0]).unwrap(),
            HPolytope::from_box(&[-1.0], &[1.0]).unwrap(),
            wz,
            Zonotope::origin(1),
        );
        let model = build_model(&spec).unwrap();
        let tables = build_tightening(&model).unwrap();
        let manifold = steady_state_manifold(&model, &model.p_rpi, 0.99).unwrap();
        (model, tables, manifold)
    }

    #[test]
    fn zero_noise_optimal_start_has_no_regret() {
        let (model, tables, manifold) = scalar_plant(0.0);
        let cost = QuadraticCost::diagonal(&[1.0], &[1.0], &[0.6], &[0.0]).unwrap();
        let cfg = RunConfig::new(ControllerOptions::defaults(&model, 0.3), 40);
        let out = run_closed_loop(&model, &tables, &manifold, &cfg, &CostSchedule::constant(cost), &DisturbancePolicy::zero()).unwrap();
        assert!(out.aborted.is_none());
        assert!(out.ledger.cum_regret.abs() < 1e-9);
        assert!(out.report.passed());
        assert_eq!(out.ledger.path_length, 0.0);
    }

    #[test]
    fn cost_switch_regret_decays() {
        let (model, tables, manifold) = scalar_plant(0.0);
        let a = QuadraticCost::diagonal(&[1.0], &[1.0], &[0.6], &[0.0]).unwrap();
        let b = QuadraticCost::diagonal(&[1.0], &[1.0], &[-0.8], &[0.0]).unwrap();
        let costs = CostSchedule::piecewise(vec![(0, a), (10, b)]);
        let cfg = RunConfig::new(ControllerOptions::defaults(&model, 0.3), 120);
        let out = run_closed_loop(&model, &tables, &manifold, &cfg, &costs, &DisturbancePolicy::zero()).unwrap();
        assert!(out.report.passed(), "{}", out.report.to_text());
        let tail = &out.ledger.per_step[100..];
        assert!(tail.iter().all(|r| (r.cost - r.benchmark_cost).abs() < 1e-8));
        assert!(out.ledger.path_length > 0.0);
        assert!((out.ledger.cum_regret - out.ledger.recomputed_regret()).abs() < 1e-9);
    }

    #[test]
    fn noisy_run_is_deterministic_and_safe() {
        let (model, tables, manifold) = scalar_plant(0.1);
        let cost = QuadraticCost::diagonal(&[1.0], &[1.0], &[1.5], &[0.0]).unwrap();
        let cfg = RunConfig::new(ControllerOptions::defaults(&model, 0.3), 200);
        let policy = DisturbancePolicy::random(DisturbanceKind::UniformBox, 7, 1.0);
        let run = || run_closed_loop(&model, &tables, &manifold, &cfg, &CostSchedule::constant(cost.clone()), &policy).unwrap();
        let (a, b) = (run(), run());
        assert!(a.report.passed(), "{}", a.report.to_text());
        assert_eq!(a.ledger, b.ledger);
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ra.x_true, rb.x_true);
            assert_eq!(ra.x_meas, ra.x_true.add(&ra.v));
        }
        assert!(a.ledger.w_energy > 0.0);
    }

    #[test]
    fn corrupted_trace_is_flagged() {
        let (model, tables, manifold) = scalar_plant(0.0);
        let cost = QuadraticCost::diagonal(&[1.0], &[1.0], &[0.6], &[0.0]).unwrap();
        let cfg = RunConfig::new(ControllerOptions::defaults(&model, 0.3), 20);
        let mut out = run_closed_loop(&model, &tables, &manifold, &cfg, &CostSchedule::constant(cost), &DisturbancePolicy::zero()).unwrap();
        out.trace[7].x_true = Vector::from_slice(&[2.5]);
        let report = invariant_report(&out.trace, &model, cfg.options.c_g, 1e-6);
        assert_eq!(report.counts.state, 1);
        assert!(!report.per_step[7].state_ok);
    }

    #[test]
    fn worst_corner_stays_in_set() {
        let (model, ..) = scalar_plant(0.1);
        let mut s = DisturbanceSampler::new(DisturbancePolicy::random(DisturbanceKind::WorstCorner, 3, 1.0));
        for t in 0..50 {
            let w = s.sample_w(t, &model.w_set).unwrap();
            assert!((w[0].abs() - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_window_products() {
        let (fails, worst) = beta_windows(&[0.0, 0.0, 0.5, 0.0], &[1.0; 4], 1, 1e-6);
        assert_eq!(fails, vec![0]);
        assert_eq!(worst, Some(1.0));
        let (fails, _) = beta_windows(&[0.0, 0.0, 0.5, 0.0], &[0.0; 4], 1, 1e-6);
        assert!(fails.is_empty());
    }

    #[test]
    fn nonnegative_fit_recovers_affine_data() {
        let rows: Vec<_> = (0..20)
            .map(|i| {
                let p = i as f64 * 0.3;
                let n = (i % 5) as f64;
                (p, n, 1.0 + 2.0 * p + 0.5 * n)
            })
            .collect();
        let fit = fit_affine_nonnegative(&rows);
        assert!((fit.c0 - 1.0).abs() < 1e-6 && (fit.c_path - 2.0).abs() < 1e-6 && (fit.c_noise - 0.5).abs() < 1e-6);
        assert!(fit.r_squared > 0.999999);
        // a decreasing relation pins the slope at zero
        let rows: Vec<_> = (0..10).map(|i| (i as f64, 0.0, 10.0 - i as f64)).collect();
        let fit = fit_affine_nonnegative(&rows);
        assert!(fit.nonnegative() && fit.c_path == 0.0);
    }
}
