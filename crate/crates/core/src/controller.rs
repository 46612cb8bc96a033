//! The robust online controller.
//!
//! Per step, in order: shift the previous input plan and append the tracked
//! steady-state input, predict `mu` steps ahead, take one projected gradient
//! step on the steady-state estimate, compute an additional input sequence
//! that steers the prediction onto the estimate, scale it as far as the
//! tightened constraints allow, and apply the first element plus feedback.

use thiserror::Error;

use crate::convexsets::MEMBERSHIP_TOL;
use crate::denseqp::{solve_qp, QpError, QpProblem, QpStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::matlin::{Matrix, Vector};
use crate::plant::{
    membership_zu_tol, optimal_steady_state, selector, symmetrize, ModelError, PlantModel,
    QuadraticCost, SteadyStateManifold, TighteningTables,
};
use crate::scalar::Scalar;

/// Below this norm the steering target counts as reached and `g = 0`.
pub const DEGENERATE_TARGET: f64 = 1e-12;
pub const BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("initial estimate is not in the shrunk steady-state set")]
    InitNotInSbar,
    #[error(
        "Assumption 4 violated: initial input plan leaves the tightened constraints by {0:e}; \
         pick an initial steady state nearer the measured state"
    )]
    InitInfeasible(f64),
    #[error("step {t}: shifted candidate violates the tightened constraints by {violation:e}")]
    CandidateInfeasible { t: usize, violation: f64 },
    #[error("base sequence violates the tightened constraints by {0:e}")]
    BaseInfeasible(f64),
    #[error("step {t}: projection onto the steady-state set failed: {source}")]
    Projection { t: usize, source: QpError },
    #[error("step {t}: {source}")]
    Model { t: usize, source: ModelError },
    #[error("invalid option: {0}")]
    Options(String),
}

pub type ControllerResult<T> = Result<T, ControllerError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GVariant {
    Explicit,
    Optimized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// One projected gradient step per sample.
    Ogd,
    /// The exact minimizer of the previous cost over the steady-state set.
    ExactArgmin,
}

#[derive(Clone, Debug)]
pub struct ControllerOptions<S> {
    pub gamma: S,
    pub c_g: S,
    pub variant: GVariant,
    pub estimator: Estimator,
    pub membership_tol: S,
}

impl<S: Scalar> ControllerOptions<S> {
    /// Explicit `g`, OGD, and `c_g = 1.01 ||S_c' (S_c S_c')^{-1}||`.
    pub fn defaults(model: &PlantModel<S>, gamma: S) -> Self {
        ControllerOptions {
            gamma,
            c_g: model.min_c_g() * S::lit(1.01),
            variant: GVariant::Explicit,
            estimator: Estimator::Ogd,
            membership_tol: S::lit(MEMBERSHIP_TOL),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState<S> {
    /// Planned input sequence `û^μ_t` (stacked, `mu * m`).
    pub u_pred: Vector<S>,
    /// Tracked steady-state input `û^s_t`.
    pub u_ss: Vector<S>,
    pub theta_hat: Vector<S>,
    pub eta_hat: Vector<S>,
    pub t: usize,
}

#[derive(Clone, Debug, Default)]
pub struct StepDiagnostics<S> {
    pub beta: S,
    pub g_norm: S,
    /// `||θ̂_t - x̂^μ_t||`.
    pub target_gap: S,
    /// `x̂^μ_t`.
    pub pred_state: Vector<S>,
    /// `ẑ_t = (x̂^μ_t, û^s_{t-1})`.
    pub ogd_target: (Vector<S>, Vector<S>),
    pub candidate_feasible: bool,
    pub candidate_violation: S,
    /// KKT residual of the optimized `g` QP when one was solved.
    pub kkt_residual: Option<S>,
    /// The optimized `g` was rejected and the explicit one used.
    pub g_fallback: bool,
    /// `x̂^s_t = G_K û^s_t` after the update.
    pub steady_state: Vector<S>,
    pub plan_feasible: bool,
    pub steady_in_sbar: bool,
}

/// Soft constraint `coeffs · [x_0; ...; x_mu] <= offset + ε` on the rollout.
#[derive(Clone, Debug)]
pub struct SoftRow<S> {
    pub coeffs: Vector<S>,
    pub offset: S,
}

/// Cost criterion for the optimized additional input:
/// `sum_{k=1}^{mu} L(x_{k-1}, u_k) + rho ||g||^2 + w_eps ε^2`, with state and
/// applied-input targets set from the current steady-state estimate.
#[derive(Clone, Debug)]
pub struct RolloutObjective<S> {
    pub q_x: Matrix<S>,
    pub q_u: Matrix<S>,
    pub g_weight: S,
    pub soft_rows: Vec<SoftRow<S>>,
    pub slack_weight: S,
}

impl<S: Scalar> RolloutObjective<S> {
    /// Stage weights of `cost`, no soft constraints.
    pub fn tracking(cost: &QuadraticCost<S>) -> Self {
        RolloutObjective {
            q_x: cost.q_x.clone(),
            q_u: cost.q_u.clone(),
            g_weight: S::zero(),
            soft_rows: Vec::new(),
            slack_weight: S::lit(100.0),
        }
    }

    /// Only `||g||^2`; its minimizer is the explicit solution.
    pub fn min_norm(n: usize, m: usize) -> Self {
        RolloutObjective {
            q_x: Matrix::zeros(n, n),
            q_u: Matrix::zeros(m, m),
            g_weight: S::one(),
            soft_rows: Vec::new(),
            slack_weight: S::lit(100.0),
        }
    }
}

/// `[σ û^μ_{t-1}; û^s_{t-1}]`.
pub fn shifted_candidate<S: Scalar>(u_pred: &[S], u_ss: &[S]) -> Vector<S> {
    let m = u_ss.len();
    let mut out = Vec::with_capacity(u_pred.len());
    out.extend_from_slice(&u_pred[m..]);
    out.extend_from_slice(u_ss);
    out.into()
}

/// `x̂^μ_t = A_K^μ x̃_t + S_c [σ û^μ_{t-1}; û^s_{t-1}]`.
pub fn predict<S: Scalar>(state: &ControllerState<S>, model: &PlantModel<S>, x_meas: &[S]) -> Vector<S> {
    model.predict(x_meas, &shifted_candidate(&state.u_pred, &state.u_ss))
}

/// Euclidean projection of `(a, b)` onto `{(G_K u, u) : u ∈ S̄}`.
pub fn project_onto_sbar<S: Scalar>(
    model: &PlantModel<S>,
    manifold: &SteadyStateManifold<S>,
    a: &[S],
    b: &[S],
) -> Result<(Vector<S>, Vector<S>), QpError> {
    let g = &model.g_k;
    let m = model.m();
    let two = S::lit(2.0);
    let hessian = symmetrize(&g.transpose().matmul(g).expect("dims").add(&Matrix::identity(m)).expect("dims")).scaled(two);
    let linear = g.tr_mul_vec(a).expect("dims").add(b).scaled(-two);
    let problem = QpProblem::inequality_only(
        hessian,
        linear,
        manifold.shrunk.normals().clone(),
        manifold.shrunk.offsets().clone(),
    )?;
    let sol = solve_qp(&problem, S::lit(DEFAULT_TOL), DEFAULT_MAX_ITER);
    match sol.status {
        QpStatus::Optimal => Ok((g.mul_vec(&sol.x).expect("dims"), sol.x)),
        QpStatus::Infeasible => Err(QpError::Infeasible),
        QpStatus::MaxIter => Err(QpError::MaxIter(sol.iterations)),
    }
}

/// `Π_S̄(ẑ - γ K̄' ∇L(x̂, û^s + K x̂))` with `ẑ = (x_hat, u_ss)`.
pub fn ogd_step<S: Scalar>(
    model: &PlantModel<S>,
    manifold: &SteadyStateManifold<S>,
    x_hat: &[S],
    u_ss: &[S],
    prev_cost: &QuadraticCost<S>,
    gamma: S,
) -> Result<(Vector<S>, Vector<S>), QpError> {
    let applied = model.k.mul_vec(x_hat).expect("dims").add(u_ss);
    let (gx, gu) = prev_cost.gradient(x_hat, &applied);
    // K̄' (gx, gu) = (gx + K' gu, gu)
    let grad_x = gx.add(&model.k.tr_mul_vec(&gu).expect("dims"));
    let a = Vector::from_slice(x_hat).sub(&grad_x.scaled(gamma));
    let b = Vector::from_slice(u_ss).sub(&gu.scaled(gamma));
    project_onto_sbar(model, manifold, &a, &b)
}

/// `S_c' (S_c S_c')^{-1} (θ̂ - x̂^μ)`.
pub fn additional_input_explicit<S: Scalar>(
    model: &PlantModel<S>,
    theta_hat: &[S],
    pred_state: &[S],
) -> Vector<S> {
    let d = Vector::from_slice(theta_hat).sub(pred_state);
    if d.norm() <= S::lit(DEGENERATE_TARGET) {
        return Vector::zeros(model.s_c.cols());
    }
    model.s_c_pinv.mul_vec(&d).expect("dims")
}

/// `M_k` with `x_k = A_K^k x_0 + M_k useq`, for `k = 0..=mu`.
pub fn rollout_maps<S: Scalar>(model: &PlantModel<S>) -> Vec<Matrix<S>> {
    let (n, m, mu) = (model.n(), model.m(), model.mu);
    let mut maps = Vec::with_capacity(mu + 1);
    let mut cur = Matrix::zeros(n, mu * m);
    maps.push(cur.clone());
    for k in 0..mu {
        cur = model
            .a_k
            .matmul(&cur)
            .and_then(|c| c.add(&model.b.matmul(&selector(k, m, mu))?))
            .expect("dims");
        maps.push(cur.clone());
    }
    maps
}

#[derive(Clone, Debug)]
pub struct OptimizedInput<S> {
    pub g: Vector<S>,
    pub slack: S,
    pub kkt_residual: Option<S>,
    pub fallback: bool,
}

/// Solves the equality-constrained rollout QP for `g` (and the soft-constraint
/// slack). Falls back to the explicit solution when the QP fails or the
/// result violates `||g|| <= c_g ||θ̂ - x̂^μ||`.
#[allow(clippy::too_many_arguments)]
pub fn additional_input_optimized<S: Scalar>(
    model: &PlantModel<S>,
    x_meas: &[S],
    base: &[S],
    theta_hat: &[S],
    applied_target: &[S],
    pred_state: &[S],
    objective: &RolloutObjective<S>,
    c_g: S,
) -> OptimizedInput<S> {
    let (n, m, mu) = (model.n(), model.m(), model.mu);
    let nu = mu * m;
    let d = Vector::from_slice(theta_hat).sub(pred_state);
    if d.norm() <= S::lit(DEGENERATE_TARGET) {
        return OptimizedInput {
            g: Vector::zeros(nu),
            slack: S::zero(),
            kkt_residual: None,
            fallback: false,
        };
    }
    let explicit = || model.s_c_pinv.mul_vec(&d).expect("dims");
    let has_slack = !objective.soft_rows.is_empty();
    let nv = nu + usize::from(has_slack);

    let maps = rollout_maps(model);
    let mut a_pow = Matrix::identity(n);
    let mut hessian = Matrix::zeros(nv, nv);
    let mut linear = Vector::zeros(nv);
    // stacked states [x_0; ...; x_mu] = X0 + Xg g
    let mut x_free = Vec::with_capacity(mu + 1);
    let mut x_gain = Vec::with_capacity(mu + 1);
    for (k, map) in maps.iter().enumerate() {
        let free = a_pow.mul_vec(x_meas).expect("dims").add(&map.mul_vec(base).expect("dims"));
        x_free.push(free);
        x_gain.push(map.clone());
        if k < mu {
            a_pow = model.a_k.matmul(&a_pow).expect("dims");
        }
    }
    for k in 1..=mu {
        // state x_{k-1} = p + P g, applied input u_k = r + R g
        let p_map = &x_gain[k - 1];
        let p_off = &x_free[k - 1];
        let sel = selector::<S>(k - 1, m, mu);
        let r_map = sel.add(&model.k.matmul(p_map).expect("dims")).expect("dims");
        let r_off = sel
            .mul_vec(base)
            .expect("dims")
            .add(&model.k.mul_vec(p_off).expect("dims"));
        let ex = p_off.sub(theta_hat);
        let eu = r_off.sub(applied_target);
        let hx = p_map.transpose().matmul(&objective.q_x.matmul(p_map).expect("dims")).expect("dims");
        let hu = r_map.transpose().matmul(&objective.q_u.matmul(&r_map).expect("dims")).expect("dims");
        let lx = p_map.tr_mul_vec(&objective.q_x.mul_vec(&ex).expect("dims")).expect("dims");
        let lu = r_map.tr_mul_vec(&objective.q_u.mul_vec(&eu).expect("dims")).expect("dims");
        for i in 0..nu {
            for j in 0..nu {
                hessian[(i, j)] += hx[(i, j)] + hu[(i, j)];
            }
            linear[i] += lx[i] + lu[i];
        }
    }
    let two = S::lit(2.0);
    for i in 0..nu {
        hessian[(i, i)] += two * objective.g_weight;
    }
    let mut ineq_rows: Vec<Vec<S>> = Vec::new();
    let mut ineq_off: Vec<S> = Vec::new();
    if has_slack {
        hessian[(nu, nu)] = two * objective.slack_weight;
        for row in &objective.soft_rows {
            // coeffs · (X0 + Xg g) <= offset + ε
            let mut r = vec![S::zero(); nv];
            let mut constant = S::zero();
            for k in 0..=mu {
                let c_k = &row.coeffs[k * n..(k + 1) * n];
                constant += c_k.iter().zip(x_free[k].iter()).map(|(&a, &b)| a * b).sum::<S>();
                let gain = x_gain[k].tr_mul_vec(c_k).expect("dims");
                for i in 0..nu {
                    r[i] += gain[i];
                }
            }
            r[nu] = -S::one();
            ineq_rows.push(r);
            ineq_off.push(row.offset - constant);
        }
        let mut nonneg = vec![S::zero(); nv];
        nonneg[nu] = -S::one();
        ineq_rows.push(nonneg);
        ineq_off.push(S::zero());
    }
    let mut eq = Matrix::zeros(n, nv);
    eq.set_block(0, 0, &model.s_c);

    let fallback = |kkt| OptimizedInput {
        g: explicit(),
        slack: S::zero(),
        kkt_residual: kkt,
        fallback: true,
    };
    let problem = match QpProblem::new(
        symmetrize(&hessian),
        linear,
        Matrix::from_rows(&ineq_rows, nv).expect("rows"),
        ineq_off.into(),
        eq,
        d.clone(),
    ) {
        Ok(p) => p,
        Err(_) => return fallback(None),
    };
    let sol = solve_qp(&problem, S::lit(DEFAULT_TOL), DEFAULT_MAX_ITER);
    if sol.status != QpStatus::Optimal {
        return fallback(Some(sol.kkt_residual));
    }
    let g = sol.x.segment(0, nu);
    if g.norm() > c_g * d.norm() {
        return fallback(Some(sol.kkt_residual));
    }
    OptimizedInput {
        g,
        slack: if has_slack { sol.x[nu] } else { S::zero() },
        kkt_residual: Some(sol.kkt_residual),
        fallback: false,
    }
}

/// Row data `(residual, growth)` of `base + β g` in `Z_U^μ(x)`.
fn beta_rows<S: Scalar>(
    tables: &TighteningTables<S>,
    x_meas: &[S],
    base: &[S],
    g: &[S],
) -> (Vector<S>, Vector<S>) {
    (tables.residuals(x_meas, base), tables.growth(g))
}

/// Largest `β ∈ [0, 1]` with `base + β g ∈ Z_U^μ(x)`, by a per-row ratio test.
///
/// Rows already violated by rounding (within tolerance) are not allowed to
/// get worse.
pub fn max_beta<S: Scalar>(
    tables: &TighteningTables<S>,
    x_meas: &[S],
    base: &[S],
    g: &[S],
    tol: S,
) -> ControllerResult<S> {
    let (res, growth) = beta_rows(tables, x_meas, base, g);
    let worst = res.iter().copied().fold(S::neg_infinity(), S::max);
    if worst > tol {
        return Err(ControllerError::BaseInfeasible(worst.as_f64()));
    }
    let mut beta = S::one();
    for (&r, &c) in res.iter().zip(growth.iter()) {
        if c > S::zero() {
            let room = (-r).max(S::zero());
            beta = beta.min(room / c);
        }
    }
    Ok(beta.max(S::zero()).min(S::one()))
}

/// Bisection on the same feasibility predicate as [`max_beta`].
pub fn max_beta_bisection<S: Scalar>(
    tables: &TighteningTables<S>,
    x_meas: &[S],
    base: &[S],
    g: &[S],
    tol: S,
) -> ControllerResult<S> {
    let (res, growth) = beta_rows(tables, x_meas, base, g);
    let worst = res.iter().copied().fold(S::neg_infinity(), S::max);
    if worst > tol {
        return Err(ControllerError::BaseInfeasible(worst.as_f64()));
    }
    let feasible = |beta: S| {
        res.iter()
            .zip(growth.iter())
            .all(|(&r, &c)| r + beta * c <= r.max(S::zero()))
    };
    if feasible(S::one()) {
        return Ok(S::one());
    }
    let (mut lo, mut hi) = (S::zero(), S::one());
    let two = S::lit(2.0);
    while hi - lo > S::lit(BISECTION_TOL) {
        let mid = (lo + hi) / two;
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Clone, Debug)]
pub struct StepOutcome<S> {
    pub u: Vector<S>,
    pub state: ControllerState<S>,
    pub diagnostics: StepDiagnostics<S>,
}

/// Algorithm wiring over a fixed model, tightening tables and steady-state set.
pub struct Controller<'a, S> {
    pub model: &'a PlantModel<S>,
    pub tables: &'a TighteningTables<S>,
    pub manifold: &'a SteadyStateManifold<S>,
    pub options: ControllerOptions<S>,
}

impl<'a, S: Scalar> Controller<'a, S> {
    pub fn new(
        model: &'a PlantModel<S>,
        tables: &'a TighteningTables<S>,
        manifold: &'a SteadyStateManifold<S>,
        options: ControllerOptions<S>,
    ) -> ControllerResult<Self> {
        if !(options.gamma > S::zero()) {
            return Err(ControllerError::Options("gamma must be positive".into()));
        }
        if !(options.c_g >= model.min_c_g()) {
            return Err(ControllerError::Options(format!(
                "c_g = {} is below ||S_c'(S_c S_c')^-1|| = {}",
                options.c_g,
                model.min_c_g()
            )));
        }
        Ok(Controller {
            model,
            tables,
            manifold,
            options,
        })
    }

    fn applied(&self, u_pred: &[S], x_meas: &[S]) -> Vector<S> {
        let m = self.model.m();
        Vector::from_slice(&u_pred[..m]).add(&self.model.k.mul_vec(x_meas).expect("dims"))
    }

    fn in_sbar(&self, u_ss: &[S]) -> bool {
        self.manifold.contains_u(u_ss, self.options.membership_tol)
    }

    /// Builds `û^μ_0` from `ζ̂_0` and returns the first input.
    pub fn initialize(
        &self,
        theta0: &[S],
        eta0: &[S],
        x0_meas: &[S],
    ) -> ControllerResult<StepOutcome<S>> {
        let model = self.model;
        let theta_check = model.g_k.mul_vec(eta0).expect("dims");
        let scale = theta_check.norm_inf().max(S::one());
        if !self.in_sbar(eta0) || theta_check.distance(theta0) > S::lit(1e-9) * scale {
            return Err(ControllerError::InitNotInSbar);
        }
        let mu = model.mu;
        let mut u_pred = Vector::zeros(mu * model.m());
        for k in 0..mu {
            u_pred[k * model.m()..(k + 1) * model.m()].copy_from_slice(eta0);
        }
        let offset = Vector::from_slice(theta0).sub(x0_meas);
        let correction = model
            .s_c_pinv
            .mul_vec(&model.a_k_mu.mul_vec(&offset).expect("dims"))
            .expect("dims");
        u_pred = u_pred.add(&correction);
        let (ok, violation) = membership_zu_tol(self.tables, x0_meas, &u_pred, self.options.membership_tol);
        if !ok {
            return Err(ControllerError::InitInfeasible(violation.as_f64()));
        }
        let u = self.applied(&u_pred, x0_meas);
        let pred_state = model.predict(x0_meas, &u_pred);
        let state = ControllerState {
            u_pred: u_pred.clone(),
            u_ss: Vector::from_slice(eta0),
            theta_hat: Vector::from_slice(theta0),
            eta_hat: Vector::from_slice(eta0),
            t: 0,
        };
        let diagnostics = StepDiagnostics {
            beta: S::zero(),
            g_norm: S::zero(),
            target_gap: Vector::from_slice(theta0).distance(&pred_state),
            pred_state,
            ogd_target: (Vector::from_slice(theta0), Vector::from_slice(eta0)),
            candidate_feasible: true,
            candidate_violation: violation,
            kkt_residual: None,
            g_fallback: false,
            steady_state: theta_check,
            plan_feasible: true,
            steady_in_sbar: true,
        };
        Ok(StepOutcome {
            u,
            state,
            diagnostics,
        })
    }

    /// One step at `t >= 1`. `prev_cost` is `L_{t-1}`; `objective` is used by
    /// the optimized variant only.
    pub fn step(
        &self,
        state: &ControllerState<S>,
        x_meas: &[S],
        prev_cost: &QuadraticCost<S>,
        objective: Option<&RolloutObjective<S>>,
    ) -> ControllerResult<StepOutcome<S>> {
        let model = self.model;
        let t = state.t + 1;
        let tol = self.options.membership_tol;
        let candidate = shifted_candidate(&state.u_pred, &state.u_ss);
        let pred_state = model.predict(x_meas, &candidate);
        let (candidate_feasible, candidate_violation) =
            membership_zu_tol(self.tables, x_meas, &candidate, tol);
        if !candidate_feasible {
            return Err(ControllerError::CandidateInfeasible {
                t,
                violation: candidate_violation.as_f64(),
            });
        }

        let (theta_hat, eta_hat) = match self.options.estimator {
            Estimator::Ogd => ogd_step(
                model,
                self.manifold,
                &pred_state,
                &state.u_ss,
                prev_cost,
                self.options.gamma,
            )
            .map_err(|source| ControllerError::Projection { t, source })?,
            Estimator::ExactArgmin => optimal_steady_state(self.manifold, prev_cost, model)
                .map_err(|source| ControllerError::Model { t, source })?,
        };

        let target_gap = theta_hat.distance(&pred_state);
        let (g, kkt_residual, g_fallback) = match self.options.variant {
            GVariant::Explicit => (additional_input_explicit(model, &theta_hat, &pred_state), None, false),
            GVariant::Optimized => {
                let default_objective;
                let objective = match objective {
                    Some(o) => o,
                    None => {
                        default_objective = RolloutObjective::tracking(prev_cost);
                        &default_objective
                    }
                };
                let applied_target = model.applied_map().mul_vec(&eta_hat).expect("dims");
                let out = additional_input_optimized(
                    model,
                    x_meas,
                    &candidate,
                    &theta_hat,
                    &applied_target,
                    &pred_state,
                    objective,
                    self.options.c_g,
                );
                (out.g, out.kkt_residual, out.fallback)
            }
        };

        let beta = max_beta(self.tables, x_meas, &candidate, &g, tol)?;
        let mut u_pred = candidate;
        u_pred.axpy(beta, &g);
        let u_ss = state.u_ss.scaled(S::one() - beta).add(&eta_hat.scaled(beta));
        let u = self.applied(&u_pred, x_meas);
        let (plan_feasible, _) = membership_zu_tol(self.tables, x_meas, &u_pred, tol);
        let steady_in_sbar = self.in_sbar(&u_ss);
        let steady_state = model.g_k.mul_vec(&u_ss).expect("dims");
        let diagnostics = StepDiagnostics {
            beta,
            g_norm: g.norm(),
            target_gap,
            pred_state: pred_state.clone(),
            ogd_target: (pred_state, state.u_ss.clone()),
            candidate_feasible,
            candidate_violation,
            kkt_residual,
            g_fallback,
            steady_state,
            plan_feasible,
            steady_in_sbar,
        };
        Ok(StepOutcome {
            u,
            state: ControllerState {
                u_pred,
                u_ss,
                theta_hat,
                eta_hat,
                t,
            },
            diagnostics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convexsets::{HPolytope, Zonotope};
    use crate::plant::{build_model, build_tightening, steady_state_manifold, ModelSpec};

    fn scalar_setup(w: f64, mu: usize) -> (PlantModel<f64>, TighteningTables<f64>, SteadyStateManifold<f64>) {
        let wz = if w == 0.0 { Zonotope::origin(1) } else { Zonotope::symmetric_box(&[w]) };
        let spec = ModelSpec::new(
            Matrix::from_diag(&[1.0]),
            Matrix::from_diag(&[1.0]),
            Matrix::from_diag(&[-0.5]),
            mu,
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
    fn explicit_input_scalar() {
        let (model, _, _) = scalar_setup(0.0, 2);
        let g = additional_input_explicit(&model, &[1.0], &[0.0]);
        assert!((g[0] - 0.4).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let zero = additional_input_explicit(&model, &[0.3], &[0.3]);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prediction_scalar() {
        let (model, _, _) = scalar_setup(0.0, 2);
        let state = ControllerState {
            u_pred: Vector::zeros(2),
            u_ss: Vector::zeros(1),
            theta_hat: Vector::zeros(1),
            eta_hat: Vector::zeros(1),
            t: 0,
        };
        assert_eq!(predict(&state, &model, &[4.0]).as_slice(), &[1.0]);
        assert_eq!(predict(&state, &model, &[0.0]).as_slice(), &[0.0]);
    }

    #[test]
    fn beta_single_constraint() {
        let (model, tables, _) = scalar_setup(0.0, 1);
        // x1 = 0.5 x0 + u <= 2; from x0 = 0 a step of g = 4 allows beta = 0.5
        let _ = model;
        let beta = max_beta(&tables, &[0.0], &[0.0], &[4.0], 1e-9).unwrap();
        // the input constraint |u| <= 1 binds first: beta = 0.25
        assert!((beta - 0.25).abs() < 1e-15);
        assert_eq!(max_beta(&tables, &[0.0], &[0.0], &[0.0], 1e-9).unwrap(), 1.0);
        assert_eq!(max_beta(&tables, &[0.0], &[0.0], &[0.5], 1e-9).unwrap(), 1.0);
        assert!(max_beta(&tables, &[3.0], &[0.0], &[0.5], 1e-9).is_err());
        let bis = max_beta_bisection(&tables, &[0.0], &[0.0], &[4.0], 1e-9).unwrap();
        assert!((bis - 0.25).abs() < 1e-9);
    }

    #[test]
    fn init_at_steady_state_repeats_eta() {
        let (model, tables, manifold) = scalar_setup(0.1, 3);
        let ctrl = Controller::new(&model, &tables, &manifold, ControllerOptions::defaults(&model, 0.5)).unwrap();
        let out = ctrl.initialize(&[0.4], &[0.2], &[0.4]).unwrap();
        assert!(out.state.u_pred.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!((out.u[0] - (0.2 - 0.5 * 0.4)).abs() < 1e-15);
        assert!(matches!(
            ctrl.initialize(&[0.4], &[0.3], &[0.4]),
            Err(ControllerError::InitNotInSbar)
        ));
    }

    #[test]
    fn init_correction_is_least_norm() {
        let (model, tables, manifold) = scalar_setup(0.0, 2);
        let ctrl = Controller::new(&model, &tables, &manifold, ControllerOptions::defaults(&model, 0.5)).unwrap();
        let out = ctrl.initialize(&[0.0], &[0.0], &[0.3]).unwrap();
        // S_c correction = -A_K^mu d
        let sc = model.s_c.mul_vec(&out.state.u_pred).unwrap();
        assert!((sc[0] + 0.25 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_at_optimum() {
        let (model, tables, manifold) = scalar_setup(0.0, 2);
        let cost = QuadraticCost::diagonal(&[1.0], &[1.0], &[0.5], &[0.0]).unwrap();
        let (theta, eta) = optimal_steady_state(&manifold, &cost, &model).unwrap();
        for variant in [GVariant::Explicit, GVariant::Optimized] {
            let mut opts = ControllerOptions::defaults(&model, 0.5);
            opts.variant = variant;
            let ctrl = Controller::new(&model, &tables, &manifold, opts).unwrap();
            let mut out = ctrl.initialize(&theta, &eta, &theta).unwrap();
            let mut x = theta.clone();
            for _ in 0..5 {
                x = model.a.mul_vec(&x).unwrap().add(&model.b.mul_vec(&out.u).unwrap());
                out = ctrl.step(&out.state, &x, &cost, None).unwrap();
                assert!(x.distance(&theta) < 1e-12);
                assert!(out.diagnostics.g_norm < 1e-10);
            }
        }
    }

    #[test]
    fn min_norm_objective_matches_explicit() {
        let (model, _, _) = scalar_setup(0.0, 3);
        let objective = RolloutObjective::min_norm(1, 1);
        let base = Vector::zeros(3);
        let out = additional_input_optimized(&model, &[0.2], &base, &[1.0], &[0.0], &[0.1], &objective, 100.0);
        let explicit = additional_input_explicit(&model, &[1.0], &[0.1]);
        assert!(!out.fallback);
        assert!(out.g.distance(&explicit) < 1e-10);
    }

    #[test]
    fn ogd_fixed_point_and_boundary() {
        let (model, _, manifold) = scalar_setup(0.0, 2);
        let flat = QuadraticCost::diagonal(&[0.0], &[1.0], &[0.0], &[0.0]).unwrap();
        // with u + K x = 0 on the manifold the input term has zero gradient
        let (th, et) = ogd_step(&model, &manifold, &[0.4], &[0.2], &flat, 0.5).unwrap();
        assert!((th[0] - 0.4).abs() < 1e-12 && (et[0] - 0.2).abs() < 1e-12);
        let pull = QuadraticCost::diagonal(&[1.0], &[1.0], &[100.0], &[0.0]).unwrap();
        let (_, et) = ogd_step(&model, &manifold, &[0.4], &[0.2], &pull, 0.5).unwrap();
        let upper = manifold.shrunk.offsets()[0] / manifold.shrunk.normals()[(0, 0)];
        assert!((et[0] - upper).abs() < 1e-12);
    }

    #[test]
    fn plan_moves_prediction_toward_estimate() {
        let (model, tables, manifold) = scalar_setup(0.05, 3);
        let cost = QuadraticCost::diagonal(&[1.0], &[0.1], &[0.8], &[0.0]).unwrap();
        let ctrl = Controller::new(&model, &tables, &manifold, ControllerOptions::defaults(&model, 0.5)).unwrap();
        let mut out = ctrl.initialize(&[0.0], &[0.0], &[0.1]).unwrap();
        let mut x = Vector::from_slice(&[0.1]);
        for k in 0..20 {
            let w = if k % 2 == 0 { 0.05 } else { -0.05 };
            x = model.a.mul_vec(&x).unwrap().add(&model.b.mul_vec(&out.u).unwrap());
            x[0] += w;
            out = ctrl.step(&out.state, &x, &cost, None).unwrap();
            let d = &out.diagnostics;
            let after = model.predict(&x, &out.state.u_pred);
            let expected = d.pred_state.add(&out.state.theta_hat.sub(&d.pred_state).scaled(d.beta));
            assert!(after.distance(&expected) < 1e-12);
            assert!(d.g_norm <= ctrl.options.c_g * d.target_gap + 1e-12);
            assert!(d.plan_feasible && d.steady_in_sbar);
        }
    }

    #[test]
    fn hand_traced_first_step() {
        let (model, tables, manifold) = scalar_setup(0.0, 2);
        let cost = QuadraticCost::diagonal(&[1.0], &[1.0], &[1.0], &[0.0]).unwrap();
        let ctrl = Controller::new(&model, &tables, &manifold, ControllerOptions::defaults(&model, 0.1)).unwrap();
        let init = ctrl.initialize(&[0.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(init.u[0], 0.0);
        let out = ctrl.step(&init.state, &[0.0], &cost, None).unwrap();
        // gradient step to (0.1, 0), projected onto {(2u, u)}: u = 0.04
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(out.state.eta_hat[0], 0.04) && close(out.state.theta_hat[0], 0.08));
        assert!(close(out.diagnostics.beta, 1.0));
        // g = [0.5, 1]' 0.08 / 1.25
        assert!(close(out.state.u_pred[0], 0.032) && close(out.state.u_pred[1], 0.064));
        assert!(close(out.state.u_ss[0], 0.04) && close(out.u[0], 0.032));
    }
}
