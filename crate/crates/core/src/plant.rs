//! Problem assembly: dynamics, stabilizing feedback, disturbance sets,
//! stage-wise constraint tightening, the steady-state manifold and the
//! optimal-steady-state benchmark.

use thiserror::Error;

use crate::convexsets::{
    pontryagin_deduct, zonotope_in_polytope, HPolytope, Halfspaces, SetError, TightenedOffsets,
    Zonotope, MEMBERSHIP_TOL,
};
use crate::denseqp::{solve_qp, QpError, QpProblem, QpStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::invariance::{
    default_epsilon, mrpi_outer, tail_inner, tail_set, InvarianceError, RpiResult,
    CERTIFICATE_HORIZON, DEFAULT_S_MAX,
};
use crate::matlin::{
    matmul, matrix_power, numeric_rank, power_norm_certificate, solve_general, spectral_norm,
    symmetric_eigen_bounds, Cholesky, LinalgError, Matrix, PowerCertificate, Vector, RANK_TOL,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("inconsistent dimensions: {0}")]
    Dimensions(String),
    #[error("Assumption 1 violated: {0} must contain the origin in its interior")]
    DisturbanceSet(&'static str),
    #[error("Assumption 2 violated: {0} must be compact and contain the origin in its interior")]
    ConstraintSet(&'static str),
    #[error("A + BK is not certified Schur: no k <= {0} with ||(A + BK)^k|| < 1")]
    NotSchur(usize),
    #[error("Assumption 2 violated: (A + BK, B) is not controllable (rank {rank} < {n})")]
    NotControllable { rank: usize, n: usize },
    #[error("horizon mu = {mu} is below the controllability index {mu_star}")]
    HorizonTooShort { mu: usize, mu_star: usize },
    #[error("P ⊆ X violated: the RPI set does not fit inside the state constraints")]
    RpiNotInX,
    #[error("tightened {kind} constraint set at stage {tau} is empty")]
    EmptyStage { kind: &'static str, tau: usize },
    #[error("steady-state manifold is empty")]
    EmptyManifold,
    #[error("steady-state manifold does not contain u = 0 in its interior")]
    ManifoldOrigin,
    #[error("shrink factor must lie in (0, 1], got {0}")]
    BadShrink(f64),
    #[error("invalid cost: {0}")]
    Cost(String),
    #[error(transparent)]
    Invariance(#[from] InvarianceError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

pub type ModelResult<T> = Result<T, ModelError>;

/// User-supplied problem data.
#[derive(Clone, Debug)]
pub struct ModelSpec<S> {
    pub a: Matrix<S>,
    pub b: Matrix<S>,
    pub k: Matrix<S>,
    pub mu: usize,
    pub x_set: HPolytope<S>,
    pub u_set: HPolytope<S>,
    pub w_set: Zonotope<S>,
    pub v_set: Zonotope<S>,
    /// Outer-approximation slack for the RPI set; `None` picks `1e-4 * radius(W̄)`.
    pub rpi_epsilon: Option<S>,
    pub s_max: usize,
}

impl<S: Scalar> ModelSpec<S> {
    pub fn new(
        a: Matrix<S>,
        b: Matrix<S>,
        k: Matrix<S>,
        mu: usize,
        x_set: HPolytope<S>,
        u_set: HPolytope<S>,
        w_set: Zonotope<S>,
        v_set: Zonotope<S>,
    ) -> Self {
        ModelSpec {
            a,
            b,
            k,
            mu,
            x_set,
            u_set,
            w_set,
            v_set,
            rpi_epsilon: None,
            s_max: DEFAULT_S_MAX,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantModel<S> {
    pub a: Matrix<S>,
    pub b: Matrix<S>,
    pub k: Matrix<S>,
    pub a_k: Matrix<S>,
    pub g_k: Matrix<S>,
    /// `[A_K^{mu-1} B, ..., A_K B, B]`.
    pub s_c: Matrix<S>,
    /// `S_c' (S_c S_c')^{-1}`.
    pub s_c_pinv: Matrix<S>,
    pub a_k_mu: Matrix<S>,
    pub mu: usize,
    pub mu_star: usize,
    pub x_set: HPolytope<S>,
    pub u_set: HPolytope<S>,
    pub w_set: Zonotope<S>,
    pub v_set: Zonotope<S>,
    pub w_bar: Zonotope<S>,
    pub p_rpi: RpiResult<S>,
    /// Outer approximation of the tail set, `A_K^mu P`.
    pub p_tail: Zonotope<S>,
    /// Inner approximation of the tail set, `A_K^mu F_s`.
    pub p_tail_inner: Zonotope<S>,
    pub decay: PowerCertificate<S>,
}

impl<S: Scalar> PlantModel<S> {
    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    /// `||S_c' (S_c S_c')^{-1}||_2`, the smallest admissible `c_g`.
    pub fn min_c_g(&self) -> S {
        spectral_norm(&self.s_c_pinv)
    }

    /// `[[I, 0], [K, I]]`.
    pub fn k_bar(&self) -> Matrix<S> {
        let (n, m) = (self.n(), self.m());
        let mut kb = Matrix::identity(n + m);
        kb.set_block(n, 0, &self.k);
        kb
    }

    /// `I + K G_K`, mapping a steady-state input to the applied input.
    pub fn applied_map(&self) -> Matrix<S> {
        Matrix::identity(self.m())
            .add(&self.k.matmul(&self.g_k).expect("dims"))
            .expect("dims")
    }

    /// Steady state `(G_K u, u)` as a stacked vector.
    pub fn steady_pair(&self, u: &[S]) -> (Vector<S>, Vector<S>) {
        (self.g_k.mul_vec(u).expect("dims"), Vector::from_slice(u))
    }

    /// Nominal prediction `A_K^mu x + S_c useq`.
    pub fn predict(&self, x: &[S], useq: &[S]) -> Vector<S> {
        self.a_k_mu
            .mul_vec(x)
            .expect("dims")
            .add(&self.s_c.mul_vec(useq).expect("dims"))
    }
}

/// `[A^{h-1} B, ..., B]`.
fn reordered_controllability<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>, h: usize) -> Matrix<S> {
    let (n, m) = b.shape();
    let mut out = Matrix::zeros(n, h * m);
    let mut block = b.clone();
    for j in (0..h).rev() {
        out.set_block(0, j * m, &block);
        block = matmul(a, &block).expect("square");
    }
    out
}

fn check_shapes<S: Scalar>(spec: &ModelSpec<S>) -> ModelResult<()> {
    let n = spec.a.rows();
    let m = spec.b.cols();
    let mut problems = Vec::new();
    if !spec.a.is_square() {
        problems.push(format!("A is {:?}", spec.a.shape()));
    }
    if spec.b.rows() != n {
        problems.push(format!("B has {} rows, expected {n}", spec.b.rows()));
    }
    if spec.k.shape() != (m, n) {
        problems.push(format!("K is {:?}, expected ({m}, {n})", spec.k.shape()));
    }
    if spec.x_set.dim() != n {
        problems.push(format!("X has dimension {}", spec.x_set.dim()));
    }
    if spec.u_set.dim() != m {
        problems.push(format!("U has dimension {}", spec.u_set.dim()));
    }
    if spec.w_set.dim() != n || spec.v_set.dim() != n {
        problems.push("W and V must live in the state space".to_string());
    }
    if spec.mu == 0 {
        problems.push("mu must be at least 1".to_string());
    }
    if n == 0 || m == 0 {
        problems.push("state and input dimensions must be positive".to_string());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(ModelError::Dimensions(problems.join("; ")))
    }
}

/// `V ⊕ (-A V) ⊕ W`.
pub fn build_w_bar<S: Scalar>(
    a: &Matrix<S>,
    w_set: &Zonotope<S>,
    v_set: &Zonotope<S>,
) -> ModelResult<Zonotope<S>> {
    let minus_av = v_set.linear_image(&a.scaled(-S::one()))?;
    let mut w_bar = v_set.minkowski_sum(&minus_av)?.minkowski_sum(w_set)?;
    w_bar.prune();
    Ok(w_bar)
}

fn disturbance_ok<S: Scalar>(z: &Zonotope<S>) -> bool {
    z.contains_origin_interior()
}

/// Validates every structural assumption and derives the model quantities.
pub fn build_model<S: Scalar>(spec: &ModelSpec<S>) -> ModelResult<PlantModel<S>> {
    check_shapes(spec)?;
    let n = spec.a.rows();

    if !spec.x_set.is_compact() || !spec.x_set.contains_origin_interior() {
        return Err(ModelError::ConstraintSet("X"));
    }
    if !spec.u_set.is_compact() || !spec.u_set.contains_origin_interior() {
        return Err(ModelError::ConstraintSet("U"));
    }
    if !disturbance_ok(&spec.w_set) {
        return Err(ModelError::DisturbanceSet("W"));
    }
    if !disturbance_ok(&spec.v_set) {
        return Err(ModelError::DisturbanceSet("V"));
    }

    let a_k = spec.a.add(&spec.b.matmul(&spec.k)?)?;
    let decay = power_norm_certificate(&a_k, CERTIFICATE_HORIZON)?
        .ok_or(ModelError::NotSchur(CERTIFICATE_HORIZON))?;
    let i_minus = Matrix::identity(n).sub(&a_k)?;
    let g_k = solve_general(&i_minus, &spec.b)?;

    let rank_tol = S::lit(RANK_TOL);
    let mut mu_star = None;
    for h in 1..=n.max(spec.mu) {
        if numeric_rank(&reordered_controllability(&a_k, &spec.b, h), rank_tol) == n {
            mu_star = Some(h);
            break;
        }
    }
    let mu_star = match mu_star {
        Some(h) => h,
        None => {
            let full = reordered_controllability(&a_k, &spec.b, n.max(spec.mu));
            return Err(ModelError::NotControllable {
                rank: numeric_rank(&full, rank_tol),
                n,
            });
        }
    };
    if spec.mu < mu_star {
        return Err(ModelError::HorizonTooShort {
            mu: spec.mu,
            mu_star,
        });
    }
    let s_c = reordered_controllability(&a_k, &spec.b, spec.mu);
    let gram = s_c.matmul(&s_c.transpose())?;
    let s_c_pinv = Cholesky::factor(&gram)?
        .solve_matrix(&s_c)?
        .transpose();

    let w_bar = build_w_bar(&spec.a, &spec.w_set, &spec.v_set)?;
    let epsilon = spec
        .rpi_epsilon
        .unwrap_or_else(|| default_epsilon(&w_bar).max(S::lit(1e-12)));
    let p_rpi = mrpi_outer(&a_k, &w_bar, epsilon, spec.s_max)?;
    if !zonotope_in_polytope(&p_rpi.p, &spec.x_set) {
        return Err(ModelError::RpiNotInX);
    }
    let p_tail = tail_set(&a_k, spec.mu, &p_rpi)?;
    let p_tail_inner = tail_inner(&a_k, spec.mu, &p_rpi)?;
    let a_k_mu = matrix_power(&a_k, spec.mu)?;

    Ok(PlantModel {
        a: spec.a.clone(),
        b: spec.b.clone(),
        k: spec.k.clone(),
        a_k,
        g_k,
        s_c,
        s_c_pinv,
        a_k_mu,
        mu: spec.mu,
        mu_star,
        x_set: spec.x_set.clone(),
        u_set: spec.u_set.clone(),
        w_set: spec.w_set.clone(),
        v_set: spec.v_set.clone(),
        w_bar,
        p_rpi,
        p_tail,
        p_tail_inner,
        decay,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageKind {
    State,
    Input,
}

/// One row of the stacked description `C_u u + C_x x <= d` of `Z_U^mu(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowTag {
    pub kind: StageKind,
    pub tau: usize,
    pub facet: usize,
}

#[derive(Clone, Debug)]
pub struct TighteningTables<S> {
    /// `X ⊖ sum_{j=0}^{tau} A_K^j W̄` for `tau = 0..mu-1`.
    pub state_stage: Vec<TightenedOffsets<S>>,
    /// `U ⊖ K sum_{j=0}^{tau-1} A_K^j W̄` for `tau = 0..mu-1`.
    pub input_stage: Vec<TightenedOffsets<S>>,
    /// Stacked affine form of every stage constraint.
    pub c_u: Matrix<S>,
    pub c_x: Matrix<S>,
    pub d: Vector<S>,
    pub tags: Vec<RowTag>,
}

pub fn build_tightening<S: Scalar>(model: &PlantModel<S>) -> ModelResult<TighteningTables<S>> {
    let (n, m, mu) = (model.n(), model.m(), model.mu);
    let mut state_stage = Vec::with_capacity(mu);
    let mut input_stage = Vec::with_capacity(mu);
    // partial = sum_{j=0}^{tau-1} A_K^j W̄ at the top of iteration tau
    let mut partial = Zonotope::origin(n);
    let mut term = model.w_bar.clone();
    for tau in 0..mu {
        let input_tight = pontryagin_deduct(&model.u_set, &partial.linear_image(&model.k)?)?;
        partial = partial.minkowski_sum(&term)?;
        term = term.linear_image(&model.a_k)?;
        let state_tight = pontryagin_deduct(&model.x_set, &partial)?;
        if state_tight.is_empty() {
            return Err(ModelError::EmptyStage { kind: "state", tau });
        }
        if input_tight.is_empty() {
            return Err(ModelError::EmptyStage { kind: "input", tau });
        }
        state_stage.push(state_tight);
        input_stage.push(input_tight);
    }

    // x_tau = A_K^tau x + M_tau u, M_0 = 0, M_{tau+1} = A_K M_tau + B T_{tau+1}
    let mut rows_u: Vec<Vec<S>> = Vec::new();
    let mut rows_x: Vec<Vec<S>> = Vec::new();
    let mut d = Vec::new();
    let mut tags = Vec::new();
    let mut m_tau = Matrix::zeros(n, mu * m);
    let mut a_pow = Matrix::identity(n);
    for tau in 0..mu {
        let t_next = selector::<S>(tau, m, mu);
        // input rows: N (T_{tau+1} u + K x_tau) <= h
        let cu_in = t_next.add(&model.k.matmul(&m_tau)?)?;
        let cx_in = model.k.matmul(&a_pow)?;
        push_rows(&input_stage[tau], &cu_in, &cx_in, StageKind::Input, tau, &mut rows_u, &mut rows_x, &mut d, &mut tags)?;
        m_tau = model.a_k.matmul(&m_tau)?.add(&model.b.matmul(&t_next)?)?;
        a_pow = model.a_k.matmul(&a_pow)?;
        push_rows(&state_stage[tau], &m_tau, &a_pow, StageKind::State, tau, &mut rows_u, &mut rows_x, &mut d, &mut tags)?;
    }
    Ok(TighteningTables {
        state_stage,
        input_stage,
        c_u: Matrix::from_rows(&rows_u, mu * m)?,
        c_x: Matrix::from_rows(&rows_x, n)?,
        d: d.into(),
        tags,
    })
}

#[allow(clippy::too_many_arguments)]
fn push_rows<S: Scalar>(
    set: &TightenedOffsets<S>,
    map_u: &Matrix<S>,
    map_x: &Matrix<S>,
    kind: StageKind,
    tau: usize,
    rows_u: &mut Vec<Vec<S>>,
    rows_x: &mut Vec<Vec<S>>,
    d: &mut Vec<S>,
    tags: &mut Vec<RowTag>,
) -> ModelResult<()> {
    let normals = set.normals();
    let cu = normals.matmul(map_u)?;
    let cx = normals.matmul(map_x)?;
    let offsets = set.offsets();
    for i in 0..normals.rows() {
        rows_u.push(cu.row(i).to_vec());
        rows_x.push(cx.row(i).to_vec());
        d.push(offsets[i]);
        tags.push(RowTag {
            kind,
            tau,
            facet: i,
        });
    }
    Ok(())
}

/// `T_{i+1}`: picks block `i` of a stacked sequence.
pub fn selector<S: Scalar>(i: usize, m: usize, mu: usize) -> Matrix<S> {
    let mut t = Matrix::zeros(m, mu * m);
    for r in 0..m {
        t[(r, i * m + r)] = S::one();
    }
    t
}

impl<S: Scalar> TighteningTables<S> {
    /// Signed residuals `C_u u + C_x x - d`.
    pub fn residuals(&self, x: &[S], useq: &[S]) -> Vector<S> {
        self.c_u
            .mul_vec(useq)
            .expect("dims")
            .add(&self.c_x.mul_vec(x).expect("dims"))
            .sub(&self.d)
    }

    /// Row-wise growth `C_u g`.
    pub fn growth(&self, g: &[S]) -> Vector<S> {
        self.c_u.mul_vec(g).expect("dims")
    }
}

/// Whether `useq ∈ Z_U^mu(x)`, with the worst signed violation.
pub fn membership_zu<S: Scalar>(tables: &TighteningTables<S>, x: &[S], useq: &[S]) -> (bool, S) {
    membership_zu_tol(tables, x, useq, S::lit(MEMBERSHIP_TOL))
}

pub fn membership_zu_tol<S: Scalar>(
    tables: &TighteningTables<S>,
    x: &[S],
    useq: &[S],
    tol: S,
) -> (bool, S) {
    let worst = tables
        .residuals(x, useq)
        .iter()
        .copied()
        .fold(S::neg_infinity(), S::max);
    (worst <= tol, worst)
}

/// Steady states in input coordinates, `{u : G_K u ∈ X ⊖ P, (I + K G_K) u ∈ U ⊖ K P}`.
#[derive(Clone, Debug)]
pub struct SteadyStateManifold<S> {
    pub u_polytope: HPolytope<S>,
    pub shrink: S,
    /// `shrink * u_polytope`, the set steady-state estimates are projected on.
    pub shrunk: HPolytope<S>,
}

impl<S: Scalar> SteadyStateManifold<S> {
    pub fn contains_u(&self, u: &[S], tol: S) -> bool {
        self.shrunk.contains(u, tol)
    }
}

pub fn steady_state_manifold<S: Scalar>(
    model: &PlantModel<S>,
    p: &RpiResult<S>,
    shrink: S,
) -> ModelResult<SteadyStateManifold<S>> {
    if !(shrink > S::zero() && shrink <= S::one()) {
        return Err(ModelError::BadShrink(shrink.as_f64()));
    }
    let x_tight = pontryagin_deduct(&model.x_set, &p.p)?.to_polytope();
    let u_tight = pontryagin_deduct(&model.u_set, &p.p.linear_image(&model.k)?)?.to_polytope();
    let from_x = x_tight.preimage(&model.g_k).map_err(manifold_err)?;
    let from_u = u_tight.preimage(&model.applied_map()).map_err(manifold_err)?;
    let u_polytope = from_x.intersect(&from_u)?;
    if Halfspaces::is_empty(&u_polytope) {
        return Err(ModelError::EmptyManifold);
    }
    if !u_polytope.contains_origin_interior() {
        return Err(ModelError::ManifoldOrigin);
    }
    let shrunk = u_polytope.scaled(shrink);
    Ok(SteadyStateManifold {
        u_polytope,
        shrink,
        shrunk,
    })
}

fn manifold_err(e: SetError) -> ModelError {
    match e {
        SetError::EmptyPreimage(..) => ModelError::EmptyManifold,
        other => other.into(),
    }
}

/// `L(x, u) = 1/2 (x - r_x)' Q_x (x - r_x) + 1/2 (u - r_u)' Q_u (u - r_u)`,
/// where `u` is the applied input.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost<S> {
    pub q_x: Matrix<S>,
    pub q_u: Matrix<S>,
    pub ref_x: Vector<S>,
    pub ref_u: Vector<S>,
}

impl<S: Scalar> QuadraticCost<S> {
    pub fn new(q_x: Matrix<S>, q_u: Matrix<S>, ref_x: Vector<S>, ref_u: Vector<S>) -> ModelResult<Self> {
        let n = ref_x.dim();
        let m = ref_u.dim();
        if q_x.shape() != (n, n) || q_u.shape() != (m, m) {
            return Err(ModelError::Cost(format!(
                "weights {:?}/{:?} do not match targets {n}/{m}",
                q_x.shape(),
                q_u.shape()
            )));
        }
        let sym_tol = S::lit(1e-10);
        if !q_x.is_symmetric(sym_tol) || !q_u.is_symmetric(sym_tol) {
            return Err(ModelError::Cost("weights must be symmetric".into()));
        }
        let (qx_min, _) = symmetric_eigen_bounds(&q_x)?;
        if qx_min < -S::lit(1e-12) * q_x.max_abs().max(S::one()) {
            return Err(ModelError::Cost("Q_x must be positive semidefinite".into()));
        }
        if Cholesky::factor(&q_u).is_err() {
            return Err(ModelError::Cost("Q_u must be positive definite".into()));
        }
        Ok(QuadraticCost {
            q_x,
            q_u,
            ref_x,
            ref_u,
        })
    }

    /// Diagonal weights.
    pub fn diagonal(q_x: &[S], q_u: &[S], ref_x: &[S], ref_u: &[S]) -> ModelResult<Self> {
        Self::new(
            Matrix::from_diag(q_x),
            Matrix::from_diag(q_u),
            Vector::from_slice(ref_x),
            Vector::from_slice(ref_u),
        )
    }

    pub fn eval(&self, x: &[S], u: &[S]) -> S {
        let dx = Vector::from_slice(x).sub(&self.ref_x);
        let du = Vector::from_slice(u).sub(&self.ref_u);
        let half = S::lit(0.5);
        half * dx.dot(&self.q_x.mul_vec(&dx).expect("dims"))
            + half * du.dot(&self.q_u.mul_vec(&du).expect("dims"))
    }

    /// `(∇_x L, ∇_u L)` at `(x, u)`.
    pub fn gradient(&self, x: &[S], u: &[S]) -> (Vector<S>, Vector<S>) {
        let dx = Vector::from_slice(x).sub(&self.ref_x);
        let du = Vector::from_slice(u).sub(&self.ref_u);
        (
            self.q_x.mul_vec(&dx).expect("dims"),
            self.q_u.mul_vec(&du).expect("dims"),
        )
    }

    pub fn scaled(&self, factor: S) -> Self {
        QuadraticCost {
            q_x: self.q_x.scaled(factor),
            q_u: self.q_u.scaled(factor),
            ref_x: self.ref_x.clone(),
            ref_u: self.ref_u.clone(),
        }
    }

    /// Hessian of `(x, u) -> L(x, u + K x)`, i.e. `K̄' diag(Q_x, Q_u) K̄`.
    pub fn closed_loop_hessian(&self, model: &PlantModel<S>) -> Matrix<S> {
        let (n, m) = (model.n(), model.m());
        let mut q = Matrix::zeros(n + m, n + m);
        q.set_block(0, 0, &self.q_x);
        q.set_block(n, n, &self.q_u);
        let kb = model.k_bar();
        kb.transpose().matmul(&q).and_then(|t| t.matmul(&kb)).expect("dims")
    }

    /// Strong-convexity and smoothness constants `(alpha_K, l_K)`.
    pub fn curvature(&self, model: &PlantModel<S>) -> ModelResult<(S, S)> {
        let (lo, hi) = symmetric_eigen_bounds(&self.closed_loop_hessian(model))?;
        Ok((lo.max(S::zero()), hi))
    }

    /// Largest step size covered by the contraction argument, `2 / (alpha_K + l_K)`.
    pub fn max_step(&self, model: &PlantModel<S>) -> ModelResult<S> {
        let (a, l) = self.curvature(model)?;
        Ok(S::lit(2.0) / (a + l))
    }
}

/// Minimizer of `L(G_K u, (I + K G_K) u)` over `u ∈ S̄`; returns `(θ, η)`.
pub fn optimal_steady_state<S: Scalar>(
    manifold: &SteadyStateManifold<S>,
    cost: &QuadraticCost<S>,
    model: &PlantModel<S>,
) -> ModelResult<(Vector<S>, Vector<S>)> {
    let g = &model.g_k;
    let h_map = model.applied_map();
    let hessian = g
        .transpose()
        .matmul(&cost.q_x.matmul(g)?)?
        .add(&h_map.transpose().matmul(&cost.q_u.matmul(&h_map)?)?)?;
    let hessian = symmetrize(&hessian);
    let linear = g
        .tr_mul_vec(&cost.q_x.mul_vec(&cost.ref_x)?)?
        .add(&h_map.tr_mul_vec(&cost.q_u.mul_vec(&cost.ref_u)?)?)
        .scaled(-S::one());
    let problem = QpProblem::inequality_only(
        hessian,
        linear,
        manifold.shrunk.normals().clone(),
        manifold.shrunk.offsets().clone(),
    )?;
    let sol = solve_qp(&problem, S::lit(DEFAULT_TOL), DEFAULT_MAX_ITER);
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(ModelError::EmptyManifold),
        QpStatus::MaxIter => return Err(QpError::MaxIter(sol.iterations).into()),
    }
    let theta = g.mul_vec(&sol.x)?;
    Ok((theta, sol.x))
}

pub(crate) fn symmetrize<S: Scalar>(m: &Matrix<S>) -> Matrix<S> {
    let half = S::lit(0.5);
    Matrix::from_fn(m.rows(), m.cols(), |i, j| half * (m[(i, j)] + m[(j, i)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scalar_spec(w: f64, v: f64, mu: usize) -> ModelSpec<f64> {
        let box1 = |r: f64| {
            if r == 0.0 {
                Zonotope::origin(1)
            } else {
                Zonotope::symmetric_box(&[r])
            }
        };
        ModelSpec::new(
            Matrix::from_diag(&[1.0]),
            Matrix::from_diag(&[1.0]),
            Matrix::from_diag(&[-0.5]),
            mu,
            HPolytope::from_box(&[-2.0], &[2.0]).unwrap(),
            HPolytope::from_box(&[-1.0], &[1.0]).unwrap(),
            box1(w),
            box1(v),
        )
    }

    #[test]
    fn scalar_model_quantities() {
        let model = build_model(&scalar_spec(0.1, 0.0, 2)).unwrap();
        assert_eq!(model.a_k[(0, 0)], 0.5);
        assert!((model.g_k[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(model.mu_star, 1);
        assert_eq!(model.s_c.as_slice(), &[0.5, 1.0]);
    }

    #[test]
    fn double_integrator_index() {
        // deadbeat: A + BK = [[1,1],[-1,-1]] has A_K^2 = 0
        let spec = ModelSpec::new(
            Matrix::from_f64_rows(&[&[1.0, 1.0], &[0.0, 1.0]]).unwrap(),
            Matrix::from_f64_rows(&[&[0.0], &[1.0]]).unwrap(),
            Matrix::from_f64_rows(&[&[-1.0, -2.0]]).unwrap(),
            3,
            HPolytope::from_box(&[-10.0, -10.0], &[10.0, 10.0]).unwrap(),
            HPolytope::from_box(&[-5.0], &[5.0]).unwrap(),
            Zonotope::symmetric_box(&[0.01, 0.01]),
            Zonotope::origin(2),
        );
        let model = build_model(&spec).unwrap();
        assert_eq!(model.mu_star, 2);
        assert!(matrix_power(&model.a_k, 2).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn rejects_unstable_feedback() {
        let mut spec = scalar_spec(0.1, 0.0, 2);
        spec.k = Matrix::from_diag(&[0.0]);
        assert!(matches!(build_model(&spec), Err(ModelError::NotSchur(_))));
    }

    #[test]
    fn rejects_rpi_outside_x() {
        let spec = scalar_spec(1.5, 0.0, 2);
        assert_eq!(build_model(&spec).unwrap_err(), ModelError::RpiNotInX);
    }

    #[test]
    fn rejects_bad_sets() {
        let mut spec = scalar_spec(0.1, 0.0, 2);
        spec.w_set = Zonotope::from_box(&[0.0], &[0.1]).unwrap();
        assert_eq!(build_model(&spec).unwrap_err(), ModelError::DisturbanceSet("W"));
        let mut spec = scalar_spec(0.1, 0.0, 2);
        spec.x_set = HPolytope::from_box(&[0.0], &[2.0]).unwrap();
        assert_eq!(build_model(&spec).unwrap_err(), ModelError::ConstraintSet("X"));
    }

    #[test]
    fn w_bar_examples() {
        let a = Matrix::from_diag(&[1.0]);
        let v = Zonotope::symmetric_box(&[1.0]);
        let wb = build_w_bar(&a, &Zonotope::origin(1), &v).unwrap();
        assert_eq!(wb.interval_hull().1.as_slice(), &[2.0]);
        let w = Zonotope::symmetric_box(&[0.3]);
        let wb = build_w_bar(&a, &w, &Zonotope::origin(1)).unwrap();
        assert_eq!(wb, w);
        assert!(build_w_bar(&a, &Zonotope::origin(1), &Zonotope::origin(1)).unwrap().is_point());
    }

    #[test]
    fn tightening_tables_scalar() {
        let mut spec = scalar_spec(0.2, 0.0, 3);
        spec.rpi_epsilon = Some(1e-3);
        let model = build_model(&spec).unwrap();
        let tables = build_tightening(&model).unwrap();
        // stage 1: X ⊖ ([-0.2,0.2] ⊕ [-0.1,0.1]) = [-1.7, 1.7]
        let off = tables.state_stage[1].offsets();
        assert!((off[0] - 1.7).abs() < 1e-12 && (off[1] - 1.7).abs() < 1e-12);
        assert_eq!(tables.input_stage[0].offsets(), *model.u_set.offsets());
        for kind in [&tables.state_stage, &tables.input_stage] {
            for w in kind.windows(2) {
                assert!(w[0].deductions.iter().zip(w[1].deductions.iter()).all(|(a, b)| a <= b));
            }
        }
    }

    #[test]
    fn no_tightening_without_disturbance() {
        let model = build_model(&scalar_spec(0.0, 0.0, 2)).unwrap();
        let tables = build_tightening(&model).unwrap();
        for t in tables.state_stage.iter().chain(&tables.input_stage) {
            assert!(t.deductions.iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn membership_rollout_scalar() {
        let model = build_model(&scalar_spec(0.0, 0.0, 2)).unwrap();
        let tables = build_tightening(&model).unwrap();
        assert!(membership_zu(&tables, &[0.0], &[0.0, 0.0]).0);
        // x1 = 0.5 * 2 + 1 = 2 (boundary), x2 = 0.5 * 2 + 0 = 1; input stage 0: 1 - 0.5*2 = 0
        assert!(membership_zu(&tables, &[2.0], &[1.0, 0.0]).0);
        let (ok, viol) = membership_zu(&tables, &[2.0], &[1.01, 0.0]);
        assert!(!ok && (viol - 0.01).abs() < 1e-12);
    }

    #[test]
    fn manifold_scalar_interval() {
        // X ⊖ P = [-1.5, 1.5] through G_K = 2 gives |u| <= 0.75; the applied
        // input u + K G_K u = 0 so U imposes nothing.
        let mut spec = scalar_spec(0.25, 0.0, 2);
        spec.rpi_epsilon = Some(1e-6);
        let model = build_model(&spec).unwrap();
        let p = model.p_rpi.clone();
        assert!((p.p.radius() - 0.5).abs() < 1e-5);
        let s = steady_state_manifold(&model, &p, 1.0).unwrap();
        for u in [-0.74, 0.0, 0.74] {
            assert!(s.contains_u(&[u], 0.0));
        }
        assert!(!s.contains_u(&[0.76], 0.0));
        let sbar = steady_state_manifold(&model, &p, 0.5).unwrap();
        assert!(!sbar.contains_u(&[0.5], 0.0) && sbar.contains_u(&[0.37], 0.0));
    }

    #[test]
    fn optimal_steady_state_examples() {
        let model = build_model(&scalar_spec(0.1, 0.0, 2)).unwrap();
        let s = steady_state_manifold(&model, &model.p_rpi, 0.99).unwrap();
        let cost = QuadraticCost::diagonal(&[1.0], &[1.0], &[0.5], &[0.0]).unwrap();
        let (theta, eta) = optimal_steady_state(&s, &cost, &model).unwrap();
        assert!((theta[0] - 0.5).abs() < 1e-12 && (eta[0] - 0.25).abs() < 1e-12);
        let far = QuadraticCost::diagonal(&[1.0], &[1.0], &[10.0], &[0.0]).unwrap();
        let (theta, eta) = optimal_steady_state(&s, &far, &model).unwrap();
        let upper = s.shrunk.offsets()[0] / s.shrunk.normals()[(0, 0)];
        assert!((eta[0] - upper).abs() < 1e-12);
        assert!((theta[0] - 2.0 * eta[0]).abs() < 1e-12);
        let (theta2, _) = optimal_steady_state(&s, &far.scaled(2.0), &model).unwrap();
        assert!((theta2[0] - theta[0]).abs() < 1e-12);
    }

    #[test]
    fn curvature_of_identity_weights() {
        let model = build_model(&scalar_spec(0.1, 0.0, 2)).unwrap();
        let cost = QuadraticCost::diagonal(&[1.0], &[1.0], &[0.0], &[0.0]).unwrap();
        let (a, l) = cost.curvature(&model).unwrap();
        // K̄'K̄ = [[1.25, -0.5], [-0.5, 1]]
        let tr: f64 = 2.25;
        let det = 1.0;
        let disc: f64 = ((tr * tr) / 4.0 - det).sqrt();
        assert!((a - (tr / 2.0 - disc)).abs() < 1e-10 && (l - (tr / 2.0 + disc)).abs() < 1e-10);
    }
}
