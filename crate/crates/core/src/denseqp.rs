//! Dense strictly convex quadratic programming.
//!
//! ```text
//!     minimize    1/2 x' H x + q' x
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//! ```
//!
//! Solved with the Goldfarb-Idnani dual active-set method. The method starts
//! from the unconstrained minimizer and adds violated constraints one at a
//! time, so infeasibility shows up as a violated constraint that cannot be
//! added. The active-set projections are recomputed from scratch every
//! iteration; problem sizes here are tens of variables, so factor updates
//! are not worth their bookkeeping.

use thiserror::Error;

use crate::convexsets::Halfspaces;
use crate::matlin::{dot, Cholesky, LinalgError, Matrix, Vector};
use crate::scalar::Scalar;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("hessian is not positive definite: {0}")]
    NotPositiveDefinite(LinalgError),
    #[error("inconsistent problem dimensions: {0}")]
    Dimensions(String),
    #[error("target set is empty")]
    Infeasible,
    #[error("solver stopped after {0} iterations without converging")]
    MaxIter(usize),
}

#[derive(Clone, Debug)]
pub struct QpProblem<S> {
    pub hessian: Matrix<S>,
    pub linear: Vector<S>,
    pub ineq_normals: Matrix<S>,
    pub ineq_offsets: Vector<S>,
    pub eq_normals: Matrix<S>,
    pub eq_offsets: Vector<S>,
}

impl<S: Scalar> QpProblem<S> {
    /// Validates dimensions, symmetry (within 1e-10 relative) and definiteness.
    pub fn new(
        hessian: Matrix<S>,
        linear: Vector<S>,
        ineq_normals: Matrix<S>,
        ineq_offsets: Vector<S>,
        eq_normals: Matrix<S>,
        eq_offsets: Vector<S>,
    ) -> Result<Self, QpError> {
        let n = hessian.rows();
        let dims_ok = hessian.is_square()
            && linear.dim() == n
            && ineq_normals.cols() == n
            && ineq_normals.rows() == ineq_offsets.dim()
            && eq_normals.cols() == n
            && eq_normals.rows() == eq_offsets.dim();
        if !dims_ok {
            return Err(QpError::Dimensions(format!(
                "hessian {:?}, linear {}, ineq {:?}/{}, eq {:?}/{}",
                hessian.shape(),
                linear.dim(),
                ineq_normals.shape(),
                ineq_offsets.dim(),
                eq_normals.shape(),
                eq_offsets.dim()
            )));
        }
        let scale = hessian.max_abs().max(S::one());
        let mut asym = S::zero();
        for i in 0..n {
            for j in 0..i {
                asym = asym.max((hessian[(i, j)] - hessian[(j, i)]).abs());
            }
        }
        if asym > S::lit(1e-10) * scale {
            return Err(QpError::NotSymmetric(asym.as_f64()));
        }
        Cholesky::factor(&hessian).map_err(QpError::NotPositiveDefinite)?;
        Ok(QpProblem {
            hessian,
            linear,
            ineq_normals,
            ineq_offsets,
            eq_normals,
            eq_offsets,
        })
    }

    /// Problem without equality constraints.
    pub fn inequality_only(
        hessian: Matrix<S>,
        linear: Vector<S>,
        ineq_normals: Matrix<S>,
        ineq_offsets: Vector<S>,
    ) -> Result<Self, QpError> {
        let n = hessian.rows();
        Self::new(
            hessian,
            linear,
            ineq_normals,
            ineq_offsets,
            Matrix::zeros(0, n),
            Vector::zeros(0),
        )
    }

    pub fn dim(&self) -> usize {
        self.hessian.rows()
    }

    pub fn objective(&self, x: &[S]) -> S {
        let hx = self.hessian.mul_vec(x).expect("dims");
        S::lit(0.5) * dot(x, &hx) + dot(&self.linear, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct QpSolution<S> {
    pub x: Vector<S>,
    pub kkt_residual: S,
    pub status: QpStatus,
    /// Multipliers of `A_in x <= b_in` (nonnegative at optimum).
    pub ineq_multipliers: Vector<S>,
    pub eq_multipliers: Vector<S>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
enum ConstraintRef {
    Eq(usize),
    Ineq(usize),
}

#[derive(Clone, Debug)]
struct ActiveConstraint<S> {
    which: ConstraintRef,
    // constraint in `normal' x >= rhs` orientation
    normal: Vector<S>,
    rhs: S,
    // +1 or -1: orientation relative to the caller's row
    orientation: S,
}

struct Workspace<'a, S: Scalar> {
    problem: &'a QpProblem<S>,
    chol: Cholesky<S>,
}

impl<S: Scalar> Workspace<'_, S> {
    /// Primal step `z` and dual step `r` for adding `normal` to `active`.
    fn directions(
        &self,
        active: &[ActiveConstraint<S>],
        normal: &[S],
    ) -> Result<(Vector<S>, Vector<S>), QpError> {
        let hinv_n = self.chol.solve(normal).map_err(QpError::NotPositiveDefinite)?;
        if active.is_empty() {
            return Ok((hinv_n, Vector::zeros(0)));
        }
        let (m, hinv_cols) = self.active_gram(active)?;
        let rhs: Vector<S> = active.iter().map(|a| dot(&a.normal, &hinv_n)).collect();
        let r = solve_small(&m, &rhs)?;
        let mut z = hinv_n;
        for (j, col) in hinv_cols.iter().enumerate() {
            z.axpy(-r[j], col);
        }
        Ok((z, r))
    }

    /// Returns `N' H^-1 N` and the columns `H^-1 n_j`.
    fn active_gram(
        &self,
        active: &[ActiveConstraint<S>],
    ) -> Result<(Matrix<S>, Vec<Vector<S>>), QpError> {
        let cols: Vec<Vector<S>> = active
            .iter()
            .map(|a| self.chol.solve(&a.normal))
            .collect::<Result<_, _>>()
            .map_err(QpError::NotPositiveDefinite)?;
        let k = active.len();
        let m = Matrix::from_fn(k, k, |i, j| dot(&active[i].normal, &cols[j]));
        Ok((m, cols))
    }

    /// Exact minimizer of the objective subject to the active set holding with equality.
    fn polish(&self, active: &[ActiveConstraint<S>]) -> Result<(Vector<S>, Vector<S>), QpError> {
        let q = &self.problem.linear;
        let hinv_q = self.chol.solve(q).map_err(QpError::NotPositiveDefinite)?;
        if active.is_empty() {
            return Ok((hinv_q.scaled(-S::one()), Vector::zeros(0)));
        }
        let (m, cols) = self.active_gram(active)?;
        let rhs: Vector<S> = active
            .iter()
            .map(|a| a.rhs + dot(&a.normal, &hinv_q))
            .collect();
        let u = solve_small(&m, &rhs)?;
        let mut x = hinv_q.scaled(-S::one());
        for (j, col) in cols.iter().enumerate() {
            x.axpy(u[j], col);
        }
        Ok((x, u))
    }
}

fn solve_small<S: Scalar>(m: &Matrix<S>, rhs: &[S]) -> Result<Vector<S>, QpError> {
    match Cholesky::factor_with_tol(m, S::zero()) {
        Ok(ch) => ch.solve(rhs).map_err(QpError::NotPositiveDefinite),
        Err(e) => Err(QpError::NotPositiveDefinite(e)),
    }
}

fn dependence_tol<S: Scalar>() -> S {
    S::epsilon().powf(S::lit(0.75)) * S::lit(100.0)
}

/// Solves the problem; see the module docs for the method. Deterministic:
/// ties in constraint selection go to the lowest index.
pub fn solve_qp<S: Scalar>(problem: &QpProblem<S>, tol: S, max_iter: usize) -> QpSolution<S> {
    let n = problem.dim();
    let n_in = problem.ineq_offsets.dim();
    let n_eq = problem.eq_offsets.dim();
    let chol = Cholesky::factor(&problem.hessian).expect("validated by QpProblem::new");
    let ws = Workspace { problem, chol };

    let mut x = ws
        .chol
        .solve(&problem.linear)
        .expect("dims")
        .scaled(-S::one());
    let mut active: Vec<ActiveConstraint<S>> = Vec::new();
    let mut u: Vec<S> = Vec::new();
    let mut is_active = vec![false; n_in];
    let mut next_eq = 0;
    let mut iterations = 0;
    let feas_tol = tol * S::lit(0.1);
    let mut status = QpStatus::Optimal;

    'outer: loop {
        // choose constraint to add
        let (which, normal, rhs, orientation) = if next_eq < n_eq {
            let row = problem.eq_normals.row(next_eq);
            let resid = dot(row, &x) - problem.eq_offsets[next_eq];
            next_eq += 1;
            // orient so the constraint reads as violated in `>=` form
            let orientation = if resid > S::zero() { S::one() } else { -S::one() };
            let normal: Vector<S> = row.iter().map(|&a| -orientation * a).collect();
            let rhs = -orientation * problem.eq_offsets[next_eq - 1];
            if resid.abs() <= S::zero() {
                active.push(ActiveConstraint {
                    which: ConstraintRef::Eq(next_eq - 1),
                    normal,
                    rhs,
                    orientation,
                });
                u.push(S::zero());
                continue;
            }
            (ConstraintRef::Eq(next_eq - 1), normal, rhs, orientation)
        } else {
            let mut worst: Option<(usize, S)> = None;
            for i in 0..n_in {
                if is_active[i] {
                    continue;
                }
                let row = problem.ineq_normals.row(i);
                let scale = crate::matlin::norm(row).max(S::min_positive_value());
                let viol = (dot(row, &x) - problem.ineq_offsets[i]) / scale;
                if viol > feas_tol && worst.is_none_or(|(_, w)| viol > w) {
                    worst = Some((i, viol));
                }
            }
            match worst {
                None => break 'outer,
                Some((i, _)) => {
                    let normal: Vector<S> =
                        problem.ineq_normals.row(i).iter().map(|&a| -a).collect();
                    (ConstraintRef::Ineq(i), normal, -problem.ineq_offsets[i], S::one())
                }
            }
        };

        let mut u_plus = S::zero();
        loop {
            iterations += 1;
            if iterations > max_iter {
                status = QpStatus::MaxIter;
                break 'outer;
            }
            let (z, r) = match ws.directions(&active, &normal) {
                Ok(d) => d,
                Err(_) => {
                    status = QpStatus::Infeasible;
                    break 'outer;
                }
            };
            // blocking active inequality for the dual step
            let mut t1: Option<(usize, S)> = None;
            for (j, a) in active.iter().enumerate() {
                if matches!(a.which, ConstraintRef::Ineq(_)) && r[j] > S::zero() {
                    let ratio = u[j] / r[j];
                    if t1.is_none_or(|(_, t)| ratio < t) {
                        t1 = Some((j, ratio));
                    }
                }
            }
            let hinv_n_norm = ws.chol.solve(&normal).map(|v| v.norm()).unwrap_or(S::one());
            let z_null = z.norm() <= dependence_tol::<S>() * hinv_n_norm.max(S::min_positive_value());
            let slack = dot(&normal, &x) - rhs;
            let t2 = if z_null {
                None
            } else {
                Some((-slack / dot(&z, &normal)).max(S::zero()))
            };

            match (t1, t2) {
                (None, None) => {
                    status = QpStatus::Infeasible;
                    break 'outer;
                }
                (Some((l, t)), None) => {
                    for (uj, rj) in u.iter_mut().zip(r.iter()) {
                        *uj -= t * *rj;
                    }
                    u_plus += t;
                    active.remove(l);
                    u.remove(l);
                    refresh_flags(&active, &mut is_active);
                }
                (t1, Some(full)) => {
                    let (t, partial) = match t1 {
                        Some((l, tp)) if tp < full => (tp, Some(l)),
                        _ => (full, None),
                    };
                    x.axpy(t, &z);
                    for (uj, rj) in u.iter_mut().zip(r.iter()) {
                        *uj -= t * *rj;
                    }
                    u_plus += t;
                    match partial {
                        None => {
                            active.push(ActiveConstraint {
                                which,
                                normal: normal.clone(),
                                rhs,
                                orientation,
                            });
                            u.push(u_plus);
                            refresh_flags(&active, &mut is_active);
                            continue 'outer;
                        }
                        Some(l) => {
                            active.remove(l);
                            u.remove(l);
                            refresh_flags(&active, &mut is_active);
                        }
                    }
                }
            }
        }
    }

    if status == QpStatus::Optimal {
        if let Ok((xp, up)) = ws.polish(&active) {
            let multipliers_ok = active
                .iter()
                .zip(up.iter())
                .all(|(a, &uj)| matches!(a.which, ConstraintRef::Eq(_)) || uj >= -tol);
            if multipliers_ok && xp.is_finite() {
                let before = kkt_residual(problem, &x, &active, &u);
                let after = kkt_residual(problem, &xp, &active, &up);
                if after <= before {
                    x = xp;
                    u = up.into_vec();
                }
            }
        }
    }

    let mut ineq_multipliers = Vector::zeros(n_in);
    let mut eq_multipliers = Vector::zeros(n_eq);
    for (a, &uj) in active.iter().zip(u.iter()) {
        match a.which {
            ConstraintRef::Ineq(i) => ineq_multipliers[i] = uj,
            // H x + q = u * normal = -u * orientation * row
            ConstraintRef::Eq(i) => eq_multipliers[i] = uj * a.orientation,
        }
    }
    let kkt = kkt_residual(problem, &x, &active, &u);
    if status == QpStatus::Optimal && !(kkt <= tol) {
        status = QpStatus::MaxIter;
    }
    debug_assert_eq!(x.dim(), n);
    QpSolution {
        x,
        kkt_residual: kkt,
        status,
        ineq_multipliers,
        eq_multipliers,
        iterations,
    }
}

fn refresh_flags<S: Scalar>(active: &[ActiveConstraint<S>], flags: &mut [bool]) {
    flags.iter_mut().for_each(|f| *f = false);
    for a in active {
        if let ConstraintRef::Ineq(i) = a.which {
            flags[i] = true;
        }
    }
}

/// Max of stationarity, primal infeasibility, complementarity and dual
/// infeasibility (infinity norms).
fn kkt_residual<S: Scalar>(
    problem: &QpProblem<S>,
    x: &[S],
    active: &[ActiveConstraint<S>],
    u: &[S],
) -> S {
    // stationarity: H x + q - sum u_j n_j
    let mut grad = problem.hessian.mul_vec(x).expect("dims").add(&problem.linear);
    for (a, &uj) in active.iter().zip(u) {
        grad.axpy(-uj, &a.normal);
    }
    let mut worst = grad.norm_inf();
    for i in 0..problem.eq_offsets.dim() {
        let r = dot(problem.eq_normals.row(i), x) - problem.eq_offsets[i];
        worst = worst.max(r.abs());
    }
    for i in 0..problem.ineq_offsets.dim() {
        let r = dot(problem.ineq_normals.row(i), x) - problem.ineq_offsets[i];
        worst = worst.max(r.max(S::zero()));
    }
    for (a, &uj) in active.iter().zip(u) {
        if let ConstraintRef::Ineq(i) = a.which {
            let slack = problem.ineq_offsets[i] - dot(problem.ineq_normals.row(i), x);
            worst = worst.max((uj * slack).abs()).max(-uj);
        }
    }
    worst
}

/// Euclidean projection of `x` onto `{y in set : eq.0 y = eq.1}`.
pub fn project_polytope<S: Scalar, H: Halfspaces<S> + ?Sized>(
    x: &[S],
    set: &H,
    eq: Option<(&Matrix<S>, &Vector<S>)>,
) -> Result<Vector<S>, QpError> {
    let n = x.len();
    let eq_ok = eq.is_none_or(|(m, b)| {
        m.mul_vec(x).is_ok_and(|mx| mx.iter().zip(b.iter()).all(|(a, b)| a == b))
    });
    if eq_ok && set.dim() == n && set.max_violation(x) <= S::zero() {
        return Ok(Vector::from_slice(x));
    }
    let two = S::lit(2.0);
    let hessian = Matrix::identity(n).scaled(two);
    let linear: Vector<S> = x.iter().map(|&v| -two * v).collect();
    let (eq_normals, eq_offsets) = match eq {
        Some((m, b)) => (m.clone(), b.clone()),
        None => (Matrix::zeros(0, n), Vector::zeros(0)),
    };
    let problem = QpProblem::new(
        hessian,
        linear,
        set.normals().clone(),
        set.effective_offsets(),
        eq_normals,
        eq_offsets,
    )?;
    let sol = solve_qp(&problem, S::lit(DEFAULT_TOL), DEFAULT_MAX_ITER);
    match sol.status {
        QpStatus::Optimal => Ok(sol.x),
        QpStatus::Infeasible => Err(QpError::Infeasible),
        QpStatus::MaxIter => Err(QpError::MaxIter(sol.iterations)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convexsets::HPolytope;

    fn unit_box() -> HPolytope<f64> {
        HPolytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap()
    }

    fn projection_qp(c: &[f64], set: &HPolytope<f64>) -> QpSolution<f64> {
        let problem = QpProblem::inequality_only(
            Matrix::identity(2).scaled(2.0),
            Vector::from_slice(&[-2.0 * c[0], -2.0 * c[1]]),
            set.normals().clone(),
            set.offsets().clone(),
        )
        .unwrap();
        solve_qp(&problem, 1e-8, 10_000)
    }

    #[test]
    fn unconstrained_projection_returns_center() {
        let problem = QpProblem::inequality_only(
            Matrix::identity(3).scaled(2.0),
            Vector::from_slice(&[-2.0, 4.0, -6.0]),
            Matrix::zeros(0, 3),
            Vector::zeros(0),
        )
        .unwrap();
        let sol = solve_qp(&problem, 1e-8, 100);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.x.distance(&[1.0, -2.0, 3.0]) < 1e-14);
    }

    #[test]
    fn box_clipping() {
        let sol = projection_qp(&[2.0, 0.0], &unit_box());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && sol.x[1].abs() < 1e-12);
        assert!(sol.kkt_residual <= 1e-8);
        let sol = projection_qp(&[0.3, 0.4], &unit_box());
        assert!(sol.x.distance(&[0.3, 0.4]) < 1e-15);
    }

    #[test]
    fn detects_infeasibility() {
        // x <= -1 and -x <= -1 (x >= 1)
        let problem = QpProblem::inequality_only(
            Matrix::identity(1),
            Vector::zeros(1),
            Matrix::from_f64_rows(&[&[1.0], &[-1.0]]).unwrap(),
            Vector::from_slice(&[-1.0, -1.0]),
        )
        .unwrap();
        assert_eq!(solve_qp(&problem, 1e-8, 100).status, QpStatus::Infeasible);
    }

    #[test]
    fn equality_and_inequality_mix() {
        // min (x-3)^2 + (y-3)^2 s.t. x + y = 2, x <= 0.5
        let problem = QpProblem::<f64>::new(
            Matrix::identity(2).scaled(2.0),
            Vector::from_slice(&[-6.0, -6.0]),
            Matrix::from_f64_rows(&[&[1.0, 0.0]]).unwrap(),
            Vector::from_slice(&[0.5]),
            Matrix::from_f64_rows(&[&[1.0, 1.0]]).unwrap(),
            Vector::from_slice(&[2.0]),
        )
        .unwrap();
        let sol = solve_qp(&problem, 1e-8, 100);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 0.5).abs() < 1e-12 && (sol.x[1] - 1.5).abs() < 1e-12);
        assert!(sol.ineq_multipliers[0] >= 0.0);
    }

    #[test]
    fn rejects_bad_hessians() {
        let asym = Matrix::<f64>::from_f64_rows(&[&[1.0, 0.5], &[0.0, 1.0]]).unwrap();
        assert!(matches!(
            QpProblem::inequality_only(asym, Vector::zeros(2), Matrix::zeros(0, 2), Vector::zeros(0)),
            Err(QpError::NotSymmetric(_))
        ));
        let indefinite = Matrix::from_diag(&[1.0, -1.0]);
        assert!(matches!(
            QpProblem::inequality_only(
                indefinite,
                Vector::zeros(2),
                Matrix::zeros(0, 2),
                Vector::zeros(0)
            ),
            Err(QpError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let b = unit_box();
        assert_eq!(project_polytope(&[0.2, -0.1], &b, None).unwrap().as_slice(), &[0.2, -0.1]);
        let p: Vector<f64> = project_polytope(&[3.0, 3.0], &b, None).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
        // y1 = 2 y2 inside [-2,2]^2, target (0,1): y = (2t, t), minimize (2t)^2 + (t-1)^2 -> t = 1/5
        let big = HPolytope::from_box(&[-2.0, -2.0], &[2.0, 2.0]).unwrap();
        let eq = Matrix::from_f64_rows(&[&[1.0, -2.0]]).unwrap();
        let p: Vector<f64> = project_polytope(&[0.0, 1.0], &big, Some((&eq, &Vector::zeros(1)))).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn projection_onto_empty_set_errors() {
        let empty = HPolytope::new(
            Matrix::from_f64_rows(&[&[1.0], &[-1.0]]).unwrap(),
            Vector::from_slice(&[-1.0, -1.0]),
        )
        .unwrap();
        assert_eq!(project_polytope(&[0.0], &empty, None), Err(QpError::Infeasible));
    }

    #[test]
    fn degenerate_active_set_with_redundant_rows() {
        // the same facet listed three times plus a corner
        let normals = Matrix::from_f64_rows(&[
            &[1.0, 0.0],
            &[1.0, 0.0],
            &[2.0, 0.0],
            &[0.0, 1.0],
            &[1.0, 1.0],
        ])
        .unwrap();
        let set = HPolytope::new(normals, Vector::from_slice(&[1.0, 1.0, 2.0, 1.0, 2.0])).unwrap();
        let p: Vector<f64> = project_polytope(&[5.0, 5.0], &set, None).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-10 && (p[1] - 1.0).abs() < 1e-10);
    }
}
