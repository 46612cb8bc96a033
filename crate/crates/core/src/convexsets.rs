//! Halfspace polytopes, zonotopes and the operations between them.
//!
//! Constraint sets are kept as `{x : A x <= b}`; everything derived from
//! disturbances is a zonotope `c + G [-1, 1]^q`. Linear images and Minkowski
//! sums of zonotopes are closed form, and subtracting a zonotope from a
//! halfspace set only moves each offset by a support value.

use std::collections::HashSet;

use thiserror::Error;

use crate::denseqp::{project_polytope, solve_qp, QpError, QpProblem, QpStatus};
use crate::matlin::{determinant, dot, norm, numeric_rank, LinalgError, Matrix, Vector, RANK_TOL};
use crate::scalar::Scalar;

/// Default membership tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SetError {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    DimensionMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    #[error("normal row {0} is zero")]
    ZeroNormal(usize),
    #[error("preimage is empty: row {0} reads 0 <= {1}")]
    EmptyPreimage(usize, f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

pub type SetResult<T> = Result<T, SetError>;

fn check_dim(op: &'static str, left: usize, right: usize) -> SetResult<()> {
    if left == right {
        Ok(())
    } else {
        Err(SetError::DimensionMismatch { op, left, right })
    }
}

/// Anything described by `normals * x <= offsets`.
pub trait Halfspaces<S: Scalar> {
    fn dim(&self) -> usize;
    fn normals(&self) -> &Matrix<S>;
    fn effective_offsets(&self) -> Vector<S>;

    /// Largest `a_i' x - b_i`; negative infinity for a set without rows.
    fn max_violation(&self, x: &[S]) -> S {
        let offsets = self.effective_offsets();
        let normals = self.normals();
        (0..normals.rows())
            .map(|i| dot(normals.row(i), x) - offsets[i])
            .fold(S::neg_infinity(), S::max)
    }

    fn contains(&self, x: &[S], tol: S) -> bool {
        x.len() == self.dim() && self.max_violation(x) <= tol
    }

    /// Exact emptiness test: the projection QP of the origin is infeasible.
    fn is_empty(&self) -> bool {
        let origin = vec![S::zero(); self.dim()];
        matches!(
            project_polytope(&origin, self, None),
            Err(QpError::Infeasible)
        )
    }

    fn to_polytope(&self) -> HPolytope<S> {
        HPolytope {
            normals: self.normals().clone(),
            offsets: self.effective_offsets(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HPolytope<S> {
    normals: Matrix<S>,
    offsets: Vector<S>,
}

impl<S: Scalar> HPolytope<S> {
    pub fn new(normals: Matrix<S>, offsets: Vector<S>) -> SetResult<Self> {
        check_dim("HPolytope::new", normals.rows(), offsets.dim())?;
        if !offsets.is_finite() {
            return Err(LinalgError::NonFinite(0).into());
        }
        for i in 0..normals.rows() {
            if normals.row(i).iter().all(|&v| v == S::zero()) {
                return Err(SetError::ZeroNormal(i));
            }
        }
        Ok(HPolytope { normals, offsets })
    }

    /// Axis-aligned box `lo <= x <= hi`, rows ordered `x_0 <= hi_0, -x_0 <= -lo_0, x_1 ...`.
    pub fn from_box(lo: &[S], hi: &[S]) -> SetResult<Self> {
        check_dim("HPolytope::from_box", lo.len(), hi.len())?;
        let n = lo.len();
        let mut normals = Matrix::zeros(2 * n, n);
        let mut offsets = Vector::zeros(2 * n);
        for i in 0..n {
            normals[(2 * i, i)] = S::one();
            offsets[2 * i] = hi[i];
            normals[(2 * i + 1, i)] = -S::one();
            offsets[2 * i + 1] = -lo[i];
        }
        Self::new(normals, offsets)
    }

    /// The whole space (no rows).
    pub fn universe(dim: usize) -> Self {
        HPolytope {
            normals: Matrix::zeros(0, dim),
            offsets: Vector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.normals.cols()
    }

    pub fn num_facets(&self) -> usize {
        self.normals.rows()
    }

    pub fn normals(&self) -> &Matrix<S> {
        &self.normals
    }

    pub fn offsets(&self) -> &Vector<S> {
        &self.offsets
    }

    /// `factor * P` for `factor > 0` (offsets scaled, normals kept).
    pub fn scaled(&self, factor: S) -> Self {
        HPolytope {
            normals: self.normals.clone(),
            offsets: self.offsets.scaled(factor),
        }
    }

    pub fn intersect(&self, other: &HPolytope<S>) -> SetResult<Self> {
        check_dim("HPolytope::intersect", self.dim(), other.dim())?;
        Ok(HPolytope {
            normals: self.normals.vstack(&other.normals)?,
            offsets: Vector::concat(&[&self.offsets, &other.offsets]),
        })
    }

    /// `{y : m y in P}`. Rows whose normal vanishes under `m` are dropped when
    /// trivially satisfied and reported as an error otherwise.
    pub fn preimage(&self, m: &Matrix<S>) -> SetResult<Self> {
        check_dim("HPolytope::preimage", self.dim(), m.rows())?;
        let mapped = self.normals.matmul(m)?;
        let scale = mapped.max_abs().max(S::one());
        let mut rows = Vec::new();
        let mut offsets = Vec::new();
        for i in 0..mapped.rows() {
            let row = mapped.row(i);
            if row.iter().all(|v| v.abs() <= S::epsilon() * scale) {
                if self.offsets[i] < S::zero() {
                    return Err(SetError::EmptyPreimage(i, self.offsets[i].as_f64()));
                }
                continue;
            }
            rows.push(row.to_vec());
            offsets.push(self.offsets[i]);
        }
        let normals = Matrix::from_rows(&rows, m.cols())?;
        HPolytope::new(normals, offsets.into())
    }

    /// Every offset positive after normalizing rows.
    pub fn contains_origin_interior(&self) -> bool {
        self.offsets.iter().all(|&b| b > S::zero())
    }

    /// Exact boundedness test: the recession cone `{d : A d <= 0}` is `{0}`.
    ///
    /// With `rank A = n` the cone is pointed, and any nonzero cone element
    /// implies an extreme ray on which `n - 1` independent rows vanish.
    pub fn is_bounded(&self) -> bool {
        let n = self.dim();
        if n == 0 {
            return true;
        }
        if numeric_rank(&self.normals, S::lit(RANK_TOL)) < n {
            return false;
        }
        let rows = normalized_rows(&self.normals);
        let ray_tol = S::lit(1e-12);
        let mut found_ray = false;
        for_each_subset(rows.len(), n - 1, |subset| {
            if found_ray {
                return;
            }
            let sub: Vec<&[S]> = subset.iter().map(|&i| rows[i].as_slice()).collect();
            let Some(d) = generalized_cross(&sub, n) else {
                return;
            };
            for sign in [S::one(), -S::one()] {
                if rows.iter().all(|r| sign * dot(r, &d) <= ray_tol) {
                    found_ray = true;
                }
            }
        });
        !found_ray
    }

    /// Nonempty and bounded.
    pub fn is_compact(&self) -> bool {
        self.is_bounded() && !Halfspaces::is_empty(self)
    }
}

impl<S: Scalar> Halfspaces<S> for HPolytope<S> {
    fn dim(&self) -> usize {
        self.normals.cols()
    }
    fn normals(&self) -> &Matrix<S> {
        &self.normals
    }
    fn effective_offsets(&self) -> Vector<S> {
        self.offsets.clone()
    }
}

/// Unit-normalized copies of the rows of `m`.
fn normalized_rows<S: Scalar>(m: &Matrix<S>) -> Vec<Vector<S>> {
    (0..m.rows())
        .map(|i| {
            let r = Vector::from_slice(m.row(i));
            let len = r.norm();
            r.scaled(S::one() / len)
        })
        .collect()
}

/// Calls `f` with every `k`-subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // rightmost position that can still advance
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Unit vector orthogonal to `n - 1` vectors in `R^n`, via signed minors.
/// `None` when the vectors are linearly dependent.
fn generalized_cross<S: Scalar>(vectors: &[&[S]], n: usize) -> Option<Vector<S>> {
    debug_assert_eq!(vectors.len() + 1, n);
    if n == 1 {
        return Some(Vector::from_slice(&[S::one()]));
    }
    let mut d = Vector::zeros(n);
    for j in 0..n {
        let minor = Matrix::from_fn(n - 1, n - 1, |r, c| {
            let col = if c < j { c } else { c + 1 };
            vectors[r][col]
        });
        let det = determinant(&minor).unwrap_or(S::zero());
        d[j] = if (j + n - 1).is_multiple_of(2) { det } else { -det };
    }
    let len = d.norm();
    let scale: S = vectors.iter().map(|v| norm(v)).fold(S::one(), |a, b| a * b);
    if !(len > S::lit(1e-10) * scale) {
        return None;
    }
    Some(d.scaled(S::one() / len))
}

/// Flips `d` so its first nonzero entry is positive.
fn canonical_sign<S: Scalar>(d: Vector<S>) -> Vector<S> {
    let tiny = S::lit(1e-14);
    match d.iter().find(|v| v.abs() > tiny) {
        Some(&v) if v < S::zero() => d.scaled(-S::one()),
        _ => d,
    }
}

/// Unit directions deduplicated up to sign, keyed on a rounded copy.
struct DirectionSet<S> {
    seen: HashSet<Vec<i64>>,
    dirs: Vec<Vector<S>>,
}

impl<S: Scalar> DirectionSet<S> {
    fn new() -> Self {
        DirectionSet {
            seen: HashSet::new(),
            dirs: Vec::new(),
        }
    }

    fn push(&mut self, d: Vector<S>) {
        let d = canonical_sign(d);
        let key = d.iter().map(|v| (v.as_f64() * 1e9).round() as i64).collect();
        if self.seen.insert(key) {
            self.dirs.push(d);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Zonotope<S> {
    center: Vector<S>,
    generators: Matrix<S>,
}

impl<S: Scalar> Zonotope<S> {
    pub fn new(center: Vector<S>, generators: Matrix<S>) -> SetResult<Self> {
        check_dim("Zonotope::new", center.dim(), generators.rows())?;
        if !center.is_finite() {
            return Err(LinalgError::NonFinite(0).into());
        }
        Ok(Zonotope { center, generators })
    }

    /// The single point `c`.
    pub fn point(center: Vector<S>) -> Self {
        let n = center.dim();
        Zonotope {
            center,
            generators: Matrix::zeros(n, 0),
        }
    }

    pub fn origin(dim: usize) -> Self {
        Self::point(Vector::zeros(dim))
    }

    /// Box `lo <= x <= hi`; zero-width axes get no generator.
    pub fn from_box(lo: &[S], hi: &[S]) -> SetResult<Self> {
        check_dim("Zonotope::from_box", lo.len(), hi.len())?;
        let two = S::lit(2.0);
        let center: Vector<S> = lo.iter().zip(hi).map(|(&l, &h)| (l + h) / two).collect();
        let radii: Vec<S> = lo.iter().zip(hi).map(|(&l, &h)| (h - l) / two).collect();
        let mut z = Self::new(center, Matrix::from_diag(&radii))?;
        z.prune();
        Ok(z)
    }

    /// Centered box with half-widths `radii`.
    pub fn symmetric_box(radii: &[S]) -> Self {
        let lo: Vec<S> = radii.iter().map(|&r| -r).collect();
        Self::from_box(&lo, radii).expect("matching lengths")
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn center(&self) -> &Vector<S> {
        &self.center
    }

    pub fn generators(&self) -> &Matrix<S> {
        &self.generators
    }

    pub fn num_generators(&self) -> usize {
        self.generators.cols()
    }

    /// Drops generator columns that are exactly zero.
    pub fn prune(&mut self) {
        let keep: Vec<usize> = (0..self.generators.cols())
            .filter(|&j| (0..self.generators.rows()).any(|i| self.generators[(i, j)] != S::zero()))
            .collect();
        if keep.len() != self.generators.cols() {
            self.generators = self.generators.select_columns(&keep);
        }
    }

    pub fn is_point(&self) -> bool {
        self.generators.as_slice().iter().all(|&v| v == S::zero())
    }

    /// `d' c + sum_j |d' g_j|`.
    pub fn support(&self, dir: &[S]) -> SetResult<S> {
        check_dim("support", self.dim(), dir.len())?;
        Ok(self.support_unchecked(dir))
    }

    fn support_unchecked(&self, dir: &[S]) -> S {
        let proj = self.generators.tr_mul_vec(dir).expect("dims checked");
        dot(dir, &self.center) + proj.iter().map(|v| v.abs()).sum::<S>()
    }

    pub fn linear_image(&self, m: &Matrix<S>) -> SetResult<Self> {
        check_dim("linear_image", m.cols(), self.dim())?;
        let mut z = Zonotope {
            center: m.mul_vec(&self.center)?,
            generators: m.matmul(&self.generators)?,
        };
        z.prune();
        Ok(z)
    }

    pub fn minkowski_sum(&self, other: &Zonotope<S>) -> SetResult<Self> {
        check_dim("minkowski_sum", self.dim(), other.dim())?;
        Ok(Zonotope {
            center: self.center.add(&other.center),
            generators: self.generators.hstack(&other.generators)?,
        })
    }

    /// `factor * Z` about the origin.
    pub fn scaled(&self, factor: S) -> Self {
        let mut z = Zonotope {
            center: self.center.scaled(factor),
            generators: self.generators.scaled(factor),
        };
        z.prune();
        z
    }

    pub fn translated(&self, offset: &[S]) -> SetResult<Self> {
        check_dim("translated", self.dim(), offset.len())?;
        Ok(Zonotope {
            center: self.center.add(offset),
            generators: self.generators.clone(),
        })
    }

    /// `c + G xi`.
    pub fn point_at(&self, coeffs: &[S]) -> SetResult<Vector<S>> {
        check_dim("point_at", self.num_generators(), coeffs.len())?;
        Ok(self.center.add(&self.generators.mul_vec(coeffs)?))
    }

    /// Smallest axis-aligned box containing the set.
    pub fn interval_hull(&self) -> (Vector<S>, Vector<S>) {
        let n = self.dim();
        let mut lo = Vector::zeros(n);
        let mut hi = Vector::zeros(n);
        for i in 0..n {
            let r: S = self.generators.row(i).iter().map(|v| v.abs()).sum();
            lo[i] = self.center[i] - r;
            hi[i] = self.center[i] + r;
        }
        (lo, hi)
    }

    /// Upper bound on `max ||x||` over the set; exact in one dimension.
    pub fn radius(&self) -> S {
        let by_generators = self.center.norm()
            + (0..self.num_generators())
                .map(|j| self.generators.column(j).norm())
                .sum::<S>();
        let (lo, hi) = self.interval_hull();
        let corner: S = lo
            .iter()
            .zip(hi.iter())
            .map(|(&l, &h)| {
                let m = l.abs().max(h.abs());
                m * m
            })
            .sum::<S>()
            .sqrt();
        by_generators.min(corner)
    }

    /// Full-dimensional iff the generators span the space.
    pub fn is_full_dimensional(&self) -> bool {
        numeric_rank(&self.generators, S::lit(RANK_TOL)) == self.dim()
    }

    /// Unit generator directions with parallel columns merged.
    fn merged_directions(&self) -> Vec<Vector<S>> {
        let mut dirs = DirectionSet::new();
        for j in 0..self.num_generators() {
            let g = self.generators.column(j);
            let len = g.norm();
            if len > S::zero() {
                dirs.push(g.scaled(S::one() / len));
            }
        }
        dirs.dirs
    }

    /// Unit facet normals, one per antipodal facet pair. `None` when the
    /// zonotope is not full-dimensional.
    pub fn facet_normals(&self) -> Option<Vec<Vector<S>>> {
        let n = self.dim();
        if n == 0 || !self.is_full_dimensional() {
            return None;
        }
        if n == 1 {
            return Some(vec![Vector::from_slice(&[S::one()])]);
        }
        let dirs = self.merged_directions();
        let mut normals = DirectionSet::new();
        for_each_subset(dirs.len(), n - 1, |subset| {
            let sub: Vec<&[S]> = subset.iter().map(|&i| dirs[i].as_slice()).collect();
            if let Some(d) = generalized_cross(&sub, n) {
                normals.push(d);
            }
        });
        Some(normals.dirs)
    }

    /// Exact halfspace representation of a full-dimensional zonotope.
    pub fn to_hpolytope(&self) -> Option<HPolytope<S>> {
        let normals = self.facet_normals()?;
        let n = self.dim();
        let mut rows = Vec::with_capacity(2 * normals.len());
        let mut offsets = Vec::with_capacity(2 * normals.len());
        for d in &normals {
            let neg = d.scaled(-S::one());
            offsets.push(self.support_unchecked(d));
            rows.push(d.clone().into_vec());
            offsets.push(self.support_unchecked(&neg));
            rows.push(neg.into_vec());
        }
        let m = Matrix::from_rows(&rows, n).ok()?;
        HPolytope::new(m, offsets.into()).ok()
    }

    /// Membership with absolute tolerance. Full-dimensional sets use the
    /// exact facet description; degenerate ones fall back to a distance QP.
    pub fn contains(&self, x: &[S], tol: S) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        if let Some(h) = self.to_hpolytope() {
            return h.max_violation(x) <= tol;
        }
        self.distance_to(x).is_ok_and(|d| d <= tol)
    }

    /// Euclidean distance from `x` to the set.
    pub fn distance_to(&self, x: &[S]) -> SetResult<S> {
        check_dim("distance_to", self.dim(), x.len())?;
        let q = self.num_generators();
        let delta = x.iter().zip(self.center.iter()).map(|(&a, &b)| a - b).collect::<Vector<S>>();
        if q == 0 {
            return Ok(delta.norm());
        }
        // min 1/2 ||G xi - delta||^2 over the unit box, lightly regularized
        let gtg = self.generators.transpose().matmul(&self.generators)?;
        let reg = S::lit(1e-12) * gtg.max_abs().max(S::one());
        let hessian = Matrix::from_fn(q, q, |i, j| gtg[(i, j)] + if i == j { reg } else { S::zero() });
        let linear = self.generators.tr_mul_vec(&delta)?.scaled(-S::one());
        let bounds = HPolytope::from_box(&vec![-S::one(); q], &vec![S::one(); q])?;
        let problem = QpProblem::inequality_only(
            hessian,
            linear,
            bounds.normals().clone(),
            bounds.offsets().clone(),
        )?;
        let sol = solve_qp(&problem, S::lit(1e-10), 10_000);
        if sol.status == QpStatus::Infeasible {
            return Err(QpError::Infeasible.into());
        }
        let residual = self.generators.mul_vec(&sol.x)?.sub(&delta);
        Ok(residual.norm())
    }

    /// The origin is an interior point. A single point at the origin also
    /// qualifies (it is the noise-free special case).
    pub fn contains_origin_interior(&self) -> bool {
        if self.is_point() {
            return self.center.iter().all(|&v| v == S::zero());
        }
        match self.facet_normals() {
            None => false,
            Some(normals) => normals.iter().all(|d| {
                let proj = self.generators.tr_mul_vec(d).expect("dims");
                let spread: S = proj.iter().map(|v| v.abs()).sum();
                dot(d, &self.center).abs() < spread
            }),
        }
    }
}

/// Halfspace set with per-facet offset deductions: `{x : a_i' x <= b_i - d_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TightenedOffsets<S> {
    pub base: HPolytope<S>,
    pub deductions: Vector<S>,
}

impl<S: Scalar> TightenedOffsets<S> {
    pub fn untightened(base: HPolytope<S>) -> Self {
        let m = base.num_facets();
        TightenedOffsets {
            base,
            deductions: Vector::zeros(m),
        }
    }

    pub fn offsets(&self) -> Vector<S> {
        self.base.offsets().sub(&self.deductions)
    }
}

impl<S: Scalar> Halfspaces<S> for TightenedOffsets<S> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn normals(&self) -> &Matrix<S> {
        self.base.normals()
    }
    fn effective_offsets(&self) -> Vector<S> {
        self.offsets()
    }
}

/// `p ⊖ z` as per-facet support deductions.
pub fn pontryagin_deduct<S: Scalar>(
    p: &HPolytope<S>,
    z: &Zonotope<S>,
) -> SetResult<TightenedOffsets<S>> {
    check_dim("pontryagin_deduct", p.dim(), z.dim())?;
    let deductions = (0..p.num_facets())
        .map(|i| z.support_unchecked(p.normals().row(i)))
        .collect();
    Ok(TightenedOffsets {
        base: p.clone(),
        deductions,
    })
}

/// Support-function containment against every facet of `p`.
pub fn zonotope_in_polytope<S: Scalar, H: Halfspaces<S> + ?Sized>(z: &Zonotope<S>, p: &H) -> bool {
    if z.dim() != p.dim() {
        return false;
    }
    let offsets = p.effective_offsets();
    let normals = p.normals();
    (0..normals.rows()).all(|i| z.support_unchecked(normals.row(i)) <= offsets[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Zonotope<f64> {
        Zonotope::symmetric_box(&[1.0, 1.0])
    }

    #[test]
    fn support_examples() {
        assert_eq!(unit_box().support(&[1.0, 2.0]).unwrap(), 3.0);
        assert_eq!(unit_box().support(&[0.0, 0.0]).unwrap(), 0.0);
        let shifted = Zonotope::new(Vector::from_slice(&[1.0, 0.0]), Matrix::identity(2)).unwrap();
        assert_eq!(shifted.support(&[1.0, 0.0]).unwrap(), 2.0);
        assert!(unit_box().support(&[1.0]).is_err());
    }

    #[test]
    fn linear_image_and_sum() {
        let z = unit_box();
        assert_eq!(z.linear_image(&Matrix::identity(2)).unwrap(), z);
        assert!(z.linear_image(&Matrix::zeros(2, 2)).unwrap().is_point());
        let stretched = z.linear_image(&Matrix::from_diag(&[2.0, 1.0])).unwrap();
        assert_eq!(stretched.interval_hull().1.as_slice(), &[2.0, 1.0]);
        let a = Zonotope::symmetric_box(&[1.0]);
        let b = Zonotope::symmetric_box(&[2.0]);
        let s = a.minkowski_sum(&b).unwrap();
        assert_eq!(s.interval_hull().0.as_slice(), &[-3.0]);
        assert_eq!(z.minkowski_sum(&Zonotope::origin(2)).unwrap().support(&[0.3, -0.7]).unwrap(), 1.0);
    }

    #[test]
    fn pontryagin_box_example() {
        let p = HPolytope::from_box(&[-2.0, -2.0], &[2.0, 2.0]).unwrap();
        let t = pontryagin_deduct(&p, &Zonotope::symmetric_box(&[0.5, 0.5])).unwrap();
        assert_eq!(t.offsets().as_slice(), &[1.5, 1.5, 1.5, 1.5]);
        assert!(!t.contains(&[1.5001, 0.0], 1e-9));
        assert!(t.contains(&[1.5, 0.0], 1e-6));
        let none = pontryagin_deduct(&p, &Zonotope::origin(2)).unwrap();
        assert!(none.deductions.iter().all(|&d| d == 0.0));
        let over = pontryagin_deduct(&p, &Zonotope::symmetric_box(&[3.0, 0.0])).unwrap();
        assert!(over.is_empty());
    }

    #[test]
    fn containment_examples() {
        let p = HPolytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!(zonotope_in_polytope(&Zonotope::origin(2), &p));
        assert!(zonotope_in_polytope(&unit_box(), &p));
        assert!(!zonotope_in_polytope(&Zonotope::symmetric_box(&[1.1, 1.1]), &p));
    }

    #[test]
    fn boundedness() {
        assert!(HPolytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap().is_compact());
        let half_plane = HPolytope::new(
            Matrix::from_f64_rows(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0]]).unwrap(),
            Vector::from_slice(&[1.0, 1.0, 1.0]),
        )
        .unwrap();
        assert!(!half_plane.is_bounded());
        // a wedge: x >= 0, y >= 0, x + y <= 1 is bounded; drop the cap and it is not
        let triangle = HPolytope::new(
            Matrix::from_f64_rows(&[&[-1.0, 0.0], &[0.0, -1.0], &[1.0, 1.0]]).unwrap(),
            Vector::from_slice(&[0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!(triangle.is_bounded());
        let wedge = HPolytope::new(
            Matrix::from_f64_rows(&[&[-1.0, 0.0], &[0.0, -1.0], &[1.0, -1.0]]).unwrap(),
            Vector::from_slice(&[0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!(!wedge.is_bounded());
        assert!(HPolytope::<f64>::from_box(&[0.0], &[1.0]).unwrap().is_bounded());
    }

    #[test]
    fn zonotope_hrep_matches_support() {
        let g = Matrix::from_f64_rows(&[&[1.0, 0.5, 0.0, 2.0], &[0.0, 1.0, 1.0, 4.0]]).unwrap();
        let z = Zonotope::new(Vector::from_slice(&[0.3, -0.2]), g).unwrap();
        let normals = z.facet_normals().unwrap();
        // (2, 4) is parallel to (0.5, 1)
        assert_eq!(normals.len(), 3);
        let h = z.to_hpolytope().unwrap();
        assert!(h.contains(z.center(), 0.0));
        for xi in [[1.0, 1.0, 1.0, 1.0], [-1.0, 1.0, -1.0, 1.0], [1.0, -1.0, 1.0, -1.0]] {
            let p = z.point_at(&xi).unwrap();
            assert!(h.contains(&p, 1e-12));
            assert!(z.contains(&p, 1e-12));
        }
        assert!(!z.contains(&[10.0, 0.0], 1e-9));
    }

    #[test]
    fn degenerate_zonotope_membership() {
        let segment = Zonotope::new(
            Vector::zeros(2),
            Matrix::from_f64_rows(&[&[1.0], &[1.0]]).unwrap(),
        )
        .unwrap();
        assert!(segment.facet_normals().is_none());
        assert!(segment.contains(&[0.5, 0.5], 1e-9));
        assert!(!segment.contains(&[0.5, -0.5], 1e-9));
        assert!(!segment.contains_origin_interior());
        assert!(Zonotope::<f64>::origin(2).contains_origin_interior());
        assert!(unit_box().contains_origin_interior());
        let shifted = unit_box().translated(&[1.0, 0.0]).unwrap();
        assert!(!shifted.contains_origin_interior());
    }

    #[test]
    fn radius_bounds() {
        assert_eq!(Zonotope::symmetric_box(&[2.0]).radius(), 2.0);
        let r = unit_box().radius();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn preimage_drops_trivial_rows() {
        let p = HPolytope::from_box(&[-1.0, -2.0], &[1.0, 2.0]).unwrap();
        let m = Matrix::from_f64_rows(&[&[1.0], &[0.0]]).unwrap();
        let pre = p.preimage(&m).unwrap();
        assert_eq!(pre.num_facets(), 2);
        let shifted = HPolytope::from_box(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert!(matches!(shifted.preimage(&m), Err(SetError::EmptyPreimage(..))));
    }

    #[test]
    fn subsets_enumerated_in_order() {
        let mut seen = Vec::new();
        for_each_subset(4, 2, |s| seen.push(s.to_vec()));
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0, 1]);
        assert_eq!(seen[5], vec![2, 3]);
        let mut empty = 0;
        for_each_subset(3, 0, |_| empty += 1);
        assert_eq!(empty, 1);
    }
}
