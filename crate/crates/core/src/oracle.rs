//! Seeded random problem generators and brute-force reference
//! implementations. The property tests and the CLI's sweep use these; none
//! of the controller code depends on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{max_beta, max_beta_bisection, ogd_step, ControllerError};
use crate::convexsets::{pontryagin_deduct, HPolytope, Halfspaces, Zonotope};
use crate::matlin::{solve_general, spectral_norm, Matrix, Vector};
use crate::plant::{
    build_model, build_tightening, optimal_steady_state, steady_state_manifold, ModelError, ModelSpec, PlantModel,
    QuadraticCost, SteadyStateManifold, TighteningTables,
};

/// Model plus the tables every run needs.
#[derive(Clone, Debug)]
pub struct PlantBundle {
    pub model: PlantModel<f64>,
    pub tables: TighteningTables<f64>,
    pub manifold: SteadyStateManifold<f64>,
}

impl PlantBundle {
    pub fn from_spec(spec: &ModelSpec<f64>, shrink: f64) -> Result<Self, ModelError> {
        let model = build_model(spec)?;
        let tables = build_tightening(&model)?;
        let manifold = steady_state_manifold(&model, &model.p_rpi, shrink)?;
        Ok(PlantBundle { model, tables, manifold })
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, half: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-half..=half))
}

/// Random 2-state, 2-input plant with `A_K` of spectral norm in [0.3, 0.7].
/// `X` is the box of half-width 3, `W` a box of half-width 0.05 and `V`
/// a box of half-width 0.02.
pub fn random_plant_spec(seed: u64, mu: usize) -> ModelSpec<f64> {
    let mut r = rng(seed);
    let a = uniform_matrix(&mut r, 2, 2, 1.2);
    let b = Matrix::identity(2).add(&uniform_matrix(&mut r, 2, 2, 0.3)).expect("dims");
    let mut a_k = uniform_matrix(&mut r, 2, 2, 1.0);
    let target = r.gen_range(0.3..=0.7);
    a_k = a_k.scaled(target / spectral_norm(&a_k).max(1e-9));
    // B K = A_K - A
    let k = solve_general(&b, &a_k.sub(&a).expect("dims")).expect("B is diagonally dominant");
    let k_size = k.max_abs();
    let u_half = 2.0 + 4.0 * k_size;
    ModelSpec::new(
        a,
        b,
        k,
        mu,
        HPolytope::from_box(&[-3.0, -3.0], &[3.0, 3.0]).expect("box"),
        HPolytope::from_box(&[-u_half, -u_half], &[u_half, u_half]).expect("box"),
        Zonotope::symmetric_box(&[0.05, 0.05]),
        Zonotope::symmetric_box(&[0.02, 0.02]),
    )
}

pub fn random_plant(seed: u64, mu: usize) -> Result<PlantBundle, ModelError> {
    PlantBundle::from_spec(&random_plant_spec(seed, mu), 0.99)
}

/// Diagonally loaded random positive definite matrix.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64, scale: f64) -> Matrix<f64> {
    let g = uniform_matrix(rng, n, n, 1.0);
    let gg = g.transpose().matmul(&g).expect("dims").scaled(scale);
    gg.add(&Matrix::identity(n).scaled(floor)).expect("dims")
}

/// Strongly convex quadratic cost with references drawn from `±ref_half`.
pub fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize, ref_half: f64) -> QuadraticCost<f64> {
    let q_x = random_spd(rng, n, 0.2, 1.0);
    let q_u = random_spd(rng, m, 0.05, 0.2);
    let ref_x: Vector<f64> = (0..n).map(|_| rng.gen_range(-ref_half..=ref_half)).collect();
    let ref_u: Vector<f64> = (0..m).map(|_| rng.gen_range(-ref_half..=ref_half) * 0.1).collect();
    QuadraticCost::new(q_x, q_u, ref_x, ref_u).expect("valid weights")
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Every signed combination of the generators: `2^q` points.
pub fn zonotope_corners(z: &Zonotope<f64>) -> Vec<[f64; 2]> {
    assert_eq!(z.dim(), 2, "planar only");
    let q = z.num_generators();
    let g = z.generators();
    let c = z.center();
    (0u32..1 << q)
        .map(|mask| {
            let mut p = [c[0], c[1]];
            for j in 0..q {
                let s = if mask & (1 << j) != 0 { 1.0 } else { -1.0 };
                p[0] += s * g[(0, j)];
                p[1] += s * g[(1, j)];
            }
            p
        })
        .collect()
}

/// Signed distance-like margin of `x` inside a CCW hull: the smallest
/// distance to an edge line, negative outside.
pub fn hull_margin(hull: &[[f64; 2]], x: [f64; 2]) -> f64 {
    let k = hull.len();
    (0..k)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % k]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            cross(a, b, x) / len
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn corner_support(corners: &[[f64; 2]], d: [f64; 2]) -> f64 {
    corners
        .iter()
        .map(|p| p[0] * d[0] + p[1] * d[1])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Margin of `x` in `{x : x + z ∈ P for every corner z}`, per unit normal.
pub fn pontryagin_margin(p: &HPolytope<f64>, corners: &[[f64; 2]], x: [f64; 2]) -> f64 {
    let a = p.normals();
    let b = p.offsets();
    let mut margin = f64::INFINITY;
    for i in 0..a.rows() {
        let row = a.row(i);
        let len = (row[0] * row[0] + row[1] * row[1]).sqrt();
        let worst = corner_support(corners, [row[0], row[1]]);
        margin = margin.min((b[i] - row[0] * x[0] - row[1] * x[1] - worst) / len);
    }
    margin
}

/// Random polytope: a box of half-widths in [0.6, 1.2] cut by two extra
/// halfspaces, all containing a disk around the origin.
pub fn random_planar_polytope(rng: &mut ChaCha8Rng) -> HPolytope<f64> {
    let hx = rng.gen_range(0.6..=1.2);
    let hy = rng.gen_range(0.6..=1.2);
    let mut rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    let mut offs = vec![hx, hx, hy, hy];
    for _ in 0..2 {
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        rows.push(vec![ang.cos(), ang.sin()]);
        offs.push(rng.gen_range(0.5..=1.0));
    }
    HPolytope::new(Matrix::from_rows(&rows, 2).expect("rows"), Vector::new(offs)).expect("valid")
}

/// Random zonotope with 2 or 3 generators of length at most 0.25.
pub fn random_planar_zonotope(rng: &mut ChaCha8Rng) -> Zonotope<f64> {
    let q = rng.gen_range(2..=3);
    let g = uniform_matrix(rng, 2, q, 0.25);
    let c = Vector::new(vec![rng.gen_range(-0.05..=0.05), rng.gen_range(-0.05..=0.05)]);
    Zonotope::new(c, g).expect("dims")
}

/// Outcome of comparing the set operations with brute force on a grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridCheck {
    pub points: usize,
    /// Grid points classified differently, farther than one grid step from
    /// the oracle's boundary.
    pub disagreements: usize,
    /// Largest support-function error over the test directions.
    pub support_error: f64,
}

/// Pontryagin difference, zonotope membership and support against the
/// corner-enumeration oracle, on the grid of spacing `step` covering `P`.
pub fn planar_grid_check(seed: u64, step: f64) -> GridCheck {
    let mut r = rng(seed);
    let p = random_planar_polytope(&mut r);
    let z = random_planar_zonotope(&mut r);
    let corners = zonotope_corners(&z);
    let hull = convex_hull(&corners);
    let tight = pontryagin_deduct(&p, &z).expect("dims");
    let band = step * std::f64::consts::SQRT_2;
    let mut check = GridCheck::default();
    let steps = (1.3 / step).ceil() as i64;
    for i in -steps..=steps {
        for j in -steps..=steps {
            let x = [i as f64 * step, j as f64 * step];
            check.points += 1;
            let m = pontryagin_margin(&p, &corners, x);
            if m.abs() > band && tight.contains(&x, 0.0) != (m > 0.0) {
                check.disagreements += 1;
            }
            let mz = hull_margin(&hull, x);
            if mz.abs() > band && z.contains(&x, 0.0) != (mz > 0.0) {
                check.disagreements += 1;
            }
        }
    }
    for k in 0..64 {
        let ang = k as f64 * std::f64::consts::TAU / 64.0;
        let d = [ang.cos(), ang.sin()];
        let err = (z.support(&d).expect("dims") - corner_support(&corners, d)).abs();
        check.support_error = check.support_error.max(err);
    }
    check
}

/// Ratio-test and bisection `β` on a random feasible base and direction.
pub fn beta_instance(seed: u64) -> Result<(f64, f64), ControllerError> {
    let bundle = random_plant(seed / 8, 3).map_err(|e| ControllerError::Options(e.to_string()))?;
    let mut r = rng(seed ^ 0x9e37_79b9);
    let (m, mu) = (bundle.model.m(), bundle.model.mu);
    let u_half = bundle.model.u_set.offsets()[0];
    let mut x: Vector<f64> = (0..2).map(|_| r.gen_range(-2.0..=2.0)).collect();
    let mut base: Vector<f64> = (0..m * mu).map(|_| r.gen_range(-0.5..=0.5) * u_half).collect();
    // shrink toward the origin, where every stage is strictly feasible
    for _ in 0..60 {
        if bundle.tables.residuals(&x, &base).iter().all(|&v| v <= 0.0) {
            break;
        }
        x = x.scaled(0.7);
        base = base.scaled(0.7);
    }
    let reach = if r.gen_bool(0.2) { 0.01 } else { 3.0 };
    let g: Vector<f64> = (0..m * mu).map(|_| r.gen_range(-reach..=reach) * u_half).collect();
    let ratio = max_beta(&bundle.tables, &x, &base, &g, 1e-9)?;
    let bisect = max_beta_bisection(&bundle.tables, &x, &base, &g, 1e-9)?;
    Ok((ratio, bisect))
}

/// One projected-gradient step measured against the contraction bound.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractionCheck {
    pub gamma: f64,
    pub alpha: f64,
    /// `||ζ̂ - ζ||`.
    pub step_distance: f64,
    /// `(1 - γ α) ||ẑ - ζ||`.
    pub bound: f64,
}

pub fn contraction_instance(seed: u64) -> Result<ContractionCheck, ModelError> {
    let bundle = random_plant(seed / 4, 3)?;
    let (model, manifold) = (&bundle.model, &bundle.manifold);
    let mut r = rng(seed ^ 0x5851_f42d);
    let cost = random_cost(&mut r, 2, 2, 2.0);
    let (alpha, smooth) = cost.curvature(model)?;
    let gamma = r.gen_range(1e-3..=1.0) * 2.0 / (alpha + smooth);
    let (theta, eta) = optimal_steady_state(manifold, &cost, model)?;
    let x_hat: Vector<f64> = (0..2).map(|_| r.gen_range(-3.0..=3.0)).collect();
    let u_ss: Vector<f64> = (0..2).map(|_| r.gen_range(-2.0..=2.0)).collect();
    let (th, et) = ogd_step(model, manifold, &x_hat, &u_ss, &cost, gamma)?;
    let dist = |a: &[f64], b: &[f64], c: &[f64], d: &[f64]| {
        let s: f64 = a.iter().zip(c).chain(b.iter().zip(d)).map(|(p, q)| (p - q).powi(2)).sum();
        s.sqrt()
    };
    Ok(ContractionCheck {
        gamma,
        alpha,
        step_distance: dist(&th, &et, &theta, &eta),
        bound: (1.0 - gamma * alpha) * dist(&x_hat, &u_ss, &theta, &eta),
    })
}
