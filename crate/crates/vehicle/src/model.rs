//! Reduced lateral/speed model and the planner's cost functions.
//!
//! The controller works in deviation coordinates `ξ = (p_y, Δ - Δ̄)` around
//! the linearization speed, so the origin sits inside the constraint boxes.
//! All quantities are SI (m, m/s, rad, m/s²).

use oco_core::controller::{RolloutObjective, SoftRow};
use oco_core::convexsets::{HPolytope, Zonotope};
use oco_core::matlin::{Matrix, Vector};
use oco_core::plant::{build_model, ModelError, ModelSpec, PlantModel, QuadraticCost};

pub const TAU: f64 = 0.1;
pub const MU: usize = 10;
pub const GAMMA: f64 = 0.7;
pub const C_G: f64 = 1000.0;
pub const SHRINK: f64 = 0.99;
pub const INPUT_WEIGHT: f64 = 50.0;
pub const SLACK_WEIGHT: f64 = 100.0;
pub const SAFETY_GAP: f64 = 50.0;

pub fn kmh(v: f64) -> f64 {
    v / 3.6
}

pub fn to_kmh(v: f64) -> f64 {
    v * 3.6
}

pub fn deg(v: f64) -> f64 {
    v.to_radians()
}

/// Linearization speed, 100 km/h.
pub fn delta_bar() -> f64 {
    kmh(100.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleParams {
    /// Closed-loop pole of the lateral channel.
    pub lateral_pole: f64,
    /// Speed feedback gain (m/s² per m/s).
    pub speed_gain: f64,
    /// Half-widths of the process disturbance set, `(m, m/s)`.
    pub w_bound: [f64; 2],
    /// Sensor half-widths: position and distance (m), speed (m/s).
    pub pos_noise: f64,
    pub speed_noise: f64,
    pub mu: usize,
    /// Shrink factor of S̄ inside S.
    pub shrink: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            lateral_pole: 0.5,
            speed_gain: -2.0,
            w_bound: [0.2, 0.2],
            pos_noise: 0.1,
            speed_noise: kmh(0.1),
            mu: MU,
            shrink: SHRINK,
        }
    }
}

impl VehicleParams {
    /// Diagonal feedback: steering from lateral offset, acceleration from speed.
    pub fn feedback(&self) -> Matrix<f64> {
        let k_lat = (self.lateral_pole - 1.0) / (TAU * delta_bar());
        Matrix::from_diag(&[k_lat, self.speed_gain])
    }
}

/// `x+ = x + B u` with `B = diag(τ Δ̄, τ)`: zero-order hold of
/// `ṗ_y = Δ̄ δ`, `Δ̇ = a`.
pub fn dynamics() -> (Matrix<f64>, Matrix<f64>) {
    (Matrix::identity(2), Matrix::from_diag(&[TAU * delta_bar(), TAU]))
}

/// `p_y ∈ [-1.5, 4.5]`, `Δ ∈ [0, 130] km/h`, shifted by `Δ̄`.
pub fn state_box() -> (Vec<f64>, Vec<f64>) {
    (vec![-1.5, -delta_bar()], vec![4.5, kmh(130.0) - delta_bar()])
}

/// `δ ∈ [-20°, 20°]`, `a ∈ [-4, 4]`.
pub fn input_box() -> (Vec<f64>, Vec<f64>) {
    (vec![-deg(20.0), -4.0], vec![deg(20.0), 4.0])
}

pub fn model_spec(params: &VehicleParams) -> ModelSpec<f64> {
    let (a, b) = dynamics();
    let (xl, xh) = state_box();
    let (ul, uh) = input_box();
    ModelSpec::new(
        a,
        b,
        params.feedback(),
        params.mu,
        HPolytope::from_box(&xl, &xh).expect("box"),
        HPolytope::from_box(&ul, &uh).expect("box"),
        Zonotope::symmetric_box(&params.w_bound),
        Zonotope::symmetric_box(&[params.pos_noise, params.speed_noise]),
    )
}

pub fn build_vehicle_model(params: &VehicleParams) -> Result<PlantModel<f64>, ModelError> {
    build_model(&model_spec(params))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Cruise = 1,
    Follow = 2,
    Overtake = 3,
}

impl Phase {
    pub fn id(self) -> u8 {
        self as u8
    }

    /// Lateral target (m), speed target (absolute, m/s) and speed weight.
    fn targets(self, leader_estimate: f64) -> (f64, f64, f64) {
        match self {
            Phase::Cruise => (0.0, kmh(120.0), 1.0),
            Phase::Follow => (0.0, leader_estimate, 1.0),
            Phase::Overtake => (3.0, kmh(130.0), 5.0),
        }
    }
}

/// `1/2 |p_y - θ^y|² + w/2 |Δ - θ^Δ|² + 50 |u|²` in deviation coordinates.
/// `leader_estimate` (absolute m/s) is only read in the follow phase.
pub fn phase_cost(phase: Phase, leader_estimate: f64) -> QuadraticCost<f64> {
    let (y, v, w) = phase.targets(leader_estimate);
    let q_u = 2.0 * INPUT_WEIGHT;
    QuadraticCost::diagonal(&[1.0, w], &[q_u, q_u], &[y, v - delta_bar()], &[0.0, 0.0]).expect("valid weights")
}

/// `(d̃_t - d̃_{t-1}) / τ + Δ̃_t`.
pub fn leader_speed_estimate(gap_meas: f64, gap_meas_prev: f64, speed_meas: f64) -> f64 {
    (gap_meas - gap_meas_prev) / TAU + speed_meas
}

/// Rollout criterion for the additional input. In the follow phase it adds
/// `d̂_k >= 50 - ε`, `k = 0..=mu`, with the gap predicted from the measured
/// gap and a leader at constant `leader_estimate`.
pub fn rollout_objective(phase: Phase, mu: usize, gap: Option<(f64, f64)>) -> RolloutObjective<f64> {
    let cost = phase_cost(phase, 0.0);
    let mut objective = RolloutObjective::tracking(&cost);
    objective.slack_weight = SLACK_WEIGHT;
    if let (Phase::Follow, Some((gap_meas, leader_estimate))) = (phase, gap) {
        objective.soft_rows = safety_rows(mu, gap_meas, leader_estimate);
    }
    objective
}

/// `d̂_k = d̃ + k τ (Δ̃^c - Δ̄) - τ sum_{j<k} ξ_Δ,j`, written as
/// `τ sum_{j<k} ξ_Δ,j <= d̃ + k τ (Δ̃^c - Δ̄) - 50 + ε`.
pub fn safety_rows(mu: usize, gap_meas: f64, leader_estimate: f64) -> Vec<SoftRow<f64>> {
    let n = 2;
    (0..=mu)
        .map(|k| {
            let mut coeffs = Vector::zeros(n * (mu + 1));
            for j in 0..k {
                coeffs[j * n + 1] = TAU;
            }
            SoftRow {
                coeffs,
                offset: gap_meas + k as f64 * TAU * (leader_estimate - delta_bar()) - SAFETY_GAP,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_are_exact() {
        assert!((kmh(3.6) - 1.0).abs() < 1e-12);
        assert!((to_kmh(kmh(123.4)) - 123.4).abs() < 1e-12);
    }

    #[test]
    fn linear_rows() {
        let (a, b) = dynamics();
        assert_eq!(a, Matrix::identity(2));
        assert!((b[(0, 0)] - TAU * kmh(100.0)).abs() < 1e-15);
        assert_eq!(b[(1, 1)], TAU);
        assert_eq!(b[(0, 1)], 0.0);
    }

    #[test]
    fn phase_targets() {
        let c = phase_cost(Phase::Overtake, 0.0);
        assert_eq!(c.q_x[(1, 1)] / c.q_x[(0, 0)], 5.0);
        let (gx, _) = phase_cost(Phase::Cruise, 0.0).gradient(&[0.0, kmh(20.0)], &[0.0, 0.0]);
        assert!(gx.norm() < 1e-12);
        let est = leader_speed_estimate(60.0, 61.0, 30.0);
        assert!((est - 20.0).abs() < 1e-12);
    }
}
