//! The overtaking scenario: nonlinear truth, noisy sensors, scripted planner.

use oco_core::controller::{Controller, ControllerError, ControllerOptions, ControllerState, GVariant};
use oco_core::convexsets::{Halfspaces, MEMBERSHIP_TOL};
use oco_core::matlin::Vector;
use oco_core::plant::{
    build_tightening, optimal_steady_state, steady_state_manifold, ModelError, PlantModel,
    SteadyStateManifold, TighteningTables,
};
use oco_core::simkit::{invariant_report, InvariantReport, LedgerRow, Monitor, RegretLedger, TraceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{
    build_vehicle_model, delta_bar, kmh, leader_speed_estimate, phase_cost, rollout_objective, Phase,
    VehicleParams, C_G, GAMMA, TAU,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// `ẋ = (Δ cos δ, Δ sin δ, a)` plus the leader at constant speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleTruth {
    pub p_x: f64,
    pub p_y: f64,
    pub speed: f64,
    pub leader_p_x: f64,
    pub leader_speed: f64,
}

impl VehicleTruth {
    pub fn gap(&self) -> f64 {
        self.leader_p_x - self.p_x
    }

    /// Deviation-coordinate state `(p_y, Δ - Δ̄)`.
    pub fn reduced(&self) -> Vector<f64> {
        Vector::from_slice(&[self.p_y, self.speed - delta_bar()])
    }

    /// One RK4 step of length `τ` with `(δ, a)` held constant.
    pub fn advance(&self, steer: f64, accel: f64) -> VehicleTruth {
        let f = |s: [f64; 3]| [s[2] * steer.cos(), s[2] * steer.sin(), accel];
        let s0 = [self.p_x, self.p_y, self.speed];
        let add = |s: [f64; 3], k: [f64; 3], h: f64| [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2]];
        let k1 = f(s0);
        let k2 = f(add(s0, k1, TAU / 2.0));
        let k3 = f(add(s0, k2, TAU / 2.0));
        let k4 = f(add(s0, k3, TAU));
        let next: Vec<f64> = (0..3)
            .map(|i| s0[i] + TAU / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        VehicleTruth {
            p_x: next[0],
            p_y: next[1],
            speed: next[2],
            leader_p_x: self.leader_p_x + TAU * self.leader_speed,
            leader_speed: self.leader_speed,
        }
    }
}

/// Uniform noise on lateral position, speed and gap.
pub struct SensorModel {
    pub pos_noise: f64,
    pub speed_noise: f64,
    rng: ChaCha8Rng,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub p_y: f64,
    pub speed: f64,
    pub gap: f64,
}

impl SensorModel {
    pub fn new(pos_noise: f64, speed_noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        SensorModel {
            pos_noise,
            speed_noise,
            rng,
        }
    }

    fn noise(&mut self, bound: f64) -> f64 {
        if bound == 0.0 {
            0.0
        } else {
            self.rng.gen_range(-bound..=bound)
        }
    }

    pub fn measure(&mut self, truth: &VehicleTruth) -> Measurement {
        Measurement {
            p_y: truth.p_y + self.noise(self.pos_noise),
            speed: truth.speed + self.noise(self.speed_noise),
            gap: truth.gap() + self.noise(self.pos_noise),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub params: VehicleParams,
    pub variant: GVariant,
    pub seed: u64,
    /// Simulated time in seconds.
    pub duration: f64,
    /// Half-widths `(m, m/s)` of the process disturbance added to the truth.
    pub injected: [f64; 2],
    /// Turn sensor noise off (the set `V` stays as configured).
    pub noiseless: bool,
    pub initial_speed: f64,
    pub initial_gap: f64,
    pub leader_speed: f64,
    pub detect_gap: f64,
    pub overtake_time: f64,
    pub gamma: f64,
    pub c_g: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            params: VehicleParams::default(),
            variant: GVariant::Optimized,
            seed: 0,
            duration: 30.0,
            injected: [0.05, 0.05],
            noiseless: false,
            initial_speed: kmh(120.0),
            initial_gap: 150.0,
            leader_speed: kmh(70.0),
            detect_gap: 100.0,
            overtake_time: 20.0,
            gamma: GAMMA,
            c_g: C_G,
        }
    }
}

/// Scenario-specific columns alongside the generic trace.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleRecord {
    pub time: f64,
    pub phase: Phase,
    pub p_x: f64,
    pub gap: f64,
    pub gap_meas: f64,
    pub leader_estimate: f64,
    pub target_speed: f64,
    /// Model mismatch `ξ_{t+1} - ξ_t - B u_t`, including injected noise.
    pub residual: Vector<f64>,
    pub residual_in_w: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenarioMetrics {
    /// Smallest true gap before the overtake starts.
    pub min_gap: f64,
    /// Mean true gap over the last 5 s of the follow phase.
    pub follow_gap: Option<f64>,
    /// Mean speed (km/h) over the last 5 s of the overtake phase.
    pub overtake_speed_kmh: Option<f64>,
    pub follow_start: Option<f64>,
    pub overtake_start: Option<f64>,
    pub constraint_violations: usize,
    pub mismatch_violations: usize,
    pub g_fallbacks: usize,
    pub aborted: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub trace: Vec<TraceRecord<f64>>,
    pub vehicle: Vec<VehicleRecord>,
    pub ledger: RegretLedger<f64>,
    pub report: InvariantReport<f64>,
    pub metrics: ScenarioMetrics,
}

/// Model, tables and steady-state set shared by every replicate.
pub struct VehicleSetup {
    pub model: PlantModel<f64>,
    pub tables: TighteningTables<f64>,
    pub manifold: SteadyStateManifold<f64>,
}

impl VehicleSetup {
    pub fn new(params: &VehicleParams) -> Result<Self, ScenarioError> {
        let model = build_vehicle_model(params)?;
        let tables = build_tightening(&model)?;
        let manifold = steady_state_manifold(&model, &model.p_rpi, params.shrink)?;
        Ok(VehicleSetup {
            model,
            tables,
            manifold,
        })
    }

    /// `c_g` is raised to the model's lower bound when it falls below it.
    pub fn options(&self, variant: GVariant, gamma: f64, c_g: f64) -> ControllerOptions<f64> {
        let mut options = ControllerOptions::defaults(&self.model, gamma);
        options.c_g = c_g.max(options.c_g);
        options.variant = variant;
        options
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutcome, ScenarioError> {
    let setup = VehicleSetup::new(&config.params)?;
    run_scenario_with(&setup, config)
}

pub fn run_scenario_with(setup: &VehicleSetup, config: &ScenarioConfig) -> Result<ScenarioOutcome, ScenarioError> {
    let model = &setup.model;
    let options = setup.options(config.variant, config.gamma, config.c_g);
    let c_g = options.c_g;
    let ctrl = Controller::new(model, &setup.tables, &setup.manifold, options)?;
    let monitor = Monitor::new(model, c_g);
    let steps = (config.duration / TAU).round() as usize;
    let (pos_noise, speed_noise) = if config.noiseless {
        (0.0, 0.0)
    } else {
        (config.params.pos_noise, config.params.speed_noise)
    };
    let mut sensors = SensorModel::new(pos_noise, speed_noise, config.seed);
    let mut process = ChaCha8Rng::seed_from_u64(config.seed);
    process.set_stream(4);

    let mut truth = VehicleTruth {
        p_x: 0.0,
        p_y: 0.0,
        speed: config.initial_speed,
        leader_p_x: config.initial_gap,
        leader_speed: config.leader_speed,
    };
    let mut phase = Phase::Cruise;
    let mut ledger = RegretLedger::default();
    let mut trace: Vec<TraceRecord<f64>> = Vec::with_capacity(steps);
    let mut vehicle: Vec<VehicleRecord> = Vec::with_capacity(steps);
    let mut metrics = ScenarioMetrics {
        min_gap: f64::INFINITY,
        ..Default::default()
    };
    let mut state: Option<ControllerState<f64>> = None;
    let mut prev_cost = None;
    let mut prev_gap_meas: Option<f64> = None;
    let w_poly = model.w_set.to_hpolytope();

    for t in 0..steps {
        let time = t as f64 * TAU;
        let meas = sensors.measure(&truth);
        // planner: phases only move forward
        if phase == Phase::Cruise && truth.gap() <= config.detect_gap {
            phase = Phase::Follow;
            metrics.follow_start = Some(time);
        }
        if phase < Phase::Overtake && time >= config.overtake_time - 1e-9 {
            phase = Phase::Overtake;
            metrics.overtake_start = Some(time);
        }
        let leader_estimate = leader_speed_estimate(meas.gap, prev_gap_meas.unwrap_or(meas.gap), meas.speed);
        prev_gap_meas = Some(meas.gap);
        let cost_t = phase_cost(phase, leader_estimate);

        let x_true = truth.reduced();
        let x_meas = Vector::from_slice(&[meas.p_y, meas.speed - delta_bar()]);
        let v = x_meas.sub(&x_true);
        let outcome = match (&state, &prev_cost) {
            (Some(s), Some(prev)) => {
                let objective = rollout_objective(phase, model.mu, Some((meas.gap, leader_estimate)));
                ctrl.step(s, &x_meas, prev, Some(&objective))
            }
            _ => {
                let (theta, eta) = optimal_steady_state(&setup.manifold, &cost_t, model)?;
                ctrl.initialize(&theta, &eta, &x_meas)
            }
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) if t == 0 => return Err(e.into()),
            Err(e) => {
                metrics.aborted = Some(e.to_string());
                break;
            }
        };
        let u = outcome.u.clone();

        let (theta, eta) = optimal_steady_state(&setup.manifold, &cost_t, model)?;
        let bench_u = model.k.mul_vec(&theta).expect("dims").add(&eta);
        let cost = cost_t.eval(&x_true, &u);
        let benchmark_cost = cost_t.eval(&theta, &bench_u);
        ledger.record(LedgerRow {
            cost,
            benchmark_cost,
            theta,
            eta,
        });

        let injected = [
            uniform(&mut process, config.injected[0]),
            uniform(&mut process, config.injected[1]),
        ];
        let mut next = truth.advance(u[0], u[1]);
        next.p_y += injected[0];
        next.speed += injected[1];
        let predicted = x_true.add(&model.b.mul_vec(&u).expect("dims"));
        let residual = next.reduced().sub(&predicted);
        let residual_in_w = w_poly.as_ref().is_some_and(|h| h.max_violation(&residual) <= MEMBERSHIP_TOL);
        ledger.add_noise(&residual, &v);

        let prev_steady = trace.last().map(|r| r.diagnostics.steady_state.as_slice());
        let flags = monitor.flags(&x_true, &u, &outcome.diagnostics, prev_steady);
        if phase != Phase::Overtake {
            metrics.min_gap = metrics.min_gap.min(truth.gap());
        }
        metrics.g_fallbacks += usize::from(outcome.diagnostics.g_fallback);
        metrics.mismatch_violations += usize::from(!residual_in_w);
        vehicle.push(VehicleRecord {
            time,
            phase,
            p_x: truth.p_x,
            gap: truth.gap(),
            gap_meas: meas.gap,
            leader_estimate,
            target_speed: cost_t.ref_x[1] + delta_bar(),
            residual: residual.clone(),
            residual_in_w,
        });
        trace.push(TraceRecord {
            t,
            x_true,
            x_meas,
            u,
            w: residual,
            v,
            diagnostics: outcome.diagnostics,
            cost,
            benchmark_cost,
            cum_regret: ledger.cum_regret,
            flags,
        });
        state = Some(outcome.state);
        prev_cost = Some(cost_t);
        truth = next;
    }

    let report = invariant_report(&trace, model, c_g, oco_core::simkit::LEMMA2_MARGIN);
    metrics.constraint_violations = report.counts.state + report.counts.input;
    metrics.follow_gap = phase_tail_mean(&vehicle, Phase::Follow, 5.0, |r, _| r.gap);
    metrics.overtake_speed_kmh = phase_tail_mean(&vehicle, Phase::Overtake, 5.0, |_, i| {
        crate::model::to_kmh(trace[i].x_true[1] + delta_bar())
    });
    Ok(ScenarioOutcome {
        trace,
        vehicle,
        ledger,
        report,
        metrics,
    })
}

fn uniform(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound == 0.0 {
        0.0
    } else {
        rng.gen_range(-bound..=bound)
    }
}

/// Mean of `f` over the final `window` seconds of `phase`.
fn phase_tail_mean(
    records: &[VehicleRecord],
    phase: Phase,
    window: f64,
    f: impl Fn(&VehicleRecord, usize) -> f64,
) -> Option<f64> {
    let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].phase == phase).collect();
    let last = *idx.last()?;
    let end = records[last].time;
    let picked: Vec<f64> = idx
        .iter()
        .filter(|&&i| records[i].time > end - window + 1e-9)
        .map(|&i| f(&records[i], i))
        .collect();
    if picked.is_empty() {
        None
    } else {
        Some(picked.iter().sum::<f64>() / picked.len() as f64)
    }
}
