//! Run configuration: `key = value` lines under `[section]` headers, parsed
//! as TOML. Unknown keys are rejected. `config/schema.md` lists every key
//! with its unit.

use std::fmt;
use std::path::{Path, PathBuf};

use oco_core::controller::{ControllerOptions, Estimator, GVariant};
use oco_core::convexsets::{HPolytope, Zonotope};
use oco_core::matlin::{Matrix, Vector};
use oco_core::oracle::random_plant_spec;
use oco_core::plant::{ModelSpec, PlantModel, QuadraticCost};
use oco_core::simkit::{CostSchedule, DisturbanceKind, DisturbancePolicy};
use oco_vehicle::model::{kmh, VehicleParams};
use oco_vehicle::ScenarioConfig;
use serde::Deserialize;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("field `{field}`: {msg}"))
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Linear,
    Vehicle,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Explicit,
    #[default]
    Optimized,
}

impl Variant {
    pub fn g_variant(self) -> GVariant {
        match self {
            Variant::Explicit => GVariant::Explicit,
            Variant::Optimized => GVariant::Optimized,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Explicit => "explicit",
            Variant::Optimized => "optimized",
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    #[default]
    Ogd,
    ExactArgmin,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Zero,
    #[default]
    UniformBox,
    WorstCorner,
    Sequence,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scenario: ScenarioKind,
    pub model: Option<ModelBlock>,
    pub controller: ControllerBlock,
    #[serde(default)]
    pub disturbance: DisturbanceBlock,
    #[serde(default)]
    pub cost: Vec<CostBlock>,
    pub vehicle: Option<VehicleBlock>,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Either `random_seed` alone or the full set of matrices and boxes.
#[derive(Clone, Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub random_seed: Option<u64>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub k: Option<Vec<Vec<f64>>>,
    pub x_lo: Option<Vec<f64>>,
    pub x_hi: Option<Vec<f64>>,
    pub u_lo: Option<Vec<f64>>,
    pub u_hi: Option<Vec<f64>>,
    pub w_half: Option<Vec<f64>>,
    pub v_half: Option<Vec<f64>>,
    pub rpi_epsilon: Option<f64>,
    /// True initial state; defaults to the initial steady state.
    pub x0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerBlock {
    pub mu: usize,
    pub gamma: f64,
    pub c_g: Option<f64>,
    #[serde(default = "default_shrink")]
    pub shrink: f64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub estimator: EstimatorName,
    pub membership_tol: Option<f64>,
    pub lemma2_margin: Option<f64>,
    #[serde(default)]
    pub abort_on_violation: bool,
}

fn default_shrink() -> f64 {
    0.99
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceBlock {
    #[serde(default)]
    pub kind: KindName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub scale: f64,
    pub w_sequence: Option<Vec<Vec<f64>>>,
    pub v_sequence: Option<Vec<Vec<f64>>>,
}

fn one() -> f64 {
    1.0
}

impl Default for DisturbanceBlock {
    fn default() -> Self {
        DisturbanceBlock {
            kind: KindName::UniformBox,
            seed: 0,
            scale: 1.0,
            w_sequence: None,
            v_sequence: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBlock {
    #[serde(default)]
    pub start: usize,
    pub q_x: Vec<Vec<f64>>,
    pub q_u: Vec<Vec<f64>>,
    pub ref_x: Vec<f64>,
    pub ref_u: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VehicleBlock {
    pub speed_gain: Option<f64>,
    pub lateral_pole: Option<f64>,
    pub w_half: Option<[f64; 2]>,
    pub pos_noise_m: Option<f64>,
    pub speed_noise_kmh: Option<f64>,
    pub duration_s: Option<f64>,
    pub overtake_time_s: Option<f64>,
    pub injected: Option<[f64; 2]>,
    pub noiseless: Option<bool>,
    pub initial_speed_kmh: Option<f64>,
    pub initial_gap_m: Option<f64>,
    pub leader_speed_kmh: Option<f64>,
    pub detect_gap_m: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub horizon: Option<usize>,
    /// Number of target switches per run, one design level each.
    #[serde(default)]
    pub path_levels: Vec<usize>,
    /// Disturbance scales in [0, 1].
    #[serde(default)]
    pub dist_levels: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    pub min_r_squared: Option<f64>,
}

fn default_amplitude() -> f64 {
    0.5
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_trace")]
    pub trace: String,
    #[serde(default = "default_ledger")]
    pub ledger: String,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default = "default_vehicle")]
    pub vehicle: String,
    #[serde(default = "default_sweep")]
    pub sweep: String,
    #[serde(default = "default_fit")]
    pub fit: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_trace() -> String {
    "trace.csv".into()
}
fn default_ledger() -> String {
    "ledger.csv".into()
}
fn default_report() -> String {
    "report.txt".into()
}
fn default_vehicle() -> String {
    "vehicle.csv".into()
}
fn default_sweep() -> String {
    "sweep.csv".into()
}
fn default_fit() -> String {
    "fit.txt".into()
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: default_dir(),
            trace: default_trace(),
            ledger: default_ledger(),
            report: default_report(),
            vehicle: default_vehicle(),
            sweep: default_sweep(),
            fit: default_fit(),
        }
    }
}

/// Command-line overrides applied after parsing.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub variant: Option<Variant>,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let mut cfg = parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))?;
    if let Some(seed) = overrides.seed {
        cfg.disturbance.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.output.dir = out.clone();
    }
    if let Some(v) = overrides.variant {
        cfg.controller.variant = v;
    }
    Ok(cfg)
}

pub fn parse(text: &str) -> Result<FileConfig, ConfigError> {
    let cfg: FileConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string().trim_end().to_string()))?;
    cfg.check()?;
    Ok(cfg)
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<Matrix<f64>, ConfigError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(bad(field, "matrix must be non-empty"));
    }
    Matrix::from_rows(rows, cols).map_err(|e| bad(field, e))
}

fn finite(field: &str, v: &[f64]) -> Result<(), ConfigError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(bad(field, "entries must be finite"))
    }
}

impl FileConfig {
    /// Structural checks that need no linear algebra.
    fn check(&self) -> Result<(), ConfigError> {
        let c = &self.controller;
        if c.mu == 0 {
            return Err(bad("controller.mu", "must be at least 1"));
        }
        if !(c.gamma > 0.0 && c.gamma.is_finite()) {
            return Err(bad("controller.gamma", "must be positive"));
        }
        if !(c.shrink > 0.0 && c.shrink <= 1.0) {
            return Err(bad("controller.shrink", "must lie in (0, 1]"));
        }
        let d = &self.disturbance;
        if !(0.0..=1.0).contains(&d.scale) {
            return Err(bad("disturbance.scale", "must lie in [0, 1]"));
        }
        if d.kind == KindName::Sequence && (d.w_sequence.is_none() || d.v_sequence.is_none()) {
            return Err(bad("disturbance.w_sequence", "kind = \"sequence\" needs w_sequence and v_sequence"));
        }
        if self.experiment.dist_levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(bad("experiment.dist_levels", "levels must lie in [0, 1]"));
        }
        match self.scenario {
            ScenarioKind::Linear => {
                let m = self.model.as_ref().ok_or_else(|| bad("model", "required for scenario = \"linear\""))?;
                if m.random_seed.is_none() {
                    for (name, present) in [
                        ("a", m.a.is_some()),
                        ("b", m.b.is_some()),
                        ("k", m.k.is_some()),
                        ("x_lo", m.x_lo.is_some()),
                        ("x_hi", m.x_hi.is_some()),
                        ("u_lo", m.u_lo.is_some()),
                        ("u_hi", m.u_hi.is_some()),
                        ("w_half", m.w_half.is_some()),
                        ("v_half", m.v_half.is_some()),
                    ] {
                        if !present {
                            return Err(bad(&format!("model.{name}"), "missing (or give model.random_seed)"));
                        }
                    }
                } else if m.a.is_some() || m.b.is_some() || m.k.is_some() {
                    return Err(bad("model.random_seed", "cannot be combined with explicit matrices"));
                }
                if self.cost.is_empty() {
                    return Err(bad("cost", "at least one [[cost]] block is required"));
                }
                if self.cost[0].start != 0 {
                    return Err(bad("cost.start", "the first cost block must start at 0"));
                }
                if self.cost.windows(2).any(|w| w[0].start >= w[1].start) {
                    return Err(bad("cost.start", "starts must increase"));
                }
                if self.experiment.horizon.is_none() {
                    return Err(bad("experiment.horizon", "required for scenario = \"linear\""));
                }
            }
            ScenarioKind::Vehicle => {
                if self.model.is_some() {
                    return Err(bad("model", "not used by scenario = \"vehicle\""));
                }
                if !self.cost.is_empty() {
                    return Err(bad("cost", "not used by scenario = \"vehicle\""));
                }
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec<f64>, ConfigError> {
        match self.scenario {
            ScenarioKind::Vehicle => Ok(oco_vehicle::model::model_spec(&self.vehicle_params())),
            ScenarioKind::Linear => {
                let m = self.model.as_ref().expect("checked");
                let mut spec = if let Some(seed) = m.random_seed {
                    random_plant_spec(seed, self.controller.mu)
                } else {
                    let a = matrix("model.a", m.a.as_ref().expect("checked"))?;
                    let b = matrix("model.b", m.b.as_ref().expect("checked"))?;
                    let k = matrix("model.k", m.k.as_ref().expect("checked"))?;
                    let boxed = |lo_name: &str, lo: &[f64], hi: &[f64]| {
                        finite(lo_name, lo)?;
                        finite(lo_name, hi)?;
                        HPolytope::from_box(lo, hi).map_err(|e| bad(lo_name, e))
                    };
                    let x_set = boxed("model.x_lo", m.x_lo.as_ref().expect("checked"), m.x_hi.as_ref().expect("checked"))?;
                    let u_set = boxed("model.u_lo", m.u_lo.as_ref().expect("checked"), m.u_hi.as_ref().expect("checked"))?;
                    let half = |name: &str, h: &[f64]| -> Result<Zonotope<f64>, ConfigError> {
                        finite(name, h)?;
                        if h.iter().any(|&v| v < 0.0) {
                            return Err(bad(name, "half-widths must be nonnegative"));
                        }
                        Ok(if h.iter().all(|&v| v == 0.0) {
                            Zonotope::origin(h.len())
                        } else {
                            Zonotope::symmetric_box(h)
                        })
                    };
                    let w = half("model.w_half", m.w_half.as_ref().expect("checked"))?;
                    let v = half("model.v_half", m.v_half.as_ref().expect("checked"))?;
                    ModelSpec::new(a, b, k, self.controller.mu, x_set, u_set, w, v)
                };
                spec.rpi_epsilon = m.rpi_epsilon;
                Ok(spec)
            }
        }
    }

    pub fn x0(&self) -> Option<Vector<f64>> {
        self.model.as_ref()?.x0.as_ref().map(|v| Vector::from_slice(v))
    }

    pub fn costs(&self, n: usize, m: usize) -> Result<CostSchedule<f64>, ConfigError> {
        let mut segments = Vec::with_capacity(self.cost.len());
        for (i, c) in self.cost.iter().enumerate() {
            let field = |f: &str| format!("cost[{i}].{f}");
            let q_x = matrix(&field("q_x"), &c.q_x)?;
            let q_u = matrix(&field("q_u"), &c.q_u)?;
            if q_x.shape() != (n, n) {
                return Err(bad(&field("q_x"), format!("expected {n}x{n}")));
            }
            if q_u.shape() != (m, m) {
                return Err(bad(&field("q_u"), format!("expected {m}x{m}")));
            }
            if c.ref_x.len() != n || c.ref_u.len() != m {
                return Err(bad(&field("ref_x"), format!("references must have lengths {n} and {m}")));
            }
            let cost = QuadraticCost::new(q_x, q_u, Vector::from_slice(&c.ref_x), Vector::from_slice(&c.ref_u))
                .map_err(|e| bad(&field("q_x"), e))?;
            segments.push((c.start, cost));
        }
        Ok(CostSchedule::piecewise(segments))
    }

    pub fn policy(&self) -> DisturbancePolicy<f64> {
        let d = &self.disturbance;
        match d.kind {
            KindName::Sequence => {
                let conv = |s: &Option<Vec<Vec<f64>>>| {
                    s.as_ref().expect("checked").iter().map(|r| Vector::from_slice(r)).collect()
                };
                DisturbancePolicy::sequence(conv(&d.w_sequence), conv(&d.v_sequence))
            }
            KindName::Zero => DisturbancePolicy::zero(),
            KindName::UniformBox => DisturbancePolicy::random(DisturbanceKind::UniformBox, d.seed, d.scale),
            KindName::WorstCorner => DisturbancePolicy::random(DisturbanceKind::WorstCorner, d.seed, d.scale),
        }
    }

    pub fn controller_options(&self, model: &PlantModel<f64>) -> ControllerOptions<f64> {
        let c = &self.controller;
        let mut opts = ControllerOptions::defaults(model, c.gamma);
        if let Some(c_g) = c.c_g {
            opts.c_g = c_g;
        }
        if let Some(tol) = c.membership_tol {
            opts.membership_tol = tol;
        }
        opts.variant = c.variant.g_variant();
        opts.estimator = match c.estimator {
            EstimatorName::Ogd => Estimator::Ogd,
            EstimatorName::ExactArgmin => Estimator::ExactArgmin,
        };
        opts
    }

    pub fn vehicle_params(&self) -> VehicleParams {
        let d = VehicleParams::default();
        let v = self.vehicle.clone().unwrap_or_default();
        VehicleParams {
            lateral_pole: v.lateral_pole.unwrap_or(d.lateral_pole),
            speed_gain: v.speed_gain.unwrap_or(d.speed_gain),
            w_bound: v.w_half.unwrap_or(d.w_bound),
            pos_noise: v.pos_noise_m.unwrap_or(d.pos_noise),
            speed_noise: v.speed_noise_kmh.map(kmh).unwrap_or(d.speed_noise),
            mu: self.controller.mu,
            shrink: self.controller.shrink,
        }
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let d = ScenarioConfig::default();
        let v = self.vehicle.clone().unwrap_or_default();
        ScenarioConfig {
            params: self.vehicle_params(),
            variant: self.controller.variant.g_variant(),
            seed: self.disturbance.seed,
            duration: v.duration_s.unwrap_or(d.duration),
            injected: v.injected.unwrap_or(d.injected),
            noiseless: v.noiseless.unwrap_or(d.noiseless),
            initial_speed: v.initial_speed_kmh.map(kmh).unwrap_or(d.initial_speed),
            initial_gap: v.initial_gap_m.unwrap_or(d.initial_gap),
            leader_speed: v.leader_speed_kmh.map(kmh).unwrap_or(d.leader_speed),
            detect_gap: v.detect_gap_m.unwrap_or(d.detect_gap),
            overtake_time: v.overtake_time_s.unwrap_or(d.overtake_time),
            gamma: self.controller.gamma,
            c_g: self.controller.c_g.unwrap_or(d.c_g),
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.output.dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"
scenario = "vehicle"
[controller]
mu = 10
gamma = 0.7
"#;

    #[test]
    fn minimal_vehicle_config() {
        let cfg = parse(MIN).unwrap();
        assert_eq!(cfg.controller.variant, Variant::Optimized);
        assert_eq!(cfg.scenario_config().params, VehicleParams::default());
    }

    #[test]
    fn missing_mu_names_the_field() {
        let err = parse("scenario = \"vehicle\"\n[controller]\ngamma = 0.7\n").unwrap_err();
        assert!(err.0.contains("mu"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse(&format!("{MIN}bogus = 1\n")).unwrap_err();
        assert!(err.0.contains("bogus"), "{err}");
    }

    #[test]
    fn linear_needs_costs() {
        let text = "scenario = \"linear\"\n[model]\nrandom_seed = 3\n[controller]\nmu = 3\ngamma = 0.1\n[experiment]\nhorizon = 10\n";
        let err = parse(text).unwrap_err();
        assert!(err.0.contains("cost"), "{err}");
    }
}
