//! CSV and report writers. Floats use the shortest representation that
//! parses back to the same value, so identical runs give identical bytes.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use oco_core::simkit::{RegretLedger, RegretTable, TraceRecord};
use oco_vehicle::scenario::VehicleRecord;

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub const FLAG_COLUMNS: [&str; 7] = ["state_ok", "input_ok", "candidate_ok", "plan_ok", "steady_ok", "g_cap_ok", "tube"];

/// `t, x_true_*, x_meas_*, u_*, w_*, v_*, beta, g_norm, cost,
/// benchmark_cost, cum_regret`, then the flag columns.
pub fn trace_csv(trace: &[TraceRecord<f64>], n: usize, m: usize) -> String {
    let mut header: Vec<String> = vec!["t".into()];
    header.extend(indexed("x_true", n));
    header.extend(indexed("x_meas", n));
    header.extend(indexed("u", m));
    header.extend(indexed("w", n));
    header.extend(indexed("v", n));
    for c in ["beta", "g_norm", "cost", "benchmark_cost", "cum_regret"] {
        header.push(c.into());
    }
    header.extend(FLAG_COLUMNS.iter().map(|s| s.to_string()));
    let mut out = header.join(",");
    out.push('\n');
    for r in trace {
        let mut fields: Vec<String> = vec![r.t.to_string()];
        for v in [&r.x_true, &r.x_meas, &r.u, &r.w, &r.v] {
            fields.extend(v.iter().map(|&x| num(x)));
        }
        for x in [r.diagnostics.beta, r.diagnostics.g_norm, r.cost, r.benchmark_cost, r.cum_regret] {
            fields.push(num(x));
        }
        let f = &r.flags;
        for b in [f.state_ok, f.input_ok, f.candidate_ok, f.plan_ok, f.steady_ok, f.g_cap_ok] {
            fields.push(bit(b).into());
        }
        fields.push(f.tube.label().into());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// `t, cost, benchmark_cost, regret, theta_*, eta_*`.
pub fn ledger_csv(ledger: &RegretLedger<f64>) -> String {
    let (n, m) = ledger
        .per_step
        .first()
        .map_or((0, 0), |r| (r.theta.dim(), r.eta.dim()));
    let mut header: Vec<String> = ["t", "cost", "benchmark_cost", "regret"].iter().map(|s| s.to_string()).collect();
    header.extend(indexed("theta", n));
    header.extend(indexed("eta", m));
    let mut out = header.join(",");
    out.push('\n');
    for (t, r) in ledger.per_step.iter().enumerate() {
        let mut fields = vec![t.to_string(), num(r.cost), num(r.benchmark_cost), num(r.cost - r.benchmark_cost)];
        fields.extend(r.theta.iter().map(|&x| num(x)));
        fields.extend(r.eta.iter().map(|&x| num(x)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// `time, phase, p_x, gap, gap_meas, leader_estimate, target_speed,
/// residual_0, residual_1, residual_in_w`, SI units.
pub fn vehicle_csv(records: &[VehicleRecord]) -> String {
    let mut out = String::from(
        "time,phase,p_x,gap,gap_meas,leader_estimate,target_speed,residual_0,residual_1,residual_in_w\n",
    );
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            num(r.time),
            r.phase.id(),
            num(r.p_x),
            num(r.gap),
            num(r.gap_meas),
            num(r.leader_estimate),
            num(r.target_speed),
            num(r.residual[0]),
            num(r.residual[1]),
            bit(r.residual_in_w)
        );
    }
    out
}

pub fn sweep_csv(table: &RegretTable<f64>) -> String {
    let mut out = String::from("path_level,dist_level,seed,path_length,w_energy,v_energy,regret,violations\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            num(r.path_level),
            num(r.dist_level),
            r.seed,
            num(r.path_length),
            num(r.w_energy),
            num(r.v_energy),
            num(r.regret),
            r.violations
        );
    }
    out
}

pub fn write(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, contents)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0, -2.5e-9, 1e21, 123.456, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(1.0), "1.0");
    }
}
