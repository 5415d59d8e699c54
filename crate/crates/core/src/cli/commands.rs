//! The four batch commands. Each returns a [`ResultTable`] and a status that
//! maps onto the process exit code.

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::{ConfigError, ScenarioConfig, SweepSpec, SweepVariable};
use super::table::{Column, ColumnType, ResultTable, Value};
use crate::analytic::{self, AnalyticError, NetworkParams, TierConfig};
use crate::optimizer::{self, MethodChoice, Optimum, OptimizerError, SolverOptions};
use crate::simulator::{self, SimError, SimStats};
use crate::units::{db_to_linear, linear_to_db};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("this command needs a [{0}] block in the config")]
    MissingSection(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The run completed but the answer is infeasible or some queue is unstable.
    InfeasibleOrUnstable,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::InfeasibleOrUnstable => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub table: ResultTable,
    pub status: Status,
}

pub const TOOL: &str = concat!("hetnet ", env!("CARGO_PKG_VERSION"));

/// Provenance lines: tool, command, config hash and the config itself, so a
/// table can be regenerated from its own header.
fn provenance(config: &ScenarioConfig, command: &str) -> Vec<(String, String)> {
    let text = config.emit();
    let hash = Sha256::digest(text.as_bytes());
    let mut p = vec![
        ("tool".to_string(), TOOL.to_string()),
        ("command".to_string(), command.to_string()),
        (
            "config_sha256".to_string(),
            hash.iter().map(|b| format!("{b:02x}")).collect(),
        ),
    ];
    if let Some(sim) = &config.sim {
        p.push(("seed".into(), sim.base_seed.to_string()));
        p.push(("replications".into(), sim.replications.to_string()));
    }
    p.extend(text.lines().map(|l| ("config".to_string(), l.to_string())));
    p
}

/// Reassembles the config text embedded in a table header.
pub fn embedded_config(table: &ResultTable) -> String {
    let mut s = String::new();
    for (k, v) in &table.provenance {
        if k == "config" {
            s.push_str(v);
            s.push('\n');
        }
    }
    s
}

fn col(name: impl Into<String>, ty: ColumnType, unit: &str) -> Column {
    Column::new(name, ty, unit)
}

fn float(name: impl Into<String>, unit: &str) -> Column {
    col(name, ColumnType::Float, unit)
}

pub fn cmd_analytic(config: &ScenarioConfig) -> Result<CommandOutput, CommandError> {
    let report = analytic::analyze(&config.tiers, &config.params)?;
    let mut t = ResultTable::new(vec![
        col("scope", ColumnType::Text, ""),
        col("tier", ColumnType::Int, ""),
        float("association_prob", ""),
        float("traffic_intensity", ""),
        float("sir_coverage", ""),
        float("delay_bound_s", "s"),
        float("rate_bps", "bit/s"),
        col("stable", ColumnType::Bool, ""),
    ]);
    t.provenance = provenance(config, "analytic");
    for (k, r) in report.tiers.iter().enumerate() {
        t.push(vec![
            "tier".into(),
            (k + 1).into(),
            r.association_prob.into(),
            r.traffic_intensity.into(),
            r.sir_coverage.into(),
            r.delay_bound.seconds().into(),
            r.rate.into(),
            r.stable.into(),
        ]);
    }
    t.push(vec![
        "network".into(),
        Value::Missing,
        Value::Missing,
        Value::Missing,
        report.sir_coverage.into(),
        report.delay_bound.seconds().into(),
        Value::Missing,
        report.all_stable().into(),
    ]);
    Ok(CommandOutput {
        table: t,
        status: if report.all_stable() {
            Status::Ok
        } else {
            Status::InfeasibleOrUnstable
        },
    })
}

fn bias_db(b: f64) -> f64 {
    if b > 0.0 {
        linear_to_db(b)
    } else {
        f64::NEG_INFINITY
    }
}

fn method_name(m: optimizer::Method) -> &'static str {
    match m {
        optimizer::Method::ClosedForm => "closed_form",
        optimizer::Method::Numerical => "numerical",
    }
}

pub fn choice_name(c: MethodChoice) -> &'static str {
    match c {
        MethodChoice::Auto => "auto",
        MethodChoice::ClosedForm => "closed",
        MethodChoice::Numerical => "numerical",
    }
}

pub fn cmd_optimize(config: &ScenarioConfig, method: MethodChoice) -> Result<CommandOutput, CommandError> {
    let mut t = ResultTable::new(vec![
        col("scope", ColumnType::Text, ""),
        col("tier", ColumnType::Int, ""),
        float("association_prob", ""),
        float("bias_db", "dB"),
        col("shutdown", ColumnType::Bool, ""),
        float("delay_bound_s", "s"),
        col("method", ColumnType::Text, ""),
        float("residual", ""),
        col("reference_tier", ColumnType::Int, ""),
        col("status", ColumnType::Text, ""),
    ]);
    t.provenance = provenance(config, &format!("optimize --method {}", choice_name(method)));
    let opt = match optimizer::optimize(&config.tiers, &config.params, method, &SolverOptions::default()) {
        Ok(o) => o,
        Err(OptimizerError::Infeasible) => {
            t.push(vec![
                "network".into(),
                Value::Missing,
                Value::Missing,
                Value::Missing,
                Value::Missing,
                f64::INFINITY.into(),
                Value::Missing,
                Value::Missing,
                Value::Missing,
                "infeasible".into(),
            ]);
            return Ok(CommandOutput {
                table: t,
                status: Status::InfeasibleOrUnstable,
            });
        }
        Err(e) => return Err(e.into()),
    };
    for k in 0..config.tiers.len() {
        t.push(vec![
            "tier".into(),
            (k + 1).into(),
            opt.association[k].into(),
            bias_db(opt.bias[k]).into(),
            opt.shutdown_tiers.contains(&k).into(),
            Value::Missing,
            Value::Missing,
            Value::Missing,
            Value::Missing,
            Value::Missing,
        ]);
    }
    t.push(vec![
        "network".into(),
        Value::Missing,
        Value::Missing,
        Value::Missing,
        Value::Missing,
        opt.delay.seconds().into(),
        method_name(opt.method).into(),
        opt.residual.into(),
        (opt.reference_tier + 1).into(),
        "ok".into(),
    ]);
    Ok(CommandOutput {
        table: t,
        status: Status::Ok,
    })
}

pub fn cmd_simulate(config: &ScenarioConfig) -> Result<CommandOutput, CommandError> {
    let sim = config.sim.ok_or(CommandError::MissingSection("sim"))?;
    let report = analytic::analyze(&config.tiers, &config.params)?;
    let stats = simulator::simulate(&config.tiers, &config.params, &sim)?;
    let mut t = ResultTable::new(vec![
        col("scope", ColumnType::Text, ""),
        col("tier", ColumnType::Int, ""),
        float("sim_association_fraction", ""),
        float("association_prob", ""),
        float("sim_utilization", ""),
        float("sim_utilization_se", ""),
        float("traffic_intensity", ""),
        float("sim_delay_s", "s"),
        float("sim_delay_se_s", "s"),
        float("delay_bound_s", "s"),
        float("sim_sir_coverage", ""),
        float("sim_sir_coverage_se", ""),
        float("sir_coverage", ""),
        col("unstable_bs", ColumnType::Int, ""),
    ]);
    t.provenance = provenance(config, "simulate");
    let opt = |x: f64| if x.is_finite() { Value::Float(x) } else { Value::Missing };
    for (k, (s, a)) in stats.tiers.iter().zip(&report.tiers).enumerate() {
        t.push(vec![
            "tier".into(),
            (k + 1).into(),
            opt(s.association_fraction.mean),
            a.association_prob.into(),
            opt(s.utilization.mean),
            opt(s.utilization.std_error),
            a.traffic_intensity.into(),
            opt(s.mean_delay.mean),
            opt(s.mean_delay.std_error),
            a.delay_bound.seconds().into(),
            opt(s.sir_coverage.mean),
            opt(s.sir_coverage.std_error),
            a.sir_coverage.into(),
            stats.unstable_bs_total[k].into(),
        ]);
    }
    let unstable: usize = stats.unstable_bs_total.iter().sum();
    t.push(vec![
        "network".into(),
        Value::Missing,
        Value::Missing,
        Value::Missing,
        Value::Missing,
        Value::Missing,
        Value::Missing,
        opt(stats.network_delay.mean),
        opt(stats.network_delay.std_error),
        report.delay_bound.seconds().into(),
        opt(stats.network_coverage.mean),
        opt(stats.network_coverage.std_error),
        report.sir_coverage.into(),
        unstable.into(),
    ]);
    let status = if unstable > 0 || !report.all_stable() {
        Status::InfeasibleOrUnstable
    } else {
        Status::Ok
    };
    Ok(CommandOutput { table: t, status })
}

/// Tier and network parameters at one sweep point.
pub fn sweep_point(
    tiers: &[TierConfig],
    params: &NetworkParams,
    spec: &SweepSpec,
    value: f64,
) -> (Vec<TierConfig>, NetworkParams) {
    let mut tiers = tiers.to_vec();
    let mut params = *params;
    match spec.variable {
        SweepVariable::BiasDb => tiers[spec.tier].bias = db_to_linear(value),
        SweepVariable::Gamma => params.arrival_rate = value,
        SweepVariable::Tau => params.sir_threshold = value,
        SweepVariable::BandwidthRatio => {
            // The swept tier gets `value` of the total; the others split the
            // rest in proportion to their configured bandwidths.
            let rest: f64 = tiers
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != spec.tier)
                .map(|(_, t)| t.bandwidth)
                .sum();
            let others = tiers.len() - 1;
            let remaining = (1.0 - value) * spec.total_bandwidth;
            for (k, t) in tiers.iter_mut().enumerate() {
                t.bandwidth = if k == spec.tier {
                    value * spec.total_bandwidth
                } else if rest > 0.0 {
                    remaining * t.bandwidth / rest
                } else {
                    remaining / others as f64
                };
            }
        }
    }
    (tiers, params)
}

fn sweep_columns(k: usize, simulate: bool) -> Vec<Column> {
    let mut c = vec![
        col("index", ColumnType::Int, ""),
        col("variable", ColumnType::Text, ""),
        float("value", ""),
    ];
    for i in 1..=k {
        c.push(float(format!("association_prob_{i}"), ""));
        c.push(float(format!("traffic_intensity_{i}"), ""));
        c.push(float(format!("sir_coverage_{i}"), ""));
        c.push(float(format!("delay_bound_{i}_s"), "s"));
    }
    c.push(float("delay_bound_s", "s"));
    c.push(float("sir_coverage", ""));
    for i in 1..=k {
        c.push(float(format!("opt_bias_db_{i}"), "dB"));
    }
    c.push(float("opt_delay_bound_s", "s"));
    c.push(col("opt_status", ColumnType::Text, ""));
    if simulate {
        for i in 1..=k {
            c.push(float(format!("sim_utilization_{i}"), ""));
            c.push(float(format!("sim_utilization_{i}_se"), ""));
            c.push(float(format!("sim_delay_{i}_s"), "s"));
            c.push(float(format!("sim_delay_{i}_se_s"), "s"));
        }
        c.push(float("sim_delay_s", "s"));
        c.push(float("sim_delay_se_s", "s"));
        c.push(float("sim_sir_coverage", ""));
        c.push(float("sim_sir_coverage_se", ""));
        c.push(col("sim_unstable_bs", ColumnType::Int, ""));
    }
    c.push(col("status", ColumnType::Text, ""));
    c
}

fn finite_or_missing(x: f64) -> Value {
    if x.is_nan() {
        Value::Missing
    } else {
        Value::Float(x)
    }
}

fn sweep_row(
    config: &ScenarioConfig,
    spec: &SweepSpec,
    index: usize,
    value: f64,
    simulate: bool,
    width: usize,
) -> Vec<Value> {
    let k = config.tiers.len();
    let mut row: Vec<Value> = vec![index.into(), spec.variable.name().into(), value.into()];
    let (tiers, params) = sweep_point(&config.tiers, &config.params, spec, value);
    let fail = |mut row: Vec<Value>, msg: String| {
        row.resize(width - 1, Value::Missing);
        row.push(msg.into());
        row
    };
    let report = match analytic::analyze(&tiers, &params) {
        Ok(r) => r,
        Err(e) => return fail(row, e.to_string()),
    };
    for r in &report.tiers {
        row.push(r.association_prob.into());
        row.push(r.traffic_intensity.into());
        row.push(r.sir_coverage.into());
        row.push(r.delay_bound.seconds().into());
    }
    row.push(report.delay_bound.seconds().into());
    row.push(report.sir_coverage.into());
    let opt: Result<Optimum, OptimizerError> =
        optimizer::numerical_optimum(&tiers, &params, &SolverOptions::default());
    match &opt {
        Ok(o) => {
            row.extend(o.bias.iter().map(|&b| Value::Float(bias_db(b))));
            row.push(o.delay.seconds().into());
            row.push("ok".into());
        }
        Err(e) => {
            row.extend(std::iter::repeat_n(Value::Missing, k + 1));
            row.push(e.to_string().into());
        }
    }
    if simulate {
        let sim = config.sim.expect("checked by the caller");
        match simulator::simulate(&tiers, &params, &sim) {
            Ok(stats) => push_sim(&mut row, &stats),
            Err(e) => return fail(row, e.to_string()),
        }
    }
    row.push("ok".into());
    row
}

fn push_sim(row: &mut Vec<Value>, stats: &SimStats) {
    for s in &stats.tiers {
        row.push(finite_or_missing(s.utilization.mean));
        row.push(finite_or_missing(s.utilization.std_error));
        row.push(finite_or_missing(s.mean_delay.mean));
        row.push(finite_or_missing(s.mean_delay.std_error));
    }
    row.push(finite_or_missing(stats.network_delay.mean));
    row.push(finite_or_missing(stats.network_delay.std_error));
    row.push(finite_or_missing(stats.network_coverage.mean));
    row.push(finite_or_missing(stats.network_coverage.std_error));
    row.push(stats.unstable_bs_total.iter().sum::<usize>().into());
}

/// One row per grid point. Points run in parallel; rows come out in grid
/// order. A failing point records its error in `status` and the sweep goes on.
pub fn cmd_sweep(config: &ScenarioConfig, simulate: bool) -> Result<CommandOutput, CommandError> {
    let spec = config.sweep.as_ref().ok_or(CommandError::MissingSection("sweep"))?;
    if simulate && config.sim.is_none() {
        return Err(CommandError::MissingSection("sim"));
    }
    let columns = sweep_columns(config.tiers.len(), simulate);
    let width = columns.len();
    let mut t = ResultTable::new(columns);
    t.provenance = provenance(
        config,
        if simulate { "sweep --simulate" } else { "sweep" },
    );
    let rows: Vec<Vec<Value>> = spec
        .values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| sweep_row(config, spec, i, v, simulate, width))
        .collect();
    for r in rows {
        t.push(r);
    }
    Ok(CommandOutput {
        table: t,
        status: Status::Ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[network]
user_density_per_m2 = 1e-2
arrival_rate_pkt_per_s = 1.0
mean_packet_length_bits = 1e5
sir_threshold_linear = 1.0
path_loss_exponent = 4.0

[[tier]]
density_per_m2 = 1e-4
power_dbm = 46.0
bandwidth_hz = 1e7

[[tier]]
density_per_m2 = 5e-4
power_dbm = 35.0
bandwidth_hz = 6e6
"#;

    fn cfg(extra: &str) -> ScenarioConfig {
        ScenarioConfig::parse_str(&format!("{BASE}{extra}")).unwrap()
    }

    fn with_gamma(gamma: f64) -> ScenarioConfig {
        ScenarioConfig::parse_str(&BASE.replace("arrival_rate_pkt_per_s = 1.0", &format!("arrival_rate_pkt_per_s = {gamma}"))).unwrap()
    }

    #[test]
    fn analytic_rows() {
        let out = cmd_analytic(&cfg("")).unwrap();
        assert_eq!(out.table.rows.len(), 3);
        assert_eq!(out.status, Status::Ok);
        let a1 = out.table.get(0, "association_prob").unwrap().as_f64().unwrap();
        assert!((a1 - 0.41508).abs() < 1e-4);
    }

    #[test]
    fn analytic_zero_load() {
        let out = cmd_analytic(&with_gamma(0.0)).unwrap();
        assert_eq!(out.table.get(0, "traffic_intensity").unwrap().as_f64(), Some(0.0));
        assert_eq!(out.table.get(0, "delay_bound_s").unwrap().as_f64(), Some(0.01));
    }

    #[test]
    fn analytic_unstable_is_flagged() {
        let out = cmd_analytic(&with_gamma(100.0)).unwrap();
        assert_eq!(out.status, Status::InfeasibleOrUnstable);
        assert_eq!(out.table.get(2, "delay_bound_s").unwrap().as_f64(), Some(f64::INFINITY));
        assert!(out.table.to_csv_string().contains(",inf,"));
    }

    #[test]
    fn optimize_closed_form_point() {
        let out = cmd_optimize(&cfg(""), MethodChoice::ClosedForm).unwrap();
        assert!((out.table.get(0, "association_prob").unwrap().as_f64().unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(out.table.get(0, "bias_db").unwrap().as_f64(), Some(0.0));
        assert_eq!(out.table.get(2, "method").unwrap().as_str(), Some("closed_form"));
    }

    #[test]
    fn optimize_infeasible_row() {
        let out = cmd_optimize(&with_gamma(100.0), MethodChoice::Auto).unwrap();
        assert_eq!(out.status, Status::InfeasibleOrUnstable);
        assert_eq!(out.table.get(0, "status").unwrap().as_str(), Some("infeasible"));
    }

    #[test]
    fn sweep_bias_trends() {
        let out = cmd_sweep(&cfg("[sweep]\nvariable = \"bias_db\"\nstart = -10.0\nstop = 10.0\nstep = 1.0\n"), false).unwrap();
        let t = &out.table;
        assert_eq!(t.rows.len(), 21);
        let series = |name: &str| -> Vec<f64> { (0..21).map(|r| t.get(r, name).unwrap().as_f64().unwrap()).collect() };
        let r1 = series("traffic_intensity_1");
        let r2 = series("traffic_intensity_2");
        assert!(r1.windows(2).all(|w| w[1] < w[0]));
        assert!(r2.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(t.get(3, "index").unwrap().as_f64(), Some(3.0));
    }

    #[test]
    fn sweep_bandwidth_ratio_optimal_bias_increases() {
        let text = BASE.replace("arrival_rate_pkt_per_s = 1.0", "arrival_rate_pkt_per_s = 1.8");
        let c = ScenarioConfig::parse_str(&format!(
            "{text}[sweep]\nvariable = \"bandwidth_ratio\"\npoints = [0.2, 0.3, 0.4, 0.5]\ntotal_bandwidth_hz = 12e6\n"
        ))
        .unwrap();
        let out = cmd_sweep(&c, false).unwrap();
        let b: Vec<f64> = (0..4)
            .map(|r| out.table.get(r, "opt_bias_db_2").unwrap().as_f64().unwrap())
            .collect();
        assert!(b.windows(2).all(|w| w[1] > w[0]), "{b:?}");
        let (tiers, _) = sweep_point(&c.tiers, &c.params, c.sweep.as_ref().unwrap(), 0.25);
        assert_eq!(tiers[1].bandwidth, 3e6);
        assert_eq!(tiers[0].bandwidth, 9e6);
    }

    #[test]
    fn sweep_tau_trends() {
        let text = BASE
            .replace("arrival_rate_pkt_per_s = 1.0", "arrival_rate_pkt_per_s = 3.8")
            .replace("bandwidth_hz = 1e7", "bandwidth_hz = 8e6")
            .replace("bandwidth_hz = 6e6", "bandwidth_hz = 4e6");
        let c = ScenarioConfig::parse_str(&format!(
            "{text}[sweep]\nvariable = \"tau\"\npoints = [1.0, 2.0, 4.0, 8.0]\n"
        ))
        .unwrap();
        let out = cmd_sweep(&c, false).unwrap();
        let s = |n: &str| -> Vec<f64> { (0..4).map(|r| out.table.get(r, n).unwrap().as_f64().unwrap()).collect() };
        assert!(s("sir_coverage").windows(2).all(|w| w[1] < w[0]));
        assert!(s("delay_bound_s").windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn sweep_records_point_failures() {
        let out = cmd_sweep(&cfg("[sweep]\nvariable = \"gamma\"\npoints = [1.0, 100.0]\n"), false).unwrap();
        assert_eq!(out.table.get(0, "status").unwrap().as_str(), Some("ok"));
        assert_eq!(out.table.get(1, "opt_status").unwrap().as_str(), Some("no association keeps every tier stable"));
        assert_eq!(out.table.get(1, "delay_bound_s").unwrap().as_f64(), Some(f64::INFINITY));
    }

    #[test]
    fn header_reproduces_config() {
        let c = cfg("");
        let out = cmd_analytic(&c).unwrap();
        let text = out.table.to_csv_string();
        let back = ResultTable::read(text.as_bytes()).unwrap();
        let again = ScenarioConfig::parse_str(&embedded_config(&back)).unwrap();
        assert_eq!(again, c);
        assert_eq!(cmd_analytic(&again).unwrap().table, back);
    }
}
