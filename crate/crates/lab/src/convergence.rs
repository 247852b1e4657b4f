//! Convergence studies along one numerical axis.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use scl_core::limit::{solve_r, SolverConfig, SystemInput};
use scl_core::stats::{loglog_slope, strictly_decreasing};
use scl_core::synthesis::stage_n_controls;

use crate::config::ConfigError;
use crate::experiments::{e1_reduction_study, relaxation_metric, semiclassical_study};
use crate::run::{close_dir, forcing, open_dir, Check, Context, LabResult};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    #[value(name = "N")]
    BigN,
    Osc,
    Hbar,
    Dt,
    Grid,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::BigN => "N",
            Axis::Osc => "osc",
            Axis::Hbar => "hbar",
            Axis::Dt => "dt",
            Axis::Grid => "grid",
        }
    }

    fn sweep(self, s: &Scenario) -> Vec<f64> {
        let w = &s.sweeps;
        match self {
            Axis::BigN => w.big_n.iter().map(|&v| v as f64).collect(),
            Axis::Osc => w.osc.iter().map(|&v| v as f64).collect(),
            Axis::Hbar => w.hbar.clone(),
            Axis::Dt => w.dt.clone(),
            Axis::Grid => w.grid.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// One (axis value, metric, value) measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub at: f64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Study {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub rows: Vec<Row>,
    /// Least-squares log-log slope of each metric against the axis value.
    pub slopes: BTreeMap<String, f64>,
}

impl Study {
    pub fn column(&self, metric: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.metric == metric).map(|r| r.value).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| serde_json::json!({ self.axis.name(): r.at, "metric": r.metric, "value": r.value }))
            .collect();
        serde_json::json!({ "axis": self.axis.name(), "values": self.values, "rows": rows, "slopes": self.slopes })
    }
}

fn rows_of(at: f64, metrics: &[(&str, f64)]) -> Vec<Row> {
    metrics.iter().map(|(m, v)| Row { at, metric: m.to_string(), value: *v }).collect()
}

fn monotone(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] > w[0]) || values.windows(2).all(|w| w[1] < w[0])
}

fn as_count(v: f64) -> usize {
    v.round() as usize
}

pub fn study(s: &Scenario, axis: Axis, values: Option<Vec<f64>>) -> LabResult<Study> {
    let values = values.unwrap_or_else(|| axis.sweep(s));
    if values.len() < 2 || !monotone(&values) || values.iter().any(|v| !(*v > 0.0)) {
        return Err(ConfigError::BadValue {
            key: format!("sweeps.{}", axis.name()),
            value: format!("{values:?}"),
            reason: "need at least two positive, strictly monotone values".into(),
        }
        .into());
    }
    let rows: Vec<Row> = match axis {
        Axis::BigN => values
            .par_iter()
            .map(|&n| {
                let (_, _, err) = stage_n_controls(&s.spec, as_count(n), &s.synth).context("stage controls")?;
                Ok(rows_of(n, &[("stage_error", err)]))
            })
            .collect::<LabResult<Vec<_>>>()?
            .concat(),
        Axis::Osc => {
            let oscs: Vec<usize> = values.iter().map(|&v| as_count(v)).collect();
            let red = e1_reduction_study(&s.grid, &oscs, s.synth.smoothing).context("reduction")?;
            values
                .par_iter()
                .zip(red)
                .map(|(&n, r)| {
                    rows_of(
                        n,
                        &[
                            ("relaxation", relaxation_metric(as_count(n))),
                            ("reduction_gap", r.gap),
                            ("rho_deviation", r.rho_deviation),
                            ("shift_insensitivity", r.shift_insensitivity),
                        ],
                    )
                })
                .collect::<Vec<_>>()
                .concat()
        }
        Axis::Hbar => {
            let f = forcing(s)?;
            let st = semiclassical_study(&s.spec, &f.signal, &values, &s.grenier).context("semiclassical sweep")?;
            st.rows
                .iter()
                .flat_map(|r| {
                    rows_of(
                        r.hbar,
                        &[
                            ("amplitude_error", r.amplitude_error),
                            ("corrector_error", r.corrector_error),
                            ("s_norm", r.s_norm),
                            ("expansion_gap", r.expansion_gap),
                            ("target_gap", r.target_gap),
                        ],
                    )
                })
                .collect()
        }
        Axis::Dt => {
            let f = forcing(s)?;
            let input = SystemInput {
                initial: s.spec.initial_state(),
                xi: scl_core::curve::zero_signal(),
                zeta: scl_core::curve::zero_signal(),
                eta: f.signal,
                horizon: s.spec.horizon,
            };
            // each step size is compared with the run at half of it
            let mut dts: Vec<f64> = values.clone();
            dts.extend(values.iter().map(|v| v / 2.0));
            let runs = dts
                .par_iter()
                .map(|&dt| {
                    let cfg = SolverConfig {
                        cfl: 1e3,
                        cfl_limit: 1e3,
                        max_dt: Some(dt),
                        outputs: 1,
                        min_steps_per_gap: 1,
                        ..SolverConfig::default()
                    };
                    solve_r(&input, &cfg).map(|t| t.terminal().clone()).context("limit run")
                })
                .collect::<LabResult<Vec<_>>>()?;
            let k = values.len();
            values
                .iter()
                .enumerate()
                .flat_map(|(i, &dt)| rows_of(dt, &[("self_difference", runs[i].diff(&runs[k + i]).y_norm(0))]))
                .collect()
        }
        Axis::Grid => values
            .par_iter()
            .map(|&n| {
                let sc = s.with("grid.n", as_count(n).to_string())?;
                let (_, _, err) = stage_n_controls(&sc.spec, sc.big_n, &sc.synth).context("stage controls")?;
                Ok(rows_of(n, &[("stage_error", err)]))
            })
            .collect::<LabResult<Vec<_>>>()?
            .concat(),
    };
    let mut slopes = BTreeMap::new();
    for r in &rows {
        if !slopes.contains_key(&r.metric) {
            let col: Vec<f64> = rows.iter().filter(|x| x.metric == r.metric).map(|x| x.value).collect();
            slopes.insert(r.metric.clone(), loglog_slope(&values, &col));
        }
    }
    Ok(Study { axis, values, rows, slopes })
}

/// Checks attached to a study, where the axis has a known behaviour.
pub fn study_checks(st: &Study) -> Vec<Check> {
    let slope = |m: &str| st.slopes.get(m).copied().unwrap_or(f64::NAN);
    match st.axis {
        Axis::Osc => vec![
            Check::within("relaxation", "log-log slope of the relaxation metric", slope("relaxation"), -1.2, -0.8),
            Check::holds("reduction", "reduction gap strictly decreasing", strictly_decreasing(&st.column("reduction_gap"))),
        ],
        Axis::Hbar => vec![
            Check::holds("s_norm", "WKB residual strictly decreasing as hbar halves", strictly_decreasing(&st.column("s_norm"))),
            Check::ge("order", "measured order of the amplitude error", slope("amplitude_error"), 0.9),
        ],
        Axis::Dt => vec![Check::ge("order", "self-convergence order in the step size", slope("self_difference"), 2.0)],
        Axis::BigN | Axis::Grid => Vec::new(),
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    axis: &'a str,
    slopes: &'a BTreeMap<String, f64>,
}

pub fn convergence(s: &Scenario, root: &Path, axis: Axis, values: Option<Vec<f64>>) -> LabResult<(crate::run::RunRecord, Study)> {
    let st = study(s, axis, values)?;
    let extra = format!("axis = \"{}\"\nvalues = \"{:?}\"\n", axis.name(), st.values);
    let (mut dir, hash) = open_dir(s, root, "convergence", &extra)?;
    dir.json("convergence.json", &st.to_json())?;
    let summary = serde_json::to_value(Summary { axis: axis.name(), slopes: &st.slopes }).expect("plain data");
    let rec = close_dir(&mut dir, s, &hash, "convergence", study_checks(&st), Some(("convergence", summary)))?;
    Ok((rec, st))
}
