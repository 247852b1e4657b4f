//! Subcommand drivers: each writes a run directory and returns its record.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use scl_core::curve::SharedSignal;
use scl_core::limit::{solve_r, Trajectory};
use scl_core::nls::extract_observables;
use scl_core::synthesis::{full_pipeline, StageControls, SynthesisReport};
use scl_core::PeriodicGrid;

use crate::config::ConfigError;
use crate::experiments::{adjoint_draws, basis_identities, compare_wave_solvers, limit_mass_drift, IdentityRow};
use crate::io::{content_hash, IoError, RunDir};
use crate::scenario::{ControlSource, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{context}: {source}")]
    Solver { context: String, source: scl_core::Error },
}

pub type LabResult<T> = std::result::Result<T, LabError>;

/// Attaches a context string to core errors.
pub trait Context<T> {
    fn context(self, what: &str) -> LabResult<T>;
}

impl<T> Context<T> for scl_core::Result<T> {
    fn context(self, what: &str) -> LabResult<T> {
        self.map_err(|source| LabError::Solver { context: what.to_string(), source })
    }
}

/// One measured quantity against its threshold.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Check {
    pub id: String,
    pub description: String,
    pub value: f64,
    /// `le`, `ge`, `gt` compare value with threshold; `in`: lower ≤ value ≤ threshold.
    pub relation: String,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl Check {
    pub fn le(id: &str, description: &str, value: f64, threshold: f64) -> Self {
        Check {
            id: id.into(),
            description: description.into(),
            value,
            relation: "le".into(),
            threshold,
            lower: None,
            pass: value <= threshold,
            detail: None,
        }
    }

    pub fn ge(id: &str, description: &str, value: f64, threshold: f64) -> Self {
        Check { relation: "ge".into(), pass: value >= threshold, ..Self::le(id, description, value, threshold) }
    }

    pub fn gt(id: &str, description: &str, value: f64, threshold: f64) -> Self {
        Check { relation: "gt".into(), pass: value > threshold, ..Self::le(id, description, value, threshold) }
    }

    pub fn within(id: &str, description: &str, value: f64, lower: f64, upper: f64) -> Self {
        Check {
            relation: "in".into(),
            lower: Some(lower),
            pass: (lower..=upper).contains(&value),
            ..Self::le(id, description, value, upper)
        }
    }

    /// Boolean property recorded as 1 (holds) or 0 against threshold 1.
    pub fn holds(id: &str, description: &str, holds: bool) -> Self {
        Self::ge(id, description, if holds { 1.0 } else { 0.0 }, 1.0)
    }

    pub fn with_detail(mut self, detail: impl Serialize) -> Self {
        self.detail = serde_json::to_value(detail).ok();
        self
    }

    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let bound = match (self.relation.as_str(), self.lower) {
            ("in", Some(lo)) => format!("in [{lo}, {}]", self.threshold),
            ("ge", _) => format!(">= {:e}", self.threshold),
            ("gt", _) => format!("> {:e}", self.threshold),
            _ => format!("<= {:e}", self.threshold),
        };
        format!("{verdict} {:<10} {:<58} {:>12.4e} {bound}", self.id, self.description, self.value)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub scenario: String,
    pub hash: String,
    pub command: String,
    pub outputs: Vec<String>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl RunRecord {
    fn new(s: &Scenario, hash: &str, command: &str, checks: Vec<Check>) -> Self {
        RunRecord {
            scenario: s.name.clone(),
            hash: hash.into(),
            command: command.into(),
            outputs: Vec::new(),
            pass: checks.iter().all(|c| c.pass),
            checks,
        }
    }
}

/// Serializable view of a synthesis report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportView {
    pub eps: f64,
    pub final_error: f64,
    pub success: bool,
    pub total_steps: usize,
    pub stages: Vec<StageView>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageView {
    pub n: usize,
    pub terminal_error: f64,
    pub gap: f64,
    pub rho_deviation: f64,
    pub tolerance: f64,
    pub budget: Option<f64>,
    pub osc: usize,
    pub smoothing: usize,
    pub segments: usize,
    pub decompositions: usize,
    pub fast_path: bool,
    pub osc_trace: Vec<(usize, f64)>,
    pub steps: usize,
}

impl From<&SynthesisReport> for ReportView {
    fn from(r: &SynthesisReport) -> Self {
        ReportView {
            eps: r.eps,
            final_error: r.final_error,
            success: r.success,
            total_steps: r.total_steps,
            stages: r
                .stages
                .iter()
                .map(|s| StageView {
                    n: s.n,
                    terminal_error: s.terminal_error,
                    gap: s.gap,
                    rho_deviation: s.rho_deviation,
                    tolerance: s.tolerance,
                    budget: s.budget.is_finite().then_some(s.budget),
                    osc: s.provenance.osc,
                    smoothing: s.provenance.smoothing,
                    segments: s.provenance.segments,
                    decompositions: s.provenance.decompositions,
                    fast_path: s.provenance.fast_path,
                    osc_trace: s.osc_trace.clone(),
                    steps: s.steps,
                })
                .collect(),
        }
    }
}

/// The physical forcing of a scenario, with the synthesis outcome when synthesized.
pub struct Forcing {
    pub signal: SharedSignal,
    pub controls: Option<StageControls>,
    pub report: Option<SynthesisReport>,
}

pub fn forcing(s: &Scenario) -> LabResult<Forcing> {
    match &s.control {
        ControlSource::Constant(_) => {
            Ok(Forcing { signal: s.constant_signal().expect("constant source"), controls: None, report: None })
        }
        ControlSource::Synthesized => {
            let out = full_pipeline(&s.spec, s.big_n, &s.synth).context("synthesis")?;
            if let Some(e) = out.failure {
                return Err(LabError::Solver { context: "synthesis".into(), source: e });
            }
            Ok(Forcing { signal: out.controls.physical_signal(), controls: Some(out.controls), report: Some(out.report) })
        }
    }
}

pub(crate) fn open_dir(s: &Scenario, root: &Path, command: &str, extra: &str) -> LabResult<(RunDir, String)> {
    let hash = content_hash(&format!("{}command = \"{command}\"\n{extra}", s.config.canonical()));
    Ok((RunDir::create(root, &s.name, &hash)?, hash))
}

pub(crate) fn close_dir(
    dir: &mut RunDir,
    s: &Scenario,
    hash: &str,
    command: &str,
    checks: Vec<Check>,
    extra: Option<(&str, serde_json::Value)>,
) -> LabResult<RunRecord> {
    close(dir, RunRecord::new(s, hash, command, checks), extra)
}

fn close(dir: &mut RunDir, mut rec: RunRecord, extra: Option<(&str, serde_json::Value)>) -> LabResult<RunRecord> {
    dir.json("acceptance.json", &rec.checks)?;
    let mut outputs = dir.manifest();
    outputs.push("report.json".into());
    rec.outputs = outputs;
    let mut v = serde_json::to_value(&rec).map_err(IoError::from)?;
    if let Some((k, x)) = extra {
        v.as_object_mut().expect("record is an object").insert(k.into(), x);
    }
    dir.json("report.json", &v)?;
    Ok(rec)
}

#[derive(Serialize)]
struct LogRow {
    t: f64,
    dt: f64,
    min_rho0: f64,
    cfl: f64,
    /// H^k norms for k = 0..=K of each component.
    norms: BTreeMap<&'static str, Vec<f64>>,
}

const COMPONENTS: [&str; 5] = ["u0", "u1", "rho0", "rho1", "A"];

fn write_trajectory(dir: &mut RunDir, tr: &Trajectory, curves: bool) -> LabResult<()> {
    let log: Vec<LogRow> = tr
        .diagnostics
        .iter()
        .map(|d| LogRow {
            t: d.t,
            dt: d.dt,
            min_rho0: d.min_rho0,
            cfl: d.cfl,
            norms: COMPONENTS.iter().enumerate().map(|(i, c)| (*c, d.norms.iter().map(|n| n[i]).collect())).collect(),
        })
        .collect();
    dir.jsonl("run_log.jsonl", &log)?;
    for (i, c) in COMPONENTS.iter().enumerate() {
        dir.field(&format!("fields/terminal_{c}.csv"), tr.terminal().fields()[i])?;
        if curves {
            dir.curve(&format!("fields/{c}.csv"), tr.states.iter().map(|(t, s)| (t, s.fields()[i])))?;
        }
    }
    Ok(())
}

fn write_controls(dir: &mut RunDir, c: &StageControls) -> LabResult<()> {
    let modes = c.n + 1;
    let mut header = vec!["t".to_string()];
    for comp in ["eta0", "eta1"] {
        for j in 1..=modes {
            header.push(format!("{comp}_sin{j}"));
            header.push(format!("{comp}_cos{j}"));
        }
    }
    let rows: Vec<Vec<f64>> = c
        .time_nodes()
        .iter()
        .map(|&t| {
            let p = c.coefficients_at(t);
            let mut row = vec![t];
            for q in &p {
                for j in 1..=modes {
                    row.extend(q.coeff(j));
                }
            }
            row
        })
        .collect();
    dir.table("controls/eta.csv", &header, &rows)?;
    Ok(())
}

fn mass_checks(tr: &Trajectory) -> Vec<Check> {
    let [d0, d1] = limit_mass_drift(tr);
    vec![
        Check::le("mass0", "relative drift of the zeroth order mass", d0, 1e-8),
        Check::le("mass1", "relative drift of the first order mass", d1, 1e-8),
        Check::ge("positivity", "minimum of the zeroth order density", tr.min_rho0, 0.0),
    ]
}

/// Synthesis pipeline, controls and a replay of the physical forcing.
pub fn synthesize(s: &Scenario, root: &Path) -> LabResult<RunRecord> {
    let (mut dir, hash) = open_dir(s, root, "synthesize", "")?;
    let out = full_pipeline(&s.spec, s.big_n, &s.synth).context("synthesis")?;
    write_controls(&mut dir, &out.controls)?;
    let replay = solve_r(&out.controls.physical_input(&s.spec), &s.replay).context("replay")?;
    write_trajectory(&mut dir, &replay, false)?;
    let mut checks = vec![
        Check::le("synthesis", "terminal error of the synthesized controls", out.report.final_error, s.spec.eps),
        Check::le("replay", "terminal error of the physical replay", s.spec.terminal_error(replay.terminal()), s.spec.eps),
        Check::le("top_mode", "largest control coefficient above the physical space", out.controls.projection_residual(0), 1e-12),
    ];
    checks.extend(mass_checks(&replay));
    if let Some(e) = &out.failure {
        checks.push(Check::holds("pipeline", &format!("pipeline completed ({e})"), false));
    }
    let rec = RunRecord::new(s, &hash, "synthesize", checks);
    let view = serde_json::to_value(ReportView::from(&out.report)).map_err(IoError::from)?;
    close(&mut dir, rec, Some(("synthesis", view)))
}

/// Limit-system run under the scenario's forcing.
pub fn simulate_limit(s: &Scenario, root: &Path) -> LabResult<RunRecord> {
    let (mut dir, hash) = open_dir(s, root, "simulate-limit", "")?;
    let f = forcing(s)?;
    let input = scl_core::limit::SystemInput {
        initial: s.spec.initial_state(),
        xi: scl_core::curve::zero_signal(),
        zeta: scl_core::curve::zero_signal(),
        eta: f.signal.clone(),
        horizon: s.spec.horizon,
    };
    if let Some(c) = &f.controls {
        write_controls(&mut dir, c)?;
    }
    let tr = solve_r(&input, &s.replay).context("limit run")?;
    write_trajectory(&mut dir, &tr, true)?;
    let mut checks = mass_checks(&tr);
    let err = s.spec.terminal_error(tr.terminal());
    match f.report {
        Some(_) => checks.push(Check::le("terminal", "terminal error against the target", err, s.spec.eps)),
        None => checks.push(Check::ge("terminal", "terminal distance to the target (reported)", err, 0.0)),
    }
    let rec = RunRecord::new(s, &hash, "simulate-limit", checks);
    close(&mut dir, rec, None)
}

#[derive(Serialize)]
struct NlsLogRow {
    t: f64,
    mass: f64,
    min_density: f64,
    psi_h1: f64,
}

/// Split-step NLS run at the scenario's ħ, cross-checked by the phase-lifted solver.
pub fn simulate_nls(s: &Scenario, root: &Path) -> LabResult<RunRecord> {
    let (mut dir, hash) = open_dir(s, root, "simulate-nls", "")?;
    let f = forcing(s)?;
    if let Some(c) = &f.controls {
        write_controls(&mut dir, c)?;
    }
    let h = s.hbar;
    let cmp = compare_wave_solvers(&s.spec, &f.signal, h, &s.grenier, &s.nls).context("wave runs")?;
    let run = &cmp.split_step;
    let obs: Vec<(f64, _)> = run.iter().map(|(t, w)| (t, extract_observables(w, 1e-8))).collect();
    dir.complex_field("fields/psi_T.csv", &run.last().psi)?;
    dir.complex_field("fields/psi_T_lifted.csv", &cmp.lifted.psi)?;
    dir.curve("fields/rho.csv", obs.iter().map(|(t, o)| (*t, &o.rho)))?;
    dir.curve("fields/momentum.csv", obs.iter().map(|(t, o)| (*t, &o.momentum)))?;
    let log: Vec<NlsLogRow> = run
        .iter()
        .zip(&obs)
        .map(|((t, w), (_, o))| NlsLogRow { t, mass: w.mass(), min_density: o.min_density, psi_h1: w.psi.sobolev_norm(1) })
        .collect();
    dir.jsonl("run_log.jsonl", &log)?;
    let rho = &obs.last().expect("at least one output").1.rho;
    let target_gap = (rho - &(&s.spec.ghat0 + &s.spec.ghat1.scale(h))).l2_norm();
    let checks = vec![
        Check::le("mass", "relative mass drift of the split-step run", cmp.mass_drift, 1e-10),
        Check::le("solvers", "L2 gap between phase-lifted and split-step waves", cmp.gap, 1e-6),
        Check::ge("target", "density gap to the target at the final time (reported)", target_gap, 0.0),
    ];
    let rec = RunRecord::new(s, &hash, "simulate-nls", checks);
    close(&mut dir, rec, None)
}

/// Identity residual table for E_{n+1}, n ≤ `max_n`, plus seeded adjoint draws.
pub fn identity_rows(max_n: usize, seed: u64, grid: &PeriodicGrid) -> LabResult<Vec<IdentityRow>> {
    let mut rows = basis_identities(max_n, grid).context("decomposition")?;
    rows.extend(adjoint_draws(20, seed, grid));
    Ok(rows)
}

pub fn identity_checks(rows: &[IdentityRow]) -> Vec<Check> {
    let worst = |kind: &str| rows.iter().filter(|r| r.kind.starts_with(kind)).map(|r| r.residual).fold(0.0, f64::max);
    vec![
        Check::le("bracket", "worst single-mode bracket residual", worst("bracket"), 1e-12),
        Check::le("paired", "worst paired decomposition residual", worst("paired"), 1e-12),
        Check::le("adjoint", "worst adjoint cross-term residual", worst("adjoint"), 1e-12),
    ]
}

pub fn format_identity_table(rows: &[IdentityRow]) -> String {
    let mut out = format!("{:<9} {:>3} {:<8} {:>12}\n", "kind", "n", "mode", "residual");
    for r in rows {
        out.push_str(&format!("{:<9} {:>3} {:<8} {:>12.3e}\n", r.kind, r.n, r.mode, r.residual));
    }
    out
}

pub fn verify_identities(s: &Scenario, root: &Path, max_n: usize, seed: u64) -> LabResult<(RunRecord, String)> {
    let (mut dir, hash) = open_dir(s, root, "verify-identities", &format!("n = {max_n}\nseed = {seed}\n"))?;
    let rows = identity_rows(max_n, seed, &s.grid)?;
    dir.jsonl("identities.jsonl", &rows)?;
    let rec = RunRecord::new(s, &hash, "verify-identities", identity_checks(&rows));
    Ok((close(&mut dir, rec, None)?, format_identity_table(&rows)))
}
