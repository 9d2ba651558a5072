//! Experiment execution and deterministic table emission.

use crate::config::{ExperimentConfig, ExperimentKind, Validated};
use anyhow::{bail, Context, Result};
use effectop::media::sample_ensemble;
use effectop::pde::{epsilon_sweep, CellSetup, SweepReport, SweepSetup};
use effectop::scale::{disintegrate, strict_mono_probe, GraphRow};
use effectop::{CellProblem, CellSolution, EffectiveGraph, ExtReal, PeriodicGrid, RepFunction};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Largest per-cell representation gap accepted by the disintegration check.
pub const POINTWISE_TOL: f64 = 1e-4;

/// One output file, held in memory until the run completes.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub operation: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    /// Some results were flagged (non-certified, failed solves, failed probes).
    Partial,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Complete => 0,
            RunStatus::Partial => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub status: RunStatus,
    pub timings: Vec<Timing>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub version: String,
    pub experiment: String,
    pub status: RunStatus,
    pub timings: Vec<Timing>,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn timed<T>(timings: &mut Vec<Timing>, operation: impl Into<String>, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timings.push(Timing {
        operation: operation.into(),
        seconds: start.elapsed().as_secs_f64(),
    });
    out
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn fmt_ext(v: ExtReal) -> String {
    match v {
        ExtReal::Finite(f) => format!("{f:e}"),
        ExtReal::PosInf => "inf".into(),
    }
}

/// Runs a validated experiment without touching the filesystem.
pub fn execute(v: &Validated) -> Result<Outcome> {
    match v.config.experiment {
        ExperimentKind::FitzDemo => fitz_demo(),
        ExperimentKind::Cell => cell(v),
        ExperimentKind::Graph => graph(v),
        ExperimentKind::Sweep => sweep(v),
    }
}

#[derive(Serialize)]
struct FitzSummary {
    checks: usize,
    max_deviation: f64,
}

/// The closed-form checks: affine, sign (finite and infinite branch), identity.
fn fitz_demo() -> Result<Outcome> {
    let mut timings = Vec::new();
    let affine = RepFunction::closed_affine_scalar(2.0, 1.0)?;
    let sign = RepFunction::closed_sign();
    let identity = RepFunction::closed_identity_scaled(1, 1.0)?;
    let checks: [(&str, &RepFunction, f64, f64, ExtReal); 4] = [
        // (y − b + a x)²/(4a) + b x with a = 2, b = 1
        ("closed-affine", &affine, 1.0, 3.0, ExtReal::Finite((3.0f64 - 1.0 + 2.0).powi(2) / 8.0 + 1.0)),
        ("closed-sign", &sign, -2.0, 0.5, ExtReal::Finite(2.0)),
        ("closed-sign", &sign, 0.3, 2.0, ExtReal::PosInf),
        // (x + y)²/4
        ("closed-identity-scaled", &identity, 1.0, 1.0, ExtReal::Finite(1.0)),
    ];
    let mut csv = String::from("check,x,y,value,expected,deviation\n");
    let mut max_deviation: f64 = 0.0;
    timed(&mut timings, "closed-form checks", || -> Result<()> {
        for (name, rep, x, y, expected) in checks {
            let value = rep.eval(&[x], &[y], None)?;
            let deviation = match (value, expected) {
                (ExtReal::Finite(a), ExtReal::Finite(b)) => (a - b).abs(),
                (ExtReal::PosInf, ExtReal::PosInf) => 0.0,
                _ => f64::INFINITY,
            };
            max_deviation = max_deviation.max(deviation);
            let _ = writeln!(
                csv,
                "{name},{x:e},{y:e},{},{},{deviation:e}",
                fmt_ext(value),
                fmt_ext(expected)
            );
        }
        Ok(())
    })?;
    let summary = FitzSummary {
        checks: checks.len(),
        max_deviation,
    };
    Ok(Outcome {
        artifacts: vec![
            Artifact {
                name: "fitz_demo.csv".into(),
                contents: csv,
            },
            Artifact {
                name: "fitz_summary.json".into(),
                contents: json(&summary)?,
            },
        ],
        status: if max_deviation <= 1e-12 {
            RunStatus::Complete
        } else {
            RunStatus::Partial
        },
        timings,
    })
}

fn cell_problem(v: &Validated) -> Result<CellProblem> {
    let c = &v.config;
    let grid_cfg = c.grid.as_ref().context("grid: required")?;
    let law = v.law.as_ref().context("law: required")?;
    let medium = v.medium.as_ref().context("medium: required")?;
    let grid = PeriodicGrid::new(grid_cfg.d, grid_cfg.n)?;
    let ensemble = sample_ensemble(medium, &grid_cfg.seeds, grid)?;
    let rep = RepFunction::from_law(law, c.rep_choice()).context("rep")?;
    Ok(CellProblem::new(
        rep,
        ensemble,
        c.orientation.unwrap_or_default(),
        c.knobs(),
    )?)
}

fn row_of(problem: &CellProblem, sol: &CellSolution) -> GraphRow {
    GraphRow {
        xi: sol.xi.clone(),
        eta: sol.eta.clone(),
        gap: sol.gap,
        n_side: problem.grid().n_side(),
        realizations: problem.ensemble().len(),
        seed: problem.ensemble()[0].seed,
    }
}

#[derive(Serialize, Default)]
struct LoadSummary {
    xi: Vec<f64>,
    eta: Option<Vec<f64>>,
    gap: Option<f64>,
    gap_tol: Option<f64>,
    certified: bool,
    iterations: Option<usize>,
    pointwise_residual: Option<f64>,
    disintegration_max: Option<f64>,
    disintegration_mean: Option<f64>,
    flagged: bool,
    /// Solver failure of this load, if any.
    error: Option<String>,
}

#[derive(Serialize)]
struct CellSummary {
    loads: Vec<LoadSummary>,
    partial: bool,
}

fn cell(v: &Validated) -> Result<Outcome> {
    let mut timings = Vec::new();
    let problem = timed(&mut timings, "sample ensemble", || cell_problem(v))?;
    let loads = v.config.loads.clone().unwrap_or_default();
    if loads.is_empty() {
        bail!("loads: no results to write");
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (i, xi) in loads.iter().enumerate() {
        let sol = match timed(&mut timings, format!("alpha0 load {i}"), || problem.alpha0_report(xi)) {
            Ok(sol) => sol,
            Err(e) => {
                summaries.push(LoadSummary {
                    xi: xi.clone(),
                    flagged: true,
                    error: Some(e.to_string()),
                    ..LoadSummary::default()
                });
                continue;
            }
        };
        let dis = sol
            .certified
            .then(|| disintegrate(&problem, &sol, POINTWISE_TOL))
            .transpose()?;
        let flagged = !sol.certified || dis.as_ref().is_some_and(|d| d.flagged);
        rows.push(row_of(&problem, &sol));
        summaries.push(LoadSummary {
            xi: sol.xi.clone(),
            eta: Some(sol.eta.clone()),
            gap: Some(sol.gap),
            gap_tol: Some(sol.gap_tol),
            certified: sol.certified,
            iterations: Some(sol.iterations),
            pointwise_residual: Some(sol.pointwise_residual),
            disintegration_max: dis.as_ref().map(|d| d.max_residual),
            disintegration_mean: dis.as_ref().map(|d| d.mean_residual),
            flagged,
            error: None,
        });
    }
    if rows.is_empty() {
        let reasons: Vec<String> = summaries.iter().filter_map(|s| s.error.clone()).collect();
        bail!("cell: no results to write ({})", reasons.join("; "));
    }
    let partial = summaries.iter().any(|s| s.flagged);
    let graph = EffectiveGraph::from_rows(rows);
    Ok(Outcome {
        artifacts: vec![
            Artifact {
                name: "graph.csv".into(),
                contents: graph.to_csv(),
            },
            Artifact {
                name: "cell_summary.json".into(),
                contents: json(&CellSummary {
                    loads: summaries,
                    partial,
                })?,
            },
        ],
        status: if partial { RunStatus::Partial } else { RunStatus::Complete },
        timings,
    })
}

#[derive(Serialize)]
struct GraphSummary {
    rows: usize,
    uncertified: usize,
    failures: Vec<String>,
    min_pairing: f64,
    theta: f64,
    theta_eff: f64,
    slack: f64,
    strict_holds: bool,
    partial: bool,
}

/// Loads of the tensor grid, last axis fastest.
fn tensor_loads(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut loads = vec![vec![]];
    for axis in axes {
        loads = loads
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    loads
}

fn graph(v: &Validated) -> Result<Outcome> {
    let mut timings = Vec::new();
    let problem = timed(&mut timings, "sample ensemble", || cell_problem(v))?;
    let axes = v.config.axes.clone().context("axes: required")?;
    let law = v.law.as_ref().context("law: required")?;
    let loads = tensor_loads(&axes);
    let mut rows = Vec::new();
    let mut uncertified = 0;
    let mut failures = Vec::new();
    for (i, xi) in loads.iter().enumerate() {
        match timed(&mut timings, format!("alpha0 load {i}"), || problem.alpha0_report(xi)) {
            Ok(sol) => {
                if !sol.certified {
                    uncertified += 1;
                }
                rows.push(row_of(&problem, &sol));
            }
            Err(e) => failures.push(format!("load {xi:?}: {e}")),
        }
    }
    if rows.len() < 2 {
        bail!("graph: fewer than two loads solved ({})", failures.join("; "));
    }
    // a tensor grid with holes cannot be interpolated
    let complete = rows.len() == loads.len();
    let graph = EffectiveGraph {
        rows,
        axes: complete.then_some(axes),
    };
    let probe = strict_mono_probe(&graph, law.theta(), v.config.strict_slack.unwrap_or(0.1))?;
    let min_pairing = graph.min_pairing();
    let partial = uncertified > 0 || !failures.is_empty() || !probe.holds || min_pairing < -1e-8;
    let summary = GraphSummary {
        rows: graph.rows.len(),
        uncertified,
        failures,
        min_pairing,
        theta: probe.theta,
        theta_eff: probe.theta_eff,
        slack: probe.slack,
        strict_holds: probe.holds,
        partial,
    };
    Ok(Outcome {
        artifacts: vec![
            Artifact {
                name: "graph.csv".into(),
                contents: graph.to_csv(),
            },
            Artifact {
                name: "graph_summary.json".into(),
                contents: json(&summary)?,
            },
        ],
        status: if partial { RunStatus::Partial } else { RunStatus::Complete },
        timings,
    })
}

/// Builds the sweep setup of a validated `sweep` config.
pub fn sweep_setup(v: &Validated) -> Result<SweepSetup> {
    let c: &ExperimentConfig = &v.config;
    let grid = c.grid.as_ref().context("grid: required")?;
    let s = c.sweep.as_ref().context("sweep: required")?;
    Ok(SweepSetup {
        medium: v.medium.clone().context("medium: required")?,
        law: v.law.clone().context("law: required")?,
        load: s.load,
        eps: s.eps.clone(),
        seeds: grid.seeds.clone(),
        n_solver: s.n_solver,
        blocks: s.blocks,
        cell: CellSetup {
            n_side: grid.n,
            realizations: grid.m,
            rep: c.rep_choice(),
            knobs: c.knobs(),
            axes: s.axes.clone(),
        },
        elliptic: s.elliptic,
    })
}

fn eps_label(eps: Option<f64>) -> String {
    match eps {
        Some(e) => format!("eps{}", (1.0 / e).round() as u64),
        None => "hom".into(),
    }
}

/// Files of a sweep report: the row table, the summary, one graph per seed
/// and, on request, the cell-average fields.
pub fn sweep_artifacts(report: &SweepReport, dump_fields: bool) -> Result<Vec<Artifact>> {
    let mut out = vec![
        Artifact {
            name: "sweep.csv".into(),
            contents: report.to_csv(),
        },
        Artifact {
            name: "sweep_summary.json".into(),
            contents: json(&report.summary)?,
        },
    ];
    for (seed, g) in &report.graphs {
        out.push(Artifact {
            name: format!("graph_seed{seed}.csv"),
            contents: g.to_csv(),
        });
    }
    if dump_fields {
        for f in &report.fields {
            let stem = format!("{}_seed{}", eps_label(f.eps), f.seed);
            out.push(Artifact {
                name: format!("u_{stem}.txt"),
                contents: f.u.dump(),
            });
            out.push(Artifact {
                name: format!("flux_{stem}.txt"),
                contents: f.flux.dump(),
            });
        }
    }
    Ok(out)
}

fn sweep(v: &Validated) -> Result<Outcome> {
    let mut timings = Vec::new();
    let setup = sweep_setup(v)?;
    let report = timed(&mut timings, "epsilon sweep", || epsilon_sweep(&setup))?;
    if report.rows.is_empty() {
        let reasons: Vec<&str> = report.summary.failures.iter().map(|f| f.message.as_str()).collect();
        bail!("sweep: no results to write ({})", reasons.join("; "));
    }
    let dump = v.config.sweep.as_ref().is_some_and(|s| s.dump_fields);
    Ok(Outcome {
        artifacts: sweep_artifacts(&report, dump)?,
        status: if report.summary.partial {
            RunStatus::Partial
        } else {
            RunStatus::Complete
        },
        timings,
    })
}

/// Writes the artifacts and `manifest.json`; nothing is written for an empty outcome.
pub fn write_outputs(dir: &Path, outcome: &Outcome, config_text: &str, experiment: ExperimentKind) -> Result<RunManifest> {
    if outcome.artifacts.is_empty() {
        bail!("no results to write");
    }
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let mut outputs = Vec::with_capacity(outcome.artifacts.len());
    for a in &outcome.artifacts {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.contents).with_context(|| format!("cannot write {}", path.display()))?;
        outputs.push(OutputEntry {
            file: a.name.clone(),
            sha256: sha256_hex(a.contents.as_bytes()),
            bytes: a.contents.len(),
        });
    }
    let manifest = RunManifest {
        config_sha256: sha256_hex(config_text.as_bytes()),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: experiment.name().into(),
        status: outcome.status,
        timings: outcome.timings.clone(),
        outputs,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, json(&manifest)?).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(manifest)
}

/// Parses, validates, executes and writes one experiment.
pub fn run(config_path: &Path, out: Option<PathBuf>) -> Result<(RunStatus, RunManifest)> {
    let (config, text) = ExperimentConfig::load(config_path)?;
    let dir = out
        .or_else(|| config.out.clone())
        .ok_or_else(|| anyhow::anyhow!("out: required (set it in the config or pass --out)"))?;
    let experiment = config.experiment;
    let validated = config.validate()?;
    let outcome = execute(&validated)?;
    let manifest = write_outputs(&dir, &outcome, &text, experiment)?;
    Ok((outcome.status, manifest))
}
