//! Convergence harness: ε-scale Dirichlet problems on lattice-scaled
//! realizations against the homogenized problem built from tabulated `α₀`.

use super::elliptic::{DirichletMesh, EllipticKnobs, EllipticProblem, EllipticSolution, GraphLaw, MediumLaw};
use crate::error::{Error, Result};
use crate::field::{DiscreteField, PeriodicGrid};
use crate::fitzpatrick::{RepChoice, RepFunction};
use crate::media::{sample_ensemble, sample_realization, MediumSpec, Realization};
use crate::monotone::MonotoneLaw;
use crate::scale::{CellProblem, EffectiveGraph, Orientation, SolverKnobs};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

/// Right-hand side of the Dirichlet problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Load {
    Constant { value: f64 },
    /// `amplitude · Π_a sin(π x_a)`.
    SinProduct { amplitude: f64 },
}

impl Load {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Load::Constant { value } => *value,
            Load::SinProduct { amplitude } => amplitude * sin_product(x),
        }
    }
}

fn sin_product(x: &[f64]) -> f64 {
    x.iter().map(|v| (PI * v).sin()).product()
}

/// Cell-problem settings for tabulating the homogenized law.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSetup {
    pub n_side: usize,
    pub realizations: usize,
    pub rep: RepChoice,
    pub knobs: SolverKnobs,
    /// Tensor axes of the tabulated loads.
    pub axes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SweepSetup {
    pub medium: MediumSpec,
    pub law: MonotoneLaw,
    pub load: Load,
    /// Scales `ε`, each the reciprocal of a power of two.
    pub eps: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Solver cells per side.
    pub n_solver: usize,
    /// Coarse blocks per side.
    pub blocks: usize,
    pub cell: CellSetup,
    pub elliptic: EllipticKnobs,
}

/// One CSV row: block errors and the block's share of the div-curl pairing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub seed: u64,
    pub block_id: usize,
    pub err_u: f64,
    pub err_flux: f64,
    pub divcurl_pairing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsSummary {
    pub eps: f64,
    pub seeds_ok: usize,
    pub max_err_u: f64,
    /// Mean over seeds of the largest block error.
    pub mean_err_u: f64,
    pub max_err_flux: f64,
    pub mean_err_flux: f64,
    /// Mean over seeds of `∫ φ σ_ε·∇u_ε`.
    pub pairing: f64,
    /// Mean over seeds of `∫ φ σ₀·∇u₀`.
    pub homogenized_pairing: f64,
    /// Largest per-seed `|pairing_ε − pairing₀| / |pairing₀|`.
    pub pairing_rel_diff: f64,
    /// Mean over seeds of `|pairing_ε − pairing₀| / |pairing₀|`.
    pub mean_pairing_rel_diff: f64,
    /// Mean over seeds of the relative ℓ² norm of the block-mean error of `u`.
    pub l2_err_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepFailure {
    pub eps: Option<f64>,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub per_eps: Vec<EpsSummary>,
    /// Largest across-seed standard deviation of homogenized block means,
    /// relative to the largest block mean.
    pub homogenized_spread: f64,
    /// Homogenized-law evaluations clamped to the tabulated box.
    pub clamped: usize,
    pub failures: Vec<SweepFailure>,
    pub partial: bool,
}

/// Cell-average fields of one solve.
#[derive(Debug, Clone)]
pub struct SweepField {
    /// `None` for the homogenized solve.
    pub eps: Option<f64>,
    pub seed: u64,
    pub u: DiscreteField,
    pub flux: DiscreteField,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
    pub fields: Vec<SweepField>,
    pub graphs: Vec<(u64, EffectiveGraph)>,
}

impl SweepReport {
    /// CSV with columns `eps,seed,block_id,err_u,err_flux,divcurl_pairing`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,seed,block_id,err_u,err_flux,divcurl_pairing\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:e},{},{},{:e},{:e},{:e}",
                r.eps, r.seed, r.block_id, r.err_u, r.err_flux, r.divcurl_pairing
            );
        }
        s
    }

    /// Whether `mean_err_u` grows by at most `slack` per halving of `ε`.
    pub fn errors_non_increasing(&self, slack: f64) -> bool {
        let mut per = self.summary.per_eps.clone();
        per.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        per.windows(2).all(|w| w[1].mean_err_u <= slack * w[0].mean_err_u)
    }

    pub fn eps_summary(&self, eps: f64) -> Option<&EpsSummary> {
        self.summary.per_eps.iter().find(|s| s.eps == eps)
    }
}

/// Block means of a cell field over `blocks^d` equal blocks.
pub fn block_means(field: &DiscreteField, blocks: usize) -> Result<Vec<Vec<f64>>> {
    let grid = field.grid();
    let n = grid.n_side();
    if blocks == 0 || n % blocks != 0 {
        return Err(Error::InvalidParameter(format!("{blocks} blocks do not tile {n} cells")));
    }
    let d = grid.d();
    let side = n / blocks;
    let m = field.components();
    let mut out = vec![vec![0.0; m]; blocks.pow(d as u32)];
    for cell in 0..grid.cells() {
        let c = grid.coords(cell);
        let b = (0..d).fold(0, |acc, a| acc * blocks + c[a] / side);
        for (o, v) in out[b].iter_mut().zip(field.at(cell)) {
            *o += v;
        }
    }
    let w = 1.0 / side.pow(d as u32) as f64;
    out.iter_mut().flatten().for_each(|v| *v *= w);
    Ok(out)
}

/// Per-block shares of `∫ φ σ·∇u` with `φ = Π sin(π x_a)`.
fn block_pairings(sol: &EllipticSolution, blocks: usize) -> Result<Vec<f64>> {
    let grid = sol.density.grid();
    let weighted = DiscreteField::from_values(
        grid,
        1,
        (0..grid.cells())
            .map(|c| sin_product(&grid.center(c)[..grid.d()]) * sol.density.values()[c])
            .collect(),
    )?;
    let share = 1.0 / blocks.pow(grid.d() as u32) as f64;
    Ok(block_means(&weighted, blocks)?.into_iter().map(|v| v[0] * share).collect())
}

fn side_of(eps: f64) -> Result<usize> {
    let n = (1.0 / eps).round();
    let ok = eps > 0.0 && (n * eps - 1.0).abs() < 1e-12 && n >= 4.0 && (n as usize).is_power_of_two();
    if ok {
        Ok(n as usize)
    } else {
        Err(Error::InvalidParameter(format!(
            "eps {eps} must be the reciprocal of a power of two of at least 4"
        )))
    }
}

/// Phase map on the solver mesh for the realization seen at scale `ε`: the
/// window of `1/ε` medium cells, each covering `ε·N_D` solver cells, shifted
/// by the realization's sub-cell offset.
fn scaled_phases(master: &Realization, n_eps: usize, mesh: DirichletMesh) -> Option<Vec<u8>> {
    let ph = master.phases.as_ref()?;
    let fine = mesh.cell_grid();
    let d = fine.d();
    let s = mesh.n() / n_eps;
    let shift: Vec<usize> = master.offset.iter().map(|o| (o * s as f64).floor() as usize).collect();
    Some(
        (0..fine.cells())
            .map(|cell| {
                let c = fine.coords(cell);
                let mut coarse = [0usize; 3];
                for a in 0..d {
                    coarse[a] = ((c[a] + shift[a]) % mesh.n()) / s;
                }
                ph[master.grid.index(&coarse[..d])]
            })
            .collect(),
    )
}

struct Homogenized {
    seed: u64,
    graph: EffectiveGraph,
    solution: EllipticSolution,
    clamped: usize,
    u_blocks: Vec<Vec<f64>>,
    flux_blocks: Vec<Vec<f64>>,
    pairing_blocks: Vec<f64>,
}

fn homogenized_for(setup: &SweepSetup, mesh: DirichletMesh, seed: u64) -> Result<Homogenized> {
    let c = &setup.cell;
    let grid = PeriodicGrid::new(setup.medium.d, c.n_side)?;
    let m = c.realizations as u64;
    let seeds: Vec<u64> = (0..m).map(|k| seed.wrapping_mul(m).wrapping_add(k)).collect();
    let ensemble = sample_ensemble(&setup.medium, &seeds, grid)?;
    let rep = RepFunction::from_law(&setup.law, c.rep)?;
    let problem = CellProblem::new(rep, ensemble, Orientation::GradientToFlux, c.knobs)?;
    let graph = EffectiveGraph::tabulate_tensor(&problem, c.axes.clone())?;
    let law = GraphLaw::new(graph.clone())?;
    law.reset_clamped();
    let solution = EllipticProblem::new(mesh, &law, |x| vec![setup.load.eval(x)])?
        .with_knobs(setup.elliptic)
        .solve()?;
    Ok(Homogenized {
        seed,
        graph,
        clamped: law.clamped(),
        u_blocks: block_means(&solution.cell_u, setup.blocks)?,
        flux_blocks: block_means(&solution.flux, setup.blocks)?,
        pairing_blocks: block_pairings(&solution, setup.blocks)?,
        solution,
    })
}

fn eps_solve(setup: &SweepSetup, mesh: DirichletMesh, master: &Realization, n_eps: usize) -> Result<EllipticSolution> {
    let law = MediumLaw::new(setup.law.clone(), scaled_phases(master, n_eps, mesh))?;
    EllipticProblem::new(mesh, &law, |x| vec![setup.load.eval(x)])?
        .with_knobs(setup.elliptic)
        .solve()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs the ε-problems and the homogenized problem for every seed.
///
/// Failed solves are recorded and the report is flagged partial; the call
/// itself only fails on invalid setups.
pub fn epsilon_sweep(setup: &SweepSetup) -> Result<SweepReport> {
    let d = setup.medium.d;
    setup.medium.validate()?;
    let mesh = DirichletMesh::new(d, setup.n_solver)?;
    if setup.seeds.is_empty() || setup.eps.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one seed and one eps".into()));
    }
    let mut sides = Vec::with_capacity(setup.eps.len());
    for &eps in &setup.eps {
        let n = side_of(eps)?;
        if setup.n_solver % n != 0 || eps * (setup.n_solver as f64) < 8.0 {
            return Err(Error::InvalidParameter(format!(
                "eps {eps} is not resolved by {} solver cells (need eps·N ≥ 8)",
                setup.n_solver
            )));
        }
        sides.push(n);
    }
    if setup.n_solver % setup.blocks != 0 {
        return Err(Error::InvalidParameter(format!(
            "{} blocks do not tile {} cells",
            setup.blocks, setup.n_solver
        )));
    }
    let n_max = *sides.iter().max().expect("non-empty");
    let master_grid = PeriodicGrid::new(d, n_max)?;
    let masters: Vec<Realization> = setup
        .seeds
        .iter()
        .map(|&s| sample_realization(&setup.medium, s, master_grid))
        .collect::<Result<_>>()?;

    let homogenized: Vec<std::result::Result<Homogenized, SweepFailure>> = setup
        .seeds
        .par_iter()
        .map(|&seed| {
            homogenized_for(setup, mesh, seed).map_err(|e| SweepFailure {
                eps: None,
                seed,
                message: e.to_string(),
            })
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..setup.eps.len())
        .flat_map(|e| (0..setup.seeds.len()).map(move |s| (e, s)))
        .collect();
    let solved: Vec<Result<EllipticSolution>> = jobs
        .par_iter()
        .map(|&(e, s)| eps_solve(setup, mesh, &masters[s], sides[e]))
        .collect();

    let mut failures: Vec<SweepFailure> = homogenized.iter().filter_map(|h| h.as_ref().err().cloned()).collect();
    let mut rows = Vec::new();
    let mut fields = Vec::new();
    let mut per_eps = Vec::new();
    for h in homogenized.iter().flatten() {
        fields.push(SweepField {
            eps: None,
            seed: h.seed,
            u: h.solution.cell_u.clone(),
            flux: h.solution.flux.clone(),
        });
    }
    for (e, &eps) in setup.eps.iter().enumerate() {
        let mut stats = EpsSummary {
            eps,
            seeds_ok: 0,
            max_err_u: 0.0,
            mean_err_u: 0.0,
            max_err_flux: 0.0,
            mean_err_flux: 0.0,
            pairing: 0.0,
            homogenized_pairing: 0.0,
            pairing_rel_diff: 0.0,
            mean_pairing_rel_diff: 0.0,
            l2_err_u: 0.0,
        };
        for (s, &seed) in setup.seeds.iter().enumerate() {
            let sol = match &solved[e * setup.seeds.len() + s] {
                Ok(sol) => sol,
                Err(err) => {
                    failures.push(SweepFailure {
                        eps: Some(eps),
                        seed,
                        message: err.to_string(),
                    });
                    continue;
                }
            };
            let Ok(h) = &homogenized[s] else { continue };
            let u_blocks = block_means(&sol.cell_u, setup.blocks)?;
            let flux_blocks = block_means(&sol.flux, setup.blocks)?;
            let pairing_blocks = block_pairings(sol, setup.blocks)?;
            let u_scale = h.u_blocks.iter().map(|v| norm(v)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let f_scale = h.flux_blocks.iter().map(|v| norm(v)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let (mut worst_u, mut worst_f) = (0.0f64, 0.0f64);
            let (mut sq_err, mut sq_ref) = (0.0, 0.0);
            for b in 0..u_blocks.len() {
                let du: Vec<f64> = u_blocks[b].iter().zip(&h.u_blocks[b]).map(|(a, c)| a - c).collect();
                let df: Vec<f64> = flux_blocks[b].iter().zip(&h.flux_blocks[b]).map(|(a, c)| a - c).collect();
                let row = SweepRow {
                    eps,
                    seed,
                    block_id: b,
                    err_u: norm(&du) / u_scale,
                    err_flux: norm(&df) / f_scale,
                    divcurl_pairing: pairing_blocks[b],
                };
                sq_err += norm(&du).powi(2);
                sq_ref += norm(&h.u_blocks[b]).powi(2);
                worst_u = worst_u.max(row.err_u);
                worst_f = worst_f.max(row.err_flux);
                rows.push(row);
            }
            let p_eps: f64 = pairing_blocks.iter().sum();
            let p_hom: f64 = h.pairing_blocks.iter().sum();
            stats.seeds_ok += 1;
            stats.max_err_u = stats.max_err_u.max(worst_u);
            stats.max_err_flux = stats.max_err_flux.max(worst_f);
            stats.mean_err_u += worst_u;
            stats.mean_err_flux += worst_f;
            stats.pairing += p_eps;
            stats.homogenized_pairing += p_hom;
            let rel = (p_eps - p_hom).abs() / p_hom.abs();
            stats.pairing_rel_diff = stats.pairing_rel_diff.max(rel);
            stats.mean_pairing_rel_diff += rel;
            stats.l2_err_u += (sq_err / sq_ref.max(f64::MIN_POSITIVE)).sqrt();
            fields.push(SweepField {
                eps: Some(eps),
                seed,
                u: sol.cell_u.clone(),
                flux: sol.flux.clone(),
            });
        }
        if stats.seeds_ok > 0 {
            let k = stats.seeds_ok as f64;
            stats.mean_err_u /= k;
            stats.mean_err_flux /= k;
            stats.pairing /= k;
            stats.homogenized_pairing /= k;
            stats.mean_pairing_rel_diff /= k;
            stats.l2_err_u /= k;
        }
        per_eps.push(stats);
    }

    let ok: Vec<&Homogenized> = homogenized.iter().flatten().collect();
    let homogenized_spread = if ok.len() < 2 {
        0.0
    } else {
        let k = ok.len() as f64;
        let nb = ok[0].u_blocks.len();
        let scale = ok[0].u_blocks.iter().map(|v| norm(v)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        (0..nb)
            .map(|b| {
                let mean = ok.iter().map(|h| h.u_blocks[b][0]).sum::<f64>() / k;
                let var = ok.iter().map(|h| (h.u_blocks[b][0] - mean).powi(2)).sum::<f64>() / (k - 1.0);
                var.sqrt() / scale
            })
            .fold(0.0, f64::max)
    };
    let clamped = ok.iter().map(|h| h.clamped).sum();
    let partial = !failures.is_empty();
    Ok(SweepReport {
        rows,
        summary: SweepSummary {
            per_eps,
            homogenized_spread,
            clamped,
            failures,
            partial,
        },
        fields,
        graphs: ok.iter().map(|h| (h.seed, h.graph.clone())).collect(),
    })
}
