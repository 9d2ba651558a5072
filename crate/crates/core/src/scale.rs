//! Scale integration: the homogenized representative `f₀`, the effective
//! operator `α₀` it represents, and the corrector fields behind each point.
//!
//! The probability space is an ensemble of `M` periodic realizations. The
//! input field of realization `m` is `ξ + ũ_m` with `ũ_m` mean-zero in the
//! input subspace, so every realization carries the prescribed mean `ξ`. The
//! output field is `η_m + ṽ_m` with a free per-realization mean `η_m`; only
//! the ensemble mean of the `η_m` is the effective output. This keeps
//! `E(u·v) = E(u)·E(v)` exact while letting each realization reach zero gap.

use crate::error::{check_dim, Error, Result};
use crate::field::{DiscreteField, PeriodicGrid, Spectral};
use crate::fitzpatrick::RepFunction;
use crate::media::Realization;
use crate::vector::{dot, norm, ExtReal};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Which constraint subspace feeds the law's input slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Input is solenoidal (a flux), output is potential (a gradient).
    #[default]
    FluxToGradient,
    /// Input is potential (a gradient), output is solenoidal (a flux).
    GradientToFlux,
}

impl Orientation {
    fn input_is_pot(self) -> bool {
        matches!(self, Orientation::GradientToFlux)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverKnobs {
    pub max_iter: usize,
    /// Relative duality-gap tolerance for certification.
    pub gap_tol: f64,
    /// Stop once the relative objective decrease stays below this.
    pub rel_decrease: f64,
    /// Stop once the projected gradient norm falls below this (relative).
    pub grad_tol: f64,
}

impl Default for SolverKnobs {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            gap_tol: 1e-7,
            rel_decrease: 1e-10,
            grad_tol: 1e-9,
        }
    }
}

/// Output of a cell-problem solve.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub xi: Vec<f64>,
    /// Ensemble mean of the output field.
    pub eta: Vec<f64>,
    pub eta_per_realization: Vec<Vec<f64>>,
    /// Input fields `ξ + ũ_m`.
    pub input: Vec<DiscreteField>,
    /// Output fields `η_m + ṽ_m`.
    pub output: Vec<DiscreteField>,
    pub f0_value: f64,
    pub gap: f64,
    pub pointwise_residual: f64,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub certified: bool,
    pub gap_tol: f64,
}

#[derive(Clone)]
struct State {
    u: Vec<f64>,
    v: Vec<f64>,
    eta: Vec<f64>,
}

impl State {
    fn axpy(&self, s: f64, g: &State) -> State {
        let f = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + s * y).collect();
        State {
            u: f(&self.u, &g.u),
            v: f(&self.v, &g.v),
            eta: f(&self.eta, &g.eta),
        }
    }

    fn diff(&self, o: &State) -> State {
        self.axpy(-1.0, o)
    }
}

#[derive(Clone, Copy)]
enum Mode<'a> {
    Fixed(&'a [f64]),
    Free,
}

/// The ensemble cell problem for one representative function.
#[derive(Debug, Clone)]
pub struct CellProblem {
    rep: RepFunction,
    ensemble: Vec<Realization>,
    grid: PeriodicGrid,
    orientation: Orientation,
    knobs: SolverKnobs,
    spectral: Spectral,
}

impl CellProblem {
    pub fn new(
        rep: RepFunction,
        ensemble: Vec<Realization>,
        orientation: Orientation,
        knobs: SolverKnobs,
    ) -> Result<Self> {
        let first = ensemble
            .first()
            .ok_or_else(|| Error::InvalidParameter("cell problem needs at least one realization".into()))?;
        let grid = first.grid;
        if ensemble.iter().any(|r| r.grid != grid) {
            return Err(Error::ShapeMismatch("realizations live on different grids".into()));
        }
        check_dim(grid.d(), rep.dim())?;
        if rep.coercivity().is_none() {
            return Err(Error::MissingCoercivity);
        }
        if !rep.is_smooth() {
            return Err(Error::Unsupported(
                "cell problems need a finite differentiable representative".into(),
            ));
        }
        if rep.is_two_phase() && ensemble.iter().any(|r| r.phases.is_none()) {
            return Err(Error::MissingPhase);
        }
        Ok(Self {
            rep,
            ensemble,
            grid,
            orientation,
            knobs,
            spectral: Spectral::new(grid),
        })
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn ensemble(&self) -> &[Realization] {
        &self.ensemble
    }

    pub fn rep(&self) -> &RepFunction {
        &self.rep
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn knobs(&self) -> SolverKnobs {
        self.knobs
    }

    fn n(&self) -> usize {
        self.grid.d()
    }

    fn field_len(&self) -> usize {
        self.grid.cells() * self.n()
    }

    fn weighted_dot(&self, a: &State, b: &State) -> f64 {
        let m = self.ensemble.len() as f64;
        let c = self.grid.cells() as f64;
        (dot(&a.u, &b.u) + dot(&a.v, &b.v)) / (m * c) + dot(&a.eta, &b.eta) / m
    }

    /// Ensemble-and-cell average of `f(ξ + ũ, η_m + ṽ)`.
    fn average_f(&self, xi: &[f64], z: &State) -> Result<f64> {
        let n = self.n();
        let len = self.field_len();
        let cells = self.grid.cells();
        let partial: Vec<f64> = self
            .ensemble
            .par_iter()
            .enumerate()
            .map(|(m, r)| -> Result<f64> {
                let u = &z.u[m * len..(m + 1) * len];
                let v = &z.v[m * len..(m + 1) * len];
                let eta = &z.eta[m * n..(m + 1) * n];
                let mut x = [0.0; 4];
                let mut y = [0.0; 4];
                let mut gx = [0.0; 4];
                let mut gy = [0.0; 4];
                let mut s = 0.0;
                for c in 0..cells {
                    for i in 0..n {
                        x[i] = xi[i] + u[c * n + i];
                        y[i] = eta[i] + v[c * n + i];
                    }
                    s += self.rep.value_grad(&x[..n], &y[..n], r.phase(c), &mut gx[..n], &mut gy[..n])?;
                }
                Ok(s / cells as f64)
            })
            .collect::<Result<_>>()?;
        Ok(partial.iter().sum::<f64>() / self.ensemble.len() as f64)
    }

    /// Average of `f` and its gradient projected onto the feasible directions.
    fn average_f_grad(&self, xi: &[f64], z: &State, mode: Mode) -> Result<(f64, State)> {
        let n = self.n();
        let len = self.field_len();
        let cells = self.grid.cells();
        let pot_in = self.orientation.input_is_pot();
        type Part = (f64, Vec<f64>, Vec<f64>, Vec<f64>);
        let parts: Vec<Part> = self
            .ensemble
            .par_iter()
            .enumerate()
            .map(|(m, r)| -> Result<Part> {
                let u = &z.u[m * len..(m + 1) * len];
                let v = &z.v[m * len..(m + 1) * len];
                let eta = &z.eta[m * n..(m + 1) * n];
                let mut gu = vec![0.0; len];
                let mut gv = vec![0.0; len];
                let mut x = [0.0; 4];
                let mut y = [0.0; 4];
                let mut s = 0.0;
                for c in 0..cells {
                    for i in 0..n {
                        x[i] = xi[i] + u[c * n + i];
                        y[i] = eta[i] + v[c * n + i];
                    }
                    s += self.rep.value_grad(
                        &x[..n],
                        &y[..n],
                        r.phase(c),
                        &mut gu[c * n..(c + 1) * n],
                        &mut gv[c * n..(c + 1) * n],
                    )?;
                }
                let mut g_eta = vec![0.0; n];
                for c in 0..cells {
                    for i in 0..n {
                        g_eta[i] += gv[c * n + i];
                    }
                }
                g_eta.iter_mut().for_each(|g| *g /= cells as f64);
                let mut pu = vec![0.0; len];
                let mut pv = vec![0.0; len];
                self.spectral.project(&gu, pot_in, &mut pu);
                self.spectral.project(&gv, !pot_in, &mut pv);
                Ok((s / cells as f64, pu, pv, g_eta))
            })
            .collect::<Result<_>>()?;
        let mm = self.ensemble.len();
        let mut value = 0.0;
        let mut g = State {
            u: Vec::with_capacity(mm * len),
            v: Vec::with_capacity(mm * len),
            eta: Vec::with_capacity(mm * n),
        };
        for (s, pu, pv, ge) in parts {
            value += s;
            g.u.extend(pu);
            g.v.extend(pv);
            g.eta.extend(ge);
        }
        value /= mm as f64;
        match mode {
            Mode::Free => {
                for chunk in g.eta.chunks_exact_mut(n) {
                    for (a, x) in chunk.iter_mut().zip(xi) {
                        *a -= x;
                    }
                }
            }
            Mode::Fixed(_) => {
                let mut avg = vec![0.0; n];
                for chunk in g.eta.chunks_exact(n) {
                    for (a, v) in avg.iter_mut().zip(chunk) {
                        *a += v / mm as f64;
                    }
                }
                for chunk in g.eta.chunks_exact_mut(n) {
                    for (a, v) in chunk.iter_mut().zip(&avg) {
                        *a -= v;
                    }
                }
            }
        }
        Ok((value, g))
    }

    fn objective(&self, xi: &[f64], z: &State, mode: Mode, avg_f: f64) -> f64 {
        match mode {
            Mode::Fixed(_) => avg_f,
            Mode::Free => {
                let n = self.n();
                let mm = self.ensemble.len() as f64;
                let mut eta_bar = vec![0.0; n];
                for chunk in z.eta.chunks_exact(n) {
                    for (a, v) in eta_bar.iter_mut().zip(chunk) {
                        *a += v / mm;
                    }
                }
                avg_f - dot(xi, &eta_bar)
            }
        }
    }

    fn initial_state(&self, xi: &[f64], mode: Mode) -> Result<State> {
        let n = self.n();
        let mm = self.ensemble.len();
        let eta = match mode {
            Mode::Fixed(eta) => eta.repeat(mm),
            Mode::Free => {
                // arithmetic average of the law over the cells as a starting guess
                let mut out = Vec::with_capacity(mm * n);
                for r in &self.ensemble {
                    let mut acc = vec![0.0; n];
                    for c in 0..self.grid.cells() {
                        if let Some(y) = self.rep.recover_graph(xi, r.phase(c))?.selection() {
                            for (a, v) in acc.iter_mut().zip(&y) {
                                *a += v;
                            }
                        }
                    }
                    out.extend(acc.iter().map(|v| v / self.grid.cells() as f64));
                }
                out
            }
        };
        Ok(State {
            u: vec![0.0; mm * self.field_len()],
            v: vec![0.0; mm * self.field_len()],
            eta,
        })
    }

    fn solve(&self, xi: &[f64], mode: Mode, init: Option<State>) -> Result<CellSolution> {
        check_dim(self.n(), xi.len())?;
        if let Mode::Fixed(eta) = mode {
            check_dim(self.n(), eta.len())?;
        }
        let mut z = match init {
            Some(s) => s,
            None => self.initial_state(xi, mode)?,
        };
        let (mut avg_f, mut g) = self.average_f_grad(xi, &z, mode)?;
        let mut obj = self.objective(xi, &z, mode, avg_f);
        let mut trace = vec![obj];
        let scale = 1.0 + norm(xi) + norm(&z.eta[..self.n()]);
        let mut alpha = 1.0;
        let mut stall = 0;
        let mut converged = false;
        let mut iterations = 0;
        for it in 1..=self.knobs.max_iter {
            iterations = it;
            let g2 = self.weighted_dot(&g, &g);
            if g2.sqrt() <= self.knobs.grad_tol * scale {
                converged = true;
                iterations = it - 1;
                break;
            }
            // monotone Armijo backtracking along the projected gradient
            let mut step = alpha;
            let mut accepted = None;
            for _ in 0..60 {
                let trial = z.axpy(-step, &g);
                let f_trial = self.average_f(xi, &trial)?;
                let o_trial = self.objective(xi, &trial, mode, f_trial);
                if o_trial <= obj - 1e-4 * step * g2 {
                    accepted = Some((trial, o_trial));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, o_trial)) = accepted else {
                // no representable decrease left
                converged = true;
                iterations = it - 1;
                break;
            };
            let (f_new, g_new) = self.average_f_grad(xi, &trial, mode)?;
            let s = trial.diff(&z);
            let y = g_new.diff(&g);
            let sy = self.weighted_dot(&s, &y);
            alpha = if sy > 0.0 {
                self.weighted_dot(&s, &s) / sy
            } else {
                2.0 * step
            };
            let decrease = obj - o_trial;
            z = trial;
            g = g_new;
            avg_f = f_new;
            obj = o_trial;
            trace.push(obj);
            if decrease <= self.knobs.rel_decrease * (1.0 + avg_f.abs()) {
                stall += 1;
                if stall >= 3 {
                    converged = true;
                    break;
                }
            } else {
                stall = 0;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                what: "cell problem",
                iterations,
                last: obj,
            });
        }
        self.assemble(xi, z, avg_f, iterations, trace)
    }

    fn assemble(&self, xi: &[f64], z: State, avg_f: f64, iterations: usize, trace: Vec<f64>) -> Result<CellSolution> {
        let n = self.n();
        let mm = self.ensemble.len();
        let len = self.field_len();
        let mut eta = vec![0.0; n];
        let mut eta_per_realization = Vec::with_capacity(mm);
        let mut input = Vec::with_capacity(mm);
        let mut output = Vec::with_capacity(mm);
        let mut pointwise_residual: f64 = 0.0;
        for (m, r) in self.ensemble.iter().enumerate() {
            let em = z.eta[m * n..(m + 1) * n].to_vec();
            for (a, v) in eta.iter_mut().zip(&em) {
                *a += v / mm as f64;
            }
            let mut u = DiscreteField::from_values(self.grid, n, z.u[m * len..(m + 1) * len].to_vec())?;
            u.add_constant(xi);
            let mut v = DiscreteField::from_values(self.grid, n, z.v[m * len..(m + 1) * len].to_vec())?;
            v.add_constant(&em);
            for c in 0..self.grid.cells() {
                let res = match self.rep.eval(u.at(c), v.at(c), r.phase(c))? {
                    ExtReal::Finite(f) => f - dot(u.at(c), v.at(c)),
                    ExtReal::PosInf => f64::INFINITY,
                };
                pointwise_residual = pointwise_residual.max(res);
            }
            eta_per_realization.push(em);
            input.push(u);
            output.push(v);
        }
        let gap = avg_f - dot(xi, &eta);
        let gap_tol = self.knobs.gap_tol * dot(xi, &eta).abs().max(1.0);
        Ok(CellSolution {
            xi: xi.to_vec(),
            eta,
            eta_per_realization,
            input,
            output,
            f0_value: avg_f,
            gap,
            pointwise_residual,
            iterations,
            objective_trace: trace,
            certified: gap <= gap_tol,
            gap_tol,
        })
    }

    /// `f₀(ξ, η)` with its minimizing corrector fields.
    pub fn f0_eval(&self, xi: &[f64], eta: &[f64]) -> Result<CellSolution> {
        self.solve(xi, Mode::Fixed(eta), None)
    }

    /// Joint minimization over `η` and the correctors; certified or reported as such.
    pub fn alpha0_report(&self, xi: &[f64]) -> Result<CellSolution> {
        self.solve(xi, Mode::Free, None)
    }

    /// `η* ∈ α₀(ξ)`; fails with [`Error::NonCertified`] when the gap exceeds its tolerance.
    pub fn alpha0_eval(&self, xi: &[f64]) -> Result<CellSolution> {
        let sol = self.alpha0_report(xi)?;
        if sol.certified {
            Ok(sol)
        } else {
            Err(Error::NonCertified {
                gap: sol.gap,
                tol: sol.gap_tol,
            })
        }
    }

    /// Whether a field is, up to `tol`, its mean plus a member of the input (or output) subspace.
    fn in_subspace(&self, field: &DiscreteField, input: bool, tol: f64) -> bool {
        let want_pot = self.orientation.input_is_pot() == input;
        let mut other = vec![0.0; field.values().len()];
        self.spectral.project(field.values(), !want_pot, &mut other);
        let size = field.without_mean().mean_square().sqrt().max(1.0);
        other.iter().all(|v| v.abs() <= tol * size)
    }
}

/// Pointwise check of a certified solution.
#[derive(Debug, Clone, Serialize)]
pub struct DisintegrationReport {
    pub max_residual: f64,
    pub mean_residual: f64,
    /// `max |E(u_m) − ξ|` over realizations.
    pub mean_error_u: f64,
    /// `|E(v) − η|`.
    pub mean_error_v: f64,
    pub flagged: bool,
}

/// Per-cell representation gap `f(u, v) − u·v` of the corrector fields.
pub fn disintegrate(problem: &CellProblem, sol: &CellSolution, tol: f64) -> Result<DisintegrationReport> {
    if !sol.certified {
        return Err(Error::NonCertified {
            gap: sol.gap,
            tol: sol.gap_tol,
        });
    }
    pointwise_report(problem, &sol.input, &sol.output, &sol.xi, &sol.eta, tol)
}

fn pointwise_report(
    problem: &CellProblem,
    input: &[DiscreteField],
    output: &[DiscreteField],
    xi: &[f64],
    eta: &[f64],
    tol: f64,
) -> Result<DisintegrationReport> {
    if input.len() != problem.ensemble.len() || output.len() != problem.ensemble.len() {
        return Err(Error::ShapeMismatch("one field per realization is required".into()));
    }
    let cells = problem.grid.cells();
    let mut max_residual: f64 = 0.0;
    let mut total = 0.0;
    let mut mean_error_u: f64 = 0.0;
    let mut v_mean = vec![0.0; eta.len()];
    for ((r, u), v) in problem.ensemble.iter().zip(input).zip(output) {
        for c in 0..cells {
            let res = match problem.rep.eval(u.at(c), v.at(c), r.phase(c))? {
                ExtReal::Finite(f) => f - dot(u.at(c), v.at(c)),
                ExtReal::PosInf => f64::INFINITY,
            };
            max_residual = max_residual.max(res);
            total += res;
        }
        let um = u.mean();
        mean_error_u = mean_error_u.max(norm(&crate::vector::sub(&um, xi)));
        for (a, b) in v_mean.iter_mut().zip(v.mean()) {
            *a += b / problem.ensemble.len() as f64;
        }
    }
    let mean_residual = total / (cells * problem.ensemble.len()) as f64;
    let mean_error_v = norm(&crate::vector::sub(&v_mean, eta));
    Ok(DisintegrationReport {
        max_residual,
        mean_residual,
        mean_error_u,
        mean_error_v,
        flagged: max_residual > tol || mean_error_u > 1e-10 || mean_error_v > 1e-10,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegrateReport {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    /// `f₀(E u, E v) − E(u)·E(v)`.
    pub gap: f64,
    pub pointwise_residual: f64,
    pub precondition_ok: bool,
}

/// Evaluates the gap of `f₀` at the means of fields that satisfy the
/// heterogeneous law cell by cell. Precondition failures are reported.
pub fn integrate_check(
    problem: &CellProblem,
    input: &[DiscreteField],
    output: &[DiscreteField],
    pointwise_tol: f64,
) -> Result<IntegrateReport> {
    let n = problem.n();
    let mm = problem.ensemble.len();
    if input.len() != mm || output.len() != mm {
        return Err(Error::ShapeMismatch("one field per realization is required".into()));
    }
    let xi = input[0].mean();
    let mut eta = vec![0.0; n];
    for v in output {
        for (a, b) in eta.iter_mut().zip(v.mean()) {
            *a += b / mm as f64;
        }
    }
    let report = pointwise_report(problem, input, output, &xi, &eta, pointwise_tol)?;
    let means_agree = input
        .iter()
        .all(|u| norm(&crate::vector::sub(&u.mean(), &xi)) <= 1e-10 * (1.0 + norm(&xi)));
    let subspaces = input.iter().all(|u| problem.in_subspace(u, true, 1e-8))
        && output.iter().all(|v| problem.in_subspace(v, false, 1e-8));
    let precondition_ok = means_agree && subspaces && report.max_residual <= pointwise_tol;
    let init = means_agree.then(|| {
        let mut z = State {
            u: Vec::with_capacity(mm * problem.field_len()),
            v: Vec::with_capacity(mm * problem.field_len()),
            eta: Vec::with_capacity(mm * n),
        };
        for (u, v) in input.iter().zip(output) {
            let vm = v.mean();
            z.u.extend(u.without_mean().into_values());
            z.v.extend(v.without_mean().into_values());
            z.eta.extend(vm);
        }
        z
    });
    let init = init.filter(|_| subspaces);
    let sol = problem.solve(&xi, Mode::Fixed(&eta), init)?;
    Ok(IntegrateReport {
        xi,
        eta,
        gap: sol.gap,
        pointwise_residual: report.max_residual,
        precondition_ok,
    })
}

/// One tabulated point of the effective law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphRow {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub gap: f64,
    pub n_side: usize,
    pub realizations: usize,
    pub seed: u64,
}

/// Tabulated effective law with multilinear interpolation over a tensor grid of loads.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveGraph {
    pub rows: Vec<GraphRow>,
    /// Tensor axes of the load grid; rows are stored in row-major order over them.
    pub axes: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated {
    pub eta: Vec<f64>,
    pub extrapolated: bool,
}

fn row_from(problem: &CellProblem, sol: &CellSolution) -> GraphRow {
    GraphRow {
        xi: sol.xi.clone(),
        eta: sol.eta.clone(),
        gap: sol.gap,
        n_side: problem.grid.n_side(),
        realizations: problem.ensemble.len(),
        seed: problem.ensemble[0].seed,
    }
}

impl EffectiveGraph {
    pub fn from_rows(rows: Vec<GraphRow>) -> Self {
        Self { rows, axes: None }
    }

    /// Certified `α₀` at each listed load.
    pub fn tabulate(problem: &CellProblem, loads: &[Vec<f64>]) -> Result<Self> {
        let rows = loads
            .iter()
            .map(|xi| problem.alpha0_eval(xi).map(|s| row_from(problem, &s)))
            .collect::<Result<_>>()?;
        Ok(Self { rows, axes: None })
    }

    /// Certified `α₀` on the tensor grid `axes[0] × … × axes[n−1]`.
    pub fn tabulate_tensor(problem: &CellProblem, axes: Vec<Vec<f64>>) -> Result<Self> {
        check_dim(problem.n(), axes.len())?;
        if axes.iter().any(|a| a.len() < 2 || a.windows(2).any(|w| w[1] <= w[0])) {
            return Err(Error::InvalidParameter(
                "graph axes need at least two increasing values".into(),
            ));
        }
        let mut loads = vec![vec![]];
        for axis in &axes {
            loads = loads
                .into_iter()
                .flat_map(|p: Vec<f64>| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        let mut g = Self::tabulate(problem, &loads)?;
        g.axes = Some(axes);
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.xi.len())
    }

    /// Minimum of `⟨Δη, Δξ⟩ / |Δξ|²` over row pairs.
    pub fn min_quotient(&self) -> f64 {
        let mut q = f64::INFINITY;
        for i in 0..self.rows.len() {
            for j in (i + 1)..self.rows.len() {
                let dx = crate::vector::sub(&self.rows[j].xi, &self.rows[i].xi);
                let dy = crate::vector::sub(&self.rows[j].eta, &self.rows[i].eta);
                let d2 = dot(&dx, &dx);
                if d2 > 0.0 {
                    q = q.min(dot(&dy, &dx) / d2);
                }
            }
        }
        q
    }

    /// Minimum of the raw pairing `⟨Δη, Δξ⟩` over row pairs.
    pub fn min_pairing(&self) -> f64 {
        let mut q = f64::INFINITY;
        for i in 0..self.rows.len() {
            for j in (i + 1)..self.rows.len() {
                let dx = crate::vector::sub(&self.rows[j].xi, &self.rows[i].xi);
                let dy = crate::vector::sub(&self.rows[j].eta, &self.rows[i].eta);
                q = q.min(dot(&dy, &dx));
            }
        }
        q
    }

    /// Maximum of `|Δη| / |Δξ|` over row pairs.
    pub fn lipschitz_estimate(&self) -> f64 {
        let mut l: f64 = 0.0;
        for i in 0..self.rows.len() {
            for j in (i + 1)..self.rows.len() {
                let dx = norm(&crate::vector::sub(&self.rows[j].xi, &self.rows[i].xi));
                if dx > 0.0 {
                    let dy = norm(&crate::vector::sub(&self.rows[j].eta, &self.rows[i].eta));
                    l = l.max(dy / dx);
                }
            }
        }
        l
    }

    /// Multilinear interpolation, clamping loads outside the tabulated box.
    pub fn interpolate(&self, xi: &[f64]) -> Result<Interpolated> {
        let axes = self
            .axes
            .as_ref()
            .ok_or_else(|| Error::Unsupported("interpolation needs a tensor-grid graph".into()))?;
        check_dim(axes.len(), xi.len())?;
        let n = axes.len();
        let mut extrapolated = false;
        let mut lo_idx = vec![0usize; n];
        let mut t = vec![0.0; n];
        for a in 0..n {
            let ax = &axes[a];
            let v = if xi[a] < ax[0] {
                extrapolated = true;
                ax[0]
            } else if xi[a] > ax[ax.len() - 1] {
                extrapolated = true;
                ax[ax.len() - 1]
            } else {
                xi[a]
            };
            let mut i = ax.partition_point(|&p| p <= v).saturating_sub(1);
            i = i.min(ax.len() - 2);
            lo_idx[a] = i;
            t[a] = (v - ax[i]) / (ax[i + 1] - ax[i]);
        }
        let mut eta = vec![0.0; self.rows[0].eta.len()];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..n {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { t[a] } else { 1.0 - t[a] };
                flat = flat * axes[a].len() + lo_idx[a] + bit;
            }
            if w != 0.0 {
                for (e, r) in eta.iter_mut().zip(&self.rows[flat].eta) {
                    *e += w * r;
                }
            }
        }
        Ok(Interpolated { eta, extrapolated })
    }

    /// CSV with columns `xi_1..xi_n, eta_1..eta_n, gap, N, M, seed`.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut s = String::new();
        let mut head: Vec<String> = (1..=n).map(|i| format!("xi_{i}")).collect();
        head.extend((1..=n).map(|i| format!("eta_{i}")));
        head.extend(["gap", "N", "M", "seed"].map(String::from));
        let _ = writeln!(s, "{}", head.join(","));
        for r in &self.rows {
            let mut cols: Vec<String> = r.xi.iter().chain(&r.eta).map(|v| format!("{v:e}")).collect();
            cols.push(format!("{:e}", r.gap));
            cols.push(r.n_side.to_string());
            cols.push(r.realizations.to_string());
            cols.push(r.seed.to_string());
            let _ = writeln!(s, "{}", cols.join(","));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StrictMonoReport {
    pub theta_eff: f64,
    pub theta: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Compares the effective strictness `θ_eff` with the phase-wise `θ`.
pub fn strict_mono_probe(graph: &EffectiveGraph, theta: f64, slack_fraction: f64) -> Result<StrictMonoReport> {
    if graph.rows.len() < 2 {
        return Err(Error::InvalidParameter("strictness probe needs at least two rows".into()));
    }
    let theta_eff = graph.min_quotient();
    let slack = slack_fraction * theta;
    Ok(StrictMonoReport {
        theta_eff,
        theta,
        slack,
        holds: theta_eff >= theta - slack,
    })
}

#[derive(Debug, Clone)]
pub struct EffectiveTensor {
    pub matrix: DMatrix<f64>,
    pub columns: Vec<CellSolution>,
    /// `max |A_ij − A_ji|`.
    pub symmetry_defect: f64,
}

/// Effective matrix of a law that is linear in every phase, column by column.
pub fn effective_tensor(problem: &CellProblem) -> Result<EffectiveTensor> {
    let n = problem.n();
    let mut matrix = DMatrix::zeros(n, n);
    let mut columns = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let sol = problem.alpha0_eval(&e)?;
        for i in 0..n {
            matrix[(i, j)] = sol.eta[i];
        }
        columns.push(sol);
    }
    let mut symmetry_defect: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            symmetry_defect = symmetry_defect.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    Ok(EffectiveTensor {
        matrix,
        columns,
        symmetry_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{sample_ensemble, MediumKind, MediumSpec};
    use crate::monotone::MonotoneLaw;
    use nalgebra::DVector;

    fn constant_problem(rep: RepFunction, d: usize, n_side: usize) -> CellProblem {
        let grid = PeriodicGrid::new(d, n_side).unwrap();
        let spec = MediumSpec::new(MediumKind::Constant { value: 1.0 }, d).unwrap();
        let ens = sample_ensemble(&spec, &[1, 2], grid).unwrap();
        CellProblem::new(rep, ens, Orientation::GradientToFlux, SolverKnobs::default()).unwrap()
    }

    fn tight() -> SolverKnobs {
        SolverKnobs {
            rel_decrease: 0.0,
            ..SolverKnobs::default()
        }
    }

    fn two_phase_rep(d: usize, a: f64, b: f64) -> RepFunction {
        RepFunction::two_phase(
            RepFunction::closed_identity_scaled(d, a).unwrap(),
            RepFunction::closed_identity_scaled(d, b).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn constant_medium_f0_examples() {
        let p = constant_problem(RepFunction::closed_affine_scalar(3.0, 0.0).unwrap(), 1, 16);
        let s = p.f0_eval(&[1.0], &[3.0]).unwrap();
        assert!((s.f0_value - 3.0).abs() < 1e-12);
        assert!(s.input.iter().all(|u| u.values().iter().all(|&v| (v - 1.0).abs() < 1e-12)));
        let s = p.f0_eval(&[1.0], &[0.0]).unwrap();
        assert!((s.f0_value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn constant_medium_alpha0_is_the_law() {
        let rep = RepFunction::closed_affine(
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])),
            DVector::zeros(2),
        )
        .unwrap();
        let p = constant_problem(rep, 2, 8);
        let s = p.alpha0_eval(&[1.0, 0.0]).unwrap();
        assert!((s.eta[0] - 2.0).abs() < 1e-8 && s.eta[1].abs() < 1e-8);
        assert!(s.gap <= 1e-8);
        let t = effective_tensor(&p).unwrap();
        assert!((t.matrix[(0, 0)] - 2.0).abs() < 1e-8 && (t.matrix[(1, 1)] - 3.0).abs() < 1e-8);
        let r = disintegrate(&p, &s, 1e-10).unwrap();
        assert!(r.max_residual <= 1e-10 && !r.flagged);
    }

    #[test]
    fn objective_trace_is_non_increasing_and_gap_nonnegative() {
        let grid = PeriodicGrid::new(2, 16).unwrap();
        let spec = MediumSpec::new(
            MediumKind::Checkerboard {
                values: [1.0, 4.0],
                probs: [0.5, 0.5],
            },
            2,
        )
        .unwrap();
        let ens = sample_ensemble(&spec, &[3, 4], grid).unwrap();
        let p = CellProblem::new(two_phase_rep(2, 1.0, 4.0), ens, Orientation::GradientToFlux, SolverKnobs::default())
            .unwrap();
        let s = p.alpha0_eval(&[1.0, 0.5]).unwrap();
        assert!(s.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(s.gap >= -1e-9);
        for u in &s.input {
            let m = u.mean();
            assert!((m[0] - 1.0).abs() < 1e-10 && (m[1] - 0.5).abs() < 1e-10);
        }
        let f = p.f0_eval(&[1.0, 0.5], &[0.0, 0.0]).unwrap();
        assert!(f.gap >= -1e-9);
    }

    #[test]
    fn one_dimensional_layers_match_harmonic_means() {
        let grid = PeriodicGrid::new(1, 64).unwrap();
        let spec = MediumSpec::new(
            MediumKind::Layered {
                axis: 0,
                values: [1.0, 4.0],
                probs: [0.5, 0.5],
            },
            1,
        )
        .unwrap();
        let ens = sample_ensemble(&spec, &[10, 11, 12], grid).unwrap();
        // independent oracle: mean of per-realization harmonic means
        let oracle: f64 = ens
            .iter()
            .map(|r| 1.0 / (r.field.values().iter().map(|a| 1.0 / a).sum::<f64>() / 64.0))
            .sum::<f64>()
            / 3.0;
        let p = CellProblem::new(two_phase_rep(1, 1.0, 4.0), ens, Orientation::GradientToFlux, tight()).unwrap();
        let s = p.alpha0_eval(&[1.0]).unwrap();
        assert!((s.eta[0] - oracle).abs() < 1e-8, "{} vs {oracle}", s.eta[0]);
        let ic = integrate_check(&p, &s.input, &s.output, 1e-6).unwrap();
        assert!(ic.precondition_ok && ic.gap <= 1e-7);
    }

    #[test]
    fn flux_to_gradient_inverts_the_phase_values() {
        let grid = PeriodicGrid::new(1, 32).unwrap();
        let spec = MediumSpec::new(
            MediumKind::Layered {
                axis: 0,
                values: [1.0, 4.0],
                probs: [0.5, 0.5],
            },
            1,
        )
        .unwrap();
        let ens = sample_ensemble(&spec, &[5], grid).unwrap();
        let arith = ens[0].field.values().iter().sum::<f64>() / 32.0;
        let p = CellProblem::new(two_phase_rep(1, 1.0, 4.0), ens, Orientation::FluxToGradient, tight()).unwrap();
        // constant input flux in 1-d: the output is the arithmetic mean of the phase values
        let s = p.alpha0_eval(&[1.0]).unwrap();
        assert!((s.eta[0] - arith).abs() < 1e-8);
    }

    #[test]
    fn rejects_reps_without_certificate() {
        let grid = PeriodicGrid::new(1, 8).unwrap();
        let spec = MediumSpec::new(MediumKind::Constant { value: 1.0 }, 1).unwrap();
        let ens = sample_ensemble(&spec, &[1], grid).unwrap();
        assert!(matches!(
            CellProblem::new(RepFunction::closed_sign(), ens.clone(), Orientation::default(), SolverKnobs::default()),
            Err(Error::MissingCoercivity)
        ));
        let generic = RepFunction::generic_sup(&MonotoneLaw::identity(1).unwrap(), 10, 1).unwrap();
        assert!(CellProblem::new(generic, ens, Orientation::default(), SolverKnobs::default()).is_err());
    }

    #[test]
    fn perturbed_fields_are_flagged() {
        let p = constant_problem(RepFunction::closed_identity_scaled(1, 2.0).unwrap(), 1, 16);
        let mut s = p.alpha0_eval(&[1.0]).unwrap();
        s.output[0].values_mut()[3] += 0.5;
        let r = disintegrate(&p, &s, 1e-8).unwrap();
        assert!(r.flagged && r.max_residual > 1e-8);
    }

    #[test]
    fn graph_interpolation_and_csv() {
        let rows = vec![
            (vec![-1.0, -1.0], vec![-2.0, -3.0]),
            (vec![-1.0, 1.0], vec![-2.0, 3.0]),
            (vec![1.0, -1.0], vec![2.0, -3.0]),
            (vec![1.0, 1.0], vec![2.0, 3.0]),
        ];
        let graph = EffectiveGraph {
            rows: rows
                .into_iter()
                .map(|(xi, eta)| GraphRow {
                    xi,
                    eta,
                    gap: 0.0,
                    n_side: 8,
                    realizations: 1,
                    seed: 0,
                })
                .collect(),
            axes: Some(vec![vec![-1.0, 1.0], vec![-1.0, 1.0]]),
        };
        let i = graph.interpolate(&[0.25, -0.5]).unwrap();
        assert!((i.eta[0] - 0.5).abs() < 1e-15 && (i.eta[1] + 1.5).abs() < 1e-15);
        assert!(!i.extrapolated);
        let i = graph.interpolate(&[3.0, 0.0]).unwrap();
        assert!(i.extrapolated && (i.eta[0] - 2.0).abs() < 1e-15);
        assert!((graph.min_quotient() - 2.0).abs() < 1e-15);
        let csv = graph.to_csv();
        assert!(csv.starts_with("xi_1,xi_2,eta_1,eta_2,gap,N,M,seed\n"));
        assert_eq!(csv.lines().count(), 5);
        let r = strict_mono_probe(&graph, 2.0, 0.1).unwrap();
        assert!(r.holds);
    }
}
