//! Dirichlet problems `−div β(∇u, x) = f` on the unit cube with P1 elements
//! on the Kuhn triangulation.

use super::dst::DirichletPoisson;
use crate::error::{check_dim, Error, Result};
use crate::field::{DiscreteField, PeriodicGrid};
use crate::monotone::MonotoneLaw;
use crate::scale::EffectiveGraph;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

/// Uniform mesh of `n^d` cubes, each split into `d!` Kuhn simplices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DirichletMesh {
    grid: PeriodicGrid,
}

impl DirichletMesh {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        Ok(Self {
            grid: PeriodicGrid::new(d, n)?,
        })
    }

    pub fn d(&self) -> usize {
        self.grid.d()
    }

    /// Cells per side.
    pub fn n(&self) -> usize {
        self.grid.n_side()
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    /// Cell grid, indexed like a periodic grid of the same size.
    pub fn cell_grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn interior_nodes(&self) -> usize {
        (self.n() - 1).pow(self.d() as u32)
    }

    /// Interior node index for lattice coordinates in `0..=n`, or `None` on the boundary.
    pub fn node_index(&self, coords: &[usize]) -> Option<usize> {
        let m = self.n() - 1;
        let mut idx = 0;
        for &c in coords {
            if c == 0 || c > m {
                return None;
            }
            idx = idx * m + (c - 1);
        }
        Some(idx)
    }

    /// Position of an interior node.
    pub fn node_position(&self, node: usize) -> Vec<f64> {
        let m = self.n() - 1;
        let d = self.d();
        let mut x = vec![0.0; d];
        let mut rest = node;
        for a in (0..d).rev() {
            x[a] = ((rest % m) + 1) as f64 * self.h();
            rest /= m;
        }
        x
    }

    /// Node indices of the `2^d` corners of a cell; bit `a` of the corner
    /// label selects the upper face along axis `a`.
    fn corners(&self, cell: usize, out: &mut [Option<usize>]) {
        let d = self.d();
        let c = self.grid.coords(cell);
        let mut v = [0usize; 3];
        for (mask, o) in out.iter_mut().enumerate().take(1 << d) {
            for a in 0..d {
                v[a] = c[a] + ((mask >> a) & 1);
            }
            *o = self.node_index(&v[..d]);
        }
    }
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    match d {
        1 => vec![vec![0]],
        2 => vec![vec![0, 1], vec![1, 0]],
        _ => vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
        ],
    }
}

/// Pointwise constitutive law `σ = β(∇u, cell)` with `m` solution components.
///
/// Gradients and fluxes are `m × d` row-major: entry `i·d + j` is `∂_j u_i`.
pub trait FluxLaw: Sync {
    /// Number of solution components.
    fn components(&self) -> usize;
    /// Spatial dimension.
    fn d(&self) -> usize;
    fn flux_into(&self, cell: usize, grad: &[f64], out: &mut [f64]) -> Result<()>;
    /// Strict-monotonicity certificate of the discrete operator.
    fn theta(&self) -> f64;
    fn lipschitz(&self) -> Option<f64>;
    /// Whether `β(·, cell)` is the gradient of a convex energy.
    fn is_potential(&self) -> bool;
    fn energy(&self, _cell: usize, _grad: &[f64]) -> Option<f64> {
        None
    }
    /// Writes the `md × md` Jacobian of the flux; returns `false` when unavailable.
    fn jacobian_into(&self, _cell: usize, _grad: &[f64], _out: &mut [f64]) -> Result<bool> {
        Ok(false)
    }
}

/// A monotone law evaluated with a per-cell phase map.
#[derive(Debug, Clone)]
pub struct MediumLaw {
    law: MonotoneLaw,
    phases: Option<Vec<u8>>,
}

impl MediumLaw {
    pub fn new(law: MonotoneLaw, phases: Option<Vec<u8>>) -> Result<Self> {
        if law.is_two_phase() && phases.is_none() {
            return Err(Error::MissingPhase);
        }
        Ok(Self { law, phases })
    }

    pub fn homogeneous(law: MonotoneLaw) -> Result<Self> {
        Self::new(law, None)
    }

    pub fn law(&self) -> &MonotoneLaw {
        &self.law
    }

    fn phase(&self, cell: usize) -> Option<usize> {
        self.phases.as_ref().map(|p| p[cell] as usize)
    }
}

impl FluxLaw for MediumLaw {
    fn components(&self) -> usize {
        1
    }
    fn d(&self) -> usize {
        self.law.dim()
    }
    fn flux_into(&self, cell: usize, grad: &[f64], out: &mut [f64]) -> Result<()> {
        self.law.apply_into(grad, self.phase(cell), out)
    }
    fn theta(&self) -> f64 {
        self.law.theta()
    }
    fn lipschitz(&self) -> Option<f64> {
        self.law.lipschitz()
    }
    fn is_potential(&self) -> bool {
        self.law.is_potential()
    }
    fn energy(&self, cell: usize, grad: &[f64]) -> Option<f64> {
        self.law.potential(grad, self.phase(cell))
    }
    fn jacobian_into(&self, cell: usize, grad: &[f64], out: &mut [f64]) -> Result<bool> {
        let j = self.law.jacobian(grad, self.phase(cell))?;
        let n = grad.len();
        for a in 0..n {
            for b in 0..n {
                out[a * n + b] = j[(a, b)];
            }
        }
        Ok(true)
    }
}

/// Effective law given by multilinear interpolation of a tabulated graph.
///
/// Loads outside the table are clamped and counted.
#[derive(Debug)]
pub struct GraphLaw {
    graph: EffectiveGraph,
    theta: f64,
    lipschitz: f64,
    clamped: AtomicUsize,
}

impl GraphLaw {
    pub fn new(graph: EffectiveGraph) -> Result<Self> {
        if graph.axes.is_none() {
            return Err(Error::Unsupported("interpolation needs a tensor-grid graph".into()));
        }
        let theta = graph.min_quotient();
        let lipschitz = graph.lipschitz_estimate();
        Ok(Self {
            graph,
            theta,
            lipschitz,
            clamped: AtomicUsize::new(0),
        })
    }

    pub fn graph(&self) -> &EffectiveGraph {
        &self.graph
    }

    /// Number of clamped evaluations since construction or the last reset.
    pub fn clamped(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn reset_clamped(&self) {
        self.clamped.store(0, Ordering::Relaxed);
    }
}

impl FluxLaw for GraphLaw {
    fn components(&self) -> usize {
        1
    }
    fn d(&self) -> usize {
        self.graph.dim()
    }
    fn flux_into(&self, _cell: usize, grad: &[f64], out: &mut [f64]) -> Result<()> {
        let r = self.graph.interpolate(grad)?;
        if r.extrapolated {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        out.copy_from_slice(&r.eta);
        Ok(())
    }
    fn theta(&self) -> f64 {
        self.theta
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
    fn is_potential(&self) -> bool {
        false
    }
}

/// Linear isotropic elasticity `σ = 2μ sym∇u + λ (div u) I` with two phases.
#[derive(Debug, Clone)]
pub struct LameLaw {
    d: usize,
    lambda: [f64; 2],
    mu: [f64; 2],
    phases: Option<Vec<u8>>,
}

impl LameLaw {
    pub fn new(d: usize, lambda: [f64; 2], mu: [f64; 2], phases: Option<Vec<u8>>) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidParameter(format!("dimension {d} outside 1..=3")));
        }
        if mu.iter().any(|&m| m <= 0.0) || lambda.iter().any(|&l| l < 0.0) {
            return Err(Error::InvalidParameter("Lamé moduli need μ > 0 and λ ≥ 0".into()));
        }
        Ok(Self { d, lambda, mu, phases })
    }

    pub fn homogeneous(d: usize, lambda: f64, mu: f64) -> Result<Self> {
        Self::new(d, [lambda; 2], [mu; 2], None)
    }

    fn moduli(&self, cell: usize) -> (f64, f64) {
        let p = self.phases.as_ref().map_or(0, |p| p[cell] as usize);
        (self.lambda[p], self.mu[p])
    }
}

impl FluxLaw for LameLaw {
    fn components(&self) -> usize {
        self.d
    }
    fn d(&self) -> usize {
        self.d
    }
    fn flux_into(&self, cell: usize, grad: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.d;
        let (lambda, mu) = self.moduli(cell);
        let div: f64 = (0..d).map(|i| grad[i * d + i]).sum();
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = mu * (grad[i * d + j] + grad[j * d + i]);
            }
            out[i * d + i] += lambda * div;
        }
        Ok(())
    }
    /// Korn's identity on `H¹₀` gives `∫σ:∇u ≥ μ_min ‖∇u‖²`.
    fn theta(&self) -> f64 {
        self.mu[0].min(self.mu[1])
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(2.0 * self.mu[0].max(self.mu[1]) + self.d as f64 * self.lambda[0].max(self.lambda[1]))
    }
    fn is_potential(&self) -> bool {
        true
    }
    fn energy(&self, cell: usize, grad: &[f64]) -> Option<f64> {
        let d = self.d;
        let (lambda, mu) = self.moduli(cell);
        let mut e = 0.0;
        for i in 0..d {
            for j in 0..d {
                let s = 0.5 * (grad[i * d + j] + grad[j * d + i]);
                e += mu * s * s;
            }
        }
        let div: f64 = (0..d).map(|i| grad[i * d + i]).sum();
        Some(e + 0.5 * lambda * div * div)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EllipticKnobs {
    /// Bound on `max_i |r_i| / max_i |b_i|` for the residual `r` against the load `b`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EllipticKnobs {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IterationKind {
    /// `u ← u − τ P⁻¹(A u − b)` with a certified contraction factor.
    FixedPoint,
    /// Preconditioned energy descent, used when `θ = 0` for potential laws.
    EnergyDescent,
}

pub struct EllipticProblem<'a> {
    mesh: DirichletMesh,
    law: &'a dyn FluxLaw,
    /// Load vector `b_i = h^d f(x_i)`, node-major with `m` components.
    load: Vec<f64>,
    knobs: EllipticKnobs,
}

#[derive(Debug, Clone)]
pub struct EllipticSolution {
    pub mesh: DirichletMesh,
    pub components: usize,
    /// Interior nodal values, node-major.
    pub u: Vec<f64>,
    /// Cell averages of `∇u` (`m·d` components).
    pub grad: DiscreteField,
    /// Cell averages of `σ`.
    pub flux: DiscreteField,
    /// Cell averages of `σ : ∇u`.
    pub density: DiscreteField,
    /// Cell averages of `u`.
    pub cell_u: DiscreteField,
    /// `max_i |r_i| / max_i |b_i|`.
    pub residual: f64,
    pub iterations: usize,
    pub kind: IterationKind,
    /// Certified contraction factor of the fixed-point map.
    pub contraction: Option<f64>,
    /// Increments `‖u_{k+1} − u_k‖` in the preconditioner norm.
    pub increments: Vec<f64>,
}

impl EllipticSolution {
    /// Largest ratio of consecutive increments, ignoring increments at round-off level.
    pub fn observed_contraction(&self) -> f64 {
        let floor = self.increments.first().copied().unwrap_or(0.0) * 1e-9;
        self.increments
            .windows(2)
            .filter(|w| w[0] > floor)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max)
    }

    /// Nodal value at lattice coordinates in `0..=n`, zero on the boundary.
    pub fn nodal(&self, coords: &[usize], comp: usize) -> f64 {
        self.mesh
            .node_index(coords)
            .map_or(0.0, |i| self.u[i * self.components + comp])
    }
}

impl<'a> EllipticProblem<'a> {
    pub fn new(mesh: DirichletMesh, law: &'a dyn FluxLaw, rhs: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        check_dim(mesh.d(), law.d())?;
        let m = law.components();
        let vol = mesh.h().powi(mesh.d() as i32);
        let mut load = Vec::with_capacity(mesh.interior_nodes() * m);
        for node in 0..mesh.interior_nodes() {
            let f = rhs(&mesh.node_position(node));
            check_dim(m, f.len())?;
            load.extend(f.iter().map(|v| v * vol));
        }
        Ok(Self {
            mesh,
            law,
            load,
            knobs: EllipticKnobs::default(),
        })
    }

    pub fn with_knobs(mut self, knobs: EllipticKnobs) -> Self {
        self.knobs = knobs;
        self
    }

    pub fn mesh(&self) -> DirichletMesh {
        self.mesh
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    /// Applies the discrete operator `A(u)_i = ∫ β(∇u)·∇φ_i`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let law = self.law;
        self.simplex_loop(u, Some(out), |s, flux| law.flux_into(s.cell, s.grad, flux))
    }

    /// Discrete energy `Σ_T |T| Φ(∇u_T) − b·u`, for potential laws.
    pub fn energy(&self, u: &[f64]) -> Result<f64> {
        let vol = self.simplex_volume();
        let mut total = 0.0;
        self.simplex_loop(u, None, |s, _| {
            total += vol
                * self
                    .law
                    .energy(s.cell, s.grad)
                    .ok_or_else(|| Error::Unsupported("law has no energy".into()))?;
            Ok(())
        })?;
        Ok(total - self.load.iter().zip(u).map(|(b, v)| b * v).sum::<f64>())
    }

    fn simplex_volume(&self) -> f64 {
        let d = self.mesh.d();
        self.mesh.h().powi(d as i32) / permutations(d).len() as f64
    }

    /// Visits every simplex with the gradient of `u` on it; when `out` is given,
    /// scatters `∫ σ·∇φ_i` for the flux `σ` written by the visitor.
    fn simplex_loop<F>(&self, u: &[f64], mut out: Option<&mut [f64]>, mut visit: F) -> Result<()>
    where
        F: FnMut(&Simplex, &mut [f64]) -> Result<()>,
    {
        let d = self.mesh.d();
        let m = self.law.components();
        let md = m * d;
        let h = self.mesh.h();
        let perms = permutations(d);
        let vol = self.simplex_volume();
        if let Some(o) = out.as_deref_mut() {
            o.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut corners = [None; 8];
        let mut grad = vec![0.0; md];
        let mut vals = vec![0.0; (d + 1) * m];
        let mut flux = vec![0.0; md];
        for cell in 0..self.mesh.cell_grid().cells() {
            self.mesh.corners(cell, &mut corners);
            for (p, perm) in perms.iter().enumerate() {
                let mut mask = [0usize; 4];
                for k in 1..=d {
                    mask[k] = mask[k - 1] | (1 << perm[k - 1]);
                }
                for k in 0..=d {
                    for i in 0..m {
                        vals[k * m + i] = corners[mask[k]].map_or(0.0, |n| u[n * m + i]);
                    }
                }
                for i in 0..m {
                    for k in 1..=d {
                        grad[i * d + perm[k - 1]] = (vals[k * m + i] - vals[(k - 1) * m + i]) / h;
                    }
                }
                let s = Simplex {
                    cell,
                    index: cell * perms.len() + p,
                    grad: &grad,
                    vals: &vals,
                };
                visit(&s, &mut flux)?;
                if let Some(o) = out.as_deref_mut() {
                    for k in 0..=d {
                        let Some(node) = corners[mask[k]] else { continue };
                        for i in 0..m {
                            let mut g = 0.0;
                            if k >= 1 {
                                g += flux[i * d + perm[k - 1]];
                            }
                            if k < d {
                                g -= flux[i * d + perm[k]];
                            }
                            o[node * m + i] += vol * g / h;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn residual(&self, u: &[f64], r: &mut [f64]) -> Result<f64> {
        self.apply(u, r)?;
        let mut rmax: f64 = 0.0;
        for (ri, b) in r.iter_mut().zip(&self.load) {
            *ri -= b;
            rmax = rmax.max(ri.abs());
        }
        Ok(rmax / self.load_scale())
    }

    fn load_scale(&self) -> f64 {
        let s = self.load.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    /// Applies `P⁻¹` component-wise, where `P = h^{d−2} L` is the P1 stiffness
    /// matrix of the identity law.
    fn precondition(&self, poisson: &DirichletPoisson, r: &[f64], z: &mut [f64]) {
        let m = self.law.components();
        let d = self.mesh.d();
        let scale = self.mesh.h().powi(2 - d as i32);
        let nodes = self.mesh.interior_nodes();
        let mut buf = vec![0.0; nodes];
        for i in 0..m {
            for (node, b) in buf.iter_mut().enumerate() {
                *b = r[node * m + i];
            }
            poisson.solve(&mut buf);
            for (node, b) in buf.iter().enumerate() {
                z[node * m + i] = b * scale;
            }
        }
    }

    /// Applies `P`.
    fn apply_preconditioner(&self, poisson: &DirichletPoisson, v: &[f64], out: &mut [f64]) {
        let m = self.law.components();
        let scale = self.mesh.h().powi(self.mesh.d() as i32 - 2);
        let nodes = self.mesh.interior_nodes();
        let mut a = vec![0.0; nodes];
        let mut b = vec![0.0; nodes];
        for i in 0..m {
            for (node, x) in a.iter_mut().enumerate() {
                *x = v[node * m + i];
            }
            poisson.apply(&a, &mut b);
            for (node, x) in b.iter().enumerate() {
                out[node * m + i] = x * scale;
            }
        }
    }

    /// Solves the discrete problem; see [`IterationKind`] for the methods.
    pub fn solve(&self) -> Result<EllipticSolution> {
        let theta = self.law.theta();
        let potential = self.law.is_potential();
        let md = self.law.components() * self.mesh.d();
        if theta > 0.0 {
            let lip = self
                .law
                .lipschitz()
                .ok_or_else(|| Error::Unsupported("law has no Lipschitz certificate".into()))?;
            self.fixed_point(theta, lip.max(theta), potential)
        } else if potential
            && self.law.energy(0, &vec![0.0; md]).is_some()
            && self.law.jacobian_into(0, &vec![0.0; md], &mut vec![0.0; md * md])?
        {
            self.energy_descent()
        } else {
            Err(Error::NotStrictlyMonotone)
        }
    }

    fn fixed_point(&self, theta: f64, lip: f64, potential: bool) -> Result<EllipticSolution> {
        let (tau, q) = if potential {
            (2.0 / (theta + lip), (lip - theta) / (lip + theta))
        } else {
            (theta / (lip * lip), (1.0 - (theta / lip).powi(2)).sqrt())
        };
        let len = self.load.len();
        let poisson = DirichletPoisson::new(self.mesh.d(), self.mesh.n());
        let mut u = vec![0.0; len];
        let mut r = vec![0.0; len];
        let mut z = vec![0.0; len];
        let mut increments = Vec::new();
        let mut res = self.residual(&u, &mut r)?;
        let mut it = 0;
        while res > self.knobs.tol {
            if it >= self.knobs.max_iter {
                return Err(Error::Stalled {
                    iterations: it,
                    residual: res,
                    contraction: observed(&increments),
                });
            }
            self.precondition(&poisson, &r, &mut z);
            let zr = dot(&z, &r);
            increments.push(tau * zr.max(0.0).sqrt());
            for (ui, zi) in u.iter_mut().zip(&z) {
                *ui -= tau * zi;
            }
            res = self.residual(&u, &mut r)?;
            it += 1;
        }
        self.finish(u, res, it, IterationKind::FixedPoint, Some(q), increments)
    }

    /// Backtracking (and, from a flat start, expanding) line search on the
    /// energy along `dir`, with `slope = ∇J·dir < 0`.
    fn line_search(&self, u: &[f64], e: f64, dir: &[f64], slope: f64, trial: &mut [f64]) -> Result<(f64, f64)> {
        let eval = |t: f64, trial: &mut [f64]| -> Result<f64> {
            for ((x, ui), di) in trial.iter_mut().zip(u).zip(dir) {
                *x = ui + t * di;
            }
            self.energy(trial)
        };
        // energy differences below this are round-off
        let noise = 1e-14 * e.abs().max(1.0) * self.load.len() as f64;
        let accept = |t: f64, et: f64| et <= e + 1e-4 * t * slope + noise;
        let mut t = 1.0;
        let mut et = eval(t, trial)?;
        if accept(t, et) {
            // expand while the energy keeps dropping
            for _ in 0..60 {
                let e2 = eval(2.0 * t, trial)?;
                if e2 < et - noise && accept(2.0 * t, e2) {
                    t *= 2.0;
                    et = e2;
                } else {
                    break;
                }
            }
        } else {
            for _ in 0..60 {
                t *= 0.5;
                et = eval(t, trial)?;
                if accept(t, et) {
                    break;
                }
            }
        }
        eval(t, trial)?;
        Ok((t, et))
    }

    /// Damped Newton on the energy: each step solves `(H + γP) δ = −r` by
    /// preconditioned conjugate gradients, where `H` is the Hessian at the
    /// current iterate, then line-searches the energy along `δ`.
    fn energy_descent(&self) -> Result<EllipticSolution> {
        let len = self.load.len();
        let md = self.law.components() * self.mesh.d();
        let poisson = DirichletPoisson::new(self.mesh.d(), self.mesh.n());
        let mut u = vec![0.0; len];
        let mut r = vec![0.0; len];
        let mut z = vec![0.0; len];
        let mut trial = vec![0.0; len];
        let mut increments = Vec::new();
        let mut res = self.residual(&u, &mut r)?;
        let mut e = self.energy(&u)?;
        let nsimplex = self.mesh.cell_grid().cells() * permutations(self.mesh.d()).len();
        let mut jac = vec![0.0; nsimplex * md * md];
        let mut it = 0;
        while res > self.knobs.tol {
            if it >= self.knobs.max_iter {
                return Err(Error::Stalled {
                    iterations: it,
                    residual: res,
                    contraction: observed(&increments),
                });
            }
            let law = self.law;
            self.simplex_loop(&u, None, |s, _| {
                law.jacobian_into(s.cell, s.grad, &mut jac[s.index * md * md..(s.index + 1) * md * md])
                    .map(|_| ())
            })?;
            let mean_diag = jac
                .chunks(md * md)
                .map(|j| (0..md).map(|a| j[a * md + a]).sum::<f64>() / md as f64)
                .sum::<f64>()
                / nsimplex as f64;
            if mean_diag > 0.0 {
                let gamma = mean_diag * res.min(1e-2);
                let tol = res.sqrt().min(0.1);
                self.newton_direction(&poisson, &jac, gamma, &r, tol, &mut z)?;
            } else {
                // flat start: steepest descent in the preconditioner metric
                self.precondition(&poisson, &r, &mut z);
                z.iter_mut().for_each(|v| *v = -*v);
            }
            let slope = dot(&z, &r);
            if slope >= 0.0 {
                return Err(Error::Stalled {
                    iterations: it,
                    residual: res,
                    contraction: observed(&increments),
                });
            }
            let (t, et) = self.line_search(&u, e, &z, slope, &mut trial)?;
            let mut pz = vec![0.0; len];
            self.apply_preconditioner(&poisson, &z, &mut pz);
            increments.push(t * dot(&z, &pz).max(0.0).sqrt());
            std::mem::swap(&mut u, &mut trial);
            e = et;
            res = self.residual(&u, &mut r)?;
            it += 1;
        }
        self.finish(u, res, it, IterationKind::EnergyDescent, None, increments)
    }

    /// PCG for `(H + γP) δ = −r` with `H v = Σ_T |T| Gᵀ J_T G v`.
    fn newton_direction(
        &self,
        poisson: &DirichletPoisson,
        jac: &[f64],
        gamma: f64,
        r: &[f64],
        tol: f64,
        x: &mut [f64],
    ) -> Result<()> {
        let len = r.len();
        let md = self.law.components() * self.mesh.d();
        let hv = |v: &[f64], out: &mut [f64]| -> Result<()> {
            self.simplex_loop(v, Some(out), |s, flux| {
                let j = &jac[s.index * md * md..(s.index + 1) * md * md];
                for a in 0..md {
                    flux[a] = (0..md).map(|b| j[a * md + b] * s.grad[b]).sum();
                }
                Ok(())
            })?;
            let mut pv = vec![0.0; len];
            self.apply_preconditioner(poisson, v, &mut pv);
            for (o, p) in out.iter_mut().zip(&pv) {
                *o += gamma * p;
            }
            Ok(())
        };
        x.iter_mut().for_each(|v| *v = 0.0);
        let mut res: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut z = vec![0.0; len];
        self.precondition(poisson, &res, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&res, &z);
        let r0 = rz.sqrt();
        let mut ap = vec![0.0; len];
        for _ in 0..1000 {
            if rz.sqrt() <= tol * r0 {
                break;
            }
            hv(&p, &mut ap)?;
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..len {
                x[i] += alpha * p[i];
                res[i] -= alpha * ap[i];
            }
            self.precondition(poisson, &res, &mut z);
            let rz_new = dot(&res, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..len {
                p[i] = z[i] + beta * p[i];
            }
        }
        if x.iter().all(|v| *v == 0.0) {
            x.copy_from_slice(&z);
        }
        Ok(())
    }

    fn finish(
        &self,
        u: Vec<f64>,
        residual: f64,
        iterations: usize,
        kind: IterationKind,
        contraction: Option<f64>,
        increments: Vec<f64>,
    ) -> Result<EllipticSolution> {
        let d = self.mesh.d();
        let m = self.law.components();
        let md = m * d;
        let grid = self.mesh.cell_grid();
        let cells = grid.cells();
        let w = 1.0 / permutations(d).len() as f64;
        let mut grad = vec![0.0; cells * md];
        let mut flux = vec![0.0; cells * md];
        let mut density = vec![0.0; cells];
        let mut cell_u = vec![0.0; cells * m];
        let law = self.law;
        self.simplex_loop(&u, None, |s, f| {
            law.flux_into(s.cell, s.grad, f)?;
            let c = s.cell;
            for a in 0..md {
                grad[c * md + a] += w * s.grad[a];
                flux[c * md + a] += w * f[a];
            }
            density[c] += w * dot(s.grad, f);
            for i in 0..m {
                let mean: f64 = (0..=d).map(|k| s.vals[k * m + i]).sum::<f64>() / (d + 1) as f64;
                cell_u[c * m + i] += w * mean;
            }
            Ok(())
        })?;
        Ok(EllipticSolution {
            mesh: self.mesh,
            components: m,
            u,
            grad: DiscreteField::from_values(grid, md, grad)?,
            flux: DiscreteField::from_values(grid, md, flux)?,
            density: DiscreteField::from_values(grid, 1, density)?,
            cell_u: DiscreteField::from_values(grid, m, cell_u)?,
            residual,
            iterations,
            kind,
            contraction,
            increments,
        })
    }
}

/// One simplex of the mesh as seen by [`EllipticProblem::simplex_loop`].
struct Simplex<'s> {
    cell: usize,
    index: usize,
    grad: &'s [f64],
    /// Vertex values along the Kuhn path, vertex-major.
    vals: &'s [f64],
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}


fn observed(increments: &[f64]) -> f64 {
    increments.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max)
}

/// Solves a Dirichlet problem for `law` with nodal right-hand side `rhs`.
pub fn solve_elliptic(mesh: DirichletMesh, law: &dyn FluxLaw, rhs: impl Fn(&[f64]) -> Vec<f64>) -> Result<EllipticSolution> {
    EllipticProblem::new(mesh, law, rhs)?.solve()
}

/// Solves the homogenized problem with the interpolated effective law.
///
/// Returns the solution together with the number of clamped evaluations
/// made while producing it.
pub fn solve_homogenized(
    mesh: DirichletMesh,
    law: &GraphLaw,
    rhs: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<(EllipticSolution, usize)> {
    law.reset_clamped();
    let sol = solve_elliptic(mesh, law, rhs)?;
    Ok((sol, law.clamped()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sin_sin(x: &[f64]) -> f64 {
        x.iter().map(|v| (PI * v).sin()).product()
    }

    fn max_nodal_error(sol: &EllipticSolution, exact: impl Fn(&[f64]) -> f64) -> f64 {
        (0..sol.mesh.interior_nodes())
            .map(|n| (sol.u[n] - exact(&sol.mesh.node_position(n))).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_stiffness_matches_stencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..=3 {
            let mesh = DirichletMesh::new(d, 8).unwrap();
            let law = MediumLaw::homogeneous(MonotoneLaw::identity(d).unwrap()).unwrap();
            let p = EllipticProblem::new(mesh, &law, |_| vec![0.0]).unwrap();
            let u: Vec<f64> = (0..mesh.interior_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut a = vec![0.0; u.len()];
            p.apply(&u, &mut a).unwrap();
            let mut l = vec![0.0; u.len()];
            DirichletPoisson::new(d, 8).apply(&u, &mut l);
            let s = mesh.h().powi(d as i32 - 2);
            for (x, y) in a.iter().zip(&l) {
                assert!((x - s * y).abs() < 1e-12, "d={d}");
            }
        }
    }

    #[test]
    fn manufactured_identity_is_second_order() {
        let law = MediumLaw::homogeneous(MonotoneLaw::identity(2).unwrap()).unwrap();
        let mut consts = vec![];
        for n in [16, 32, 64] {
            let mesh = DirichletMesh::new(2, n).unwrap();
            let sol = solve_elliptic(mesh, &law, |x| vec![2.0 * PI * PI * sin_sin(x)]).unwrap();
            assert!(sol.residual <= 1e-8);
            let err = max_nodal_error(&sol, sin_sin);
            consts.push(err * (n * n) as f64);
        }
        // the constant settles rather than grows
        assert!(consts[2] <= consts[1] * 1.05 && consts[1] <= consts[0] * 1.05, "{consts:?}");
        assert!(consts[2] < 1.0, "{consts:?}");
    }

    #[test]
    fn affine_law_is_linear_in_the_load() {
        let law = MediumLaw::homogeneous(MonotoneLaw::diagonal(&[2.0, 3.0]).unwrap()).unwrap();
        let mesh = DirichletMesh::new(2, 32).unwrap();
        let knobs = EllipticKnobs { tol: 1e-13, ..Default::default() };
        let f = |x: &[f64]| vec![(3.0 * x[0]).cos() + x[1]];
        let a = EllipticProblem::new(mesh, &law, f).unwrap().with_knobs(knobs).solve().unwrap();
        let b = EllipticProblem::new(mesh, &law, |x| vec![2.0 * f(x)[0]])
            .unwrap()
            .with_knobs(knobs)
            .solve()
            .unwrap();
        for (x, y) in a.u.iter().zip(&b.u) {
            assert!((2.0 * x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn increments_contract_with_certified_factor() {
        let law = MediumLaw::new(
            MonotoneLaw::two_phase(MonotoneLaw::identity(2).unwrap(), MonotoneLaw::diagonal(&[4.0, 4.0]).unwrap()).unwrap(),
            Some((0..256).map(|c| ((c / 16 + c % 16) % 2) as u8).collect()),
        )
        .unwrap();
        let mesh = DirichletMesh::new(2, 16).unwrap();
        let sol = solve_elliptic(mesh, &law, |x| vec![1.0 + x[0]]).unwrap();
        let q = sol.contraction.unwrap();
        assert!((q - 0.6).abs() < 1e-12);
        assert!(sol.observed_contraction() <= q * (1.0 + 1e-9), "{}", sol.observed_contraction());
        assert!(sol.residual <= 1e-8);
    }

    #[test]
    fn non_symmetric_affine_law_uses_general_step() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 2.0]);
        let law = MediumLaw::homogeneous(MonotoneLaw::affine(m, DVector::zeros(2)).unwrap()).unwrap();
        let mesh = DirichletMesh::new(2, 16).unwrap();
        let sol = solve_elliptic(mesh, &law, |_| vec![1.0]).unwrap();
        let q = sol.contraction.unwrap();
        assert!(q < 1.0);
        assert!(sol.observed_contraction() <= q * (1.0 + 1e-9));
        // the skew part drops out of the weak form in the interior
        let sym = MediumLaw::homogeneous(MonotoneLaw::diagonal(&[2.0, 2.0]).unwrap()).unwrap();
        let sol2 = solve_elliptic(mesh, &sym, |_| vec![1.0]).unwrap();
        for (a, b) in sol.u.iter().zip(&sol2.u) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_modulus_without_energy_is_rejected() {
        let law = MediumLaw::homogeneous(MonotoneLaw::sign_graph(true)).unwrap();
        let mesh = DirichletMesh::new(1, 8).unwrap();
        assert!(matches!(solve_elliptic(mesh, &law, |_| vec![1.0]), Err(Error::NotStrictlyMonotone)));
    }

    #[test]
    fn one_dimensional_harmonic_profile_is_nodally_exact() {
        let law = MediumLaw::homogeneous(MonotoneLaw::affine_scalar(1.6, 0.0).unwrap()).unwrap();
        let mesh = DirichletMesh::new(1, 64).unwrap();
        let sol = solve_elliptic(mesh, &law, |_| vec![1.0]).unwrap();
        assert!(max_nodal_error(&sol, |x| x[0] * (1.0 - x[0]) / 3.2) < 1e-9);
    }

    #[test]
    fn cell_averages_of_linear_profile() {
        // u = x(1−x)/2 on nodes, check cell_u against exact P1 cell means
        let law = MediumLaw::homogeneous(MonotoneLaw::identity(1).unwrap()).unwrap();
        let mesh = DirichletMesh::new(1, 8).unwrap();
        let sol = solve_elliptic(mesh, &law, |_| vec![1.0]).unwrap();
        let h = mesh.h();
        for c in 0..8 {
            let a = sol.nodal(&[c], 0);
            let b = sol.nodal(&[c + 1], 0);
            assert!((sol.cell_u.values()[c] - 0.5 * (a + b)).abs() < 1e-14);
            assert!((sol.grad.values()[c] - (b - a) / h).abs() < 1e-12);
        }
        // ∫σ·u' = ∫f u for the discrete solution
        let lhs: f64 = sol.density.values().iter().sum::<f64>() * h;
        let rhs: f64 = sol.u.iter().sum::<f64>() * h;
        assert!((lhs - rhs).abs() < 1e-9);
    }

    /// `−div(|∇u|²∇u)` for `u = sin(πx₁)sin(πx₂)`.
    fn p4_rhs(x: &[f64]) -> f64 {
        let (s1, c1) = (PI * x[0]).sin_cos();
        let (s2, c2) = (PI * x[1]).sin_cos();
        let q = c1 * c1 * s2 * s2 + s1 * s1 * c2 * c2;
        -PI.powi(4) * s1 * s2 * (2.0 * c1 * c1 * (c2 * c2 - s2 * s2) + 2.0 * c2 * c2 * (c1 * c1 - s1 * s1) - 2.0 * q)
    }

    fn p4_flux(x: &[f64]) -> [f64; 2] {
        let (s1, c1) = (PI * x[0]).sin_cos();
        let (s2, c2) = (PI * x[1]).sin_cos();
        let g = [PI * c1 * s2, PI * s1 * c2];
        let q = g[0] * g[0] + g[1] * g[1];
        [q * g[0], q * g[1]]
    }

    #[test]
    fn p4_rhs_matches_central_differences() {
        let e = 1e-5;
        for x in [[0.3, 0.7], [0.5, 0.5], [0.11, 0.42]] {
            let dx = (p4_flux(&[x[0] + e, x[1]])[0] - p4_flux(&[x[0] - e, x[1]])[0]) / (2.0 * e);
            let dy = (p4_flux(&[x[0], x[1] + e])[1] - p4_flux(&[x[0], x[1] - e])[1]) / (2.0 * e);
            assert!((p4_rhs(&x) + dx + dy).abs() < 1e-5 * p4_rhs(&x).abs().max(1.0));
        }
    }

    #[test]
    fn power_four_manufactured_solution() {
        let law = MediumLaw::homogeneous(MonotoneLaw::power(2, 1.0, 4.0).unwrap()).unwrap();
        let mesh = DirichletMesh::new(2, 256).unwrap();
        let sol = solve_elliptic(mesh, &law, |x| vec![p4_rhs(x)]).unwrap();
        assert_eq!(sol.kind, IterationKind::EnergyDescent);
        assert!(sol.residual <= 1e-8);
        assert!(max_nodal_error(&sol, sin_sin) <= 0.02);
    }

    #[test]
    fn lame_manufactured_solution() {
        let (lambda, mu) = (1.5, 0.7);
        let law = LameLaw::homogeneous(2, lambda, mu).unwrap();
        let rhs = |x: &[f64]| {
            let (s1, c1) = (PI * x[0]).sin_cos();
            let (s2, c2) = (PI * x[1]).sin_cos();
            let v = 2.0 * PI * PI * mu * s1 * s2 - (lambda + mu) * PI * PI * (c1 * c2 - s1 * s2);
            vec![v, v]
        };
        let mut errs = vec![];
        for n in [16, 32] {
            let mesh = DirichletMesh::new(2, n).unwrap();
            let sol = solve_elliptic(mesh, &law, rhs).unwrap();
            assert!(sol.residual <= 1e-8);
            assert!(sol.observed_contraction() <= sol.contraction.unwrap() * (1.0 + 1e-9));
            let mut err: f64 = 0.0;
            for node in 0..mesh.interior_nodes() {
                let exact = sin_sin(&mesh.node_position(node));
                err = err.max((sol.u[2 * node] - exact).abs()).max((sol.u[2 * node + 1] - exact).abs());
            }
            errs.push(err);
        }
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
        assert!(errs[1] < 5e-3, "{errs:?}");
    }
}
