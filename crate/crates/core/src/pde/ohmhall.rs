//! Stationary Ohm-Hall systems `curl E = g`, `div J = 0`, `E = β(J, x)` on the
//! two-dimensional torus with prescribed mean current.

use crate::error::{check_dim, Error, Result};
use crate::field::{DiscreteField, PeriodicGrid, Spectral};
use crate::monotone::MonotoneLaw;
use num_complex::Complex64;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OhmHallKnobs {
    /// Bound on `‖curl E − g‖₂ / ‖g‖₂` (absolute when `g = 0`).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OhmHallKnobs {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OhmHallProblem {
    pub law: MonotoneLaw,
    pub phases: Option<Vec<u8>>,
    /// Scalar source `g`, one value per cell.
    pub source: DiscreteField,
    pub mean_flux: [f64; 2],
    pub knobs: OhmHallKnobs,
}

#[derive(Debug, Clone)]
pub struct OhmHallSolution {
    pub e: DiscreteField,
    pub j: DiscreteField,
    pub psi: DiscreteField,
    pub residual: f64,
    pub iterations: usize,
    /// Certified contraction factor of the iteration in `ψ`.
    pub contraction: f64,
    /// Increments `‖∇(ψ_{k+1} − ψ_k)‖₂`.
    pub increments: Vec<f64>,
}

impl OhmHallSolution {
    /// `max |div J|` by spectral differentiation.
    pub fn max_divergence(&self) -> f64 {
        let spectral = Spectral::new(self.j.grid());
        spectral
            .divergence(self.j.values())
            .iter()
            .fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Largest ratio of consecutive increments above round-off level.
    pub fn observed_contraction(&self) -> f64 {
        let floor = self.increments.first().copied().unwrap_or(0.0) * 1e-9;
        self.increments
            .windows(2)
            .filter(|w| w[0] > floor)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max)
    }
}

fn curl(spectral: &Spectral, e: &[f64]) -> Vec<f64> {
    let spec = spectral.forward(e, 2);
    let mut acc = vec![Complex64::new(0.0, 0.0); spectral.grid().cells()];
    for (m, v) in acc.iter_mut().enumerate() {
        let k = spectral.wavevector(m);
        *v = Complex64::new(0.0, k[0]) * spec[1][m] - Complex64::new(0.0, k[1]) * spec[0][m];
    }
    let mut out = vec![0.0; acc.len()];
    spectral.inverse_into(vec![acc], &mut out);
    out
}

fn l2(grid: PeriodicGrid, v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / grid.cells() as f64).sqrt()
}

/// Solves the torus problem by the preconditioned monotone iteration
/// `ψ ← ψ − τ (−Δ)⁻¹(g − curl β(ξ̄ + ∇⊥ψ))`.
///
/// `ψ ↦ −curl β(ξ̄ + ∇⊥ψ)` is strictly monotone with modulus `θ` in the
/// `‖∇ψ‖` norm because `⟨−curl E, φ⟩ = ⟨E, ∇⊥φ⟩`.
pub fn solve_ohmhall_torus(problem: &OhmHallProblem) -> Result<OhmHallSolution> {
    let law = &problem.law;
    check_dim(2, law.dim())?;
    let grid = problem.source.grid();
    check_dim(2, grid.d())?;
    check_dim(1, problem.source.components())?;
    if law.is_two_phase() && problem.phases.is_none() {
        return Err(Error::MissingPhase);
    }
    if let Some(p) = &problem.phases {
        check_dim(grid.cells(), p.len())?;
    }
    let theta = law.theta();
    if theta <= 0.0 {
        return Err(Error::NotStrictlyMonotone);
    }
    let lip = law
        .lipschitz()
        .ok_or_else(|| Error::Unsupported("law has no Lipschitz certificate".into()))?
        .max(theta);
    let g = problem.source.values();
    let g_scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let g_mean = problem.source.mean()[0];
    if g_mean.abs() > 1e-12 * g_scale.max(1.0) {
        return Err(Error::InvalidParameter(format!("source mean {g_mean:e} must vanish on the torus")));
    }
    let (tau, q) = if law.is_potential() {
        (2.0 / (theta + lip), (lip - theta) / (lip + theta))
    } else {
        (theta / (lip * lip), (1.0 - (theta / lip).powi(2)).sqrt())
    };
    let spectral = Spectral::new(grid);
    let cells = grid.cells();
    let g_norm = l2(grid, g);
    let phase = |c: usize| problem.phases.as_ref().map(|p| p[c] as usize);

    let mut psi = vec![0.0; cells];
    let mut j = vec![0.0; 2 * cells];
    let mut e = vec![0.0; 2 * cells];
    let evaluate = |psi: &[f64], j: &mut [f64], e: &mut [f64]| -> Result<()> {
        let grad = spectral.gradient(psi);
        for c in 0..cells {
            j[2 * c] = problem.mean_flux[0] - grad[2 * c + 1];
            j[2 * c + 1] = problem.mean_flux[1] + grad[2 * c];
            law.apply_into(&j[2 * c..2 * c + 2], phase(c), &mut e[2 * c..2 * c + 2])?;
        }
        Ok(())
    };
    let mut increments = Vec::new();
    let mut it = 0;
    let residual = loop {
        evaluate(&psi, &mut j, &mut e)?;
        let mut r = curl(&spectral, &e);
        for (ri, gi) in r.iter_mut().zip(g) {
            *ri = gi - *ri;
        }
        let res = if g_norm > 0.0 { l2(grid, &r) / g_norm } else { l2(grid, &r) };
        if res <= problem.knobs.tol {
            break res;
        }
        if it >= problem.knobs.max_iter {
            let contraction = increments.windows(2).map(|w: &[f64]| w[1] / w[0]).fold(0.0, f64::max);
            return Err(Error::Stalled {
                iterations: it,
                residual: res,
                contraction,
            });
        }
        let z = spectral.inverse_neg_laplacian(&r);
        let dz = spectral.gradient(&z);
        increments.push(tau * l2(grid, &dz));
        for (p, zi) in psi.iter_mut().zip(&z) {
            *p -= tau * zi;
        }
        it += 1;
    };
    Ok(OhmHallSolution {
        e: DiscreteField::from_values(grid, 2, e)?,
        j: DiscreteField::from_values(grid, 2, j)?,
        psi: DiscreteField::from_values(grid, 1, psi)?,
        residual,
        iterations: it,
        contraction: q,
        increments,
    })
}

/// `∫ φ (E·J)` by the cell-average quadrature of the shared grid.
pub fn divcurl_pairing(e: &DiscreteField, j: &DiscreteField, phi: &DiscreteField) -> Result<f64> {
    if e.grid() != j.grid() || e.grid() != phi.grid() {
        return Err(Error::ShapeMismatch("pairing fields live on different grids".into()));
    }
    if e.components() != j.components() || phi.components() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "pairing needs matching E, J components and a scalar test field, got {}, {}, {}",
            e.components(),
            j.components(),
            phi.components()
        )));
    }
    let cells = e.grid().cells();
    let total: f64 = (0..cells)
        .map(|c| {
            let ej: f64 = e.at(c).iter().zip(j.at(c)).map(|(a, b)| a * b).sum();
            phi.values()[c] * ej
        })
        .sum();
    Ok(total / cells as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> PeriodicGrid {
        PeriodicGrid::new(2, 64).unwrap()
    }

    fn source() -> DiscreteField {
        DiscreteField::from_fn(grid(), 1, |x| vec![(2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin()])
    }

    fn problem(law: MonotoneLaw, source: DiscreteField, mean_flux: [f64; 2]) -> OhmHallProblem {
        OhmHallProblem {
            law,
            phases: None,
            source,
            mean_flux,
            knobs: OhmHallKnobs::default(),
        }
    }

    #[test]
    fn manufactured_identity_solution() {
        let g = source();
        let sol = solve_ohmhall_torus(&problem(MonotoneLaw::identity(2).unwrap(), g.clone(), [0.0, 0.0])).unwrap();
        assert!(sol.residual <= 1e-6);
        let k2 = 8.0 * PI * PI;
        for (p, gv) in sol.psi.values().iter().zip(g.values()) {
            assert!((p + gv / k2).abs() < 1e-9);
        }
        for c in 0..grid().cells() {
            let x = grid().center(c);
            let (s1, c1) = (2.0 * PI * x[0]).sin_cos();
            let (s2, c2) = (2.0 * PI * x[1]).sin_cos();
            // ∇⊥ψ = (−∂₂ψ, ∂₁ψ) with ψ = −s1 s2 / (8π²)
            let j = [s1 * c2 * 2.0 * PI / k2, -c1 * s2 * 2.0 * PI / k2];
            assert!((sol.j.at(c)[0] - j[0]).abs() < 1e-9);
            assert!((sol.j.at(c)[1] - j[1]).abs() < 1e-9);
            assert_eq!(sol.e.at(c), sol.j.at(c));
        }
        assert!(sol.max_divergence() <= 1e-12);
        assert!(sol.observed_contraction() <= sol.contraction * (1.0 + 1e-9));
    }

    #[test]
    fn zero_source_gives_constant_fields() {
        let law = MonotoneLaw::power(2, 1.0, 2.0).unwrap();
        let zero = DiscreteField::zeros(grid(), 1);
        let sol = solve_ohmhall_torus(&problem(law.clone(), zero, [1.0, 0.0])).unwrap();
        let e0 = law.apply(&[1.0, 0.0], None).unwrap();
        for c in 0..grid().cells() {
            assert_eq!(sol.j.at(c), &[1.0, 0.0]);
            assert_eq!(sol.e.at(c), e0.as_slice());
        }
    }

    #[test]
    fn constant_hall_term_leaves_stream_function_unchanged() {
        let g = source();
        let plain = solve_ohmhall_torus(&problem(MonotoneLaw::identity(2).unwrap(), g.clone(), [0.0, 0.0])).unwrap();
        let hall = MonotoneLaw::hall(MonotoneLaw::identity(2).unwrap(), 1.0, [0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let sol = solve_ohmhall_torus(&problem(hall, g, [0.0, 0.0])).unwrap();
        assert!(sol.residual <= 1e-6);
        for (a, b) in sol.psi.values().iter().zip(plain.psi.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        for c in 0..grid().cells() {
            let j = sol.j.at(c);
            let e = sol.e.at(c);
            assert!((e[0] - (j[0] + j[1])).abs() < 1e-12);
            assert!((e[1] - (j[1] - j[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn two_phase_medium_converges() {
        let law = MonotoneLaw::two_phase(
            MonotoneLaw::identity(2).unwrap(),
            MonotoneLaw::hall(MonotoneLaw::diagonal(&[4.0, 4.0]).unwrap(), 0.5, [0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap(),
        )
        .unwrap();
        let g = grid();
        let phases: Vec<u8> = (0..g.cells()).map(|c| ((g.coords(c)[0] / 8 + g.coords(c)[1] / 8) % 2) as u8).collect();
        let mut p = problem(law, source(), [0.3, -0.2]);
        p.phases = Some(phases);
        let sol = solve_ohmhall_torus(&p).unwrap();
        assert!(sol.residual <= 1e-6);
        assert!(sol.max_divergence() <= 1e-12);
        let mean = sol.j.mean();
        assert!((mean[0] - 0.3).abs() < 1e-12 && (mean[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn nonzero_mean_source_is_rejected() {
        let g = DiscreteField::constant(grid(), &[1.0]);
        assert!(solve_ohmhall_torus(&problem(MonotoneLaw::identity(2).unwrap(), g, [0.0, 0.0])).is_err());
    }

    #[test]
    fn pairing_examples() {
        let g = grid();
        let one = DiscreteField::constant(g, &[1.0]);
        let e = DiscreteField::constant(g, &[1.0, 0.0]);
        assert!((divcurl_pairing(&e, &e, &one).unwrap() - 1.0).abs() < 1e-15);
        let grad = DiscreteField::from_fn(g, 2, |x| vec![2.0 * PI * (2.0 * PI * x[0]).cos(), 0.0]);
        let j = DiscreteField::constant(g, &[0.0, 1.0]);
        assert!(divcurl_pairing(&grad, &j, &one).unwrap().abs() < 1e-15);
        let bad = DiscreteField::constant(g, &[1.0, 0.0, 0.0]);
        assert!(divcurl_pairing(&e, &bad, &one).is_err());
    }
}
