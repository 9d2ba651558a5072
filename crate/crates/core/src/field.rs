//! Vector fields on the periodic unit-torus grid and their spectral
//! potential/solenoidal decomposition.
//!
//! Cells are stored row-major with axis 0 slowest; a field with `n`
//! components stores `values[cell * n + comp]`. Cell `i` along an axis has
//! its center at `(i + ½) / N`.

use crate::error::{Error, Result};
use crate::vector::dot;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PeriodicGrid {
    d: usize,
    n_side: usize,
}

impl PeriodicGrid {
    pub fn new(d: usize, n_side: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidParameter(format!("grid dimension must be 1, 2 or 3, got {d}")));
        }
        if n_side < 4 || !n_side.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "cells per side must be a power of two ≥ 4, got {n_side}"
            )));
        }
        Ok(Self { d, n_side })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_side as f64
    }

    pub fn cells(&self) -> usize {
        self.n_side.pow(self.d as u32)
    }

    /// Integer coordinates of a cell, axis 0 first.
    pub fn coords(&self, mut cell: usize) -> [usize; 3] {
        let mut c = [0; 3];
        for a in (0..self.d).rev() {
            c[a] = cell % self.n_side;
            cell /= self.n_side;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords[..self.d]
            .iter()
            .fold(0, |acc, &c| acc * self.n_side + c % self.n_side)
    }

    pub fn center(&self, cell: usize) -> [f64; 3] {
        let c = self.coords(cell);
        let mut x = [0.0; 3];
        for a in 0..self.d {
            x[a] = (c[a] as f64 + 0.5) * self.h();
        }
        x
    }

    /// Cell reached from `cell` by the lattice shift `by` (periodic wraparound).
    pub fn shifted(&self, cell: usize, by: &[i64]) -> usize {
        let c = self.coords(cell);
        let n = self.n_side as i64;
        let mut moved = [0usize; 3];
        for a in 0..self.d {
            moved[a] = (c[a] as i64 + by[a]).rem_euclid(n) as usize;
        }
        self.index(&moved)
    }

    /// Derivative wavenumber for FFT index `i`; the Nyquist index maps to 0.
    pub fn wavenumber(&self, i: usize) -> f64 {
        let n = self.n_side;
        if 2 * i < n {
            2.0 * PI * i as f64
        } else if 2 * i == n {
            0.0
        } else {
            2.0 * PI * (i as f64 - n as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    grid: PeriodicGrid,
    n: usize,
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn zeros(grid: PeriodicGrid, n: usize) -> Self {
        Self {
            grid,
            n,
            values: vec![0.0; grid.cells() * n],
        }
    }

    pub fn constant(grid: PeriodicGrid, value: &[f64]) -> Self {
        let n = value.len();
        let mut values = Vec::with_capacity(grid.cells() * n);
        for _ in 0..grid.cells() {
            values.extend_from_slice(value);
        }
        Self { grid, n, values }
    }

    pub fn from_values(grid: PeriodicGrid, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() * n {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                grid.cells() * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("field entries must be finite".into()));
        }
        Ok(Self { grid, n, values })
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: PeriodicGrid, n: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(grid.cells() * n);
        for cell in 0..grid.cells() {
            let x = grid.center(cell);
            let v = f(&x[..grid.d()]);
            assert_eq!(v.len(), n, "sampler returned the wrong number of components");
            values.extend_from_slice(&v);
        }
        Self { grid, n, values }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.n..(cell + 1) * self.n]
    }

    pub fn at_mut(&mut self, cell: usize) -> &mut [f64] {
        &mut self.values[cell * self.n..(cell + 1) * self.n]
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n];
        for chunk in self.values.chunks_exact(self.n) {
            for (a, v) in m.iter_mut().zip(chunk) {
                *a += v;
            }
        }
        let c = self.grid.cells() as f64;
        m.iter_mut().for_each(|v| *v /= c);
        m
    }

    /// Adds a constant vector to every cell.
    pub fn add_constant(&mut self, c: &[f64]) {
        for chunk in self.values.chunks_exact_mut(self.n) {
            for (a, v) in chunk.iter_mut().zip(c) {
                *a += v;
            }
        }
    }

    pub fn without_mean(&self) -> Self {
        let m: Vec<f64> = self.mean().iter().map(|v| -v).collect();
        let mut out = self.clone();
        out.add_constant(&m);
        out
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.n != other.n {
            return Err(Error::ShapeMismatch(format!(
                "fields on {:?}×{} and {:?}×{}",
                self.grid, self.n, other.grid, other.n
            )));
        }
        Ok(())
    }

    pub fn sum(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(out)
    }

    /// Cell average of `|·|²`.
    pub fn mean_square(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.grid.cells() as f64
    }

    /// One component as a scalar field.
    pub fn component(&self, comp: usize) -> Self {
        Self {
            grid: self.grid,
            n: 1,
            values: self.values.iter().skip(comp).step_by(self.n).copied().collect(),
        }
    }

    /// Field shifted by a lattice vector: `out(x) = self(x + by)`.
    pub fn shifted(&self, by: &[i64]) -> Self {
        let mut out = Self::zeros(self.grid, self.n);
        for cell in 0..self.grid.cells() {
            let src = self.grid.shifted(cell, by);
            out.at_mut(cell).copy_from_slice(self.at(src));
        }
        out
    }

    /// Text dump: header `d N n`, then one row of `n` values per cell.
    pub fn dump(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 24 + 16);
        let _ = writeln!(s, "{} {} {}", self.grid.d(), self.grid.n_side(), self.n);
        for chunk in self.values.chunks_exact(self.n) {
            let row: Vec<String> = chunk.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty dump".into()))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header token `{t}`"))))
            .collect::<Result<_>>()?;
        if h.len() != 3 {
            return Err(Error::Parse(format!("header must be `d N n`, got `{header}`")));
        }
        let grid = PeriodicGrid::new(h[0], h[1])?;
        let n = h[2];
        let mut values = Vec::with_capacity(grid.cells() * n);
        for (row, line) in lines.enumerate() {
            let before = values.len();
            for t in line.split_whitespace() {
                values.push(
                    t.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("row {row}: bad number `{t}`")))?,
                );
            }
            if values.len() - before != n {
                return Err(Error::Parse(format!("row {row}: expected {n} values")));
            }
        }
        Self::from_values(grid, n, values)
    }
}

/// Cached FFT plans for one grid.
#[derive(Clone)]
pub struct Spectral {
    grid: PeriodicGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: PeriodicGrid) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.n_side();
        Self {
            grid,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            k: (0..n).map(|i| grid.wavenumber(i)).collect(),
        }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.grid.n_side();
        let d = self.grid.d();
        let fft = if inverse { &self.inverse } else { &self.forward };
        // last axis: contiguous lines
        fft.process(data);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..d - 1 {
            let stride = n.pow((d - 1 - axis) as u32);
            let block = stride * n;
            for start in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    for (i, l) in line.iter_mut().enumerate() {
                        *l = data[start + off + i * stride];
                    }
                    fft.process(&mut line);
                    for (i, l) in line.iter().enumerate() {
                        data[start + off + i * stride] = *l;
                    }
                }
            }
        }
        if inverse {
            let s = 1.0 / self.grid.cells() as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Forward transform of each component: `out[comp][mode]`.
    pub fn forward(&self, field: &[f64], n: usize) -> Vec<Vec<Complex64>> {
        (0..n)
            .map(|c| {
                let mut buf: Vec<Complex64> = field
                    .iter()
                    .skip(c)
                    .step_by(n)
                    .map(|&v| Complex64::new(v, 0.0))
                    .collect();
                self.transform(&mut buf, false);
                buf
            })
            .collect()
    }

    /// Inverse transform, keeping real parts, into `out[cell * n + comp]`.
    pub fn inverse_into(&self, mut spec: Vec<Vec<Complex64>>, out: &mut [f64]) {
        let n = spec.len();
        for (c, buf) in spec.iter_mut().enumerate() {
            self.transform(buf, true);
            for (cell, v) in buf.iter().enumerate() {
                out[cell * n + c] = v.re;
            }
        }
    }

    /// Derivative wavevector of a mode.
    pub fn wavevector(&self, mode: usize) -> [f64; 3] {
        let c = self.grid.coords(mode);
        let mut k = [0.0; 3];
        for a in 0..self.grid.d() {
            k[a] = self.k[c[a]];
        }
        k
    }

    /// Applies the per-mode potential projector (`pot = true`) or its
    /// complement (`pot = false`) in Fourier space, zeroing the mean.
    pub fn project_modes(&self, spec: &mut [Vec<Complex64>], pot: bool) {
        let d = self.grid.d();
        let modes = self.grid.cells();
        for m in 0..modes {
            if m == 0 {
                for comp in spec.iter_mut() {
                    comp[0] = Complex64::new(0.0, 0.0);
                }
                continue;
            }
            let k = self.wavevector(m);
            let k2: f64 = k[..d].iter().map(|v| v * v).sum();
            if k2 == 0.0 {
                // Nyquist-only mode: component a is potential iff the mode varies along axis a
                let c = self.grid.coords(m);
                for (a, comp) in spec.iter_mut().enumerate() {
                    if (c[a] != 0) != pot {
                        comp[m] = Complex64::new(0.0, 0.0);
                    }
                }
                continue;
            }
            let mut kd = Complex64::new(0.0, 0.0);
            for a in 0..d {
                kd += spec[a][m] * k[a];
            }
            let s = kd / k2;
            for a in 0..d {
                let p = s * k[a];
                spec[a][m] = if pot { p } else { spec[a][m] - p };
            }
        }
    }

    /// Mean-zero potential (`pot = true`) or solenoidal part of a d-component field.
    pub fn project(&self, field: &[f64], pot: bool, out: &mut [f64]) {
        let d = self.grid.d();
        let mut spec = self.forward(field, d);
        self.project_modes(&mut spec, pot);
        self.inverse_into(spec, out);
    }

    /// Spectral gradient of a scalar field.
    pub fn gradient(&self, scalar: &[f64]) -> Vec<f64> {
        let d = self.grid.d();
        let s = self.forward(scalar, 1).pop().expect("one component");
        let spec: Vec<Vec<Complex64>> = (0..d)
            .map(|a| {
                s.iter()
                    .enumerate()
                    .map(|(m, v)| v * Complex64::new(0.0, self.wavevector(m)[a]))
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; scalar.len() * d];
        self.inverse_into(spec, &mut out);
        out
    }

    /// Spectral divergence of a d-component field.
    pub fn divergence(&self, field: &[f64]) -> Vec<f64> {
        let d = self.grid.d();
        let spec = self.forward(field, d);
        let mut acc = vec![Complex64::new(0.0, 0.0); self.grid.cells()];
        for (m, v) in acc.iter_mut().enumerate() {
            let k = self.wavevector(m);
            for a in 0..d {
                *v += spec[a][m] * Complex64::new(0.0, k[a]);
            }
        }
        let mut out = vec![0.0; self.grid.cells()];
        self.inverse_into(vec![acc], &mut out);
        out
    }

    /// Applies `(−Δ)⁻¹` to a scalar field on the mean-zero, nonzero-wavenumber modes.
    pub fn inverse_neg_laplacian(&self, scalar: &[f64]) -> Vec<f64> {
        let mut s = self.forward(scalar, 1);
        for (m, v) in s[0].iter_mut().enumerate() {
            let k = self.wavevector(m);
            let k2: f64 = k.iter().map(|x| x * x).sum();
            *v = if k2 == 0.0 { Complex64::new(0.0, 0.0) } else { *v / k2 };
        }
        let mut out = vec![0.0; scalar.len()];
        self.inverse_into(s, &mut out);
        out
    }
}

/// Result of [`helmholtz_split`]: `field = mean + pot + sol`.
#[derive(Debug, Clone)]
pub struct HelmholtzSplit {
    pub mean: Vec<f64>,
    pub pot: DiscreteField,
    pub sol: DiscreteField,
}

/// Splits a d-component field into its mean, mean-zero potential part and
/// mean-zero solenoidal part.
pub fn helmholtz_split(field: &DiscreteField) -> Result<HelmholtzSplit> {
    let grid = field.grid();
    if field.components() != grid.d() {
        return Err(Error::ShapeMismatch(format!(
            "Helmholtz split needs n = d = {}, got n = {}",
            grid.d(),
            field.components()
        )));
    }
    let spectral = Spectral::new(grid);
    split_with(&spectral, field)
}

pub fn split_with(spectral: &Spectral, field: &DiscreteField) -> Result<HelmholtzSplit> {
    let grid = field.grid();
    let mean = field.mean();
    let mut pot = DiscreteField::zeros(grid, grid.d());
    spectral.project(field.values(), true, pot.values_mut());
    let mut sol = field.clone();
    let neg_mean: Vec<f64> = mean.iter().map(|v| -v).collect();
    sol.add_constant(&neg_mean);
    for (s, p) in sol.values_mut().iter_mut().zip(pot.values()) {
        *s -= p;
    }
    Ok(HelmholtzSplit { mean, pot, sol })
}

/// Cell average of `u · v`.
pub fn pairing_mean(u: &DiscreteField, v: &DiscreteField) -> Result<f64> {
    u.check_same_shape(v)?;
    Ok(dot(u.values(), v.values()) / u.grid().cells() as f64)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub c_empirical: f64,
}

/// Compares `avg|ξ + u|^p` with `|ξ|^p + avg|u|^p` for the mean-zero part `u` of `field`.
pub fn mean_zero_norm_bound(field: &DiscreteField, xi: &[f64], p: f64) -> Result<NormBoundReport> {
    crate::error::check_dim(field.components(), xi.len())?;
    let u = field.without_mean();
    let cells = u.grid().cells() as f64;
    let mut lhs = 0.0;
    let mut avg_u = 0.0;
    for chunk in u.values().chunks_exact(u.components()) {
        let s: f64 = chunk.iter().zip(xi).map(|(a, b)| (a + b) * (a + b)).sum();
        lhs += s.sqrt().powf(p);
        avg_u += dot(chunk, chunk).sqrt().powf(p);
    }
    lhs /= cells;
    let rhs = dot(xi, xi).sqrt().powf(p) + avg_u / cells;
    let c_empirical = lhs / rhs;
    assert!(c_empirical > 0.0, "norm bound constant must be positive");
    Ok(NormBoundReport {
        lhs,
        rhs,
        c_empirical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: PeriodicGrid, n: usize, seed: u64) -> DiscreteField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..grid.cells() * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DiscreteField::from_values(grid, n, v).unwrap()
    }

    fn max_abs(f: &DiscreteField) -> f64 {
        f.values().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn constant_field_split() {
        let g = PeriodicGrid::new(2, 8).unwrap();
        let s = helmholtz_split(&DiscreteField::constant(g, &[3.0, -1.0])).unwrap();
        assert!((s.mean[0] - 3.0).abs() < 1e-15 && (s.mean[1] + 1.0).abs() < 1e-15);
        assert!(max_abs(&s.pot) < 1e-14 && max_abs(&s.sol) < 1e-14);
    }

    #[test]
    fn analytic_gradient_and_stream_fields() {
        let g = PeriodicGrid::new(2, 32).unwrap();
        let grad = DiscreteField::from_fn(g, 2, |x| vec![2.0 * PI * (2.0 * PI * x[0]).cos(), 0.0]);
        let s = helmholtz_split(&grad).unwrap();
        assert!(max_abs(&s.sol) < 1e-10);
        assert!(s.mean.iter().all(|v| v.abs() < 1e-12));

        // ψ = sin(2πx₁) sin(2πx₂), field = (−∂₂ψ, ∂₁ψ)
        let rot = DiscreteField::from_fn(g, 2, |x| {
            let (a, b) = (2.0 * PI * x[0], 2.0 * PI * x[1]);
            vec![-2.0 * PI * a.sin() * b.cos(), 2.0 * PI * a.cos() * b.sin()]
        });
        let s = helmholtz_split(&rot).unwrap();
        assert!(max_abs(&s.pot) < 1e-10);
    }

    #[test]
    fn split_properties_on_random_fields() {
        for (d, n) in [(1, 16), (2, 16), (3, 8)] {
            let g = PeriodicGrid::new(d, n).unwrap();
            let f = random_field(g, d, 3 + d as u64);
            let s = helmholtz_split(&f).unwrap();
            let mut rebuilt = s.pot.sum(&s.sol).unwrap();
            rebuilt.add_constant(&s.mean);
            for (a, b) in rebuilt.values().iter().zip(f.values()) {
                assert!((a - b).abs() <= 1e-12);
            }
            let pp = helmholtz_split(&s.pot).unwrap();
            assert!(max_abs(&pp.sol) <= 1e-12);
            let ss = helmholtz_split(&s.sol).unwrap();
            assert!(max_abs(&ss.pot) <= 1e-12);
            assert!(pairing_mean(&s.pot, &s.sol).unwrap().abs() <= 1e-12);
            let parseval = dot(&s.mean, &s.mean) + s.pot.mean_square() + s.sol.mean_square();
            assert!((f.mean_square() - parseval).abs() <= 1e-10);
        }
    }

    #[test]
    fn one_dimensional_solenoidal_fields_are_constant() {
        let g = PeriodicGrid::new(1, 16).unwrap();
        let s = helmholtz_split(&random_field(g, 1, 9)).unwrap();
        assert!(max_abs(&s.sol) <= 1e-13);
    }

    #[test]
    fn pairing_factorizes() {
        let g = PeriodicGrid::new(2, 16).unwrap();
        let a = helmholtz_split(&random_field(g, 2, 1)).unwrap();
        let b = helmholtz_split(&random_field(g, 2, 2)).unwrap();
        let mut u = a.sol.clone();
        u.add_constant(&[1.0, 0.0]);
        let mut v = b.pot.clone();
        v.add_constant(&[2.0, 2.0]);
        assert!((pairing_mean(&u, &v).unwrap() - 2.0).abs() <= 1e-10);
        let c = DiscreteField::constant(g, &[0.5, -1.5]);
        assert_eq!(pairing_mean(&c, &c).unwrap(), 2.5);
    }

    #[test]
    fn norm_bound_examples() {
        let g = PeriodicGrid::new(2, 16).unwrap();
        let r = mean_zero_norm_bound(&random_field(g, 2, 4), &[1.0, 0.0], 2.0).unwrap();
        assert!((r.c_empirical - 1.0).abs() < 1e-12);
        let r = mean_zero_norm_bound(&DiscreteField::zeros(g, 2), &[2.0, 0.0], 2.0).unwrap();
        assert_eq!((r.lhs, r.rhs), (4.0, 4.0));
        // amplitude a: avg(1 + a s)⁴ = 1 + 3a² + 3a⁴/8 and avg(a s)⁴ = 3a⁴/8
        let a: f64 = 0.5;
        let sine = DiscreteField::from_fn(g, 2, |x| vec![a * (2.0 * PI * x[0]).sin(), 0.0]);
        let r = mean_zero_norm_bound(&sine, &[1.0, 0.0], 4.0).unwrap();
        let m4 = 3.0 * a.powi(4) / 8.0;
        let expected = (1.0 + 3.0 * a * a + m4) / (1.0 + m4);
        assert!((r.c_empirical - expected).abs() < 1e-12);
        assert!(r.c_empirical > 0.0 && r.c_empirical <= 2.0);
    }

    #[test]
    fn dump_round_trip_is_lossless() {
        let g = PeriodicGrid::new(2, 4).unwrap();
        let f = random_field(g, 3, 5);
        let back = DiscreteField::parse_dump(&f.dump()).unwrap();
        assert_eq!(back, f);
        assert!(DiscreteField::parse_dump("2 4").is_err());
    }

    #[test]
    fn gradient_divergence_laplacian_agree() {
        let g = PeriodicGrid::new(2, 16).unwrap();
        let sp = Spectral::new(g);
        let phi = DiscreteField::from_fn(g, 1, |x| vec![(2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos()]);
        let grad = sp.gradient(phi.values());
        let lap = sp.divergence(&grad);
        let back = sp.inverse_neg_laplacian(&lap);
        for (a, b) in back.iter().zip(phi.values()) {
            assert!((a + b).abs() < 1e-12);
        }
    }
}
