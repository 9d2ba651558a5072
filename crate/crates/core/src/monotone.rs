//! Parametric families of (maximal) monotone operators on ℝⁿ.
//!
//! A [`MonotoneLaw`] is a possibly set-valued map α: ℝⁿ → 𝒫(ℝⁿ) carrying its
//! own certificates: the strict-monotonicity modulus θ and, when they exist,
//! the linear-growth and coercivity constants. Two-phase laws depend on a
//! phase index drawn from a random medium.

use crate::error::{check_dim, Error, Result};
use crate::vector::{dot, norm};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Tolerance for graph membership of closed-form points.
pub const CLOSED_FORM_TOL: f64 = 1e-10;
/// Tolerance for graph membership of iteratively computed points.
pub const ITERATIVE_TOL: f64 = 1e-8;

/// Linear-growth and coercivity constants:
/// `‖y‖ ≤ c (1 + ‖x‖)` and `⟨y, x⟩ ≥ a ‖x‖² − b` for every `y ∈ α(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Growth {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub enum LawKind {
    /// `α(x) = A x + b`.
    Affine {
        matrix: DMatrix<f64>,
        offset: DVector<f64>,
    },
    /// `α(x) = a |x|^{p−2} x`, the gradient of `a |x|^p / p`.
    Power { coeff: f64, exponent: f64 },
    /// The one-dimensional sign graph. Stored as `[0, 1]` at the origin unless
    /// `maximal`, in which case the image at 0 is `[−1, 1]`.
    SignGraph { maximal: bool },
    /// `β(J) = α(J) + h J × B + E_a`.
    Hall {
        core: Box<MonotoneLaw>,
        hall_coeff: f64,
        induction: [f64; 3],
        applied: Vec<f64>,
    },
    /// Law selected cell-wise by a phase index (0 or 1).
    TwoPhase { phases: Box<[MonotoneLaw; 2]> },
}

/// Image `α(x)` of a point.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageSet {
    Empty,
    Singleton(Vec<f64>),
    /// Closed interval per component.
    Interval { lo: Vec<f64>, hi: Vec<f64> },
    Samples(Vec<Vec<f64>>),
}

impl ImageSet {
    /// Euclidean distance from `y` to the set (`+∞` for the empty set).
    pub fn distance(&self, y: &[f64]) -> f64 {
        match self {
            ImageSet::Empty => f64::INFINITY,
            ImageSet::Singleton(s) => norm(&crate::vector::sub(y, s)),
            ImageSet::Interval { lo, hi } => y
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&v, (&l, &h))| {
                    let d = if v < l {
                        l - v
                    } else if v > h {
                        v - h
                    } else {
                        0.0
                    };
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            ImageSet::Samples(list) => list
                .iter()
                .map(|s| norm(&crate::vector::sub(y, s)))
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        self.distance(y) <= tol
    }

    /// One selection from the set: the point, the interval midpoint, or the first sample.
    pub fn selection(&self) -> Option<Vec<f64>> {
        match self {
            ImageSet::Empty => None,
            ImageSet::Singleton(s) => Some(s.clone()),
            ImageSet::Interval { lo, hi } => {
                Some(lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect())
            }
            ImageSet::Samples(list) => list.first().cloned(),
        }
    }

    pub fn is_multivalued(&self) -> bool {
        match self {
            ImageSet::Interval { lo, hi } => lo.iter().zip(hi).any(|(l, h)| h > l),
            ImageSet::Samples(list) => list.len() > 1,
            _ => false,
        }
    }

    fn shifted(self, shift: &[f64]) -> ImageSet {
        let mv = |v: Vec<f64>| v.iter().zip(shift).map(|(a, b)| a + b).collect();
        match self {
            ImageSet::Empty => ImageSet::Empty,
            ImageSet::Singleton(s) => ImageSet::Singleton(mv(s)),
            ImageSet::Interval { lo, hi } => ImageSet::Interval {
                lo: mv(lo),
                hi: mv(hi),
            },
            ImageSet::Samples(list) => ImageSet::Samples(list.into_iter().map(mv).collect()),
        }
    }
}

/// A sampled point `(x, y)` with `y ∈ α(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub multivalued: bool,
}

#[derive(Debug, Clone)]
pub struct MonotoneLaw {
    kind: LawKind,
    dim: usize,
    theta: f64,
    growth: Option<Growth>,
}

/// Matrix of `J ↦ J × B` restricted to ℝⁿ (n = 2 keeps the in-plane part).
fn cross_matrix(dim: usize, b: &[f64; 3]) -> Result<DMatrix<f64>> {
    match dim {
        3 => Ok(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, b[2], -b[1], -b[2], 0.0, b[0], b[1], -b[0], 0.0],
        )),
        2 => Ok(DMatrix::from_row_slice(2, 2, &[0.0, b[2], -b[2], 0.0])),
        _ => Err(Error::InvalidParameter(format!(
            "Hall term needs dimension 2 or 3, got {dim}"
        ))),
    }
}

fn sym_eigen_min(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

impl MonotoneLaw {
    pub fn affine(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || n == 0 || n > 4 {
            return Err(Error::InvalidParameter(format!(
                "affine matrix must be square with 1 ≤ n ≤ 4, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        check_dim(n, offset.len())?;
        let lambda = sym_eigen_min(&matrix);
        let theta = lambda.max(0.0);
        let opnorm = spectral_norm(&matrix);
        let bnorm = offset.norm();
        // ⟨Ax+b,x⟩ ≥ λ|x|² − |b||x| ≥ (λ/2)|x|² − |b|²/(2λ)
        let growth = (lambda > 0.0).then(|| Growth {
            a: 0.5 * lambda,
            b: bnorm * bnorm / (2.0 * lambda),
            c: opnorm.max(bnorm).max(f64::MIN_POSITIVE),
        });
        Ok(Self {
            kind: LawKind::Affine { matrix, offset },
            dim: n,
            theta,
            growth,
        })
    }

    /// Scalar affine law `α(x) = a x + b`.
    pub fn affine_scalar(a: f64, b: f64) -> Result<Self> {
        Self::affine(DMatrix::from_element(1, 1, a), DVector::from_element(1, b))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        Self::affine(
            DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
            DVector::zeros(n),
        )
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn power(dim: usize, coeff: f64, exponent: f64) -> Result<Self> {
        if !(coeff > 0.0) || !(exponent > 1.0) || dim == 0 || dim > 4 {
            return Err(Error::InvalidParameter(format!(
                "power law needs a > 0, p > 1, 1 ≤ n ≤ 4 (got a={coeff}, p={exponent}, n={dim})"
            )));
        }
        let p2 = (exponent - 2.0).abs() < 1e-15;
        Ok(Self {
            kind: LawKind::Power { coeff, exponent },
            dim,
            theta: if p2 { coeff } else { 0.0 },
            growth: p2.then_some(Growth {
                a: coeff,
                b: 0.0,
                c: coeff,
            }),
        })
    }

    pub fn sign_graph(maximal: bool) -> Self {
        Self {
            kind: LawKind::SignGraph { maximal },
            dim: 1,
            theta: 0.0,
            growth: None,
        }
    }

    pub fn hall(
        core: MonotoneLaw,
        hall_coeff: f64,
        induction: [f64; 3],
        applied: Vec<f64>,
    ) -> Result<Self> {
        let dim = core.dim;
        check_dim(dim, applied.len())?;
        let k = cross_matrix(dim, &induction)?;
        let skew = hall_coeff.abs() * spectral_norm(&k);
        let ea = norm(&applied);
        let growth = core.growth.map(|g| Growth {
            // ⟨E_a, x⟩ ≥ −|E_a||x| ≥ −(a/2)|x|² − |E_a|²/(2a)
            a: 0.5 * g.a,
            b: g.b + ea * ea / (2.0 * g.a),
            c: g.c + skew + ea,
        });
        Ok(Self {
            theta: core.theta,
            dim,
            growth,
            kind: LawKind::Hall {
                core: Box::new(core),
                hall_coeff,
                induction,
                applied,
            },
        })
    }

    pub fn two_phase(a: MonotoneLaw, b: MonotoneLaw) -> Result<Self> {
        check_dim(a.dim, b.dim)?;
        let growth = match (a.growth, b.growth) {
            (Some(ga), Some(gb)) => Some(Growth {
                a: ga.a.min(gb.a),
                b: ga.b.max(gb.b),
                c: ga.c.max(gb.c),
            }),
            _ => None,
        };
        Ok(Self {
            dim: a.dim,
            theta: a.theta.min(b.theta),
            growth,
            kind: LawKind::TwoPhase {
                phases: Box::new([a, b]),
            },
        })
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Strict-monotonicity modulus θ (0 means monotone only).
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn growth(&self) -> Option<Growth> {
        self.growth
    }

    pub fn is_two_phase(&self) -> bool {
        matches!(self.kind, LawKind::TwoPhase { .. })
    }

    /// Closes the sign graph to its maximal extension; other kinds are unchanged.
    pub fn maximalized(&self) -> MonotoneLaw {
        match &self.kind {
            LawKind::SignGraph { .. } => MonotoneLaw::sign_graph(true),
            LawKind::Hall {
                core,
                hall_coeff,
                induction,
                applied,
            } => MonotoneLaw {
                kind: LawKind::Hall {
                    core: Box::new(core.maximalized()),
                    hall_coeff: *hall_coeff,
                    induction: *induction,
                    applied: applied.clone(),
                },
                ..self.clone()
            },
            LawKind::TwoPhase { phases } => MonotoneLaw {
                kind: LawKind::TwoPhase {
                    phases: Box::new([phases[0].maximalized(), phases[1].maximalized()]),
                },
                ..self.clone()
            },
            _ => self.clone(),
        }
    }

    /// Whether every image is known to be maximal monotone.
    pub fn is_maximal(&self) -> bool {
        match &self.kind {
            LawKind::SignGraph { maximal } => *maximal,
            LawKind::Hall { core, .. } => core.is_maximal(),
            LawKind::TwoPhase { phases } => phases.iter().all(|p| p.is_maximal()),
            LawKind::Affine { matrix, .. } => sym_eigen_min(matrix) >= -1e-14,
            LawKind::Power { .. } => true,
        }
    }

    /// Resolves the phase-dependent law to the single-phase one.
    pub fn phase_law(&self, phase: Option<usize>) -> Result<&MonotoneLaw> {
        match &self.kind {
            LawKind::TwoPhase { phases } => {
                let i = phase.ok_or(Error::MissingPhase)?;
                phases.get(i).ok_or(Error::BadPhase(i))
            }
            _ => Ok(self),
        }
    }

    /// The full image `α(x)`.
    pub fn eval(&self, x: &[f64], phase: Option<usize>) -> Result<ImageSet> {
        check_dim(self.dim, x.len())?;
        match &self.kind {
            LawKind::Affine { matrix, offset } => {
                let y = matrix * DVector::from_column_slice(x) + offset;
                Ok(ImageSet::Singleton(y.as_slice().to_vec()))
            }
            LawKind::Power { coeff, exponent } => {
                let r = norm(x);
                let s = if r == 0.0 {
                    0.0
                } else {
                    coeff * r.powf(exponent - 2.0)
                };
                Ok(ImageSet::Singleton(x.iter().map(|v| s * v).collect()))
            }
            LawKind::SignGraph { maximal } => {
                let v = x[0];
                Ok(if v > 0.0 {
                    ImageSet::Singleton(vec![1.0])
                } else if v < 0.0 {
                    ImageSet::Singleton(vec![-1.0])
                } else {
                    ImageSet::Interval {
                        lo: vec![if *maximal { -1.0 } else { 0.0 }],
                        hi: vec![1.0],
                    }
                })
            }
            LawKind::Hall { core, .. } => {
                let base = core.eval(x, phase)?;
                let shift = self.hall_shift(x)?;
                Ok(base.shifted(&shift))
            }
            LawKind::TwoPhase { .. } => self.phase_law(phase)?.eval(x, phase),
        }
    }

    /// `h J × B + E_a` for Hall laws.
    fn hall_shift(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            LawKind::Hall {
                hall_coeff,
                induction,
                applied,
                ..
            } => {
                let k = cross_matrix(self.dim, induction)?;
                let kx = k * DVector::from_column_slice(x);
                Ok(kx
                    .iter()
                    .zip(applied)
                    .map(|(v, e)| hall_coeff * v + e)
                    .collect())
            }
            _ => Ok(vec![0.0; self.dim]),
        }
    }

    /// Single-valued evaluation into `out`; fails on multivalued points.
    pub fn apply_into(&self, x: &[f64], phase: Option<usize>, out: &mut [f64]) -> Result<()> {
        match &self.kind {
            LawKind::Affine { matrix, offset } => {
                let n = self.dim;
                for i in 0..n {
                    let mut s = offset[i];
                    for j in 0..n {
                        s += matrix[(i, j)] * x[j];
                    }
                    out[i] = s;
                }
                Ok(())
            }
            LawKind::Power { coeff, exponent } => {
                let r = norm(x);
                let s = if r == 0.0 {
                    0.0
                } else {
                    coeff * r.powf(exponent - 2.0)
                };
                for (o, v) in out.iter_mut().zip(x) {
                    *o = s * v;
                }
                Ok(())
            }
            LawKind::SignGraph { .. } => {
                if x[0] == 0.0 {
                    Err(Error::Unsupported(
                        "sign graph is multivalued at the origin".into(),
                    ))
                } else {
                    out[0] = x[0].signum();
                    Ok(())
                }
            }
            LawKind::Hall {
                core,
                hall_coeff,
                induction,
                applied,
            } => {
                core.apply_into(x, phase, out)?;
                let b = induction;
                match self.dim {
                    2 => {
                        out[0] += hall_coeff * b[2] * x[1] + applied[0];
                        out[1] += -hall_coeff * b[2] * x[0] + applied[1];
                    }
                    _ => {
                        out[0] += hall_coeff * (x[1] * b[2] - x[2] * b[1]) + applied[0];
                        out[1] += hall_coeff * (x[2] * b[0] - x[0] * b[2]) + applied[1];
                        out[2] += hall_coeff * (x[0] * b[1] - x[1] * b[0]) + applied[2];
                    }
                }
                Ok(())
            }
            LawKind::TwoPhase { phases } => {
                let i = phase.ok_or(Error::MissingPhase)?;
                phases
                    .get(i)
                    .ok_or(Error::BadPhase(i))?
                    .apply_into(x, phase, out)
            }
        }
    }

    pub fn apply(&self, x: &[f64], phase: Option<usize>) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        self.apply_into(x, phase, &mut out)?;
        Ok(out)
    }

    /// Jacobian of a single-valued smooth law.
    pub fn jacobian(&self, x: &[f64], phase: Option<usize>) -> Result<DMatrix<f64>> {
        let n = self.dim;
        match &self.kind {
            LawKind::Affine { matrix, .. } => Ok(matrix.clone()),
            LawKind::Power { coeff, exponent } => {
                let r = norm(x);
                if r == 0.0 {
                    return if *exponent >= 2.0 {
                        let s = if (*exponent - 2.0).abs() < 1e-15 {
                            *coeff
                        } else {
                            0.0
                        };
                        Ok(DMatrix::identity(n, n) * s)
                    } else {
                        Err(Error::Unsupported(
                            "power law with p < 2 is not differentiable at 0".into(),
                        ))
                    };
                }
                let s = coeff * r.powf(exponent - 2.0);
                let u = DVector::from_column_slice(x) / r;
                Ok((DMatrix::identity(n, n) + &u * u.transpose() * (exponent - 2.0)) * s)
            }
            LawKind::SignGraph { .. } => {
                Err(Error::Unsupported("sign graph has no Jacobian".into()))
            }
            LawKind::Hall {
                core,
                hall_coeff,
                induction,
                ..
            } => Ok(core.jacobian(x, phase)? + cross_matrix(n, induction)? * *hall_coeff),
            LawKind::TwoPhase { .. } => self.phase_law(phase)?.jacobian(x, phase),
        }
    }

    /// Convex potential Φ with `α = ∇Φ`, when the law is a gradient.
    pub fn potential(&self, x: &[f64], phase: Option<usize>) -> Option<f64> {
        match &self.kind {
            LawKind::Affine { matrix, offset } => {
                if !is_symmetric(matrix) {
                    return None;
                }
                let n = self.dim;
                let mut q = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        q += x[i] * matrix[(i, j)] * x[j];
                    }
                }
                Some(0.5 * q + dot(offset.as_slice(), x))
            }
            LawKind::Power { coeff, exponent } => Some(coeff * norm(x).powf(*exponent) / exponent),
            LawKind::TwoPhase { phases } => phases.get(phase?)?.potential(x, phase),
            _ => None,
        }
    }

    /// Whether the law is the gradient of a convex potential.
    pub fn is_potential(&self) -> bool {
        match &self.kind {
            LawKind::Affine { matrix, .. } => is_symmetric(matrix),
            LawKind::Power { .. } => true,
            LawKind::TwoPhase { phases } => phases.iter().all(|p| p.is_potential()),
            _ => false,
        }
    }

    /// Global Lipschitz constant, when one exists.
    pub fn lipschitz(&self) -> Option<f64> {
        match &self.kind {
            LawKind::Affine { matrix, .. } => Some(spectral_norm(matrix)),
            LawKind::Power { coeff, exponent } => {
                ((exponent - 2.0).abs() < 1e-15).then_some(*coeff)
            }
            LawKind::SignGraph { .. } => None,
            LawKind::Hall {
                core,
                hall_coeff,
                induction,
                ..
            } => {
                let k = cross_matrix(self.dim, induction).ok()?;
                Some(core.lipschitz()? + hall_coeff.abs() * spectral_norm(&k))
            }
            LawKind::TwoPhase { phases } => Some(phases[0].lipschitz()?.max(phases[1].lipschitz()?)),
        }
    }

    /// Inverse law in the sense of graphs, for the kinds where it has a closed form.
    pub fn inverse(&self) -> Result<MonotoneLaw> {
        match &self.kind {
            LawKind::Affine { matrix, offset } => {
                let inv = matrix
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Unsupported("singular affine law".into()))?;
                let off = -(&inv * offset);
                MonotoneLaw::affine(inv, off)
            }
            LawKind::Power { coeff, exponent } => {
                let q = exponent / (exponent - 1.0);
                MonotoneLaw::power(self.dim, coeff.powf(-1.0 / (exponent - 1.0)), q)
            }
            LawKind::Hall {
                core,
                hall_coeff,
                induction,
                applied,
            } => match core.kind() {
                LawKind::Affine { matrix, offset } => {
                    let k = cross_matrix(self.dim, induction)?;
                    let m = matrix + k * *hall_coeff;
                    let b = offset + DVector::from_column_slice(applied);
                    MonotoneLaw::affine(m, b)?.inverse()
                }
                _ => Err(Error::Unsupported(
                    "inverse of a nonlinear Hall law".into(),
                )),
            },
            LawKind::TwoPhase { phases } => {
                MonotoneLaw::two_phase(phases[0].inverse()?, phases[1].inverse()?)
            }
            LawKind::SignGraph { .. } => Err(Error::Unsupported(
                "inverse of the sign graph is not single-branch".into(),
            )),
        }
    }

    /// Membership residual of `(x, y)` in the graph.
    pub fn membership_residual(&self, x: &[f64], y: &[f64], phase: Option<usize>) -> Result<f64> {
        check_dim(self.dim, y.len())?;
        Ok(self.eval(x, phase)?.distance(y))
    }

    /// The unique `x` with `z ∈ x + λ α(x)`.
    pub fn resolvent(&self, z: &[f64], lambda: f64, phase: Option<usize>) -> Result<Vec<f64>> {
        check_dim(self.dim, z.len())?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "resolvent needs λ > 0, got {lambda}"
            )));
        }
        let n = self.dim;
        match &self.kind {
            LawKind::Affine { matrix, offset } => {
                let m = DMatrix::identity(n, n) + matrix * lambda;
                let rhs = DVector::from_column_slice(z) - offset * lambda;
                m.lu()
                    .solve(&rhs)
                    .map(|v| v.as_slice().to_vec())
                    .ok_or_else(|| Error::NotMaximal("I + λA is singular".into()))
            }
            LawKind::Power { coeff, exponent } => {
                // x = t z/|z| with t + λ a t^{p−1} = |z|
                let r = norm(z);
                if r == 0.0 {
                    return Ok(vec![0.0; n]);
                }
                let t = solve_radial(r, lambda * coeff, *exponent)?;
                Ok(z.iter().map(|v| v * t / r).collect())
            }
            LawKind::SignGraph { maximal } => {
                let v = z[0];
                if v > lambda {
                    Ok(vec![v - lambda])
                } else if v < -lambda {
                    Ok(vec![v + lambda])
                } else if v >= 0.0 || *maximal {
                    Ok(vec![0.0])
                } else {
                    Err(Error::NotMaximal(format!(
                        "z = {v} lies outside the range of I + λα for the non-maximal sign graph"
                    )))
                }
            }
            LawKind::Hall { core, .. } if matches!(core.kind, LawKind::Affine { .. }) => {
                let jac = self.jacobian(z, phase)?;
                let shift = self.apply(&vec![0.0; n], phase)?;
                let m = DMatrix::identity(n, n) + jac * lambda;
                let rhs = DVector::from_column_slice(z) - DVector::from_vec(shift) * lambda;
                m.lu()
                    .solve(&rhs)
                    .map(|v| v.as_slice().to_vec())
                    .ok_or_else(|| Error::NotMaximal("I + λβ is singular".into()))
            }
            LawKind::Hall { .. } => self.newton_resolvent(z, lambda, phase),
            LawKind::TwoPhase { .. } => self.phase_law(phase)?.resolvent(z, lambda, phase),
        }
    }

    fn newton_resolvent(&self, z: &[f64], lambda: f64, phase: Option<usize>) -> Result<Vec<f64>> {
        let n = self.dim;
        let mut x = z.to_vec();
        let residual = |x: &[f64]| -> Result<Vec<f64>> {
            let y = self.apply(x, phase)?;
            Ok((0..n).map(|i| x[i] + lambda * y[i] - z[i]).collect())
        };
        let mut r = residual(&x)?;
        let scale = 1.0 + norm(z);
        for it in 0..200 {
            let rn = norm(&r);
            if rn <= 1e-13 * scale {
                return Ok(x);
            }
            let jac = DMatrix::identity(n, n) + self.jacobian(&x, phase)? * lambda;
            let step = jac
                .lu()
                .solve(&DVector::from_column_slice(&r))
                .ok_or(Error::NonConvergence {
                    what: "resolvent Newton",
                    iterations: it,
                    last: rn,
                })?;
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = (0..n).map(|i| x[i] - t * step[i]).collect();
                let rt = residual(&trial)?;
                if norm(&rt) < rn || t < 1e-8 {
                    x = trial;
                    r = rt;
                    break;
                }
                t *= 0.5;
            }
        }
        Err(Error::NonConvergence {
            what: "resolvent Newton",
            iterations: 200,
            last: norm(&r),
        })
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= 1e-14 * (1.0 + m[(i, j)].abs())))
}

/// Solve `t + k t^{p−1} = r` for `t ∈ [0, r]` by safeguarded Newton.
fn solve_radial(r: f64, k: f64, p: f64) -> Result<f64> {
    let g = |t: f64| t + k * t.powf(p - 1.0) - r;
    let (mut lo, mut hi) = (0.0, r);
    let mut t = 0.5 * r;
    for _ in 0..200 {
        let gt = g(t);
        if gt.abs() <= 1e-15 * r.max(1.0) {
            return Ok(t);
        }
        if gt > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let dg = 1.0 + k * (p - 1.0) * t.powf(p - 2.0);
        let mut next = t - gt / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-16 * r.max(1.0) {
            return Ok(next);
        }
        t = next;
    }
    if hi - lo <= 1e-12 * r.max(1.0) {
        Ok(0.5 * (lo + hi))
    } else {
        Err(Error::NonConvergence {
            what: "radial resolvent",
            iterations: 200,
            last: g(t),
        })
    }
}

/// Result of [`monotonicity_probe`].
#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    /// Minimum of `⟨Δy, Δx⟩ / ‖Δx‖²` over the sampled pairs.
    pub min_quotient: f64,
    /// Pairs `(i, j)` with `⟨Δy, Δx⟩ < −1e−12`.
    pub violations: Vec<(usize, usize)>,
    pub pairs: usize,
}

/// Draws graph points of `law` (the origin first, then uniform in `[−2, 2]ⁿ`).
pub fn sample_graph(law: &MonotoneLaw, count: usize, seed: u64) -> Result<Vec<(GraphPoint, Option<usize>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = law.dim();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let x: Vec<f64> = if i == 0 {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
        };
        let phase = law.is_two_phase().then(|| rng.gen_range(0..2usize));
        let img = law.eval(&x, phase)?;
        let y = match &img {
            ImageSet::Interval { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| if h > l { rng.gen_range(*l..=*h) } else { *l })
                .collect(),
            other => other.selection().ok_or_else(|| {
                Error::Unsupported("law has an empty image at a sampled point".into())
            })?,
        };
        out.push((
            GraphPoint {
                x,
                y,
                multivalued: img.is_multivalued(),
            },
            phase,
        ));
    }
    Ok(out)
}

/// Monotonicity quotient over graph point pairs (same phase only).
pub fn probe_points(points: &[(GraphPoint, Option<usize>)]) -> ProbeReport {
    let mut min_quotient = f64::INFINITY;
    let mut violations = Vec::new();
    let mut pairs = 0;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let (pi, ph_i) = &points[i];
            let (pj, ph_j) = &points[j];
            if ph_i != ph_j {
                continue;
            }
            let dx: Vec<f64> = pj.x.iter().zip(&pi.x).map(|(a, b)| a - b).collect();
            let dy: Vec<f64> = pj.y.iter().zip(&pi.y).map(|(a, b)| a - b).collect();
            let pairing = dot(&dy, &dx);
            pairs += 1;
            if pairing < -1e-12 {
                violations.push((i, j));
            }
            let d2 = dot(&dx, &dx);
            if d2 > 1e-24 {
                min_quotient = min_quotient.min(pairing / d2);
            }
        }
    }
    ProbeReport {
        min_quotient,
        violations,
        pairs,
    }
}

/// Samples graph points and reports the worst monotonicity quotient.
///
/// Never fails on a non-monotone law: violations are listed in the report.
pub fn monotonicity_probe(law: &MonotoneLaw, sample_count: usize, seed: u64) -> Result<ProbeReport> {
    if sample_count < 2 {
        return Err(Error::InvalidParameter("probe needs at least 2 samples".into()));
    }
    Ok(probe_points(&sample_graph(law, sample_count, seed)?))
}
