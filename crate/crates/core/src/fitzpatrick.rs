//! Representative functions `f(x, y) ≥ ⟨y, x⟩` of monotone laws.
//!
//! Closed forms cover affine laws (the Fitzpatrick function of `Ax + b`),
//! the sign graph and the sum `φ + φ*` of a convex potential and its
//! conjugate. Arbitrary laws fall back to a sampled supremum, which is a
//! lower bound of the Fitzpatrick function.

use crate::error::{check_dim, Error, Result};
use crate::monotone::{probe_points, sample_graph, GraphPoint, ImageSet, LawKind, MonotoneLaw};
use crate::vector::{dot, norm, ExtReal};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default tolerance on the representation gap for graph recovery.
pub const RECOVERY_GAP_TOL: f64 = 1e-8;
/// Negative gaps above this are rounding and are clamped to zero.
pub const CLASS_TOL: f64 = 1e-12;
/// Half-width of the box from which generic graph samples are drawn.
pub const GENERIC_SAMPLE_RADIUS: f64 = 2.0;

/// Coercivity certificate `f(x, y) − t⟨x, y⟩ ≥ c (|x|^p + |y|^q) + k`.
///
/// With `t = 0` this is the plain bound. The Fitzpatrick function of a linear
/// law vanishes along `y = −x` scaled, so for it the certificate is stated for
/// `f − ½⟨x, y⟩`; the pairing term is constant over the cell-problem
/// constraint set, so either form bounds the cell objective from below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coercivity {
    pub c: f64,
    pub k: f64,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub enum RepKind {
    /// Fitzpatrick function of `α(x) = Ax + b` with `sym(A)` positive definite.
    ClosedAffine {
        matrix: DMatrix<f64>,
        offset: DVector<f64>,
        sym_inv: DMatrix<f64>,
    },
    /// `|x|` if `|y| ≤ 1`, `+∞` otherwise.
    ClosedSign,
    /// `‖y + a x‖² / (4a)`.
    ClosedIdentityScaled { a: f64 },
    /// `φ(x) + φ*(y)` for a law `α = ∇φ` with an explicit inverse.
    ConjugateSum {
        law: MonotoneLaw,
        inverse: MonotoneLaw,
    },
    /// `sup_i ⟨y, x_i⟩ + ⟨y_i, x⟩ − ⟨y_i, x_i⟩` over sampled graph points.
    GenericSup {
        law: MonotoneLaw,
        samples: Vec<GraphPoint>,
        seed: u64,
    },
    TwoPhase { phases: Box<[RepFunction; 2]> },
}

/// Which representative to build from a law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum RepChoice {
    Fitzpatrick,
    ConjugateSum,
    GenericSup { sample_size: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct RepFunction {
    kind: RepKind,
    dim: usize,
    p: f64,
    q: f64,
    coercivity: Option<Coercivity>,
}

/// Result of [`RepFunction::check_representative`].
#[derive(Debug, Clone, Serialize)]
pub struct RepCheckReport {
    pub max_graph_gap: f64,
    pub off_graph_min_gap: f64,
    pub monotone_recovered: bool,
}

fn quadratic_certificate(dim: usize, g: impl Fn(&[f64], &[f64]) -> f64, hess: &DMatrix<f64>) -> Coercivity {
    // g(z) = ½ zᵀHz + lᵀz + g(0)  ⇒  g(z) ≥ (λ/4)|z|² − |l|²/λ + g(0)
    let lambda = hess.clone().symmetric_eigenvalues().min();
    let zero = vec![0.0; dim];
    let g0 = g(&zero, &zero);
    let mut l2 = 0.0;
    for i in 0..2 * dim {
        let mut z = vec![0.0; 2 * dim];
        z[i] = 1.0;
        let li = g(&z[..dim], &z[dim..]) - 0.5 * hess[(i, i)] - g0;
        l2 += li * li;
    }
    Coercivity {
        c: 0.25 * lambda,
        k: g0 - l2 / lambda,
        t: 0.5,
    }
}

impl RepFunction {
    /// Fitzpatrick function of `α(x) = Ax + b`.
    pub fn closed_affine(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::InvalidParameter("affine matrix must be square".into()));
        }
        check_dim(n, offset.len())?;
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let sym_inv = sym
            .clone()
            .cholesky()
            .ok_or_else(|| {
                Error::InvalidParameter("closed affine form needs sym(A) positive definite".into())
            })?
            .inverse();
        let skew = (&matrix - matrix.transpose()) * 0.5;
        // f − ½⟨x,y⟩ = ¼ rᵀS⁻¹r + ¼ xᵀSx + ½ b·x,  r = y − b − Kx
        let mut hess = DMatrix::zeros(2 * n, 2 * n);
        let top_left = skew.transpose() * &sym_inv * &skew * 0.5 + &sym * 0.5;
        let off = -(skew.transpose() * &sym_inv) * 0.5;
        hess.view_mut((0, 0), (n, n)).copy_from(&top_left);
        hess.view_mut((0, n), (n, n)).copy_from(&off);
        hess.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
        hess.view_mut((n, n), (n, n)).copy_from(&(&sym_inv * 0.5));
        let mut rep = Self {
            kind: RepKind::ClosedAffine {
                matrix,
                offset,
                sym_inv,
            },
            dim: n,
            p: 2.0,
            q: 2.0,
            coercivity: None,
        };
        let cert = quadratic_certificate(
            n,
            |x, y| rep.eval_finite(x, y) - 0.5 * dot(x, y),
            &hess,
        );
        rep.coercivity = Some(cert);
        Ok(rep)
    }

    pub fn closed_affine_scalar(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::InvalidParameter(format!("closed affine needs a > 0, got {a}")));
        }
        Self::closed_affine(DMatrix::from_element(1, 1, a), DVector::from_element(1, b))
    }

    pub fn closed_sign() -> Self {
        Self {
            kind: RepKind::ClosedSign,
            dim: 1,
            p: 2.0,
            q: 2.0,
            coercivity: None,
        }
    }

    pub fn closed_identity_scaled(dim: usize, a: f64) -> Result<Self> {
        if !(a > 0.0) || dim == 0 || dim > 4 {
            return Err(Error::InvalidParameter(format!(
                "identity-scaled form needs a > 0 and 1 ≤ n ≤ 4 (got a={a}, n={dim})"
            )));
        }
        // f − ½⟨x,y⟩ = (a/4)|x|² + |y|²/(4a)
        Ok(Self {
            kind: RepKind::ClosedIdentityScaled { a },
            dim,
            p: 2.0,
            q: 2.0,
            coercivity: Some(Coercivity {
                c: 0.25 * a.min(1.0 / a),
                k: 0.0,
                t: 0.5,
            }),
        })
    }

    /// `φ + φ*` for an affine law with symmetric positive definite matrix or a power law.
    pub fn conjugate_sum(law: &MonotoneLaw) -> Result<Self> {
        let (p, q, coercivity) = match law.kind() {
            LawKind::Power { coeff, exponent } => {
                let q = exponent / (exponent - 1.0);
                let c = (coeff / exponent).min(coeff.powf(1.0 - q) / q);
                (*exponent, q, Coercivity { c, k: 0.0, t: 0.0 })
            }
            LawKind::Affine { matrix, offset } if law.is_potential() && law.theta() > 0.0 => {
                let eig = matrix.clone().symmetric_eigenvalues();
                let (lo, hi) = (eig.min(), eig.max());
                let b2 = offset.norm_squared();
                (
                    2.0,
                    2.0,
                    Coercivity {
                        c: 0.25 * lo.min(1.0 / hi),
                        k: -b2 / lo - b2 / (2.0 * hi),
                        t: 0.0,
                    },
                )
            }
            LawKind::TwoPhase { .. } => {
                let a = Self::conjugate_sum(law.phase_law(Some(0))?)?;
                let b = Self::conjugate_sum(law.phase_law(Some(1))?)?;
                return Self::two_phase(a, b);
            }
            _ => {
                return Err(Error::Unsupported(
                    "φ + φ* needs a power law or a symmetric positive definite affine law".into(),
                ))
            }
        };
        Ok(Self {
            kind: RepKind::ConjugateSum {
                law: law.clone(),
                inverse: law.inverse()?,
            },
            dim: law.dim(),
            p,
            q,
            coercivity: Some(coercivity),
        })
    }

    /// Sampled-supremum lower bound of the Fitzpatrick function.
    ///
    /// Samples for size `m` are the first `m` samples for any larger size, so
    /// growing the sample never lowers the value.
    pub fn generic_sup(law: &MonotoneLaw, sample_size: usize, seed: u64) -> Result<Self> {
        if law.is_two_phase() {
            let a = Self::generic_sup(law.phase_law(Some(0))?, sample_size, seed)?;
            let b = Self::generic_sup(law.phase_law(Some(1))?, sample_size, seed.wrapping_add(1))?;
            return Self::two_phase(a, b);
        }
        if sample_size == 0 {
            return Err(Error::InvalidParameter("generic sup needs a nonempty graph sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = law.dim();
        let r = GENERIC_SAMPLE_RADIUS;
        let mut samples = Vec::with_capacity(sample_size);
        for i in 0..sample_size {
            let x: Vec<f64> = if i == 0 {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.gen_range(-r..r)).collect()
            };
            let img = law.eval(&x, None)?;
            let multivalued = img.is_multivalued();
            let y = match img {
                ImageSet::Interval { lo, hi } => lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h)| if h > l { rng.gen_range(*l..=*h) } else { *l })
                    .collect(),
                other => other
                    .selection()
                    .ok_or_else(|| Error::Unsupported("empty image in graph sample".into()))?,
            };
            samples.push(GraphPoint { x, y, multivalued });
        }
        Ok(Self {
            kind: RepKind::GenericSup {
                law: law.clone(),
                samples,
                seed,
            },
            dim: n,
            p: 2.0,
            q: 2.0,
            coercivity: None,
        })
    }

    pub fn two_phase(a: RepFunction, b: RepFunction) -> Result<Self> {
        check_dim(a.dim, b.dim)?;
        let coercivity = match (a.coercivity, b.coercivity) {
            (Some(ca), Some(cb)) if ca.t == cb.t && a.p == b.p => Some(Coercivity {
                c: ca.c.min(cb.c),
                k: ca.k.min(cb.k),
                t: ca.t,
            }),
            _ => None,
        };
        Ok(Self {
            dim: a.dim,
            p: a.p,
            q: a.q,
            coercivity,
            kind: RepKind::TwoPhase {
                phases: Box::new([a, b]),
            },
        })
    }

    /// Builds the chosen representative of `law`.
    pub fn from_law(law: &MonotoneLaw, choice: RepChoice) -> Result<Self> {
        match choice {
            RepChoice::ConjugateSum => Self::conjugate_sum(law),
            RepChoice::GenericSup { sample_size, seed } => Self::generic_sup(law, sample_size, seed),
            RepChoice::Fitzpatrick => match law.kind() {
                LawKind::Affine { matrix, offset } => {
                    Self::closed_affine(matrix.clone(), offset.clone())
                }
                LawKind::SignGraph { .. } => Ok(Self::closed_sign()),
                LawKind::Hall { core, .. } if matches!(core.kind(), LawKind::Affine { .. }) => {
                    let n = law.dim();
                    let zero = vec![0.0; n];
                    let offset = DVector::from_vec(law.apply(&zero, None)?);
                    let matrix = law.jacobian(&zero, None)?;
                    Self::closed_affine(matrix, offset)
                }
                LawKind::TwoPhase { phases } => Self::two_phase(
                    Self::from_law(&phases[0], choice)?,
                    Self::from_law(&phases[1], choice)?,
                ),
                _ => Err(Error::Unsupported(
                    "no closed-form Fitzpatrick function for this law; use the sampled supremum".into(),
                )),
            },
        }
    }

    pub fn kind(&self) -> &RepKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn exponents(&self) -> (f64, f64) {
        (self.p, self.q)
    }

    pub fn coercivity(&self) -> Option<Coercivity> {
        self.coercivity
    }

    pub fn is_two_phase(&self) -> bool {
        matches!(self.kind, RepKind::TwoPhase { .. })
    }

    /// Whether the function is finite and differentiable everywhere.
    pub fn is_smooth(&self) -> bool {
        match &self.kind {
            RepKind::ClosedAffine { .. }
            | RepKind::ClosedIdentityScaled { .. }
            | RepKind::ConjugateSum { .. } => true,
            RepKind::ClosedSign | RepKind::GenericSup { .. } => false,
            RepKind::TwoPhase { phases } => phases.iter().all(|p| p.is_smooth()),
        }
    }

    pub fn phase_rep(&self, phase: Option<usize>) -> Result<&RepFunction> {
        match &self.kind {
            RepKind::TwoPhase { phases } => {
                let i = phase.ok_or(Error::MissingPhase)?;
                phases.get(i).ok_or(Error::BadPhase(i))
            }
            _ => Ok(self),
        }
    }

    fn eval_finite(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.eval_unchecked(x, y, None) {
            Ok(ExtReal::Finite(v)) => v,
            _ => f64::INFINITY,
        }
    }

    /// `f(x, y)` on ℝ ∪ {+∞}.
    pub fn eval(&self, x: &[f64], y: &[f64], phase: Option<usize>) -> Result<ExtReal> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, y.len())?;
        self.eval_unchecked(x, y, phase)
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64], phase: Option<usize>) -> Result<ExtReal> {
        let n = self.dim;
        Ok(match &self.kind {
            RepKind::ClosedAffine {
                matrix,
                offset,
                sym_inv,
            } => {
                let mut w = [0.0; 4];
                for i in 0..n {
                    let mut s = y[i] - offset[i];
                    for j in 0..n {
                        s += matrix[(j, i)] * x[j];
                    }
                    w[i] = s;
                }
                let mut q = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        q += w[i] * sym_inv[(i, j)] * w[j];
                    }
                }
                ExtReal::Finite(0.25 * q + dot(offset.as_slice(), x))
            }
            RepKind::ClosedSign => {
                if y[0].abs() <= 1.0 {
                    ExtReal::Finite(x[0].abs())
                } else {
                    ExtReal::PosInf
                }
            }
            RepKind::ClosedIdentityScaled { a } => {
                let s: f64 = (0..n).map(|i| (y[i] + a * x[i]).powi(2)).sum();
                ExtReal::Finite(s / (4.0 * a))
            }
            RepKind::ConjugateSum { law, inverse } => {
                let phi = law.potential(x, None).ok_or_else(|| {
                    Error::Unsupported("law has no potential".into())
                })?;
                let xs = inverse.apply(y, None)?;
                let conj = dot(y, &xs) - law.potential(&xs, None).unwrap_or(f64::NAN);
                ExtReal::Finite(phi + conj)
            }
            RepKind::GenericSup { samples, .. } => ExtReal::Finite(
                samples
                    .iter()
                    .map(|s| dot(y, &s.x) + dot(&s.y, x) - dot(&s.y, &s.x))
                    .fold(f64::NEG_INFINITY, f64::max),
            ),
            RepKind::TwoPhase { .. } => return self.phase_rep(phase)?.eval_unchecked(x, y, phase),
        })
    }

    /// Value and gradient of a smooth representative; for the sampled
    /// supremum, a subgradient from the active sample.
    pub fn value_grad(
        &self,
        x: &[f64],
        y: &[f64],
        phase: Option<usize>,
        gx: &mut [f64],
        gy: &mut [f64],
    ) -> Result<f64> {
        let n = self.dim;
        match &self.kind {
            RepKind::ClosedAffine {
                matrix,
                offset,
                sym_inv,
            } => {
                let mut w = [0.0; 4];
                for i in 0..n {
                    let mut s = y[i] - offset[i];
                    for j in 0..n {
                        s += matrix[(j, i)] * x[j];
                    }
                    w[i] = s;
                }
                let mut z = [0.0; 4];
                for i in 0..n {
                    z[i] = (0..n).map(|j| sym_inv[(i, j)] * w[j]).sum();
                }
                let mut val = 0.0;
                for i in 0..n {
                    val += 0.25 * w[i] * z[i] + offset[i] * x[i];
                    gy[i] = 0.5 * z[i];
                    gx[i] = offset[i] + 0.5 * (0..n).map(|j| matrix[(i, j)] * z[j]).sum::<f64>();
                }
                Ok(val)
            }
            RepKind::ClosedIdentityScaled { a } => {
                let mut val = 0.0;
                for i in 0..n {
                    let s = y[i] + a * x[i];
                    val += s * s;
                    gy[i] = s / (2.0 * a);
                    gx[i] = 0.5 * s;
                }
                Ok(val / (4.0 * a))
            }
            RepKind::ConjugateSum { law, inverse } => {
                law.apply_into(x, None, gx)?;
                inverse.apply_into(y, None, gy)?;
                let phi = law.potential(x, None).unwrap_or(f64::NAN);
                let conj = dot(y, gy) - law.potential(gy, None).unwrap_or(f64::NAN);
                Ok(phi + conj)
            }
            RepKind::GenericSup { samples, .. } => {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for (i, s) in samples.iter().enumerate() {
                    let v = dot(y, &s.x) + dot(&s.y, x) - dot(&s.y, &s.x);
                    if v > best {
                        best = v;
                        arg = i;
                    }
                }
                gx.copy_from_slice(&samples[arg].y);
                gy.copy_from_slice(&samples[arg].x);
                Ok(best)
            }
            RepKind::ClosedSign => Err(Error::Unsupported(
                "the sign representative is not differentiable".into(),
            )),
            RepKind::TwoPhase { .. } => self.phase_rep(phase)?.value_grad(x, y, phase, gx, gy),
        }
    }

    /// `f(x, y) − ⟨y, x⟩`, clamped at 0 within [`CLASS_TOL`].
    pub fn representation_gap(&self, x: &[f64], y: &[f64], phase: Option<usize>) -> Result<ExtReal> {
        match self.eval(x, y, phase)? {
            ExtReal::PosInf => Ok(ExtReal::PosInf),
            ExtReal::Finite(v) => {
                let gap = v - dot(x, y);
                if gap < -CLASS_TOL * (1.0 + v.abs()) {
                    Err(Error::ClassViolation { gap })
                } else {
                    Ok(ExtReal::Finite(gap.max(0.0)))
                }
            }
        }
    }

    /// The set of `y` with `f(x, y) − ⟨y, x⟩ ≤ RECOVERY_GAP_TOL`.
    pub fn recover_graph(&self, x: &[f64], phase: Option<usize>) -> Result<ImageSet> {
        self.recover_graph_with_tol(x, phase, RECOVERY_GAP_TOL)
    }

    pub fn recover_graph_with_tol(&self, x: &[f64], phase: Option<usize>, gap_tol: f64) -> Result<ImageSet> {
        check_dim(self.dim, x.len())?;
        let candidate = match &self.kind {
            RepKind::ClosedAffine { matrix, offset, .. } => {
                // ∂_y [f − ⟨y,x⟩] = ½S⁻¹w − x = 0  ⇔  y = Ax + b
                let y = matrix * DVector::from_column_slice(x) + offset;
                y.as_slice().to_vec()
            }
            RepKind::ClosedIdentityScaled { a } => x.iter().map(|v| a * v).collect(),
            RepKind::ConjugateSum { law, .. } => law.apply(x, None)?,
            RepKind::ClosedSign => {
                // min over |y| ≤ 1 of |x| − xy
                return Ok(if x[0] > 0.0 {
                    ImageSet::Singleton(vec![1.0])
                } else if x[0] < 0.0 {
                    ImageSet::Singleton(vec![-1.0])
                } else {
                    ImageSet::Interval {
                        lo: vec![-1.0],
                        hi: vec![1.0],
                    }
                });
            }
            RepKind::GenericSup { samples, .. } => self.sup_recover(x, samples)?,
            RepKind::TwoPhase { .. } => {
                return self.phase_rep(phase)?.recover_graph_with_tol(x, phase, gap_tol)
            }
        };
        let gap = match self.eval(x, &candidate, phase)? {
            ExtReal::Finite(v) => v - dot(x, &candidate),
            ExtReal::PosInf => f64::INFINITY,
        };
        Ok(if gap <= gap_tol {
            ImageSet::Singleton(candidate)
        } else {
            ImageSet::Empty
        })
    }

    /// Subgradient descent on the piecewise-linear gap `y ↦ f(x, y) − ⟨y, x⟩`.
    fn sup_recover(&self, x: &[f64], samples: &[GraphPoint]) -> Result<Vec<f64>> {
        let n = self.dim;
        let nearest = samples
            .iter()
            .min_by(|a, b| {
                norm(&crate::vector::sub(&a.x, x))
                    .total_cmp(&norm(&crate::vector::sub(&b.x, x)))
            })
            .expect("nonempty sample");
        let gap = |y: &[f64]| -> (f64, usize) {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, s) in samples.iter().enumerate() {
                let v = dot(y, &s.x) + dot(&s.y, x) - dot(&s.y, &s.x);
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            (best - dot(y, x), arg)
        };
        let mut y = nearest.y.clone();
        let (mut best_val, _) = gap(&y);
        let mut best_y = y.clone();
        let max_iter = 4000;
        for it in 0..max_iter {
            let (val, arg) = gap(&y);
            if val < best_val {
                best_val = val;
                best_y = y.clone();
            }
            if val <= 0.0 {
                break;
            }
            let g: Vec<f64> = (0..n).map(|i| samples[arg].x[i] - x[i]).collect();
            let gn = norm(&g);
            if gn == 0.0 {
                break;
            }
            let step = val.max(1e-3 / (1.0 + it as f64)) / (gn * gn);
            for i in 0..n {
                y[i] -= step * g[i];
            }
        }
        Ok(best_y)
    }

    /// Gap on sampled graph points, off-graph points, and monotonicity of the recovered graph.
    pub fn check_representative(&self, law: &MonotoneLaw, sample_count: usize, seed: u64) -> Result<RepCheckReport> {
        check_dim(self.dim, law.dim())?;
        let points = sample_graph(law, sample_count.max(2), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut max_graph_gap: f64 = 0.0;
        let mut off_graph_min_gap = f64::INFINITY;
        let mut recovered = Vec::new();
        for (pt, phase) in &points {
            let g = match self.eval(&pt.x, &pt.y, *phase)? {
                ExtReal::Finite(v) => v - dot(&pt.x, &pt.y),
                ExtReal::PosInf => f64::INFINITY,
            };
            max_graph_gap = max_graph_gap.max(g.abs());

            let r = rng.gen_range(0.1..1.0);
            let dir: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dn = norm(&dir).max(1e-12);
            let y_off: Vec<f64> = pt.y.iter().zip(&dir).map(|(y, d)| y + r * d / dn).collect();
            if law.membership_residual(&pt.x, &y_off, *phase)? >= 0.05 {
                let g = match self.eval(&pt.x, &y_off, *phase)? {
                    ExtReal::Finite(v) => v - dot(&pt.x, &y_off),
                    ExtReal::PosInf => f64::INFINITY,
                };
                off_graph_min_gap = off_graph_min_gap.min(g);
            }

            match self.recover_graph(&pt.x, *phase)? {
                ImageSet::Singleton(y) => recovered.push((
                    GraphPoint {
                        x: pt.x.clone(),
                        y,
                        multivalued: false,
                    },
                    *phase,
                )),
                ImageSet::Interval { lo, hi } => {
                    for y in [lo, hi] {
                        recovered.push((
                            GraphPoint {
                                x: pt.x.clone(),
                                y,
                                multivalued: true,
                            },
                            *phase,
                        ));
                    }
                }
                ImageSet::Samples(list) => {
                    for y in list {
                        recovered.push((
                            GraphPoint {
                                x: pt.x.clone(),
                                y,
                                multivalued: true,
                            },
                            *phase,
                        ));
                    }
                }
                ImageSet::Empty => {}
            }
        }
        let monotone_recovered = probe_points(&recovered).violations.is_empty();
        Ok(RepCheckReport {
            max_graph_gap,
            off_graph_min_gap,
            monotone_recovered,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_examples() {
        let f = RepFunction::closed_affine_scalar(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(f.eval(&[1.0], &[3.0], None).unwrap().finite().unwrap(), 3.0, epsilon = 1e-15);
        let s = RepFunction::closed_sign();
        assert_eq!(s.eval(&[-2.0], &[0.5], None).unwrap(), ExtReal::Finite(2.0));
        assert_eq!(s.eval(&[0.3], &[2.0], None).unwrap(), ExtReal::PosInf);
        let id = RepFunction::closed_identity_scaled(1, 1.0).unwrap();
        assert_eq!(id.eval(&[1.0], &[1.0], None).unwrap(), ExtReal::Finite(1.0));
    }

    #[test]
    fn gap_examples() {
        let f = RepFunction::closed_affine_scalar(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(
            f.representation_gap(&[1.0], &[3.0], None).unwrap().finite().unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            f.representation_gap(&[1.0], &[0.0], None).unwrap().finite().unwrap(),
            9.0 / 8.0,
            epsilon = 1e-15
        );
        let id = RepFunction::closed_identity_scaled(1, 1.0).unwrap();
        assert_eq!(id.representation_gap(&[1.0], &[-1.0], None).unwrap(), ExtReal::Finite(1.0));
    }

    #[test]
    fn recovery_examples() {
        let id = RepFunction::closed_identity_scaled(1, 1.0).unwrap();
        assert_eq!(id.recover_graph(&[2.0], None).unwrap(), ImageSet::Singleton(vec![2.0]));
        let f = RepFunction::closed_affine_scalar(2.0, 1.0).unwrap();
        assert_eq!(f.recover_graph(&[1.0], None).unwrap(), ImageSet::Singleton(vec![3.0]));
        let s = RepFunction::closed_sign();
        assert_eq!(
            s.recover_graph(&[0.0], None).unwrap(),
            ImageSet::Interval {
                lo: vec![-1.0],
                hi: vec![1.0]
            }
        );
    }

    #[test]
    fn fitzpatrick_and_conjugate_sum_share_graph_differ_off_graph() {
        let law = MonotoneLaw::identity(1).unwrap();
        let fitz = RepFunction::closed_identity_scaled(1, 1.0).unwrap();
        let sum = RepFunction::conjugate_sum(&law).unwrap();
        for &x in &[-2.0, -0.5, 0.0, 1.0, 3.0] {
            assert_eq!(fitz.recover_graph(&[x], None).unwrap(), sum.recover_graph(&[x], None).unwrap());
        }
        assert_abs_diff_eq!(fitz.eval(&[1.0], &[0.0], None).unwrap().finite().unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(sum.eval(&[1.0], &[0.0], None).unwrap().finite().unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn check_representative_reports() {
        let law = MonotoneLaw::affine_scalar(2.0, 1.0).unwrap();
        let f = RepFunction::closed_affine_scalar(2.0, 1.0).unwrap();
        let r = f.check_representative(&law, 200, 3).unwrap();
        assert!(r.max_graph_gap <= 1e-12);
        assert!(r.off_graph_min_gap > 0.0);
        assert!(r.monotone_recovered);

        let id = RepFunction::closed_identity_scaled(1, 1.0).unwrap();
        let r = id.check_representative(&MonotoneLaw::identity(1).unwrap(), 200, 4).unwrap();
        assert!(r.max_graph_gap <= 1e-12);
    }

    #[test]
    fn sign_representative_exhibits_maximalization() {
        // (0, −½) is off the graph as written yet has zero gap.
        let s = RepFunction::closed_sign();
        assert_eq!(s.representation_gap(&[0.0], &[-0.5], None).unwrap(), ExtReal::Finite(0.0));
        let r = s.check_representative(&MonotoneLaw::sign_graph(true), 300, 5).unwrap();
        assert!(r.max_graph_gap <= 1e-12);
        assert!(r.monotone_recovered);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let reps = vec![
            RepFunction::closed_affine(
                DMatrix::from_row_slice(2, 2, &[2.0, 0.7, -0.4, 3.0]),
                DVector::from_vec(vec![0.3, -0.2]),
            )
            .unwrap(),
            RepFunction::closed_identity_scaled(2, 1.7).unwrap(),
            RepFunction::conjugate_sum(&MonotoneLaw::power(2, 1.2, 3.0).unwrap()).unwrap(),
        ];
        let x = [0.4, -0.9];
        let y = [1.1, 0.6];
        let h = 1e-6;
        for rep in &reps {
            let mut gx = [0.0; 2];
            let mut gy = [0.0; 2];
            let v = rep.value_grad(&x, &y, None, &mut gx, &mut gy).unwrap();
            assert_abs_diff_eq!(v, rep.eval(&x, &y, None).unwrap().finite().unwrap(), epsilon = 1e-13);
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let d = (rep.eval_finite(&xp, &y) - rep.eval_finite(&xm, &y)) / (2.0 * h);
                assert_abs_diff_eq!(gx[i], d, epsilon = 1e-7);
                let mut yp = y;
                let mut ym = y;
                yp[i] += h;
                ym[i] -= h;
                let d = (rep.eval_finite(&x, &yp) - rep.eval_finite(&x, &ym)) / (2.0 * h);
                assert_abs_diff_eq!(gy[i], d, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn generic_sup_is_below_closed_form_and_refines_monotonically() {
        let law = MonotoneLaw::affine_scalar(2.0, 1.0).unwrap();
        let closed = RepFunction::closed_affine_scalar(2.0, 1.0).unwrap();
        let small = RepFunction::generic_sup(&law, 20, 9).unwrap();
        let large = RepFunction::generic_sup(&law, 200, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let x = [rng.gen_range(-3.0..3.0)];
            let y = [rng.gen_range(-3.0..3.0)];
            let vs = small.eval(&x, &y, None).unwrap().finite().unwrap();
            let vl = large.eval(&x, &y, None).unwrap().finite().unwrap();
            let vc = closed.eval(&x, &y, None).unwrap().finite().unwrap();
            assert!(vs <= vl);
            assert!(vl <= vc + 1e-12);
        }
        let rec = large.recover_graph_with_tol(&[0.5], None, 1e-3).unwrap();
        match rec {
            ImageSet::Singleton(y) => assert!((y[0] - 2.0).abs() < 0.1, "{y:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coercivity_certificates_hold() {
        let reps = vec![
            RepFunction::closed_affine(
                DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]),
                DVector::from_vec(vec![0.5, -1.0]),
            )
            .unwrap(),
            RepFunction::closed_identity_scaled(2, 0.5).unwrap(),
            RepFunction::conjugate_sum(&MonotoneLaw::power(2, 1.0, 4.0).unwrap()).unwrap(),
            RepFunction::conjugate_sum(
                &MonotoneLaw::affine(
                    DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
                    DVector::from_vec(vec![1.0, 0.0]),
                )
                .unwrap(),
            )
            .unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for rep in &reps {
            let c = rep.coercivity().unwrap();
            let (p, q) = rep.exponents();
            for _ in 0..2000 {
                let s = rng.gen_range(0.0..10.0);
                let x: Vec<f64> = (0..2).map(|_| s * rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..2).map(|_| s * rng.gen_range(-1.0..1.0)).collect();
                let f = rep.eval(&x, &y, None).unwrap().finite().unwrap();
                let bound = c.c * (norm(&x).powf(p) + norm(&y).powf(q)) + c.k + c.t * dot(&x, &y);
                assert!(f >= bound - 1e-9 * (1.0 + f.abs()), "{f} < {bound}");
            }
        }
    }
}
