//! Random media on the periodic grid: stationary coefficient fields with
//! independent cells (or layers), lattice shifts, and Birkhoff averages.
//!
//! Every realization is a deterministic function of `(spec, seed, grid)`.
//! The generator draws the sub-cell offset first, then one value per cell
//! (or per layer) in row-major order.

use crate::error::{Error, Result};
use crate::field::{DiscreteField, PeriodicGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CellDistribution {
    /// Indicator equal to 1 with probability `p`.
    Bernoulli { p: f64 },
    Uniform { lo: f64, hi: f64 },
    TwoValue { values: [f64; 2], probs: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MediumKind {
    Constant {
        value: f64,
    },
    /// Independent layers of one cell, constant along every axis except `axis`.
    Layered {
        axis: usize,
        values: [f64; 2],
        probs: [f64; 2],
    },
    /// Independent two-phase cells.
    Checkerboard {
        values: [f64; 2],
        probs: [f64; 2],
    },
    IidCells {
        distribution: CellDistribution,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    #[serde(flatten)]
    pub kind: MediumKind,
    pub d: usize,
}

fn check_probs(probs: &[f64; 2]) -> Result<()> {
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (probs[0] + probs[1] - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "phase probabilities must be in [0,1] and sum to 1, got {probs:?}"
        )));
    }
    Ok(())
}

impl MediumSpec {
    pub fn new(kind: MediumKind, d: usize) -> Result<Self> {
        let spec = Self { kind, d };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.d) {
            return Err(Error::InvalidParameter(format!("medium dimension must be 1..=3, got {}", self.d)));
        }
        match &self.kind {
            MediumKind::Constant { value } if !value.is_finite() => {
                Err(Error::InvalidParameter("constant medium value must be finite".into()))
            }
            MediumKind::Layered { axis, probs, .. } => {
                if *axis >= self.d {
                    return Err(Error::InvalidParameter(format!(
                        "layer axis {axis} out of range for d = {}",
                        self.d
                    )));
                }
                check_probs(probs)
            }
            MediumKind::Checkerboard { probs, .. } => check_probs(probs),
            MediumKind::IidCells { distribution } => match distribution {
                CellDistribution::Bernoulli { p } if !(0.0..=1.0).contains(p) => {
                    Err(Error::InvalidParameter(format!("Bernoulli p must be in [0,1], got {p}")))
                }
                CellDistribution::Uniform { lo, hi } if !(lo < hi) => Err(Error::InvalidParameter(
                    format!("uniform distribution needs lo < hi, got [{lo}, {hi}]"),
                )),
                CellDistribution::TwoValue { probs, .. } => check_probs(probs),
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Whether realizations carry a two-phase indicator.
    pub fn is_two_phase(&self) -> bool {
        match &self.kind {
            MediumKind::Layered { .. } | MediumKind::Checkerboard { .. } => true,
            MediumKind::IidCells { distribution } => !matches!(distribution, CellDistribution::Uniform { .. }),
            MediumKind::Constant { .. } => false,
        }
    }

    /// Expected cell value, when the medium has a closed-form mean.
    pub fn expected_value(&self) -> f64 {
        match &self.kind {
            MediumKind::Constant { value } => *value,
            MediumKind::Layered { values, probs, .. } | MediumKind::Checkerboard { values, probs } => {
                values[0] * probs[0] + values[1] * probs[1]
            }
            MediumKind::IidCells { distribution } => match distribution {
                CellDistribution::Bernoulli { p } => *p,
                CellDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
                CellDistribution::TwoValue { values, probs } => values[0] * probs[0] + values[1] * probs[1],
            },
        }
    }
}

/// One sample of a medium on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub spec: MediumSpec,
    pub seed: u64,
    pub grid: PeriodicGrid,
    /// Sub-cell offset in `[0, 1)^d`.
    pub offset: Vec<f64>,
    /// Scalar coefficient field.
    pub field: DiscreteField,
    /// Phase index per cell for two-phase media.
    pub phases: Option<Vec<u8>>,
}

fn draw_phase(rng: &mut ChaCha8Rng, p0: f64) -> u8 {
    if rng.gen::<f64>() < p0 {
        0
    } else {
        1
    }
}

/// Draws the realization of `spec` for `seed` on `grid`.
pub fn sample_realization(spec: &MediumSpec, seed: u64, grid: PeriodicGrid) -> Result<Realization> {
    crate::error::check_dim(spec.d, grid.d())?;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: Vec<f64> = (0..grid.d()).map(|_| rng.gen::<f64>()).collect();
    let cells = grid.cells();
    let (values, phases): (Vec<f64>, Option<Vec<u8>>) = match &spec.kind {
        MediumKind::Constant { value } => (vec![*value; cells], None),
        MediumKind::Layered { axis, values, probs } => {
            let layers: Vec<u8> = (0..grid.n_side()).map(|_| draw_phase(&mut rng, probs[0])).collect();
            let ph: Vec<u8> = (0..cells).map(|c| layers[grid.coords(c)[*axis]]).collect();
            (ph.iter().map(|&p| values[p as usize]).collect(), Some(ph))
        }
        MediumKind::Checkerboard { values, probs }
        | MediumKind::IidCells {
            distribution: CellDistribution::TwoValue { values, probs },
        } => {
            let ph: Vec<u8> = (0..cells).map(|_| draw_phase(&mut rng, probs[0])).collect();
            (ph.iter().map(|&p| values[p as usize]).collect(), Some(ph))
        }
        MediumKind::IidCells {
            distribution: CellDistribution::Bernoulli { p },
        } => {
            let ph: Vec<u8> = (0..cells).map(|_| draw_phase(&mut rng, 1.0 - p)).collect();
            (ph.iter().map(|&v| v as f64).collect(), Some(ph))
        }
        MediumKind::IidCells {
            distribution: CellDistribution::Uniform { lo, hi },
        } => ((0..cells).map(|_| rng.gen_range(*lo..*hi)).collect(), None),
    };
    Ok(Realization {
        spec: spec.clone(),
        seed,
        grid,
        offset,
        field: DiscreteField::from_values(grid, 1, values)?,
        phases,
    })
}

/// Realizations for several seeds, generated in parallel.
pub fn sample_ensemble(spec: &MediumSpec, seeds: &[u64], grid: PeriodicGrid) -> Result<Vec<Realization>> {
    seeds
        .par_iter()
        .map(|&s| sample_realization(spec, s, grid))
        .collect()
}

impl Realization {
    pub fn phase(&self, cell: usize) -> Option<usize> {
        self.phases.as_ref().map(|p| p[cell] as usize)
    }

    pub fn value(&self, cell: usize) -> f64 {
        self.field.values()[cell]
    }

    /// Coefficient field refined by `factor` per axis, each medium cell
    /// becoming a block; the sub-cell offset becomes the lattice shift
    /// `⌊offset · factor⌋` on the fine grid.
    pub fn upsample(&self, factor: usize) -> Result<(DiscreteField, Option<Vec<u8>>)> {
        let fine = PeriodicGrid::new(self.grid.d(), self.grid.n_side() * factor)?;
        let shift: Vec<i64> = self.offset.iter().map(|o| (o * factor as f64).floor() as i64).collect();
        let mut values = Vec::with_capacity(fine.cells());
        let mut phases = self.phases.as_ref().map(|_| Vec::with_capacity(fine.cells()));
        let n_fine = fine.n_side() as i64;
        for cell in 0..fine.cells() {
            let c = fine.coords(cell);
            let mut coarse = [0usize; 3];
            for a in 0..fine.d() {
                let shifted = (c[a] as i64 + shift[a]).rem_euclid(n_fine) as usize;
                coarse[a] = shifted / factor;
            }
            let src = self.grid.index(&coarse);
            values.push(self.value(src));
            if let (Some(out), Some(ph)) = (phases.as_mut(), self.phases.as_ref()) {
                out.push(ph[src]);
            }
        }
        Ok((DiscreteField::from_values(fine, 1, values)?, phases))
    }

    /// Realization translated by a lattice vector.
    pub fn shifted(&self, by: &[i64]) -> Realization {
        let mut out = self.clone();
        out.field = self.field.shifted(by);
        out.phases = self.phases.as_ref().map(|ph| {
            (0..self.grid.cells())
                .map(|c| ph[self.grid.shifted(c, by)])
                .collect()
        });
        out
    }
}

/// Checks the group law: shifting by `x` then `y` equals shifting by `x + y`, bit for bit.
pub fn shift_check(realization: &Realization, x: &[i64], y: &[i64]) -> bool {
    let d = realization.grid.d();
    if x.len() < d || y.len() < d {
        return false;
    }
    let xy: Vec<i64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    let two_step = realization.shifted(x).shifted(y);
    let one_step = realization.shifted(&xy);
    two_step
        .field
        .values()
        .iter()
        .zip(one_step.field.values())
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && two_step.phases == one_step.phases
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BirkhoffRow {
    pub k: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BirkhoffTable {
    pub rows: Vec<BirkhoffRow>,
    pub realizations: usize,
}

impl BirkhoffTable {
    /// Whether the largest-window mean lies within `sigmas` standard errors of `expected`.
    pub fn consistent_with(&self, expected: f64, sigmas: f64) -> bool {
        self.rows.last().is_some_and(|r| (r.mean - expected).abs() <= sigmas * r.stderr)
    }

    pub fn stderr_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].stderr < w[0].stderr)
    }
}

/// Window averages of `observable` over `K^d` corner windows, across realizations.
pub fn birkhoff_average(
    spec: &MediumSpec,
    observable: impl Fn(f64) -> f64 + Sync,
    windows: &[usize],
    grid: PeriodicGrid,
    seeds: &[u64],
) -> Result<BirkhoffTable> {
    if let Some(&w) = windows.iter().find(|&&w| w > grid.n_side() || w == 0) {
        return Err(Error::WindowTooLarge {
            window: w,
            side: grid.n_side(),
        });
    }
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("Birkhoff average needs at least one seed".into()));
    }
    let d = grid.d();
    let per_seed: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&s| -> Result<Vec<f64>> {
            let r = sample_realization(spec, s, grid)?;
            Ok(windows
                .iter()
                .map(|&k| {
                    let mut sum = 0.0;
                    let count = k.pow(d as u32);
                    for idx in 0..count {
                        let mut c = [0usize; 3];
                        let mut rest = idx;
                        for a in (0..d).rev() {
                            c[a] = rest % k;
                            rest /= k;
                        }
                        sum += observable(r.value(grid.index(&c)));
                    }
                    sum / count as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let m = seeds.len() as f64;
    let rows = windows
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let mean = per_seed.iter().map(|v| v[i]).sum::<f64>() / m;
            let var = if seeds.len() > 1 {
                per_seed.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            BirkhoffRow {
                k,
                mean,
                stderr: (var / m).sqrt(),
            }
        })
        .collect();
    Ok(BirkhoffTable {
        rows,
        realizations: seeds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(d: usize) -> MediumSpec {
        MediumSpec::new(
            MediumKind::Checkerboard {
                values: [1.0, 4.0],
                probs: [0.5, 0.5],
            },
            d,
        )
        .unwrap()
    }

    #[test]
    fn constant_medium() {
        let g = PeriodicGrid::new(2, 8).unwrap();
        let r = sample_realization(&MediumSpec::new(MediumKind::Constant { value: 2.5 }, 2).unwrap(), 1, g).unwrap();
        assert!(r.field.values().iter().all(|&v| v == 2.5));
        assert!(r.phases.is_none());
    }

    #[test]
    fn checkerboard_phase_fraction() {
        let g = PeriodicGrid::new(2, 256).unwrap();
        let r = sample_realization(&checkerboard(2), 42, g).unwrap();
        let ones = r.field.values().iter().filter(|&&v| v == 1.0).count();
        let frac = ones as f64 / g.cells() as f64;
        assert!((frac - 0.5).abs() <= 0.01, "fraction {frac}");
    }

    #[test]
    fn layered_is_constant_across_layers() {
        let g = PeriodicGrid::new(2, 32).unwrap();
        let spec = MediumSpec::new(
            MediumKind::Layered {
                axis: 0,
                values: [1.0, 4.0],
                probs: [0.5, 0.5],
            },
            2,
        )
        .unwrap();
        let r = sample_realization(&spec, 3, g).unwrap();
        for i in 0..32 {
            let first = r.value(g.index(&[i, 0]));
            for j in 0..32 {
                assert_eq!(r.value(g.index(&[i, j])), first);
            }
        }
    }

    #[test]
    fn seeds_are_deterministic() {
        let g = PeriodicGrid::new(2, 16).unwrap();
        let a = sample_realization(&checkerboard(2), 9, g).unwrap();
        let b = sample_realization(&checkerboard(2), 9, g).unwrap();
        assert_eq!(a, b);
        let c = sample_realization(&checkerboard(2), 10, g).unwrap();
        assert_ne!(a.field, c.field);
    }

    #[test]
    fn shift_group_law() {
        let g = PeriodicGrid::new(2, 16).unwrap();
        let r = sample_realization(&checkerboard(2), 5, g).unwrap();
        assert!(shift_check(&r, &[1, 0], &[0, 1]));
        assert!(shift_check(&r, &[16, 0], &[0, 0]));
        assert_eq!(r.shifted(&[16, 0]), r);
        assert!(shift_check(&r, &[3, 2], &[-3, -2]));
        assert_eq!(r.shifted(&[3, 2]).shifted(&[-3, -2]), r);
    }

    #[test]
    fn histogram_is_shift_invariant() {
        let g = PeriodicGrid::new(2, 16).unwrap();
        let r = sample_realization(&checkerboard(2), 8, g).unwrap();
        let count = |f: &DiscreteField| f.values().iter().filter(|&&v| v == 4.0).count();
        assert_eq!(count(&r.field), count(&r.shifted(&[5, -7]).field));
    }

    #[test]
    fn birkhoff_examples() {
        let g = PeriodicGrid::new(2, 64).unwrap();
        let seeds: Vec<u64> = (0..16).collect();
        let constant = MediumSpec::new(MediumKind::Constant { value: 3.0 }, 2).unwrap();
        let t = birkhoff_average(&constant, |v| v, &[4, 64], g, &seeds).unwrap();
        assert!(t.rows.iter().all(|r| r.mean == 3.0 && r.stderr == 0.0));

        let t = birkhoff_average(&checkerboard(2), |v| v, &[4, 16, 64], g, &seeds).unwrap();
        assert!(t.consistent_with(2.5, 4.0));
        assert!(t.stderr_decreasing());

        let bern = MediumSpec::new(
            MediumKind::IidCells {
                distribution: CellDistribution::Bernoulli { p: 0.3 },
            },
            2,
        )
        .unwrap();
        let t = birkhoff_average(&bern, |v| v, &[8, 64], g, &seeds).unwrap();
        assert!(t.consistent_with(0.3, 4.0));

        assert!(matches!(
            birkhoff_average(&bern, |v| v, &[128], g, &seeds),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn upsample_blocks_and_shift() {
        let g = PeriodicGrid::new(1, 8).unwrap();
        let r = sample_realization(&checkerboard(1), 4, g).unwrap();
        let (fine, ph) = r.upsample(4).unwrap();
        let s = (r.offset[0] * 4.0).floor() as usize;
        for c in 0..32 {
            let src = ((c + s) % 32) / 4;
            assert_eq!(fine.values()[c], r.value(src));
            assert_eq!(ph.as_ref().unwrap()[c] as usize, r.phase(src).unwrap());
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(MediumSpec::new(
            MediumKind::Checkerboard {
                values: [1.0, 4.0],
                probs: [0.5, 0.6]
            },
            2
        )
        .is_err());
        let g = PeriodicGrid::new(3, 4).unwrap();
        assert!(matches!(
            sample_realization(&checkerboard(2), 1, g),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
