//! Experiment configuration: one JSON document, every key consumed or rejected.

use effectop::media::MediumKind;
use effectop::pde::{EllipticKnobs, Load};
use effectop::{MediumSpec, MonotoneLaw, Orientation, RepChoice, SolverKnobs};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FitzDemo,
    Cell,
    Graph,
    Sweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FitzDemo => "fitz-demo",
            ExperimentKind::Cell => "cell",
            ExperimentKind::Graph => "graph",
            ExperimentKind::Sweep => "sweep",
        }
    }
}

/// A monotone law in `d` dimensions; `d` comes from the grid block.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LawConfig {
    Affine {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
    /// `a·I`.
    Isotropic { a: f64 },
    Power { coeff: f64, exponent: f64 },
    Sign,
    Hall {
        core: Box<LawConfig>,
        hall_coeff: f64,
        induction: [f64; 3],
        #[serde(default)]
        applied: Option<Vec<f64>>,
    },
    TwoPhase { phases: Vec<LawConfig> },
}

impl LawConfig {
    pub fn build(&self, d: usize) -> effectop::Result<MonotoneLaw> {
        match self {
            LawConfig::Affine { matrix, offset } => {
                let n = matrix.len();
                if matrix.iter().any(|row| row.len() != n) {
                    return Err(effectop::Error::InvalidParameter("affine matrix must be square".into()));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                let offset = offset.clone().unwrap_or_else(|| vec![0.0; n]);
                MonotoneLaw::affine(DMatrix::from_row_slice(n, n, &flat), DVector::from_vec(offset))
            }
            LawConfig::Isotropic { a } => {
                MonotoneLaw::affine(DMatrix::identity(d, d) * *a, DVector::zeros(d))
            }
            LawConfig::Power { coeff, exponent } => MonotoneLaw::power(d, *coeff, *exponent),
            LawConfig::Sign => Ok(MonotoneLaw::sign_graph(true)),
            LawConfig::Hall {
                core,
                hall_coeff,
                induction,
                applied,
            } => MonotoneLaw::hall(
                core.build(d)?,
                *hall_coeff,
                *induction,
                applied.clone().unwrap_or_else(|| vec![0.0; d]),
            ),
            LawConfig::TwoPhase { phases } => match phases.as_slice() {
                [a, b] => MonotoneLaw::two_phase(a.build(d)?, b.build(d)?),
                _ => Err(effectop::Error::InvalidParameter(format!(
                    "two-phase law needs exactly 2 phases, got {}",
                    phases.len()
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    /// Cells per side of the periodic cell.
    pub n: usize,
    /// Realizations per ensemble.
    pub m: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    /// Solver cells per side of the unit square.
    pub n_solver: usize,
    pub blocks: usize,
    pub load: Load,
    /// Tensor axes of the tabulated homogenized law.
    pub axes: Vec<Vec<f64>>,
    #[serde(default)]
    pub elliptic: EllipticKnobs,
    /// Write cell-average `u` and flux fields of every solve.
    #[serde(default)]
    pub dump_fields: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub law: Option<LawConfig>,
    #[serde(default)]
    pub rep: Option<RepChoice>,
    #[serde(default)]
    pub medium: Option<MediumKind>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub orientation: Option<Orientation>,
    #[serde(default)]
    pub solver: Option<SolverKnobs>,
    /// Loads `ξ` of a `cell` experiment.
    #[serde(default)]
    pub loads: Option<Vec<Vec<f64>>>,
    /// Tensor axes of a `graph` experiment.
    #[serde(default)]
    pub axes: Option<Vec<Vec<f64>>>,
    /// Fraction of `θ` allowed as discretization slack by the strictness probe.
    #[serde(default)]
    pub strict_slack: Option<f64>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// A configuration problem, prefixed by the offending key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// A configuration that passed validation, with built domain objects.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: ExperimentConfig,
    pub law: Option<MonotoneLaw>,
    pub medium: Option<MediumSpec>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn rep_choice(&self) -> RepChoice {
        self.rep.unwrap_or(RepChoice::Fitzpatrick)
    }

    pub fn knobs(&self) -> SolverKnobs {
        self.solver.unwrap_or_default()
    }

    /// Checks that every block the experiment needs is present and that no
    /// block it would ignore is given.
    pub fn validate(self) -> Result<Validated, ConfigError> {
        use ExperimentKind::*;
        let kind = self.experiment;
        let present = [
            ("law", self.law.is_some(), &[Cell, Graph, Sweep][..]),
            ("rep", self.rep.is_some(), &[Cell, Graph, Sweep]),
            ("medium", self.medium.is_some(), &[Cell, Graph, Sweep]),
            ("grid", self.grid.is_some(), &[Cell, Graph, Sweep]),
            ("orientation", self.orientation.is_some(), &[Cell, Graph]),
            ("solver", self.solver.is_some(), &[Cell, Graph, Sweep]),
            ("loads", self.loads.is_some(), &[Cell]),
            ("axes", self.axes.is_some(), &[Graph]),
            ("strict_slack", self.strict_slack.is_some(), &[Graph]),
            ("sweep", self.sweep.is_some(), &[Sweep]),
        ];
        for (key, given, used_by) in present {
            if given && !used_by.contains(&kind) {
                return Err(ConfigError::new(key, format!("not used by experiment {}", kind.name())));
            }
        }
        let required: &[(&str, bool)] = match kind {
            FitzDemo => &[],
            Cell => &[
                ("law", self.law.is_some()),
                ("medium", self.medium.is_some()),
                ("grid", self.grid.is_some()),
                ("loads", self.loads.is_some()),
            ],
            Graph => &[
                ("law", self.law.is_some()),
                ("medium", self.medium.is_some()),
                ("grid", self.grid.is_some()),
                ("axes", self.axes.is_some()),
            ],
            Sweep => &[
                ("law", self.law.is_some()),
                ("medium", self.medium.is_some()),
                ("grid", self.grid.is_some()),
                ("sweep", self.sweep.is_some()),
            ],
        };
        if let Some((key, _)) = required.iter().find(|(_, ok)| !ok) {
            return Err(ConfigError::new(key, "required"));
        }
        if kind == FitzDemo {
            return Ok(Validated {
                config: self,
                law: None,
                medium: None,
            });
        }

        let grid = self.grid.as_ref().expect("checked above");
        if grid.seeds.is_empty() {
            return Err(ConfigError::new("grid.seeds", "at least one seed is required"));
        }
        if grid.m == 0 {
            return Err(ConfigError::new("grid.m", "at least one realization is required"));
        }
        if kind != Sweep && grid.seeds.len() != grid.m {
            return Err(ConfigError::new(
                "grid.seeds",
                format!("{} seeds given for m = {} realizations", grid.seeds.len(), grid.m),
            ));
        }
        let medium = MediumSpec::new(self.medium.clone().expect("checked above"), grid.d)
            .map_err(|e| ConfigError::new("medium", e.to_string()))?;
        effectop::PeriodicGrid::new(grid.d, grid.n).map_err(|e| ConfigError::new("grid", e.to_string()))?;
        let law = self
            .law
            .as_ref()
            .expect("checked above")
            .build(grid.d)
            .map_err(|e| ConfigError::new("law", e.to_string()))?;
        if law.dim() != grid.d {
            return Err(ConfigError::new(
                "law",
                format!("law dimension {} differs from grid.d = {}", law.dim(), grid.d),
            ));
        }
        if law.is_two_phase() && !medium.is_two_phase() {
            return Err(ConfigError::new("medium", "a two-phase law needs a two-phase medium"));
        }
        let check_vectors = |key: &str, list: &[Vec<f64>]| -> Result<(), ConfigError> {
            if list.is_empty() {
                return Err(ConfigError::new(key, "must not be empty"));
            }
            if let Some(v) = list.iter().find(|v| v.len() != grid.d) {
                return Err(ConfigError::new(key, format!("entry {v:?} does not have d = {} components", grid.d)));
            }
            Ok(())
        };
        match kind {
            Cell => check_vectors("loads", self.loads.as_deref().unwrap_or_default())?,
            Graph => {
                check_vectors_axes("axes", self.axes.as_deref().unwrap_or_default(), grid.d)?;
                if let Some(s) = self.strict_slack {
                    if !(0.0..1.0).contains(&s) {
                        return Err(ConfigError::new("strict_slack", format!("must be in [0, 1), got {s}")));
                    }
                }
            }
            Sweep => {
                let sweep = self.sweep.as_ref().expect("checked above");
                if sweep.eps.is_empty() {
                    return Err(ConfigError::new("sweep.eps", "must not be empty"));
                }
                if !law.is_two_phase() {
                    return Err(ConfigError::new("law", "the sweep needs a two-phase law"));
                }
                check_vectors_axes("sweep.axes", &sweep.axes, grid.d)?;
            }
            FitzDemo => {}
        }
        Ok(Validated {
            config: self,
            law: Some(law),
            medium: Some(medium),
        })
    }
}

fn check_vectors_axes(key: &str, axes: &[Vec<f64>], d: usize) -> Result<(), ConfigError> {
    if axes.len() != d {
        return Err(ConfigError::new(key, format!("needs one axis per dimension (d = {d}), got {}", axes.len())));
    }
    for axis in axes {
        if axis.len() < 2 || axis.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ConfigError::new(key, format!("axis {axis:?} must be strictly increasing with ≥ 2 points")));
        }
    }
    Ok(())
}
