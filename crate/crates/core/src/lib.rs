//! Effective monotone laws of random media by scale integration of
//! representative (Fitzpatrick-type) functions.

pub mod error;
pub mod field;
pub mod fitzpatrick;
pub mod media;
pub mod monotone;
pub mod pde;
pub mod scale;
pub mod vector;

pub use error::{Error, Result};
pub use field::{helmholtz_split, pairing_mean, DiscreteField, PeriodicGrid};
pub use media::{sample_realization, MediumKind, MediumSpec, Realization};
pub use fitzpatrick::{Coercivity, RepChoice, RepFunction, RepKind};
pub use scale::{CellProblem, CellSolution, EffectiveGraph, Orientation, SolverKnobs};
pub use monotone::{GraphPoint, Growth, ImageSet, LawKind, MonotoneLaw};
pub use vector::ExtReal;
