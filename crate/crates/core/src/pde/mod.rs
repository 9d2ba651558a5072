//! Boundary-value problems at scale ε and their homogenized limits.

mod dst;
pub mod elliptic;
pub mod ohmhall;
pub mod sweep;

pub use dst::DirichletPoisson;
pub use elliptic::{
    solve_elliptic, solve_homogenized, DirichletMesh, EllipticKnobs, EllipticProblem, EllipticSolution, FluxLaw,
    GraphLaw, IterationKind, LameLaw, MediumLaw,
};
pub use ohmhall::{divcurl_pairing, solve_ohmhall_torus, OhmHallKnobs, OhmHallProblem, OhmHallSolution};
pub use sweep::{
    block_means, epsilon_sweep, CellSetup, EpsSummary, Load, SweepFailure, SweepField, SweepReport, SweepRow, SweepSetup,
    SweepSummary,
};
