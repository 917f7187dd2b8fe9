//! Gradient identification, constrained descent steps and the optimization
//! driver.

pub mod driver;
pub mod hilbert;
pub mod nullspace;

pub use driver::{
    clamp_measures, evaluate, keep_inside, pde_problem, run, uniform_seeds, DescentRates, Design, Evaluation,
    IterRecord, OptOutcome, OptParams, OptProblem, Physics, Snapshot, Substep, SubstepKind,
};
pub use hilbert::{
    boundary_normals, max_normal_component, mean_neighbor_distance, neighbor_graph, HilbertProducts, SeedConstraint,
    DEFAULT_PENALTY,
};
pub use nullspace::{merit_accept, nullspace_step, NullSpaceStep, StepOutcome, StepRates, MAX_HALVINGS};
