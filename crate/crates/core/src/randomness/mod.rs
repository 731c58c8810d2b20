//! Driving noise: time grids, mark spaces, simulated path batches and the
//! exact scenario lattice used as an oracle.

mod grid;
mod paths;
mod rng;
mod tree;

pub use grid::{make_time_grid, MarkSpace, TimeGrid};
pub use paths::{
    simulate_brownian, simulate_poisson_measure, BrownianPart, Estimator, JumpEvent, JumpLaw, JumpPart,
    PathBatch, PathSample,
    PathStates,
};
pub use rng::{CounterRng, Draws, StreamTag};
pub use tree::{build_scenario_tree, ScenarioTree, TreeLevel, DEFAULT_NODE_CAP};
pub(crate) use paths::weighted_mean;
