//! Discrete Cucker-Smale flocking under randomly switching directed
//! topologies: integrator, switching schedules, closed-form flocking
//! conditions and bounds, and a seeded Monte Carlo harness.

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod montecarlo;
pub mod seeds;
pub mod switching;

pub use config::ExperimentConfig;
pub use dynamics::{simulate, step, step_matrix, CommunicationWeight, Configuration, SimOptions, StopCriteria, Trajectory};
pub use error::{Error, Result};
pub use graph::{union_graph, Digraph, TopologyEnsemble};
pub use matrix::{ergodicity_coefficient, flow_product, is_scrambling, is_stochastic, update_matrix, Points, SquareMatrix};
pub use montecarlo::{run_ensemble, EnsembleResult, EnsembleSpec, InitSpec};
pub use switching::{a_sequence, DwellingProcess, SwitchingSchedule};
