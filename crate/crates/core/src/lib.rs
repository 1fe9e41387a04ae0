//! Distributed sparse online Gaussian-process scalar-field mapping.
//!
//! A team of robots streams noisy samples of an unknown scalar field. Each
//! robot maintains a recursive GP posterior over a shared test grid, fuses
//! maps with neighbors through dynamic average consensus (product-of-experts
//! reference inputs), and keeps its dataset within a fixed budget by scoring
//! observations with a fused local/global utility metric.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`gp`] — batch, streaming, and decremental squared-exponential GP.
//! * [`consensus`] — dynamic average consensus, PoE fusion, error bounds.
//! * [`sparsify`] — observation scoring and the budget-compression loop.
//! * [`network`] — communication graphs and doubly-stochastic weights.
//! * [`field`] — synthetic ground-truth fields, trajectories, noisy sampling.
//! * [`config`], [`sim`], [`report`] — scenario description, the round-based
//!   simulator, and CSV/plot outputs.

pub mod config;
pub mod consensus;
pub mod error;
pub mod field;
pub mod gp;
pub mod network;
pub mod report;
pub mod sim;
pub mod sparsify;

pub use config::ScenarioConfig;
pub use consensus::{
    aggregation_bounds, centralized_poe, check_bound, consensus_step, recover_map, reference_input,
    BoundConstants, BoundReport, ConsensusParams, ConsensusState, ReferenceInput,
};
pub use error::{Error, Result};
pub use field::{lawnmower, linear_sweep, sample, toy_field, Bump, ScalarField, Trajectory};
pub use gp::{
    batch_predict, recursive_add, recursive_predict, remove_point, replace_value, Dataset,
    GaussianMap, KernelSpec, Observation, Position, RecursiveState, StreamingMap, TestGrid,
};
pub use network::{
    check_periodic_connectivity, graph_from_positions, weights_from_graph, AdjacencyMatrix,
    CommGraph,
};
pub use sim::{
    compare, graph_schedule, oracle_sweep, rmse, run_scenario, run_variant, CompareRow, OracleRow,
    RoundRecord, SimResult, Variant,
};
pub use sparsify::{
    br_distance, compress, distributed_metric, leave_one_out_posterior, local_score, BrSign,
    MetricScores, SparsityConfig,
};
