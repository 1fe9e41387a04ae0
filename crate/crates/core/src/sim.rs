//! The round-based multi-robot simulator.
//!
//! Each consensus round runs `local_steps_per_round` local iterations per
//! robot — sample, streaming GP update, compress when over budget — followed
//! by one synchronous consensus exchange over the current distance graph.
//! Cross-robot reads only ever touch previous-round snapshots, so execution
//! order cannot change results; a run is a pure function of (config, seed).

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use crate::config::ScenarioConfig;
use crate::consensus::{
    centralized_poe, consensus_step, recover_map, reference_input, ConsensusState,
};
use crate::error::{Error, Result};
use crate::field::{robot_rng, sample, ScalarField, Trajectory};
use crate::gp::{
    batch_predict, recursive_add, replace_value, Dataset, GaussianMap, Position, RecursiveState,
    StreamingMap, TestGrid,
};
use crate::network::{graph_from_positions, weights_from_graph, CommGraph};
use crate::sparsify::compress;

/// Timing windows are medians over this many recent measurements.
const TIMING_WINDOW: usize = 10;

/// Pipeline variants compared in the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Dense batch re-solve of the full local dataset; no fusion, no budget.
    FullGpr,
    /// Streaming local GP; no fusion, no budget.
    Recursive,
    /// Streaming local GP with consensus fusion; no budget.
    DistributedNoCompress,
    /// Budgeted compression driven by the local score only, with fusion.
    LocalCompress,
    /// The full pipeline: budgeted compression driven by the fused
    /// local/distributed metric, with fusion.
    DistributedCompress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CompressionMode {
    Off,
    LocalOnly,
    Distributed,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::FullGpr,
        Variant::Recursive,
        Variant::DistributedNoCompress,
        Variant::LocalCompress,
        Variant::DistributedCompress,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::FullGpr => "full_gpr",
            Variant::Recursive => "recursive",
            Variant::DistributedNoCompress => "distributed_no_compress",
            Variant::LocalCompress => "local_compress",
            Variant::DistributedCompress => "distributed_compress",
        }
    }

    fn uses_consensus(&self) -> bool {
        matches!(
            self,
            Variant::DistributedNoCompress | Variant::LocalCompress | Variant::DistributedCompress
        )
    }

    fn compression(&self) -> CompressionMode {
        match self {
            Variant::LocalCompress => CompressionMode::LocalOnly,
            Variant::DistributedCompress => CompressionMode::Distributed,
            _ => CompressionMode::Off,
        }
    }

    fn batch_local(&self) -> bool {
        matches!(self, Variant::FullGpr)
    }
}

/// One robot's metrics for one consensus round. Serialized to CSV in field
/// order; the two timing columns are excluded from determinism comparisons.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub robot_id: usize,
    pub rmse_local: f64,
    pub rmse_distributed: f64,
    pub consensus_err_vs_poe: f64,
    pub dataset_size: usize,
    pub pred_time: f64,
    pub compress_time: f64,
}

/// Everything a finished run exposes for reporting and tests.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub records: Vec<RoundRecord>,
    pub final_local_maps: Vec<GaussianMap>,
    pub final_dist_maps: Vec<GaussianMap>,
    /// Each robot's retained observations at the end of the run.
    pub final_datasets: Vec<Dataset>,
    pub graphs: Vec<CommGraph>,
    /// Positions each robot actually sampled, in order.
    pub sampled_positions: Vec<Vec<Position>>,
    pub grid: Arc<TestGrid>,
    /// Mean distributed variance over grid and robots, one entry per round.
    pub mean_dist_variance: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Root-mean-square error of the map mean against the ground truth over the
/// map's own grid.
pub fn rmse(map: &GaussianMap, truth: &ScalarField) -> f64 {
    let n = map.len() as f64;
    let sq: f64 = map
        .grid
        .positions
        .iter()
        .zip(&map.mean)
        .map(|(pos, mu)| {
            let d = mu - truth.eval(pos);
            d * d
        })
        .sum();
    (sq / n).sqrt()
}

fn median(window: &VecDeque<f64>) -> f64 {
    if window.is_empty() {
        return 0.0;
    }
    let mut values: Vec<f64> = window.iter().copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

fn push_window(window: &mut VecDeque<f64>, value: f64) {
    window.push_back(value);
    if window.len() > TIMING_WINDOW {
        window.pop_front();
    }
}

/// Robot positions at the end of a round's local phase (last sampled index).
pub(crate) fn round_positions(
    trajectories: &[Trajectory],
    round: usize,
    local_steps: usize,
) -> Vec<Position> {
    trajectories
        .iter()
        .map(|t| {
            let last = ((round + 1) * local_steps).min(t.len()) - 1;
            t.positions[last].clone()
        })
        .collect()
}

struct Robot {
    data: Dataset,
    state: RecursiveState,
    live: StreamingMap,
    rng: rand_chacha::ChaCha8Rng,
    consensus: Option<ConsensusState>,
    dist_map: Option<GaussianMap>,
    local_map: GaussianMap,
    sampled: Vec<Position>,
    pred_window: VecDeque<f64>,
    compress_window: VecDeque<f64>,
    bound_warned: bool,
}

/// Runs the full pipeline (the distributed-compression variant).
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimResult> {
    run_variant(cfg, Variant::DistributedCompress)
}

/// Runs one pipeline variant of the scenario.
pub fn run_variant(cfg: &ScenarioConfig, variant: Variant) -> Result<SimResult> {
    let mut warnings = cfg.validate()?;
    let kernel = cfg.kernel()?;
    let sparsity = cfg.sparsity()?;
    let field = cfg.field()?;
    let trajectories = cfg.trajectories()?;
    let grid = cfg.grid()?;
    let p = cfg.robot_count;
    let n_samples = cfg.samples_per_robot;
    let local_steps = cfg.local_steps_per_round;
    let data_rounds = n_samples.div_ceil(local_steps);
    let total_rounds = data_rounds + cfg.post_rounds;
    let (y_bar, _) = cfg.observation_bounds(&field, &grid);
    let noise_sd = cfg.sigma_e_sq.sqrt();
    let compression = variant.compression();

    let mut robots: Vec<Robot> = (0..p)
        .map(|i| Robot {
            data: Dataset::new(),
            state: RecursiveState::empty(),
            live: StreamingMap::new(Arc::clone(&grid), &kernel),
            rng: robot_rng(cfg.seed, i),
            consensus: None,
            dist_map: None,
            local_map: GaussianMap {
                grid: Arc::clone(&grid),
                mean: vec![0.0; grid.len()],
                variance: vec![kernel.prior_variance(); grid.len()],
            },
            sampled: Vec::new(),
            pred_window: VecDeque::new(),
            compress_window: VecDeque::new(),
            bound_warned: false,
        })
        .collect();

    let mut records = Vec::with_capacity(total_rounds * p);
    let mut graphs = Vec::with_capacity(total_rounds);
    let mut mean_dist_variance = Vec::with_capacity(total_rounds);

    for round in 0..total_rounds {
        // Local phase: sensing, streaming update, compression. Each robot
        // only touches its own state plus its previous-round fused map.
        for (i, robot) in robots.iter_mut().enumerate() {
            let compress_reference = robot.dist_map.clone();
            for s in 0..local_steps {
                let step = round * local_steps + s;
                if step >= n_samples {
                    break;
                }
                let position = trajectories[i].positions[step].clone();
                let obs = sample(&field, &position, noise_sd, &mut robot.rng, i, step);
                if !robot.bound_warned && obs.value.abs() > y_bar {
                    warnings.push(format!(
                        "robot {i}: observation magnitude {} exceeds the configured bound {y_bar}",
                        obs.value.abs()
                    ));
                    robot.bound_warned = true;
                }
                robot.sampled.push(position.clone());

                let started = Instant::now();
                if variant.batch_local() {
                    robot.data.push(obs);
                    robot.local_map = batch_predict(&robot.data, &kernel, &grid)?;
                } else {
                    match recursive_add(&robot.state, &robot.data, &obs, &kernel) {
                        Ok((next, update)) => {
                            robot.live.absorb(&update, &obs.position, &kernel);
                            robot.state = next;
                            robot.data.push(obs);
                        }
                        Err(Error::DuplicateInput { nearest, .. }) => {
                            let merged = 0.5 * (robot.data.observations[nearest].value + obs.value);
                            let (state, data) =
                                replace_value(&robot.state, &robot.data, nearest, merged)?;
                            robot.state = state;
                            robot.data = data;
                            robot.live.rebuild(&robot.state, &robot.data, &kernel)?;
                        }
                        Err(other) => {
                            return Err(augment(other, i, round));
                        }
                    }
                    robot.local_map = robot.live.as_map();
                }
                push_window(&mut robot.pred_window, started.elapsed().as_secs_f64());

                if compression != CompressionMode::Off && robot.data.len() > sparsity.budget {
                    let started = Instant::now();
                    let reference = match compression {
                        CompressionMode::Distributed => compress_reference.as_ref(),
                        _ => None,
                    };
                    let outcome =
                        compress(&robot.data, &robot.state, reference, &sparsity, &kernel)
                            .map_err(|e| augment(e, i, round))?;
                    robot.data = outcome.data;
                    robot.state = outcome.state;
                    robot.live.rebuild(&robot.state, &robot.data, &kernel)?;
                    robot.local_map = robot.live.as_map();
                    push_window(&mut robot.compress_window, started.elapsed().as_secs_f64());
                }
            }
        }

        // Exchange phase: one synchronous consensus step over the current
        // distance graph, reading only previous-round states.
        let positions = round_positions(&trajectories, round, local_steps);
        let graph = graph_from_positions(&positions, cfg.comm_range, round);
        if variant.uses_consensus() {
            let weights = weights_from_graph(&graph, cfg.edge_weight)?;
            weights.validate(cfg.effective_weight_floor())?;

            let references: Vec<_> = robots
                .iter()
                .map(|r| reference_input(&r.local_map, cfg.sigma_n_sq))
                .collect();
            if round == 0 {
                for (robot, reference) in robots.iter_mut().zip(&references) {
                    robot.consensus =
                        Some(ConsensusState::new(Arc::clone(&grid), reference.clone()));
                }
            }
            let snapshot: Vec<ConsensusState> = robots
                .iter()
                .map(|r| r.consensus.clone().expect("initialized above"))
                .collect();
            for (i, robot) in robots.iter_mut().enumerate() {
                let neighbor_states: Vec<(f64, &ConsensusState)> = weights
                    .neighbor_weights(i)
                    .into_iter()
                    .map(|(j, w)| (w, &snapshot[j]))
                    .collect();
                let next = consensus_step(&snapshot[i], &neighbor_states, &references[i])
                    .map_err(|e| augment(e, i, round))?;
                robot.dist_map = Some(recover_map(&next).map);
                robot.consensus = Some(next);
            }
        }
        graphs.push(graph);

        // Metrics.
        let local_maps: Vec<GaussianMap> = robots.iter().map(|r| r.local_map.clone()).collect();
        let poe = if variant.uses_consensus() {
            Some(centralized_poe(&local_maps, cfg.sigma_n_sq)?)
        } else {
            None
        };
        let mut variance_sum = 0.0;
        for (i, robot) in robots.iter().enumerate() {
            let rmse_local = rmse(&robot.local_map, &field);
            let (rmse_distributed, consensus_err) = match (&robot.dist_map, &poe) {
                (Some(dist), Some(poe)) => {
                    let err = dist
                        .mean
                        .iter()
                        .zip(&poe.mean)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max);
                    (rmse(dist, &field), err)
                }
                _ => (rmse_local, 0.0),
            };
            let effective = robot.dist_map.as_ref().unwrap_or(&robot.local_map);
            variance_sum +=
                effective.variance.iter().sum::<f64>() / effective.variance.len() as f64;
            records.push(RoundRecord {
                round,
                robot_id: i,
                rmse_local,
                rmse_distributed,
                consensus_err_vs_poe: consensus_err,
                dataset_size: robot.data.len(),
                pred_time: median(&robot.pred_window),
                compress_time: median(&robot.compress_window),
            });
        }
        mean_dist_variance.push(variance_sum / p as f64);
    }

    Ok(SimResult {
        records,
        final_local_maps: robots.iter().map(|r| r.local_map.clone()).collect(),
        final_dist_maps: robots
            .iter()
            .map(|r| r.dist_map.clone().unwrap_or_else(|| r.local_map.clone()))
            .collect(),
        final_datasets: robots.iter().map(|r| r.data.clone()).collect(),
        graphs,
        sampled_positions: robots.into_iter().map(|r| r.sampled).collect(),
        grid,
        mean_dist_variance,
        warnings,
    })
}

/// The communication graphs a scenario would produce, without running any
/// GP work. Used by the load-time connectivity validator.
pub fn graph_schedule(cfg: &ScenarioConfig) -> Result<Vec<CommGraph>> {
    let trajectories = cfg.trajectories()?;
    let data_rounds = cfg.samples_per_robot.div_ceil(cfg.local_steps_per_round);
    let total_rounds = data_rounds + cfg.post_rounds;
    Ok((0..total_rounds)
        .map(|round| {
            let positions = round_positions(&trajectories, round, cfg.local_steps_per_round);
            graph_from_positions(&positions, cfg.comm_range, round)
        })
        .collect())
}

/// One checkpoint of the streaming-vs-batch equivalence sweep.
#[derive(Debug, Clone)]
pub struct OracleRow {
    pub robot_id: usize,
    pub step: usize,
    pub max_mean_err: f64,
    pub max_var_err: f64,
}

/// Streams every robot's samples through the recursive update (no
/// compression, no fusion) and compares the grid posterior against the dense
/// batch solve at evenly spaced checkpoints.
pub fn oracle_sweep(cfg: &ScenarioConfig, checkpoints: usize) -> Result<Vec<OracleRow>> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let field = cfg.field()?;
    let trajectories = cfg.trajectories()?;
    let grid = cfg.grid()?;
    let n = cfg.samples_per_robot;
    let noise_sd = cfg.sigma_e_sq.sqrt();
    let marks: Vec<usize> = (1..=checkpoints.max(1))
        .map(|c| (n * c / checkpoints.max(1)).max(1))
        .collect();

    let mut rows = Vec::new();
    for (i, trajectory) in trajectories.iter().enumerate() {
        let mut rng = robot_rng(cfg.seed, i);
        let mut data = Dataset::new();
        let mut state = RecursiveState::empty();
        for step in 0..n {
            let position = &trajectory.positions[step];
            let obs = sample(&field, position, noise_sd, &mut rng, i, step);
            match recursive_add(&state, &data, &obs, &kernel) {
                Ok((next, _)) => {
                    state = next;
                    data.push(obs);
                }
                Err(Error::DuplicateInput { nearest, .. }) => {
                    let merged = 0.5 * (data.observations[nearest].value + obs.value);
                    let (s, d) = replace_value(&state, &data, nearest, merged)?;
                    state = s;
                    data = d;
                }
                Err(other) => return Err(augment(other, i, step)),
            }
            if marks.contains(&(step + 1)) {
                let recursive = crate::gp::recursive_predict(&state, &data, &kernel, &grid)?;
                let batch = batch_predict(&data, &kernel, &grid)?;
                let mut max_mean_err = 0.0f64;
                let mut max_var_err = 0.0f64;
                for j in 0..grid.len() {
                    max_mean_err = max_mean_err.max((recursive.mean[j] - batch.mean[j]).abs());
                    max_var_err =
                        max_var_err.max((recursive.variance[j] - batch.variance[j]).abs());
                }
                rows.push(OracleRow {
                    robot_id: i,
                    step: step + 1,
                    max_mean_err,
                    max_var_err,
                });
            }
        }
    }
    Ok(rows)
}

fn augment(e: Error, robot: usize, round: usize) -> Error {
    match e {
        Error::Argument(m) => Error::Argument(format!("robot {robot}, round {round}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("robot {robot}, round {round}: {m}")),
        Error::Scoring(m) => Error::Scoring(format!("robot {robot}, round {round}: {m}")),
        other => other,
    }
}

/// One line of the variant comparison table.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub variant: &'static str,
    pub rmse_local: f64,
    pub rmse_distributed: f64,
    pub mean_pred_time: f64,
    pub mean_compress_time: f64,
    pub wall_time: f64,
}

/// Runs all five variants and summarizes final-round accuracy and timing.
pub fn compare(cfg: &ScenarioConfig) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let started = Instant::now();
        let result = run_variant(cfg, variant)?;
        let wall_time = started.elapsed().as_secs_f64();
        let last_round = result.records.iter().map(|r| r.round).max().unwrap_or(0);
        let finals: Vec<&RoundRecord> = result
            .records
            .iter()
            .filter(|r| r.round == last_round)
            .collect();
        let mean = |f: &dyn Fn(&RoundRecord) -> f64| {
            finals.iter().map(|r| f(r)).sum::<f64>() / finals.len() as f64
        };
        let all_pred: f64 =
            result.records.iter().map(|r| r.pred_time).sum::<f64>() / result.records.len() as f64;
        let all_compress: f64 = result.records.iter().map(|r| r.compress_time).sum::<f64>()
            / result.records.len() as f64;
        rows.push(CompareRow {
            variant: variant.name(),
            rmse_local: mean(&|r| r.rmse_local),
            rmse_distributed: mean(&|r| r.rmse_distributed),
            mean_pred_time: all_pred,
            mean_compress_time: all_compress,
            wall_time,
        });
    }
    Ok(rows)
}
