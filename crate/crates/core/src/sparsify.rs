//! Observation utility scoring and the budget-compression loop.
//!
//! Each candidate gets a local score (its contribution to the robot's own
//! posterior) and a distributed score (how far its removal takes the local
//! posterior from the current fused map, through a Bhattacharyya-Riemannian
//! distance). Both are min-max normalized across candidates and fused with a
//! fixed weight; the candidate with the smallest fused score is removed.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gp::{
    recursive_predict, remove_point, Dataset, GaussianMap, KernelSpec, RecursiveState, TestGrid,
};

/// Threshold below which a state diagonal is treated as degenerate.
const SCORE_PIVOT_FLOOR: f64 = 1e-12;

/// Direction of the distributed term in the fused score.
///
/// `Paper` feeds the negated distance into the normalization (candidates
/// whose removal perturbs the fused map most score lowest and are removed
/// first); `Inverted` feeds the raw distance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrSign {
    #[default]
    Paper,
    Inverted,
}

/// Compression parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SparsityConfig {
    /// Retained points per robot (M).
    pub budget: usize,
    /// Weight of the distributed score; the local score gets `1 - k_phi`.
    pub k_phi: f64,
    /// Evaluate the map distance on every `stride`-th grid point (1 = all).
    pub metric_grid_stride: usize,
    /// Sign convention for the distributed term.
    pub br_sign: BrSign,
}

impl SparsityConfig {
    pub fn new(budget: usize, k_phi: f64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::Argument("budget must be at least 1".into()));
        }
        if !(k_phi > 0.0 && k_phi < 1.0) {
            return Err(Error::Argument(format!(
                "k_phi must lie in (0, 1), got {k_phi}"
            )));
        }
        Ok(SparsityConfig {
            budget,
            k_phi,
            metric_grid_stride: 1,
            br_sign: BrSign::Paper,
        })
    }
}

/// Per-candidate scores for one compression decision.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricScores {
    /// Raw local scores epsilon_k.
    pub local: Vec<f64>,
    /// Raw map distances d_BR,k (empty when scored locally only).
    pub br: Vec<f64>,
    /// Fused, normalized scores phi_k in [0, 1].
    pub fused: Vec<f64>,
}

/// Local utility of observation `k`: |alpha_k / Q_kk|, the magnitude of the
/// posterior-mean change its removal would spread over the other points.
pub fn local_score(state: &RecursiveState, k: usize) -> Result<f64> {
    if k >= state.len() {
        return Err(Error::Argument(format!(
            "score index {k} out of range for state of size {}",
            state.len()
        )));
    }
    let pivot = state.q_mat[(k, k)];
    if pivot.abs() < SCORE_PIVOT_FLOOR {
        return Err(Error::Scoring(format!(
            "state diagonal Q[{k},{k}] = {pivot:.3e} is degenerate"
        )));
    }
    Ok((state.alpha[k] / pivot).abs())
}

/// Posterior over `grid` with observation `k` removed; non-mutating.
pub fn leave_one_out_posterior(
    state: &RecursiveState,
    data: &Dataset,
    k: usize,
    spec: &KernelSpec,
    grid: &Arc<TestGrid>,
) -> Result<GaussianMap> {
    let (reduced, survivors) = remove_point(state, data, k)?;
    recursive_predict(&reduced, &survivors, spec, grid)
}

/// Bhattacharyya-Riemannian distance between two maps, treating each as a
/// diagonal-covariance Gaussian over the grid:
/// `sqrt(sum_j dmu_j^2 / mean_var_j) + sqrt(sum_j log^2(var1_j / var2_j))`.
pub fn br_distance(m1: &GaussianMap, m2: &GaussianMap) -> Result<f64> {
    if !m1.compatible(m2) {
        return Err(Error::Argument("maps do not share a grid".into()));
    }
    let mut mean_part = 0.0;
    let mut var_part = 0.0;
    for j in 0..m1.len() {
        let v1 = m1.variance[j];
        let v2 = m2.variance[j];
        if !(v1 > 0.0 && v2 > 0.0) {
            return Err(Error::Argument(format!(
                "nonpositive variance at grid point {j}: {v1}, {v2}"
            )));
        }
        let dm = m1.mean[j] - m2.mean[j];
        mean_part += dm * dm / (0.5 * (v1 + v2));
        let lr = (v1 / v2).ln();
        var_part += lr * lr;
    }
    Ok(mean_part.sqrt() + var_part.sqrt())
}

/// Min-max normalization across candidates; constant input maps to 0.5
/// everywhere so the other score component decides alone.
pub(crate) fn normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - min) / (max - min)).collect()
}

fn subsample_grid(grid: &Arc<TestGrid>, stride: usize) -> (Arc<TestGrid>, Vec<usize>) {
    let indices: Vec<usize> = (0..grid.len()).step_by(stride.max(1)).collect();
    let positions = indices.iter().map(|&j| grid.positions[j].clone()).collect();
    (Arc::new(TestGrid::from_positions(positions)), indices)
}

fn restrict_map(map: &GaussianMap, grid: &Arc<TestGrid>, indices: &[usize]) -> GaussianMap {
    GaussianMap {
        grid: Arc::clone(grid),
        mean: indices.iter().map(|&j| map.mean[j]).collect(),
        variance: indices.iter().map(|&j| map.variance[j]).collect(),
    }
}

/// Scores all `budget + 1` candidates against the current distributed map.
pub fn distributed_metric(
    data: &Dataset,
    state: &RecursiveState,
    dist_map: &GaussianMap,
    cfg: &SparsityConfig,
    spec: &KernelSpec,
) -> Result<MetricScores> {
    let n = data.len();
    if n != cfg.budget + 1 {
        return Err(Error::Argument(format!(
            "distributed metric expects budget + 1 = {} candidates, got {n}",
            cfg.budget + 1
        )));
    }
    if state.len() != n {
        return Err(Error::Argument("state and dataset sizes differ".into()));
    }

    let (eval_grid, indices) = if cfg.metric_grid_stride > 1 {
        subsample_grid(&dist_map.grid, cfg.metric_grid_stride)
    } else {
        (Arc::clone(&dist_map.grid), (0..dist_map.len()).collect())
    };
    let reference = if cfg.metric_grid_stride > 1 {
        restrict_map(dist_map, &eval_grid, &indices)
    } else {
        dist_map.clone()
    };

    let mut local = Vec::with_capacity(n);
    let mut br = Vec::with_capacity(n);
    for k in 0..n {
        local.push(local_score(state, k)?);
        let loo = leave_one_out_posterior(state, data, k, spec, &eval_grid)?;
        br.push(br_distance(&reference, &loo)?);
    }

    let dist_input: Vec<f64> = match cfg.br_sign {
        BrSign::Paper => br.iter().map(|d| -d).collect(),
        BrSign::Inverted => br.clone(),
    };
    let norm_dist = normalize(&dist_input);
    let norm_local = normalize(&local);
    let fused = norm_dist
        .iter()
        .zip(&norm_local)
        .map(|(d, l)| cfg.k_phi * d + (1.0 - cfg.k_phi) * l)
        .collect();
    Ok(MetricScores { local, br, fused })
}

/// Result of one compression step.
#[derive(Debug, Clone)]
pub struct CompressOutcome {
    pub data: Dataset,
    pub state: RecursiveState,
    /// Dataset index that was removed.
    pub removed: usize,
    /// True when the lowest-scored candidate was numerically unremovable and
    /// a later candidate was removed instead.
    pub fell_back: bool,
}

/// Candidate order: ascending score, ties broken by lowest dataset index.
fn removal_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    order
}

/// Removes candidates in score order until one succeeds, logging skips.
pub(crate) fn remove_first_viable(
    data: &Dataset,
    state: &RecursiveState,
    order: &[usize],
) -> Result<CompressOutcome> {
    for (attempt, &k) in order.iter().enumerate() {
        match remove_point(state, data, k) {
            Ok((new_state, new_data)) => {
                return Ok(CompressOutcome {
                    data: new_data,
                    state: new_state,
                    removed: k,
                    fell_back: attempt > 0,
                })
            }
            Err(Error::RemovalSingular { index, pivot }) => {
                log::warn!(
                    "skipping singular removal candidate {index} (pivot {pivot:.3e}), trying next"
                );
            }
            Err(other) => return Err(other),
        }
    }
    Err(Error::Numerical("no candidate could be removed".into()))
}

/// One compression step: scores the `budget + 1` candidates and removes the
/// least useful. Without a distributed map (cold start, or purely local
/// compression) only the local score is used.
pub fn compress(
    data: &Dataset,
    state: &RecursiveState,
    dist_map: Option<&GaussianMap>,
    cfg: &SparsityConfig,
    spec: &KernelSpec,
) -> Result<CompressOutcome> {
    let n = data.len();
    if n != cfg.budget + 1 {
        return Err(Error::Argument(format!(
            "compress expects budget + 1 = {} points, got {n}",
            cfg.budget + 1
        )));
    }
    let scores = match dist_map {
        Some(map) => distributed_metric(data, state, map, cfg, spec)?.fused,
        None => {
            let raw: Result<Vec<f64>> = (0..n).map(|k| local_score(state, k)).collect();
            normalize(&raw?)
        }
    };
    let order = removal_order(&scores);
    let outcome = remove_first_viable(data, state, &order)?;
    debug_assert_eq!(outcome.data.len(), cfg.budget);
    Ok(outcome)
}
