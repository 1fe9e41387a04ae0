//! First-order dynamic average consensus over the test grid, with
//! product-of-experts reference inputs, map recovery, the centralized PoE
//! oracle, and the aggregation error-bound calculator.
//!
//! Every robot tracks a two-component consensus state per grid point: a
//! precision-weighted mean term and a precision term. With doubly-stochastic
//! weights the states converge to the network average of the reference
//! inputs, whose recovery is exactly the PoE fusion of the local maps.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gp::{GaussianMap, KernelSpec, TestGrid};

/// Floor applied to the precision component before recovery; early rounds can
/// drive it to zero or below before the network has mixed.
pub const XI_PRECISION_FLOOR: f64 = 1e-9;

/// Consensus and bound parameters shared by the robot team.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConsensusParams {
    /// Correction variance sigma_n^2 added to local variances before
    /// inversion (keeps reference precisions finite).
    pub correction_variance: f64,
    /// Connectivity period B: every window of B consecutive graphs must have
    /// a strongly connected union.
    pub connectivity_period: usize,
    /// Weight floor phi: minimum diagonal weight and minimum nonzero
    /// off-diagonal weight of every adjacency matrix.
    pub weight_floor: f64,
    /// Team size p.
    pub robot_count: usize,
}

impl ConsensusParams {
    pub fn new(
        correction_variance: f64,
        connectivity_period: usize,
        weight_floor: f64,
        robot_count: usize,
    ) -> Result<Self> {
        if !(correction_variance.is_finite() && correction_variance > 0.0) {
            return Err(Error::Argument(format!(
                "correction variance must be positive, got {correction_variance}"
            )));
        }
        if connectivity_period == 0 || robot_count == 0 {
            return Err(Error::Argument(
                "connectivity period and robot count must be at least 1".into(),
            ));
        }
        if !(weight_floor > 0.0 && weight_floor <= 1.0) {
            return Err(Error::Argument(format!(
                "weight floor must lie in (0, 1], got {weight_floor}"
            )));
        }
        Ok(ConsensusParams {
            correction_variance,
            connectivity_period,
            weight_floor,
            robot_count,
        })
    }

    /// Checks the correction-variance selection rule. A violation does not
    /// invalidate the run; it only voids the aggregation error bound, so this
    /// returns a warning message rather than an error.
    pub fn sigma_n_warning(&self, kernel: &KernelSpec, y_bar: f64, mu_bar: f64) -> Option<String> {
        match aggregation_bounds(kernel, self, y_bar, mu_bar) {
            Ok(bounds) if self.correction_variance >= bounds.sigma_n_min => None,
            Ok(bounds) => Some(format!(
                "sigma_n^2 = {} is below the bound-rule minimum {:.6e}; the aggregation error bound does not apply",
                self.correction_variance, bounds.sigma_n_min
            )),
            Err(e) => Some(format!("bound constants unavailable: {e}")),
        }
    }
}

/// The per-robot reference input: precision-weighted mean and precision of
/// the local map, both over the whole grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceInput {
    pub mean_term: Vec<f64>,
    pub precision_term: Vec<f64>,
}

/// Local consensus state of one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub grid: Arc<TestGrid>,
    pub xi_mean_term: Vec<f64>,
    pub xi_precision_term: Vec<f64>,
    pub prev_reference: ReferenceInput,
}

impl ConsensusState {
    /// Initial condition: xi_0 = r_0 with a zero first reference increment.
    pub fn new(grid: Arc<TestGrid>, initial_reference: ReferenceInput) -> Self {
        ConsensusState {
            grid,
            xi_mean_term: initial_reference.mean_term.clone(),
            xi_precision_term: initial_reference.precision_term.clone(),
            prev_reference: initial_reference,
        }
    }

    pub fn grid_len(&self) -> usize {
        self.xi_mean_term.len()
    }
}

/// Aggregation error-bound constants.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstants {
    pub eta: f64,
    pub delta1_hat: f64,
    pub delta2_hat: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Minimum correction variance for which the bound applies.
    pub sigma_n_min: f64,
}

/// Per-grid-point outcome of a bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub points: usize,
    /// Failures against alpha + beta * |mu_poe| (the enforced form).
    pub failed: usize,
    pub max_violation: f64,
    /// Failures against the signed form alpha + beta * mu_poe, reported for
    /// reference alongside the absolute-value form.
    pub failed_signed: usize,
    pub max_violation_signed: f64,
    pub per_point: Vec<bool>,
}

impl BoundReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

/// Builds the PoE reference input from a local map.
pub fn reference_input(local_map: &GaussianMap, sigma_n_sq: f64) -> ReferenceInput {
    let n = local_map.len();
    let mut mean_term = Vec::with_capacity(n);
    let mut precision_term = Vec::with_capacity(n);
    for j in 0..n {
        let precision = 1.0 / (local_map.variance[j] + sigma_n_sq);
        mean_term.push(local_map.mean[j] * precision);
        precision_term.push(precision);
    }
    ReferenceInput {
        mean_term,
        precision_term,
    }
}

/// One synchronous consensus update for one robot:
/// `xi' = xi + sum_j a_ij (xi_j - xi) + (r_new - r_prev)`.
///
/// `neighbors` pairs each neighbor weight `a_ij` with that neighbor's
/// previous-round state; the caller guarantees the weights come from a
/// doubly-stochastic matrix (self weight implicit as 1 - sum a_ij).
pub fn consensus_step(
    state: &ConsensusState,
    neighbors: &[(f64, &ConsensusState)],
    new_reference: &ReferenceInput,
) -> Result<ConsensusState> {
    let n = state.grid_len();
    if new_reference.mean_term.len() != n || new_reference.precision_term.len() != n {
        return Err(Error::Argument(format!(
            "reference length {} does not match grid length {n}",
            new_reference.mean_term.len()
        )));
    }
    let mut weight_sum = 0.0;
    for (w, other) in neighbors {
        if *w < 0.0 {
            return Err(Error::Argument(format!("negative neighbor weight {w}")));
        }
        if other.grid_len() != n {
            return Err(Error::Argument(format!(
                "neighbor grid length {} does not match {n}",
                other.grid_len()
            )));
        }
        weight_sum += *w;
    }
    if weight_sum > 1.0 + 1e-9 {
        return Err(Error::Argument(format!(
            "neighbor weights sum to {weight_sum} > 1"
        )));
    }

    let mut xi_mean = state.xi_mean_term.clone();
    let mut xi_prec = state.xi_precision_term.clone();
    for (w, other) in neighbors {
        for j in 0..n {
            xi_mean[j] += w * (other.xi_mean_term[j] - state.xi_mean_term[j]);
            xi_prec[j] += w * (other.xi_precision_term[j] - state.xi_precision_term[j]);
        }
    }
    for j in 0..n {
        xi_mean[j] += new_reference.mean_term[j] - state.prev_reference.mean_term[j];
        xi_prec[j] += new_reference.precision_term[j] - state.prev_reference.precision_term[j];
    }
    Ok(ConsensusState {
        grid: Arc::clone(&state.grid),
        xi_mean_term: xi_mean,
        xi_precision_term: xi_prec,
        prev_reference: new_reference.clone(),
    })
}

/// A recovered distributed map plus the points where the precision component
/// had to be clamped (still mixing; values there are not meaningful yet).
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredMap {
    pub map: GaussianMap,
    pub transient: Vec<bool>,
}

/// Recovers the distributed map from a consensus state.
pub fn recover_map(state: &ConsensusState) -> RecoveredMap {
    let n = state.grid_len();
    let mut mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    let mut transient = Vec::with_capacity(n);
    for (weighted, raw_precision) in state.xi_mean_term.iter().zip(&state.xi_precision_term) {
        let clamped = *raw_precision <= XI_PRECISION_FLOOR;
        let precision = if clamped {
            XI_PRECISION_FLOOR
        } else {
            *raw_precision
        };
        transient.push(clamped);
        mean.push(weighted / precision);
        variance.push(1.0 / precision);
    }
    RecoveredMap {
        map: GaussianMap {
            grid: Arc::clone(&state.grid),
            mean,
            variance,
        },
        transient,
    }
}

/// Centralized product-of-experts fusion of local maps; the fixed point of
/// the consensus pipeline and the oracle for its convergence tests.
///
/// The fused mean is the precision-weighted average of the local means; the
/// fused variance is the recovery of the averaged precision, i.e.
/// `p / sum_i 1/(var_i + sigma_n^2)`.
pub fn centralized_poe(maps: &[GaussianMap], sigma_n_sq: f64) -> Result<GaussianMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Argument("centralized_poe needs at least one map".into()))?;
    for m in maps {
        if !m.compatible(first) {
            return Err(Error::Argument("maps do not share a grid".into()));
        }
    }
    let n = first.len();
    let p = maps.len() as f64;
    let mut mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    for j in 0..n {
        let mut weighted = 0.0;
        let mut total_precision = 0.0;
        for m in maps {
            let precision = 1.0 / (m.variance[j] + sigma_n_sq);
            weighted += precision * m.mean[j];
            total_precision += precision;
        }
        mean.push(weighted / total_precision);
        variance.push(p / total_precision);
    }
    Ok(GaussianMap {
        grid: Arc::clone(&first.grid),
        mean,
        variance,
    })
}

/// Aggregation error-bound constants for the given kernel, network
/// parameters, and observation bounds (y_bar, mu_bar).
pub fn aggregation_bounds(
    kernel: &KernelSpec,
    params: &ConsensusParams,
    y_bar: f64,
    mu_bar: f64,
) -> Result<BoundConstants> {
    if !(params.weight_floor > 0.0 && params.weight_floor <= 1.0) {
        return Err(Error::Argument(format!(
            "weight floor must lie in (0, 1], got {}",
            params.weight_floor
        )));
    }
    if !(y_bar > 0.0 && mu_bar > 0.0) {
        return Err(Error::Argument(format!(
            "observation bounds must be positive, got y_bar = {y_bar}, mu_bar = {mu_bar}"
        )));
    }
    let p = params.robot_count;
    let b = params.connectivity_period;
    let sf2 = kernel.signal_variance;
    let se2 = kernel.noise_variance;
    let sn2 = params.correction_variance;

    // p(p+1) is even, so the exponent 0.5 p (p+1) B - 1 is an integer.
    let exponent = (p * (p + 1) / 2 * b) as i32 - 1;
    let eta = 4.0 * (p * b - 1) as f64 / params.weight_floor.powi(exponent);

    let denom = sn2 * (se2 + sf2);
    let delta1_hat = y_bar * sf2 * (sn2 + sf2) / denom + mu_bar * sf2 * sf2 / denom;
    let delta2_hat = sf2 * sf2 / denom;
    let alpha = eta * delta1_hat / (1.0 + eta * delta2_hat);
    let beta = (eta * delta2_hat / (1.0 - eta * delta2_hat)).abs();
    let sigma_n_min = eta * sf2 * sf2 / (se2 + sf2);
    Ok(BoundConstants {
        eta,
        delta1_hat,
        delta2_hat,
        alpha,
        beta,
        sigma_n_min,
    })
}

/// Checks `|mu_distributed - mu_poe| <= alpha + beta |mu_poe|` per grid point.
/// The signed form `alpha + beta mu_poe` is tallied alongside for reference.
pub fn check_bound(
    distributed: &GaussianMap,
    poe: &GaussianMap,
    bounds: &BoundConstants,
) -> Result<BoundReport> {
    if !distributed.compatible(poe) {
        return Err(Error::Argument(
            "distributed and PoE maps do not share a grid".into(),
        ));
    }
    let n = distributed.len();
    let mut per_point = Vec::with_capacity(n);
    let mut failed = 0;
    let mut failed_signed = 0;
    let mut max_violation = f64::NEG_INFINITY;
    let mut max_violation_signed = f64::NEG_INFINITY;
    for j in 0..n {
        let err = (distributed.mean[j] - poe.mean[j]).abs();
        let limit_abs = bounds.alpha + bounds.beta * poe.mean[j].abs();
        let limit_signed = bounds.alpha + bounds.beta * poe.mean[j];
        let ok = err <= limit_abs;
        per_point.push(ok);
        if !ok {
            failed += 1;
        }
        if err > limit_signed {
            failed_signed += 1;
        }
        max_violation = max_violation.max(err - limit_abs);
        max_violation_signed = max_violation_signed.max(err - limit_signed);
    }
    Ok(BoundReport {
        points: n,
        failed,
        max_violation,
        failed_signed,
        max_violation_signed,
        per_point,
    })
}

/// Estimates the Assumption-style observation bounds from the largest
/// magnitude seen so far, with a 1.5 safety factor.
pub fn estimate_observation_bounds(max_abs_value: f64) -> (f64, f64) {
    let bound = 1.5 * max_abs_value.abs().max(f64::MIN_POSITIVE);
    (bound, bound)
}
