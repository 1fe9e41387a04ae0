//! Squared-exponential Gaussian process regression in three forms: batch
//! (reference solve), recursive streaming, and decremental (point removal).
//!
//! The streaming form maintains the triple (alpha, C, Q) aligned with the
//! robot's dataset:
//!
//! * `alpha = (K + sigma_e^2 I)^-1 Y` — predictive mean weights,
//! * `c_mat = -(K + sigma_e^2 I)^-1` — negated noisy Gram inverse,
//! * `q_mat = K^-1` — noiseless Gram inverse.
//!
//! Adding a point is a rank-one extension, removing one is the exact inverse
//! block downdate, so predictions stay equal to the batch solve at every step.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Scale factor for the duplicate-input / singular-pivot guards.
const DEGENERACY_SCALE: f64 = 1e-12;

/// Base diagonal jitter, scaled by the signal variance (doubled on retry).
const JITTER_BASE: f64 = 1e-10;

/// A point in the input space. One entry per input dimension.
pub type Position = Vec<f64>;

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

/// Squared-exponential kernel hyper-parameters plus observation noise.
///
/// The kernel is `sigma_f^2 * exp(-sum_d ((a_d - b_d) / l_d)^2)` with one
/// length-scale `l_d` per input dimension.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelSpec {
    /// Prior signal variance sigma_f^2 (field units squared).
    pub signal_variance: f64,
    /// Per-axis length-scales (position units).
    pub length_scales: Vec<f64>,
    /// Observation noise variance sigma_e^2 (field units squared).
    pub noise_variance: f64,
}

impl KernelSpec {
    pub fn new(signal_variance: f64, length_scales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(signal_variance) || !positive(noise_variance) {
            return Err(Error::Argument(format!(
                "kernel variances must be positive (sigma_f^2 = {signal_variance}, sigma_e^2 = {noise_variance})"
            )));
        }
        if length_scales.is_empty() || !length_scales.iter().all(|l| positive(*l)) {
            return Err(Error::Argument(format!(
                "length scales must be positive, got {length_scales:?}"
            )));
        }
        Ok(KernelSpec {
            signal_variance,
            length_scales,
            noise_variance,
        })
    }

    /// Number of input dimensions this kernel expects.
    pub fn input_dim(&self) -> usize {
        self.length_scales.len()
    }

    /// Kernel value between two positions. Errors on dimension mismatch.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != self.input_dim() || b.len() != self.input_dim() {
            return Err(Error::Argument(format!(
                "kernel expects dimension {}, got {} and {}",
                self.input_dim(),
                a.len(),
                b.len()
            )));
        }
        Ok(self.eval_unchecked(a, b))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut exponent = 0.0;
        for d in 0..self.length_scales.len() {
            let scaled = (a[d] - b[d]) / self.length_scales[d];
            exponent += scaled * scaled;
        }
        self.signal_variance * (-exponent).exp()
    }

    /// kappa(x, x); constant for the squared-exponential kernel.
    #[inline]
    pub fn prior_variance(&self) -> f64 {
        self.signal_variance
    }
}

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

/// A single sensed sample: where, what, who, when.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Observation {
    pub position: Position,
    pub value: f64,
    pub robot_id: usize,
    pub step_index: usize,
}

impl Observation {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.position.iter().all(|x| x.is_finite())
    }
}

/// An ordered set of observations. Index `k` everywhere in the GP state refers
/// to position `k` here; insertion order is preserved across removals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub observations: Vec<Observation>,
}

impl Dataset {
    pub fn new() -> Self {
        Dataset {
            observations: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn push(&mut self, obs: Observation) {
        self.observations.push(obs);
    }

    pub fn position(&self, k: usize) -> &[f64] {
        &self.observations[k].position
    }

    pub fn values(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.observations.iter().map(|o| o.value))
    }
}

// ---------------------------------------------------------------------------
// Test grid and Gaussian maps
// ---------------------------------------------------------------------------

/// The fixed, ordered list of test positions over which maps are maintained.
#[derive(Debug, Clone, PartialEq)]
pub struct TestGrid {
    pub positions: Vec<Position>,
}

impl TestGrid {
    pub fn from_positions(positions: Vec<Position>) -> Self {
        TestGrid { positions }
    }

    /// `n` equally spaced 1-D points on `[x0, x1]`, endpoints included.
    pub fn regular_1d(x0: f64, x1: f64, n: usize) -> Self {
        let step = if n > 1 {
            (x1 - x0) / (n - 1) as f64
        } else {
            0.0
        };
        TestGrid {
            positions: (0..n).map(|i| vec![x0 + step * i as f64]).collect(),
        }
    }

    /// Row-major `nx * ny` mesh over the rectangle, x varying fastest.
    pub fn regular_2d(min: [f64; 2], max: [f64; 2], nx: usize, ny: usize) -> Self {
        let dx = if nx > 1 {
            (max[0] - min[0]) / (nx - 1) as f64
        } else {
            0.0
        };
        let dy = if ny > 1 {
            (max[1] - min[1]) / (ny - 1) as f64
        } else {
            0.0
        };
        let mut positions = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                positions.push(vec![min[0] + dx * ix as f64, min[1] + dy * iy as f64]);
            }
        }
        TestGrid { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.first().map_or(0, |p| p.len())
    }
}

/// Posterior mean and per-point variance over a fixed test grid. This is the
/// unit exchanged between the local GP, consensus, and the sparsity metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMap {
    pub grid: Arc<TestGrid>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianMap {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Two maps are compatible when they refer to the same grid.
    pub fn compatible(&self, other: &GaussianMap) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid)
            || (self.grid.len() == other.grid.len() && self.grid.dim() == other.grid.dim())
    }

    /// Local GP outputs must satisfy `0 < variance <= sigma_f^2 + 1e-9`.
    pub fn check_local_variance_bounds(&self, spec: &KernelSpec) -> Result<()> {
        let hi = spec.signal_variance + 1e-9;
        for (j, v) in self.variance.iter().enumerate() {
            if !(*v > 0.0 && *v <= hi) {
                return Err(Error::Numerical(format!(
                    "variance {v} at grid point {j} outside (0, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Recursive state
// ---------------------------------------------------------------------------

/// The streaming GP triple. Dimensions always equal the dataset size.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursiveState {
    pub alpha: DVector<f64>,
    pub c_mat: DMatrix<f64>,
    pub q_mat: DMatrix<f64>,
}

impl Default for RecursiveState {
    fn default() -> Self {
        Self::empty()
    }
}

impl RecursiveState {
    pub fn empty() -> Self {
        RecursiveState {
            alpha: DVector::zeros(0),
            c_mat: DMatrix::zeros(0, 0),
            q_mat: DMatrix::zeros(0, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Scalar and directional increments produced by one streaming add. Lets a
/// cached grid map follow the update in O(t * T) instead of a full recompute.
#[derive(Debug, Clone)]
pub struct AddUpdate {
    /// Mean increment coefficient (the prediction-residual gain).
    pub mean_coeff: f64,
    /// Variance increment coefficient; always negative.
    pub var_coeff: f64,
    /// Inverse of the noiseless predictive variance at the new point.
    pub gamma: f64,
    /// `C_t * K(X_t, x_new)`; combined with the kernel column it gives the
    /// per-test-point update direction.
    pub direction: DVector<f64>,
}

// ---------------------------------------------------------------------------
// Shared dense helpers
// ---------------------------------------------------------------------------

/// Kernel Gram matrix of the dataset positions (no noise on the diagonal).
pub fn gram_matrix(data: &Dataset, spec: &KernelSpec) -> DMatrix<f64> {
    let t = data.len();
    DMatrix::from_fn(t, t, |i, j| {
        spec.eval_unchecked(data.position(i), data.position(j))
    })
}

fn kernel_column(data: &Dataset, x: &[f64], spec: &KernelSpec) -> DVector<f64> {
    DVector::from_iterator(
        data.len(),
        data.observations
            .iter()
            .map(|o| spec.eval_unchecked(&o.position, x)),
    )
}

/// SPD factorization with a jitter ladder: clean attempt first, then
/// `1e-10 * sigma_f^2` doubled up to three times before giving up.
pub(crate) fn spd_cholesky(
    matrix: &DMatrix<f64>,
    signal_variance: f64,
) -> Result<Cholesky<f64, Dyn>> {
    let base = JITTER_BASE * signal_variance;
    for jitter in [0.0, base, 2.0 * base, 4.0 * base] {
        let mut m = matrix.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(chol);
        }
    }
    // Report Gershgorin bounds so the caller can see how indefinite it was.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..matrix.nrows() {
        let off: f64 = (0..matrix.ncols())
            .filter(|&j| j != i)
            .map(|j| matrix[(i, j)].abs())
            .sum();
        lo = lo.min(matrix[(i, i)] - off);
        hi = hi.max(matrix[(i, i)] + off);
    }
    Err(Error::Numerical(format!(
        "matrix not SPD after jitter ladder (size {}, Gershgorin eigenvalue bounds [{lo:.3e}, {hi:.3e}])",
        matrix.nrows()
    )))
}

fn check_consistency(state: &RecursiveState, data: &Dataset) -> Result<()> {
    if state.len() != data.len() {
        return Err(Error::Argument(format!(
            "state dimension {} does not match dataset size {}",
            state.len(),
            data.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Batch prediction (the reference oracle)
// ---------------------------------------------------------------------------

/// Dense GP posterior over the grid by direct SPD solve. This is the
/// reference implementation the recursive path is tested against.
pub fn batch_predict(
    data: &Dataset,
    spec: &KernelSpec,
    grid: &Arc<TestGrid>,
) -> Result<GaussianMap> {
    if data.is_empty() {
        return Err(Error::Argument(
            "batch_predict requires a non-empty dataset".into(),
        ));
    }
    let t = data.len();
    let mut k_noisy = gram_matrix(data, spec);
    for i in 0..t {
        k_noisy[(i, i)] += spec.noise_variance;
    }
    let chol = spd_cholesky(&k_noisy, spec.signal_variance)?;
    let weights = chol.solve(&data.values());
    let l = chol.l();

    let mut mean = Vec::with_capacity(grid.len());
    let mut variance = Vec::with_capacity(grid.len());
    for pos in &grid.positions {
        let k_star = kernel_column(data, pos, spec);
        mean.push(k_star.dot(&weights));
        let z = l
            .solve_lower_triangular(&k_star)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        variance.push(spec.prior_variance() - z.norm_squared());
    }
    Ok(GaussianMap {
        grid: Arc::clone(grid),
        mean,
        variance,
    })
}

// ---------------------------------------------------------------------------
// Recursive streaming update
// ---------------------------------------------------------------------------

/// Extends the state with one observation. `data` is the dataset the state
/// currently describes; the caller appends `obs` to it on success.
///
/// Returns the duplicate-input signal when the new position is numerically
/// indistinguishable from an existing one (the noiseless Schur complement
/// vanishes); accepting it would make `q_mat` singular.
pub fn recursive_add(
    state: &RecursiveState,
    data: &Dataset,
    obs: &Observation,
    spec: &KernelSpec,
) -> Result<(RecursiveState, AddUpdate)> {
    check_consistency(state, data)?;
    if obs.position.len() != spec.input_dim() {
        return Err(Error::Argument(format!(
            "observation dimension {} does not match kernel dimension {}",
            obs.position.len(),
            spec.input_dim()
        )));
    }
    if !obs.is_finite() {
        return Err(Error::Argument(
            "observation has non-finite components".into(),
        ));
    }

    let t = state.len();
    let kxx = spec.prior_variance();

    if t == 0 {
        let denom = spec.noise_variance + kxx;
        let q = obs.value / denom;
        let r = -1.0 / denom;
        let gamma = 1.0 / kxx;
        let state = RecursiveState {
            alpha: DVector::from_element(1, q),
            c_mat: DMatrix::from_element(1, 1, r),
            q_mat: DMatrix::from_element(1, 1, gamma),
        };
        let update = AddUpdate {
            mean_coeff: q,
            var_coeff: r,
            gamma,
            direction: DVector::zeros(0),
        };
        return Ok((state, update));
    }

    let k_vec = kernel_column(data, &obs.position, spec);
    let ck = &state.c_mat * &k_vec;
    let qk = &state.q_mat * &k_vec;

    let noiseless_var = kxx - k_vec.dot(&qk);
    if noiseless_var.abs() < DEGENERACY_SCALE * spec.signal_variance {
        let nearest = k_vec.argmax().0;
        return Err(Error::DuplicateInput {
            nearest,
            denom: noiseless_var,
        });
    }
    debug_check_gamma(state, data, &obs.position, spec, noiseless_var);

    let denom = spec.noise_variance + kxx + k_vec.dot(&ck);
    let q = (obs.value - k_vec.dot(&state.alpha)) / denom;
    let r = -1.0 / denom;
    let gamma = 1.0 / noiseless_var;

    // s = [C k; 1], e = [Q k; -1]
    let mut s = DVector::zeros(t + 1);
    s.rows_mut(0, t).copy_from(&ck);
    s[t] = 1.0;
    let mut e = DVector::zeros(t + 1);
    e.rows_mut(0, t).copy_from(&qk);
    e[t] = -1.0;

    let mut alpha = DVector::zeros(t + 1);
    alpha.rows_mut(0, t).copy_from(&state.alpha);
    alpha.axpy(q, &s, 1.0);

    let mut c_mat = DMatrix::zeros(t + 1, t + 1);
    c_mat.view_mut((0, 0), (t, t)).copy_from(&state.c_mat);
    c_mat.ger(r, &s, &s, 1.0);

    let mut q_mat = DMatrix::zeros(t + 1, t + 1);
    q_mat.view_mut((0, 0), (t, t)).copy_from(&state.q_mat);
    q_mat.ger(gamma, &e, &e, 1.0);

    let state = RecursiveState {
        alpha,
        c_mat,
        q_mat,
    };
    let update = AddUpdate {
        mean_coeff: q,
        var_coeff: r,
        gamma,
        direction: ck,
    };
    Ok((state, update))
}

/// In debug builds, cross-checks 1/gamma against an independent dense solve:
/// it must equal the noiseless predictive variance at the new point. Skipped
/// for large states (the dense solve is cubic); the tolerance scales with
/// the conditioning of the noiseless Gram, which limits the accuracy of both
/// routes and comes for free from `Q = K^-1`.
#[cfg(debug_assertions)]
fn debug_check_gamma(
    state: &RecursiveState,
    data: &Dataset,
    x: &[f64],
    spec: &KernelSpec,
    noiseless_var: f64,
) {
    if data.len() > 64 {
        return;
    }
    // Only a clean (jitter-free) factorization is an exact oracle; crowded
    // geometries that need jitter shift the quadratic form by j * |K^-1 k|^2.
    let k = gram_matrix(data, spec);
    if let Some(chol) = Cholesky::new(k.clone()) {
        let k_vec = kernel_column(data, x, spec);
        let z = chol.solve(&k_vec);
        let independent = spec.prior_variance() - k_vec.dot(&z);
        // The recursive route reads k' Q k; the two quadratic forms differ by
        // at most |QK - I| |k| |K^-1 k| (state drift accumulated over
        // add/remove cycles) plus conditioning-scaled rounding noise.
        let t = data.len();
        let drift = (&state.q_mat * &k - DMatrix::<f64>::identity(t, t)).norm();
        let conditioning = t as f64 * spec.signal_variance * state.q_mat.norm() + 1.0;
        let tol = (drift * k_vec.norm() * z.norm() + 1e-12 * conditioning).max(1e-9)
            * spec.signal_variance;
        debug_assert!(
            (noiseless_var - independent).abs() <= tol,
            "gamma invariant violated: recursive {noiseless_var}, dense {independent}, \
             drift {drift:.3e}, conditioning {conditioning:.3e}"
        );
    }
}

#[cfg(not(debug_assertions))]
fn debug_check_gamma(_: &RecursiveState, _: &Dataset, _: &[f64], _: &KernelSpec, _: f64) {}

/// Posterior over the grid from the streaming state. Empty state yields the
/// prior (zero mean, kappa(x, x) variance).
pub fn recursive_predict(
    state: &RecursiveState,
    data: &Dataset,
    spec: &KernelSpec,
    grid: &Arc<TestGrid>,
) -> Result<GaussianMap> {
    check_consistency(state, data)?;
    let t = state.len();
    if t == 0 {
        return Ok(GaussianMap {
            grid: Arc::clone(grid),
            mean: vec![0.0; grid.len()],
            variance: vec![spec.prior_variance(); grid.len()],
        });
    }
    let n = grid.len();
    let k_star = DMatrix::from_fn(n, t, |j, i| {
        spec.eval_unchecked(&grid.positions[j], data.position(i))
    });
    let mean_vec = &k_star * &state.alpha;
    let cross = &k_star * &state.c_mat;
    let kxx = spec.prior_variance();
    let mut variance = Vec::with_capacity(n);
    for j in 0..n {
        variance.push(kxx + cross.row(j).dot(&k_star.row(j)));
    }
    Ok(GaussianMap {
        grid: Arc::clone(grid),
        mean: mean_vec.iter().copied().collect(),
        variance,
    })
}

// ---------------------------------------------------------------------------
// Decremental update
// ---------------------------------------------------------------------------

/// Permutes index `k` to the end, preserving the relative order of survivors.
fn permute_to_last(state: &RecursiveState, k: usize) -> RecursiveState {
    let t = state.len();
    let index: Vec<usize> = (0..t)
        .filter(|&i| i != k)
        .chain(std::iter::once(k))
        .collect();
    let alpha = DVector::from_fn(t, |i, _| state.alpha[index[i]]);
    let c_mat = DMatrix::from_fn(t, t, |i, j| state.c_mat[(index[i], index[j])]);
    let q_mat = DMatrix::from_fn(t, t, |i, j| state.q_mat[(index[i], index[j])]);
    RecursiveState {
        alpha,
        c_mat,
        q_mat,
    }
}

/// Removes observation `k` (0-based) from the state and dataset. Exact: the
/// result equals rebuilding the state from the surviving points.
///
/// Each recursive variable is reduced by its own inverse block downdate; the
/// dividing pivots come from the matrix being reduced, which keeps all state
/// identities intact for any noise level.
pub fn remove_point(
    state: &RecursiveState,
    data: &Dataset,
    k: usize,
) -> Result<(RecursiveState, Dataset)> {
    check_consistency(state, data)?;
    let t = state.len();
    if t < 2 {
        return Err(Error::Argument(format!(
            "remove_point needs at least 2 points, have {t}"
        )));
    }
    if k >= t {
        return Err(Error::Argument(format!(
            "remove index {k} out of range for size {t}"
        )));
    }

    let p = permute_to_last(state, k);
    let m = t - 1;
    let q_pivot = p.q_mat[(m, m)];
    if q_pivot.abs() < DEGENERACY_SCALE {
        return Err(Error::RemovalSingular {
            index: k,
            pivot: q_pivot,
        });
    }
    let c_pivot = p.c_mat[(m, m)];
    let q_col = p.q_mat.view((0, m), (m, 1)).into_owned();
    let c_col = p.c_mat.view((0, m), (m, 1)).into_owned();
    let alpha_last = p.alpha[m];

    let mut alpha = p.alpha.rows(0, m).into_owned();
    alpha.axpy(-alpha_last / c_pivot, &c_col.column(0).into_owned(), 1.0);

    let mut c_mat = p.c_mat.view((0, 0), (m, m)).into_owned();
    c_mat.ger(
        -1.0 / c_pivot,
        &c_col.column(0).into_owned(),
        &c_col.column(0).into_owned(),
        1.0,
    );

    let mut q_mat = p.q_mat.view((0, 0), (m, m)).into_owned();
    q_mat.ger(
        -1.0 / q_pivot,
        &q_col.column(0).into_owned(),
        &q_col.column(0).into_owned(),
        1.0,
    );

    let mut reduced = data.clone();
    reduced.observations.remove(k);
    Ok((
        RecursiveState {
            alpha,
            c_mat,
            q_mat,
        },
        reduced,
    ))
}

/// Exactly replaces the stored value of observation `k` with `new_value`.
///
/// Only `alpha` depends on the observation values (linearly), so the state
/// stays consistent: `alpha' = alpha - dy * C[:, k]`. Used to fold a rejected
/// duplicate observation into the existing record.
pub fn replace_value(
    state: &RecursiveState,
    data: &Dataset,
    k: usize,
    new_value: f64,
) -> Result<(RecursiveState, Dataset)> {
    check_consistency(state, data)?;
    if k >= data.len() {
        return Err(Error::Argument(format!(
            "replace index {k} out of range for size {}",
            data.len()
        )));
    }
    let dy = new_value - data.observations[k].value;
    let mut new_state = state.clone();
    let c_col = state.c_mat.column(k).into_owned();
    new_state.alpha.axpy(-dy, &c_col, 1.0);
    let mut new_data = data.clone();
    new_data.observations[k].value = new_value;
    Ok((new_state, new_data))
}

// ---------------------------------------------------------------------------
// Streaming grid map
// ---------------------------------------------------------------------------

/// A grid map that follows the streaming state incrementally.
///
/// Each add costs O(t * T) using the `AddUpdate` intermediates; a removal
/// requires a `rebuild`. Values match `recursive_predict` up to accumulation
/// rounding.
#[derive(Debug, Clone)]
pub struct StreamingMap {
    grid: Arc<TestGrid>,
    k_star: DMatrix<f64>,
    mean: DVector<f64>,
    variance: DVector<f64>,
}

impl StreamingMap {
    /// Prior map over the grid (no observations yet).
    pub fn new(grid: Arc<TestGrid>, spec: &KernelSpec) -> Self {
        let n = grid.len();
        StreamingMap {
            grid,
            k_star: DMatrix::zeros(n, 0),
            mean: DVector::zeros(n),
            variance: DVector::from_element(n, spec.prior_variance()),
        }
    }

    /// Applies one add. `new_position` is the observation the update came
    /// from; the cached state must still be the pre-add one.
    pub fn absorb(&mut self, update: &AddUpdate, new_position: &[f64], spec: &KernelSpec) {
        let t = self.k_star.ncols();
        debug_assert_eq!(update.direction.len(), t);
        let n = self.grid.len();
        let new_col = DVector::from_fn(n, |j, _| {
            spec.eval_unchecked(&self.grid.positions[j], new_position)
        });
        // h(x*) = K(x*, X_t) (C_t k) + kappa(x*, x_new)
        let mut h = new_col.clone();
        if t > 0 {
            h.gemv(1.0, &self.k_star, &update.direction, 1.0);
        }
        self.mean.axpy(update.mean_coeff, &h, 1.0);
        for j in 0..n {
            self.variance[j] += update.var_coeff * h[j] * h[j];
        }
        self.k_star = self.k_star.clone().insert_column(t, 0.0);
        self.k_star.set_column(t, &new_col);
    }

    /// Full recompute from the current state; required after removals.
    pub fn rebuild(
        &mut self,
        state: &RecursiveState,
        data: &Dataset,
        spec: &KernelSpec,
    ) -> Result<()> {
        let fresh = recursive_predict(state, data, spec, &self.grid)?;
        let t = data.len();
        self.k_star = DMatrix::from_fn(self.grid.len(), t, |j, i| {
            spec.eval_unchecked(&self.grid.positions[j], data.position(i))
        });
        self.mean = DVector::from_vec(fresh.mean);
        self.variance = DVector::from_vec(fresh.variance);
        Ok(())
    }

    pub fn as_map(&self) -> GaussianMap {
        GaussianMap {
            grid: Arc::clone(&self.grid),
            mean: self.mean.iter().copied().collect(),
            variance: self.variance.iter().copied().collect(),
        }
    }

    pub fn grid(&self) -> &Arc<TestGrid> {
        &self.grid
    }
}

#[cfg(test)]
mod tests {
    // Expected values are frozen from independent high-precision evaluations
    // with their full digit strings.
    #![allow(clippy::excessive_precision)]

    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec_1d() -> KernelSpec {
        KernelSpec::new(1.0, vec![1.0], 0.1).unwrap()
    }

    fn spec_2d() -> KernelSpec {
        KernelSpec::new(1.0, vec![0.7, 0.9], 0.1).unwrap()
    }

    fn obs(position: Vec<f64>, value: f64) -> Observation {
        Observation {
            position,
            value,
            robot_id: 0,
            step_index: 0,
        }
    }

    /// Random well-separated points so Gram conditioning stays benign.
    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, min_sep: f64) -> Dataset {
        let mut data = Dataset::new();
        while data.len() < n {
            let cand: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..4.0)).collect();
            let ok = data.observations.iter().all(|o| {
                let d2: f64 = o
                    .position
                    .iter()
                    .zip(&cand)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() > min_sep
            });
            if ok {
                data.push(obs(cand, rng.gen_range(-2.0..2.0)));
            }
        }
        data
    }

    fn build_recursive(data: &Dataset, spec: &KernelSpec) -> RecursiveState {
        let mut state = RecursiveState::empty();
        let mut seen = Dataset::new();
        for o in &data.observations {
            let (next, _) = recursive_add(&state, &seen, o, spec).unwrap();
            state = next;
            seen.push(o.clone());
        }
        state
    }

    #[test]
    fn kernel_zero_distance_is_signal_variance() {
        let spec = spec_2d();
        assert_eq!(spec.eval(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
    }

    #[test]
    fn kernel_unit_scaled_distance() {
        let spec = spec_1d();
        // exp(-1), frozen from an independent high-precision evaluation.
        assert_relative_eq!(
            spec.eval(&[0.0], &[1.0]).unwrap(),
            0.3678794411714423216,
            max_relative = 1e-14
        );
    }

    #[test]
    fn kernel_matches_independent_formula_evaluation() {
        // a=(0,0), b=(1,2), l=(1/sqrt(26), 1/sqrt(40)): exponent -(26 + 160),
        // value frozen from an independent evaluation of the formula.
        let spec = KernelSpec::new(1.0, vec![1.0 / 26f64.sqrt(), 1.0 / 40f64.sqrt()], 0.1).unwrap();
        assert_relative_eq!(
            spec.eval(&[0.0, 0.0], &[1.0, 2.0]).unwrap(),
            1.664279891894355105e-81,
            max_relative = 1e-12
        );
    }

    #[test]
    fn kernel_dimension_mismatch_is_an_error() {
        let spec = spec_2d();
        assert!(matches!(
            spec.eval(&[0.0], &[1.0, 2.0]),
            Err(Error::Argument(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn kernel_symmetric_and_bounded(
            ax in -5.0..5.0f64, ay in -5.0..5.0f64,
            bx in -5.0..5.0f64, by in -5.0..5.0f64,
        ) {
            let spec = spec_2d();
            let kab = spec.eval(&[ax, ay], &[bx, by]).unwrap();
            let kba = spec.eval(&[bx, by], &[ax, ay]).unwrap();
            proptest::prop_assert_eq!(kab, kba);
            proptest::prop_assert!(kab > 0.0 && kab <= spec.signal_variance);
        }
    }

    #[test]
    fn batch_single_point_closed_form() {
        let spec = spec_1d();
        let data = {
            let mut d = Dataset::new();
            d.push(obs(vec![0.5], 2.0));
            d
        };
        let grid = Arc::new(TestGrid::from_positions(vec![vec![0.5]]));
        let map = batch_predict(&data, &spec, &grid).unwrap();
        assert_relative_eq!(map.mean[0], 2.0 * 1.0 / 1.1, max_relative = 1e-12);
        assert_relative_eq!(map.variance[0], 1.0 - 1.0 / 1.1, max_relative = 1e-12);
    }

    #[test]
    fn batch_recovers_prior_far_away() {
        let spec = spec_1d();
        let data = {
            let mut d = Dataset::new();
            d.push(obs(vec![0.0], 2.0));
            d
        };
        let grid = Arc::new(TestGrid::from_positions(vec![vec![40.0]]));
        let map = batch_predict(&data, &spec, &grid).unwrap();
        assert!(map.mean[0].abs() < 1e-12);
        assert_relative_eq!(map.variance[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn batch_two_point_frozen_values() {
        // X = [0, 1], Y = [1, -0.5], l = 1, sigma_f^2 = 1, sigma_e^2 = 0.1.
        // Expected values frozen from an independent 50-digit dense solve.
        let spec = spec_1d();
        let mut data = Dataset::new();
        data.push(obs(vec![0.0], 1.0));
        data.push(obs(vec![1.0], -0.5));
        let grid = Arc::new(TestGrid::from_positions(vec![vec![0.5], vec![2.0]]));
        let map = batch_predict(&data, &spec, &grid).unwrap();
        assert_relative_eq!(map.mean[0], 0.26528090837278921963, max_relative = 1e-12);
        assert_relative_eq!(map.variance[0], 0.1735960833015126062, max_relative = 1e-12);
        assert_relative_eq!(map.mean[1], -0.29232633648744211846, max_relative = 1e-12);
        assert_relative_eq!(
            map.variance[1],
            0.86574387914012002553,
            max_relative = 1e-12
        );
    }

    #[test]
    fn batch_matches_naive_inverse_oracle() {
        // Independent dense route: explicit LU inverse of (K + sigma_e^2 I).
        let spec = spec_2d();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data = random_dataset(&mut rng, 5, 2, 0.2);
        let grid = Arc::new(TestGrid::from_positions(
            (0..7)
                .map(|_| (0..2).map(|_| rng.gen_range(0.0..4.0)).collect())
                .collect(),
        ));
        let map = batch_predict(&data, &spec, &grid).unwrap();

        let mut k = gram_matrix(&data, &spec);
        for i in 0..data.len() {
            k[(i, i)] += spec.noise_variance;
        }
        let inv = k.try_inverse().unwrap();
        let y = data.values();
        for (j, pos) in grid.positions.iter().enumerate() {
            let ks = kernel_column(&data, pos, &spec);
            let mean = ks.dot(&(&inv * &y));
            let var = spec.prior_variance() - ks.dot(&(&inv * &ks));
            assert_relative_eq!(map.mean[j], mean, epsilon = 1e-10);
            assert_relative_eq!(map.variance[j], var, epsilon = 1e-10);
        }
    }

    #[test]
    fn first_add_base_case_scalars() {
        let spec = spec_1d();
        let data = Dataset::new();
        let (state, update) =
            recursive_add(&RecursiveState::empty(), &data, &obs(vec![0.3], 0.7), &spec).unwrap();
        assert_relative_eq!(update.gamma, 1.0, max_relative = 1e-15);
        assert_relative_eq!(update.mean_coeff, 0.7 / 1.1, max_relative = 1e-15);
        assert_relative_eq!(update.var_coeff, -1.0 / 1.1, max_relative = 1e-15);
        assert_eq!(state.len(), 1);
        assert_relative_eq!(state.q_mat[(0, 0)], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn gamma_is_noiseless_batch_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = spec_2d();
        let data = random_dataset(&mut rng, 12, 2, 0.15);
        let state = build_recursive(&data, &spec);
        let new = obs(vec![1.7, 2.2], 0.0);
        let (_, update) = recursive_add(&state, &data, &new, &spec).unwrap();

        // Oracle: batch solve with zero noise (jitter ladder handles SPD).
        let noiseless = KernelSpec::new(1.0, vec![0.7, 0.9], 1e-300).unwrap();
        let k = gram_matrix(&data, &noiseless);
        let chol = spd_cholesky(&k, noiseless.signal_variance).unwrap();
        let kv = kernel_column(&data, &new.position, &noiseless);
        let var = noiseless.prior_variance() - kv.dot(&chol.solve(&kv));
        assert_relative_eq!(1.0 / update.gamma, var, max_relative = 1e-7);
    }

    #[test]
    fn recursive_matches_batch_after_fifty_adds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = spec_2d();
        let data = random_dataset(&mut rng, 50, 2, 0.12);
        let state = build_recursive(&data, &spec);
        let grid = Arc::new(TestGrid::regular_2d([0.0, 0.0], [4.0, 4.0], 12, 12));
        let rec = recursive_predict(&state, &data, &spec, &grid).unwrap();
        let bat = batch_predict(&data, &spec, &grid).unwrap();
        for j in 0..grid.len() {
            assert!((rec.mean[j] - bat.mean[j]).abs() < 1e-8);
            assert!((rec.variance[j] - bat.variance[j]).abs() < 1e-8);
        }
        rec.check_local_variance_bounds(&spec).unwrap();
    }

    #[test]
    fn empty_state_predicts_prior() {
        let spec = spec_1d();
        let grid = Arc::new(TestGrid::regular_1d(0.0, 4.0, 9));
        let map =
            recursive_predict(&RecursiveState::empty(), &Dataset::new(), &spec, &grid).unwrap();
        assert!(map.mean.iter().all(|m| *m == 0.0));
        assert!(map.variance.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn single_observation_matches_closed_form() {
        let spec = spec_1d();
        let mut data = Dataset::new();
        let o = obs(vec![1.2], -0.4);
        let (state, _) = recursive_add(&RecursiveState::empty(), &data, &o, &spec).unwrap();
        data.push(o);
        let grid = Arc::new(TestGrid::from_positions(vec![vec![1.2]]));
        let map = recursive_predict(&state, &data, &spec, &grid).unwrap();
        assert_relative_eq!(map.mean[0], -0.4 / 1.1, max_relative = 1e-12);
        assert_relative_eq!(map.variance[0], 1.0 - 1.0 / 1.1, max_relative = 1e-12);
    }

    #[test]
    fn add_then_remove_restores_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = spec_2d();
        let data = random_dataset(&mut rng, 8, 2, 0.15);
        let state = build_recursive(&data, &spec);
        let z = obs(vec![rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)], 0.9);
        let (grown, _) = recursive_add(&state, &data, &z, &spec).unwrap();
        let mut grown_data = data.clone();
        grown_data.push(z);
        let (back, back_data) = remove_point(&grown, &grown_data, data.len()).unwrap();
        assert_eq!(back_data, data);
        assert!((&back.alpha - &state.alpha).amax() < 1e-8);
        assert!((&back.c_mat - &state.c_mat).amax() < 1e-8);
        assert!((&back.q_mat - &state.q_mat).amax() < 1e-8);
    }

    #[test]
    fn interior_removal_matches_batch_on_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let spec = spec_2d();
        let data = random_dataset(&mut rng, 10, 2, 0.15);
        let state = build_recursive(&data, &spec);
        let grid = Arc::new(TestGrid::regular_2d([0.0, 0.0], [4.0, 4.0], 8, 8));
        for k in [0, 4, 9] {
            let (reduced, survivors) = remove_point(&state, &data, k).unwrap();
            assert_eq!(survivors.len(), 9);
            let rec = recursive_predict(&reduced, &survivors, &spec, &grid).unwrap();
            let bat = batch_predict(&survivors, &spec, &grid).unwrap();
            for j in 0..grid.len() {
                assert!((rec.mean[j] - bat.mean[j]).abs() < 1e-8);
                assert!((rec.variance[j] - bat.variance[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn removal_from_two_equals_fresh_single_add() {
        let spec = spec_1d();
        let mut data = Dataset::new();
        data.push(obs(vec![0.0], 1.0));
        data.push(obs(vec![1.5], -0.5));
        let state = build_recursive(&data, &spec);
        let (reduced, survivors) = remove_point(&state, &data, 0).unwrap();

        let fresh = {
            let d = Dataset::new();
            let (s, _) = recursive_add(
                &RecursiveState::empty(),
                &d,
                &survivors.observations[0],
                &spec,
            )
            .unwrap();
            s
        };
        assert!((&reduced.alpha - &fresh.alpha).amax() < 1e-10);
        assert!((&reduced.c_mat - &fresh.c_mat).amax() < 1e-10);
        assert!((&reduced.q_mat - &fresh.q_mat).amax() < 1e-10);
    }

    #[test]
    fn duplicate_point_is_rejected_and_folds_in_exactly() {
        let spec = spec_1d();
        let mut data = Dataset::new();
        let mut state = RecursiveState::empty();
        for o in [obs(vec![0.0], 1.0), obs(vec![2.0], 0.5)] {
            let (next, _) = recursive_add(&state, &data, &o, &spec).unwrap();
            state = next;
            data.push(o);
        }
        let dup = obs(vec![2.0], 0.9);
        let err = recursive_add(&state, &data, &dup, &spec).unwrap_err();
        let nearest = match err {
            Error::DuplicateInput { nearest, .. } => nearest,
            other => panic!("expected DuplicateInput, got {other:?}"),
        };
        assert_eq!(nearest, 1);

        // Average the value into the existing record; state must stay exact.
        let merged = 0.5 * (data.observations[nearest].value + dup.value);
        let (state, data) = replace_value(&state, &data, nearest, merged).unwrap();
        let grid = Arc::new(TestGrid::regular_1d(-1.0, 3.0, 11));
        let rec = recursive_predict(&state, &data, &spec, &grid).unwrap();
        let bat = batch_predict(&data, &spec, &grid).unwrap();
        for j in 0..grid.len() {
            assert!((rec.mean[j] - bat.mean[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn state_identities_hold_through_adds_and_removes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = spec_2d();
        let mut data = Dataset::new();
        let mut state = RecursiveState::empty();
        for step in 0..60 {
            if state.len() >= 2 && rng.gen_bool(0.3) {
                let k = rng.gen_range(0..state.len());
                let (s, d) = remove_point(&state, &data, k).unwrap();
                state = s;
                data = d;
            } else {
                let cand = random_dataset(&mut rng, 1, 2, 0.0)
                    .observations
                    .pop()
                    .unwrap();
                let near = data.observations.iter().any(|o| {
                    let d2: f64 = o
                        .position
                        .iter()
                        .zip(&cand.position)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    d2.sqrt() < 0.1
                });
                if near {
                    continue;
                }
                let (s, _) = recursive_add(&state, &data, &cand, &spec).unwrap();
                state = s;
                data.push(cand);
            }
            if data.is_empty() {
                continue;
            }
            let t = data.len();
            let k = gram_matrix(&data, &spec);
            let mut k_noisy = k.clone();
            for i in 0..t {
                k_noisy[(i, i)] += spec.noise_variance;
            }
            let id = DMatrix::<f64>::identity(t, t);
            let q_err = (&state.q_mat * &k - &id).norm();
            let c_err = (&state.c_mat * &k_noisy + &id).norm();
            assert!(q_err < 1e-6, "step {step}: |QK - I| = {q_err}");
            assert!(c_err < 1e-6, "step {step}: |C(K+sI) + I| = {c_err}");
        }
    }

    #[test]
    fn streaming_map_tracks_recursive_predict() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = spec_2d();
        let grid = Arc::new(TestGrid::regular_2d([0.0, 0.0], [4.0, 4.0], 6, 6));
        let mut live = StreamingMap::new(Arc::clone(&grid), &spec);
        let mut data = Dataset::new();
        let mut state = RecursiveState::empty();
        for o in random_dataset(&mut rng, 20, 2, 0.12).observations {
            let (next, update) = recursive_add(&state, &data, &o, &spec).unwrap();
            live.absorb(&update, &o.position, &spec);
            state = next;
            data.push(o);
        }
        let fresh = recursive_predict(&state, &data, &spec, &grid).unwrap();
        let live_map = live.as_map();
        for j in 0..grid.len() {
            assert!((live_map.mean[j] - fresh.mean[j]).abs() < 1e-10);
            assert!((live_map.variance[j] - fresh.variance[j]).abs() < 1e-10);
        }

        // After a removal the cache is rebuilt and must agree again.
        let (state, data) = remove_point(&state, &data, 3).unwrap();
        live.rebuild(&state, &data, &spec).unwrap();
        let fresh = recursive_predict(&state, &data, &spec, &grid).unwrap();
        let live_map = live.as_map();
        for j in 0..grid.len() {
            assert!((live_map.mean[j] - fresh.mean[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn predicted_variances_stay_in_prior_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let spec = spec_2d();
        let grid = Arc::new(TestGrid::regular_2d([0.0, 0.0], [4.0, 4.0], 10, 10));
        for _ in 0..5 {
            let data = random_dataset(&mut rng, 25, 2, 0.12);
            let state = build_recursive(&data, &spec);
            let map = recursive_predict(&state, &data, &spec, &grid).unwrap();
            map.check_local_variance_bounds(&spec).unwrap();
        }
    }

    #[test]
    fn indefinite_system_reports_conditioning() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = spd_cholesky(&m, 1.0).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("Gershgorin"), "report missing bounds: {text}");
    }

    #[test]
    fn remove_needs_two_points() {
        let spec = spec_1d();
        let mut data = Dataset::new();
        let o = obs(vec![0.0], 1.0);
        let (state, _) = recursive_add(&RecursiveState::empty(), &data, &o, &spec).unwrap();
        data.push(o);
        assert!(matches!(
            remove_point(&state, &data, 0),
            Err(Error::Argument(_))
        ));

        let o2 = obs(vec![2.0], 0.3);
        let (grown, _) = recursive_add(&state, &data, &o2, &spec).unwrap();
        data.push(o2);
        assert!(matches!(
            remove_point(&grown, &data, 2),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn batch_rejects_empty_dataset() {
        let spec = spec_1d();
        let grid = Arc::new(TestGrid::regular_1d(0.0, 1.0, 3));
        assert!(matches!(
            batch_predict(&Dataset::new(), &spec, &grid),
            Err(Error::Argument(_))
        ));
    }
}
