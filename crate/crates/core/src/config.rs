//! Scenario configuration: a flat, typed key schema loadable from TOML or
//! JSON, plus the load-time validators (weight feasibility, correction-
//! variance rule, trajectory/field consistency).

use std::path::Path;
use std::sync::Arc;

use crate::consensus::ConsensusParams;
use crate::error::{Error, Result};
use crate::field::{lawnmower, linear_sweep, Bump, GridTable, Rect, ScalarField, Trajectory};
use crate::gp::{KernelSpec, TestGrid};
use crate::sparsify::{BrSign, SparsityConfig};

fn default_connectivity_period() -> usize {
    1
}
fn default_local_steps() -> usize {
    6
}
fn default_stride() -> usize {
    1
}
fn default_lawnmower_rows() -> usize {
    3
}
fn default_out_dir() -> String {
    "out".into()
}
fn default_true_weight_floor() -> f64 {
    0.0 // 0 means "use edge_weight"
}

/// Full experiment description. Keys are flat and typed so TOML and JSON
/// files describe identical content; see the repository README for the
/// documented schema.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Workspace lower corner, one entry per dimension (1 or 2).
    pub workspace_min: Vec<f64>,
    /// Workspace upper corner.
    pub workspace_max: Vec<f64>,

    pub robot_count: usize,
    /// Samples each robot takes over the whole run (N).
    pub samples_per_robot: usize,
    /// Retained points per robot after compression (M).
    pub budget: usize,

    pub sigma_f_sq: f64,
    /// One length-scale per workspace dimension.
    pub length_scales: Vec<f64>,
    pub sigma_e_sq: f64,
    pub sigma_n_sq: f64,

    #[serde(default = "default_connectivity_period")]
    pub connectivity_period: usize,
    /// Assumption floor phi; 0 (the default) means "equal to edge_weight".
    #[serde(default = "default_true_weight_floor")]
    pub weight_floor: f64,
    pub comm_range: f64,
    pub edge_weight: f64,

    pub k_phi: f64,
    #[serde(default)]
    pub br_sign: BrSign,
    #[serde(default = "default_stride")]
    pub metric_grid_stride: usize,

    #[serde(default = "default_local_steps")]
    pub local_steps_per_round: usize,
    /// Extra consensus-only rounds after the trajectories are exhausted.
    #[serde(default)]
    pub post_rounds: usize,

    pub grid_nx: usize,
    /// 1 for 1-D scenarios.
    pub grid_ny: usize,

    /// "toy1d", "gaussian_mixture", or "tabulated".
    pub field_kind: String,
    #[serde(default)]
    pub field_bump_centers_x: Vec<f64>,
    #[serde(default)]
    pub field_bump_centers_y: Vec<f64>,
    #[serde(default)]
    pub field_bump_amplitudes: Vec<f64>,
    #[serde(default)]
    pub field_bump_widths: Vec<f64>,
    #[serde(default)]
    pub field_csv: Option<String>,

    /// "linear_sweep" or "lawnmower".
    pub trajectory_kind: String,
    #[serde(default)]
    pub sweep_starts_x: Vec<f64>,
    #[serde(default)]
    pub sweep_starts_y: Vec<f64>,
    #[serde(default)]
    pub sweep_ends_x: Vec<f64>,
    #[serde(default)]
    pub sweep_ends_y: Vec<f64>,
    #[serde(default = "default_lawnmower_rows")]
    pub lawnmower_rows: usize,

    /// Assumption-style observation bound; estimated from the field when
    /// absent.
    #[serde(default)]
    pub y_bar: Option<f64>,
    #[serde(default)]
    pub mu_bar: Option<f64>,

    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

impl ScenarioConfig {
    /// Loads a config from TOML or JSON, chosen by extension (with a
    /// try-both fallback for other extensions).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("{}: {e}", path.display()))),
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::Validation(format!("{}: {e}", path.display()))),
            _ => toml::from_str(&text).or_else(|toml_err| {
                serde_json::from_str(&text).map_err(|json_err| {
                    Error::Validation(format!(
                        "{}: not valid TOML ({toml_err}) or JSON ({json_err})",
                        path.display()
                    ))
                })
            }),
        }
    }

    pub fn dimension(&self) -> usize {
        self.workspace_min.len()
    }

    /// Effective weight floor: explicit value, or the edge weight.
    pub fn effective_weight_floor(&self) -> f64 {
        if self.weight_floor > 0.0 {
            self.weight_floor
        } else {
            self.edge_weight
        }
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.sigma_f_sq, self.length_scales.clone(), self.sigma_e_sq)
    }

    pub fn consensus_params(&self) -> Result<ConsensusParams> {
        ConsensusParams::new(
            self.sigma_n_sq,
            self.connectivity_period,
            self.effective_weight_floor(),
            self.robot_count,
        )
    }

    pub fn sparsity(&self) -> Result<SparsityConfig> {
        let mut cfg = SparsityConfig::new(self.budget, self.k_phi)?;
        cfg.metric_grid_stride = self.metric_grid_stride.max(1);
        cfg.br_sign = self.br_sign;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<Arc<TestGrid>> {
        match self.dimension() {
            1 => Ok(Arc::new(TestGrid::regular_1d(
                self.workspace_min[0],
                self.workspace_max[0],
                self.grid_nx,
            ))),
            2 => Ok(Arc::new(TestGrid::regular_2d(
                [self.workspace_min[0], self.workspace_min[1]],
                [self.workspace_max[0], self.workspace_max[1]],
                self.grid_nx,
                self.grid_ny,
            ))),
            d => Err(Error::Validation(format!(
                "unsupported workspace dimension {d}"
            ))),
        }
    }

    pub fn field(&self) -> Result<ScalarField> {
        match self.field_kind.as_str() {
            "toy1d" => Ok(ScalarField::Toy1d),
            "gaussian_mixture" => {
                let n = self.field_bump_amplitudes.len();
                if self.field_bump_centers_x.len() != n
                    || self.field_bump_widths.len() != n
                    || (self.dimension() == 2 && self.field_bump_centers_y.len() != n)
                {
                    return Err(Error::Validation(
                        "field bump arrays must all have the same length".into(),
                    ));
                }
                let bumps = (0..n)
                    .map(|i| {
                        let center = if self.dimension() == 1 {
                            vec![self.field_bump_centers_x[i]]
                        } else {
                            vec![self.field_bump_centers_x[i], self.field_bump_centers_y[i]]
                        };
                        Bump {
                            center,
                            amplitude: self.field_bump_amplitudes[i],
                            width: self.field_bump_widths[i],
                        }
                    })
                    .collect();
                Ok(ScalarField::GaussianMixture(bumps))
            }
            "tabulated" => {
                let path = self.field_csv.as_ref().ok_or_else(|| {
                    Error::Validation("tabulated field requires field_csv".into())
                })?;
                Ok(ScalarField::Tabulated(GridTable::from_path(Path::new(
                    path,
                ))?))
            }
            other => Err(Error::Validation(format!("unknown field kind '{other}'"))),
        }
    }

    pub fn trajectories(&self) -> Result<Vec<Trajectory>> {
        let p = self.robot_count;
        let n = self.samples_per_robot;
        match self.trajectory_kind.as_str() {
            "linear_sweep" => {
                if self.sweep_starts_x.len() != p || self.sweep_ends_x.len() != p {
                    return Err(Error::Validation(format!(
                        "linear_sweep needs {p} start/end x entries"
                    )));
                }
                if self.dimension() == 2
                    && (self.sweep_starts_y.len() != p || self.sweep_ends_y.len() != p)
                {
                    return Err(Error::Validation(format!(
                        "2-D linear_sweep needs {p} start/end y entries"
                    )));
                }
                (0..p)
                    .map(|i| {
                        let (start, end) = if self.dimension() == 1 {
                            (vec![self.sweep_starts_x[i]], vec![self.sweep_ends_x[i]])
                        } else {
                            (
                                vec![self.sweep_starts_x[i], self.sweep_starts_y[i]],
                                vec![self.sweep_ends_x[i], self.sweep_ends_y[i]],
                            )
                        };
                        linear_sweep(&start, &end, n)
                    })
                    .collect()
            }
            "lawnmower" => {
                if self.dimension() != 2 {
                    return Err(Error::Validation(
                        "lawnmower requires a 2-D workspace".into(),
                    ));
                }
                // One horizontal band per robot, bottom to top.
                let band_height = (self.workspace_max[1] - self.workspace_min[1]) / p as f64;
                (0..p)
                    .map(|i| {
                        let y0 = self.workspace_min[1] + band_height * i as f64;
                        let band = Rect {
                            min: [self.workspace_min[0], y0],
                            max: [self.workspace_max[0], y0 + band_height],
                        };
                        lawnmower(&band, self.lawnmower_rows, n)
                    })
                    .collect()
            }
            other => Err(Error::Validation(format!(
                "unknown trajectory kind '{other}'"
            ))),
        }
    }

    /// Observation/prediction bounds: configured values, or the bound
    /// estimator applied to max |field| over the test grid.
    pub fn observation_bounds(&self, field: &ScalarField, grid: &TestGrid) -> (f64, f64) {
        let estimate = || {
            let max_abs = grid
                .positions
                .iter()
                .map(|p| field.eval(p).abs())
                .fold(0.0f64, f64::max);
            crate::consensus::estimate_observation_bounds(max_abs).0
        };
        let y_bar = self.y_bar.unwrap_or_else(estimate);
        let mu_bar = self.mu_bar.unwrap_or(y_bar);
        (y_bar, mu_bar)
    }

    /// Runs every load-time validator. Hard failures return an error;
    /// soft rule violations come back as warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let dim = self.dimension();
        if dim == 0 || dim > 2 {
            return Err(Error::Validation(format!(
                "workspace must be 1-D or 2-D, got {dim}-D"
            )));
        }
        if self.workspace_max.len() != dim {
            return Err(Error::Validation(
                "workspace corners have different dimensions".into(),
            ));
        }
        for d in 0..dim {
            let lo = self.workspace_min[d];
            let hi = self.workspace_max[d];
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Validation(format!(
                    "workspace axis {d} is empty: [{lo}, {hi}]"
                )));
            }
        }
        if self.length_scales.len() != dim {
            return Err(Error::Validation(format!(
                "expected {dim} length scales, got {}",
                self.length_scales.len()
            )));
        }
        if dim == 1 && self.grid_ny != 1 {
            return Err(Error::Validation(
                "1-D scenarios require grid_ny = 1".into(),
            ));
        }
        if self.grid_nx < 2 || (dim == 2 && self.grid_ny < 2) {
            return Err(Error::Validation(
                "test grid needs at least 2 points per axis".into(),
            ));
        }
        if self.robot_count == 0 || self.samples_per_robot == 0 {
            return Err(Error::Validation(
                "need at least one robot and one sample".into(),
            ));
        }
        if self.local_steps_per_round == 0 {
            return Err(Error::Validation(
                "local_steps_per_round must be at least 1".into(),
            ));
        }
        self.kernel()?;
        let params = self.consensus_params()?;
        self.sparsity()?;

        // Assumption feasibility: even at the maximum possible degree the
        // diagonal must not drop below the weight floor.
        let worst_degree = self.robot_count.saturating_sub(1) as f64;
        let min_diagonal = 1.0 - self.edge_weight * worst_degree;
        let floor = self.effective_weight_floor();
        if min_diagonal < floor - 1e-12 {
            return Err(Error::Validation(format!(
                "edge weight {} with {} robots can drive a diagonal to {min_diagonal}, below the weight floor {floor}",
                self.edge_weight, self.robot_count
            )));
        }
        if floor > self.edge_weight {
            return Err(Error::Validation(format!(
                "weight floor {floor} exceeds the edge weight {}",
                self.edge_weight
            )));
        }

        // Builders double as validators.
        let field = self.field()?;
        let trajectories = self.trajectories()?;
        let grid = self.grid()?;

        let mut warnings = Vec::new();
        let (y_bar, mu_bar) = self.observation_bounds(&field, &grid);
        if let Some(w) = params.sigma_n_warning(&self.kernel()?, y_bar, mu_bar) {
            warnings.push(w);
        }
        for (i, t) in trajectories.iter().enumerate() {
            let outside = t.positions.iter().any(|p| {
                p.iter().zip(0..dim).any(|(x, d)| {
                    *x < self.workspace_min[d] - 1e-9 || *x > self.workspace_max[d] + 1e-9
                })
            });
            if outside {
                warnings.push(format!("robot {i}: trajectory leaves the workspace"));
            }
        }
        Ok(warnings)
    }
}
