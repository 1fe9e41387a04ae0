//! Synthetic ground-truth fields, robot trajectories, and noisy sampling.
//!
//! Everything here is a pure function of (config, seed): each robot draws
//! from its own counter-based generator, so runs are reproducible and robots
//! are independent of evaluation order.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::gp::{Observation, Position};

/// The 1-D benchmark field `sin(2x) + cos(6x) + 0.5`; bounded by 2.5.
pub fn toy_field(x: f64) -> f64 {
    (2.0 * x).sin() + (6.0 * x).cos() + 0.5
}

/// One radially symmetric component of a mixture field.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bump {
    pub center: Position,
    pub amplitude: f64,
    pub width: f64,
}

/// Sum of Gaussian bumps: `sum_b amp_b exp(-|x - c_b|^2 / w_b^2)`.
pub fn gaussian_mixture_field(x: &[f64], bumps: &[Bump]) -> f64 {
    bumps
        .iter()
        .map(|b| {
            let d2: f64 = x
                .iter()
                .zip(&b.center)
                .map(|(a, c)| (a - c) * (a - c))
                .sum();
            b.amplitude * (-d2 / (b.width * b.width)).exp()
        })
        .sum()
}

/// A tabulated 2-D field on a regular grid with bilinear interpolation.
/// Built from `x,y,value` CSV rows; queries clamp to the grid edges.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Row-major, x varying fastest: `values[iy * xs.len() + ix]`.
    values: Vec<f64>,
}

impl GridTable {
    pub fn from_reader(mut reader: impl Read, origin: &Path) -> Result<Self> {
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|e| Error::io(origin.to_path_buf(), e))?;
        Self::from_csv_str(&text)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        Self::from_reader(file, path)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "x,y,value" => {}
            other => {
                return Err(Error::Validation(format!(
                    "field CSV must start with 'x,y,value', got {other:?}"
                )))
            }
        }
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Validation(format!(
                    "field CSV line {}: expected 3 columns",
                    lineno + 2
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Validation(format!("field CSV line {}: {e}", lineno + 2)))
            };
            rows.push((parse(parts[0])?, parse(parts[1])?, parse(parts[2])?));
        }
        let mut xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys.dedup();
        if xs.len() < 2 || ys.len() < 2 {
            return Err(Error::Validation(
                "field grid needs at least 2x2 nodes".into(),
            ));
        }
        let mut values = vec![f64::NAN; xs.len() * ys.len()];
        for (x, y, v) in rows {
            let ix = xs.iter().position(|&g| g == x).unwrap();
            let iy = ys.iter().position(|&g| g == y).unwrap();
            values[iy * xs.len() + ix] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Validation("field grid has missing cells".into()));
        }
        Ok(GridTable { xs, ys, values })
    }

    fn bracket(axis: &[f64], v: f64) -> (usize, f64) {
        if v <= axis[0] {
            return (0, 0.0);
        }
        if v >= axis[axis.len() - 1] {
            return (axis.len() - 2, 1.0);
        }
        let hi = axis.partition_point(|&g| g <= v).min(axis.len() - 1);
        let lo = hi - 1;
        (lo, (v - axis[lo]) / (axis[hi] - axis[lo]))
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (ix, tx) = Self::bracket(&self.xs, x);
        let (iy, ty) = Self::bracket(&self.ys, y);
        let nx = self.xs.len();
        let v00 = self.values[iy * nx + ix];
        let v10 = self.values[iy * nx + ix + 1];
        let v01 = self.values[(iy + 1) * nx + ix];
        let v11 = self.values[(iy + 1) * nx + ix + 1];
        let a = v00 + (v10 - v00) * tx;
        let b = v01 + (v11 - v01) * tx;
        a + (b - a) * ty
    }
}

/// Ground truth to be mapped.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    /// 1-D benchmark `sin(2x) + cos(6x) + 0.5`.
    Toy1d,
    /// Sum of Gaussian bumps in any dimension.
    GaussianMixture(Vec<Bump>),
    /// Tabulated 2-D grid with bilinear interpolation.
    Tabulated(GridTable),
}

impl ScalarField {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Toy1d => toy_field(x[0]),
            ScalarField::GaussianMixture(bumps) => gaussian_mixture_field(x, bumps),
            ScalarField::Tabulated(table) => table.eval(x[0], x[1]),
        }
    }
}

/// Per-robot generator; seed = scenario seed XOR robot id.
pub fn robot_rng(scenario_seed: u64, robot_id: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(scenario_seed ^ robot_id as u64)
}

/// Draws one noisy observation of the field at `position`.
pub fn sample(
    field: &ScalarField,
    position: &[f64],
    noise_sd: f64,
    rng: &mut ChaCha8Rng,
    robot_id: usize,
    step_index: usize,
) -> Observation {
    let noise = Normal::new(0.0, noise_sd)
        .expect("noise standard deviation must be nonnegative")
        .sample(rng);
    Observation {
        position: position.to_vec(),
        value: field.eval(position) + noise,
        robot_id,
        step_index,
    }
}

/// A fixed sampling path: exactly the positions a robot will visit.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Position>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// `n` equally spaced positions from `start` to `end`, endpoints included.
pub fn linear_sweep(start: &[f64], end: &[f64], n: usize) -> Result<Trajectory> {
    if n < 2 {
        return Err(Error::Argument(format!(
            "linear sweep needs n >= 2, got {n}"
        )));
    }
    if start.len() != end.len() || start.is_empty() {
        return Err(Error::Argument(
            "sweep endpoints must share a nonzero dimension".into(),
        ));
    }
    let positions = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            start
                .iter()
                .zip(end)
                .map(|(s, e)| s + (e - s) * t)
                .collect()
        })
        .collect();
    Ok(Trajectory { positions })
}

/// An axis-aligned rectangle in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

/// Boustrophedon sweep over the rectangle: `rows` horizontal passes joined by
/// vertical hops, with `n` samples equally spaced along the path length. A
/// single row degenerates to a linear sweep across the vertical midline.
pub fn lawnmower(workspace: &Rect, rows: usize, n: usize) -> Result<Trajectory> {
    if rows < 1 {
        return Err(Error::Argument("lawnmower needs at least one row".into()));
    }
    if n < rows.max(2) {
        return Err(Error::Argument(format!(
            "lawnmower needs at least {} samples for {rows} rows",
            rows.max(2)
        )));
    }
    let [x0, y0] = workspace.min;
    let [x1, y1] = workspace.max;
    let row_y = |i: usize| {
        if rows == 1 {
            0.5 * (y0 + y1)
        } else {
            y0 + (y1 - y0) * i as f64 / (rows - 1) as f64
        }
    };

    let mut waypoints: Vec<[f64; 2]> = Vec::with_capacity(2 * rows);
    for i in 0..rows {
        let y = row_y(i);
        if i % 2 == 0 {
            waypoints.push([x0, y]);
            waypoints.push([x1, y]);
        } else {
            waypoints.push([x1, y]);
            waypoints.push([x0, y]);
        }
    }

    // Cumulative arc length over the waypoint polyline.
    let mut cumulative = vec![0.0];
    for w in waypoints.windows(2) {
        let seg = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cumulative.push(cumulative.last().unwrap() + seg);
    }
    let total = *cumulative.last().unwrap();

    let mut positions = Vec::with_capacity(n);
    let mut segment = 0usize;
    for k in 0..n {
        let s = total * k as f64 / (n - 1) as f64;
        while segment + 2 < cumulative.len() && cumulative[segment + 1] < s {
            segment += 1;
        }
        let seg_len = cumulative[segment + 1] - cumulative[segment];
        let t = if seg_len > 0.0 {
            (s - cumulative[segment]) / seg_len
        } else {
            0.0
        };
        let a = waypoints[segment];
        let b = waypoints[segment + 1];
        positions.push(vec![a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]);
    }
    Ok(Trajectory { positions })
}
