//! Shared fixtures for the pipeline benchmarks.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fieldmap_core::{recursive_add, Dataset, KernelSpec, Observation, RecursiveState, TestGrid};

pub fn bench_kernel() -> KernelSpec {
    KernelSpec::new(1.0, vec![0.5, 0.5], 0.1).expect("valid kernel")
}

pub fn bench_grid(per_axis: usize) -> Arc<TestGrid> {
    Arc::new(TestGrid::regular_2d(
        [0.0, 0.0],
        [4.0, 4.0],
        per_axis,
        per_axis,
    ))
}

/// A streaming state over `n` well-separated random points.
pub fn streaming_state(n: usize, seed: u64, spec: &KernelSpec) -> (Dataset, RecursiveState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::new();
    let mut state = RecursiveState::empty();
    while data.len() < n {
        let position = vec![rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)];
        let near = data.observations.iter().any(|o| {
            let d2: f64 = o
                .position
                .iter()
                .zip(&position)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.sqrt() < 0.02
        });
        if near {
            continue;
        }
        let obs = Observation {
            position,
            value: rng.gen_range(-2.0..2.0),
            robot_id: 0,
            step_index: data.len(),
        };
        let (next, _) = recursive_add(&state, &data, &obs, spec).expect("separated points");
        state = next;
        data.push(obs);
    }
    (data, state)
}

/// A fresh observation away from the fixture points.
pub fn probe_observation(step: usize) -> Observation {
    Observation {
        position: vec![1.987, 2.345],
        value: 0.4,
        robot_id: 0,
        step_index: step,
    }
}
