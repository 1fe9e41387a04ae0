//! Budget allocation on the two-robot benchmark, where both sweeps cover the
//! middle of the workspace twice.
//!
//! The design intent of the fused metric is to spend less budget on the
//! doubly-covered interval than local-only scoring does. Counted over ten
//! seeds, the default-sign metric does NOT achieve that: it retains slightly
//! more points there (15.3 vs 14.0 on average), because the mean-distance
//! term of the map distance ranks candidates mostly by field magnitude and
//! overrides the coverage signal. The defect is recorded by the failing
//! acceptance comparison (criterion 7); this test freezes the measured
//! allocation so any change in the behavior surfaces deliberately.

use fieldmap_core::{run_variant, ScenarioConfig, Variant};

fn toy() -> ScenarioConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy1d.toml");
    ScenarioConfig::load(&path).unwrap()
}

/// Retained points inside the doubly-covered interval [1, 3], summed over
/// robots and averaged over seeds.
fn mean_overlap_retention(variant: Variant, seeds: u64) -> f64 {
    let mut cfg = toy();
    let mut total = 0usize;
    for seed in 0..seeds {
        cfg.seed = seed;
        let result = run_variant(&cfg, variant).unwrap();
        total += result
            .final_datasets
            .iter()
            .flat_map(|d| d.observations.iter())
            .filter(|o| o.position[0] >= 1.0 && o.position[0] <= 3.0)
            .count();
    }
    total as f64 / seeds as f64
}

#[test]
fn overlap_budget_allocation_is_pinned() {
    let seeds = 10;
    let local = mean_overlap_retention(Variant::LocalCompress, seeds);
    let fused = mean_overlap_retention(Variant::DistributedCompress, seeds);
    println!("mean retained points in the overlap: local {local:.2}, fused {fused:.2}");
    // Both strategies keep the 20-point total budget.
    assert!(local <= 20.0 && fused <= 20.0);
    // Frozen measurement (seeds 0..10): the fused default-sign metric keeps
    // MORE overlap points than local-only scoring, not fewer. If this flips,
    // the compression behavior changed; revisit the acceptance comparison.
    assert!(
        (local - 14.0).abs() < 1e-9 && (fused - 15.3).abs() < 1e-9,
        "allocation changed: local {local:.2} (was 14.0), fused {fused:.2} (was 15.3)"
    );
}

/// With five robots whose sweeps all cross the same span, cross-robot
/// redundancy dominates and the fused metric pays off: the fused final map
/// beats local-only scoring consistently (diff of -0.01 to -0.06 RMSE
/// across independent ten-seed batches). This is the regime the metric is
/// designed for; the two-robot benchmark above sits below the crossover.
#[test]
fn five_robot_overlap_favors_the_fused_metric() {
    let mut cfg = toy();
    cfg.robot_count = 5;
    cfg.sweep_starts_x = vec![3.0, 1.0, 4.0, 0.0, 2.0];
    cfg.sweep_ends_x = vec![0.0, 4.0, 1.0, 3.0, 4.0];

    let mean_rmse = |cfg: &mut ScenarioConfig, variant: Variant| -> f64 {
        let mut total = 0.0;
        for seed in 0..10 {
            cfg.seed = seed;
            let result = run_variant(cfg, variant).unwrap();
            let last = result.records.iter().map(|r| r.round).max().unwrap();
            let finals: Vec<f64> = result
                .records
                .iter()
                .filter(|r| r.round == last)
                .map(|r| r.rmse_distributed)
                .collect();
            total += finals.iter().sum::<f64>() / finals.len() as f64;
        }
        total / 10.0
    };
    let local = mean_rmse(&mut cfg, Variant::LocalCompress);
    let fused = mean_rmse(&mut cfg, Variant::DistributedCompress);
    println!("five-robot overlap: local {local:.4}, fused {fused:.4}");
    assert!(
        fused < local,
        "fused metric no longer wins on the five-robot overlap scenario: {fused:.4} vs {local:.4}"
    );
}
