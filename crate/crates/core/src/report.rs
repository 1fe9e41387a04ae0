//! CSV and plot-script outputs. All files are UTF-8 with LF line endings;
//! float formatting round-trips exactly.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::sim::{RoundRecord, SimResult};

/// Serializes round records with a header row, columns in declaration order.
pub fn records_to_csv(records: &[RoundRecord]) -> String {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(true)
        .from_writer(Vec::new());
    if records.is_empty() {
        // Header-only output still needs the schema.
        writer
            .write_record([
                "round",
                "robot_id",
                "rmse_local",
                "rmse_distributed",
                "consensus_err_vs_poe",
                "dataset_size",
                "pred_time",
                "compress_time",
            ])
            .expect("in-memory write cannot fail");
    }
    for r in records {
        writer.serialize(r).expect("in-memory write cannot fail");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush cannot fail"))
        .expect("csv output is utf-8")
}

/// Parses records back; `parse(export(r)) == r`.
pub fn records_from_csv(text: &str) -> Result<Vec<RoundRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for row in reader.deserialize() {
        records.push(row.map_err(|e| Error::Validation(format!("records CSV: {e}")))?);
    }
    Ok(records)
}

/// Drops the trailing timing columns (pred_time, compress_time) from a
/// records CSV, for byte-level determinism comparisons.
pub fn strip_timing_columns(csv_text: &str) -> String {
    let mut out = String::with_capacity(csv_text.len());
    for line in csv_text.lines() {
        let fields: Vec<&str> = line.split(',').collect();
        let keep = fields.len().saturating_sub(2);
        out.push_str(&fields[..keep].join(","));
        out.push('\n');
    }
    out
}

/// Final per-robot maps with the ground truth, one row per (robot, point).
pub fn final_maps_csv(result: &SimResult, truth: &ScalarField) -> String {
    let mut out = String::from("robot_id,x,y,local_mean,local_var,dist_mean,dist_var,truth\n");
    for (i, (local, dist)) in result
        .final_local_maps
        .iter()
        .zip(&result.final_dist_maps)
        .enumerate()
    {
        for (j, pos) in result.grid.positions.iter().enumerate() {
            let x = pos[0];
            let y = pos.get(1).copied().unwrap_or(0.0);
            out.push_str(&format!(
                "{i},{x},{y},{},{},{},{},{}\n",
                local.mean[j],
                local.variance[j],
                dist.mean[j],
                dist.variance[j],
                truth.eval(pos)
            ));
        }
    }
    out
}

/// One robot's sampled path: `step,x,y` (y = 0 for 1-D scenarios).
pub fn trajectory_csv(positions: &[crate::gp::Position]) -> String {
    let mut out = String::from("step,x,y\n");
    for (step, p) in positions.iter().enumerate() {
        out.push_str(&format!(
            "{step},{},{}\n",
            p[0],
            p.get(1).copied().unwrap_or(0.0)
        ));
    }
    out
}

/// Self-contained gnuplot program rendering the RMSE-per-round and
/// prediction-time panels from a records CSV.
pub fn plot_script(records_csv: &str, robot_count: usize, output_png: &str) -> String {
    format!(
        r#"# Round metrics: distributed-map RMSE and per-step prediction time.
set datafile separator ","
set terminal pngcairo size 1100,800
set output "{output_png}"
set multiplot layout 2,1
set key outside right
set xlabel "consensus round"
set title "Distributed-map RMSE per round"
set ylabel "RMSE"
plot for [r=0:{last_robot}] "{records_csv}" skip 1 using (column(2)==r?column(1):NaN):4 with lines title sprintf("robot %d", r)
set title "Per-step prediction time (median over a 10-step window)"
set ylabel "seconds"
set logscale y
plot for [r=0:{last_robot}] "{records_csv}" skip 1 using (column(2)==r?column(1):NaN):7 with lines title sprintf("robot %d", r)
unset multiplot
"#,
        last_robot = robot_count.saturating_sub(1)
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.to_path_buf(), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.to_path_buf(), e))
}

/// Writes the full output set of a run into `out_dir`:
/// records.csv, final_maps.csv, per-robot trajectory CSVs, the network
/// trace, and the gnuplot script. Returns the paths written.
pub fn write_run_outputs(
    out_dir: &Path,
    result: &SimResult,
    truth: &ScalarField,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let records = out_dir.join("records.csv");
    write_text(&records, &records_to_csv(&result.records))?;
    written.push(records);

    let maps = out_dir.join("final_maps.csv");
    write_text(&maps, &final_maps_csv(result, truth))?;
    written.push(maps);

    for (i, positions) in result.sampled_positions.iter().enumerate() {
        let path = out_dir.join(format!("trajectory_robot{i}.csv"));
        write_text(&path, &trajectory_csv(positions))?;
        written.push(path);
    }

    let trace = out_dir.join("graphs.txt");
    write_text(&trace, &crate::network::graph_trace(&result.graphs))?;
    written.push(trace);

    let plot = out_dir.join("plot.gp");
    write_text(
        &plot,
        &plot_script("records.csv", result.final_local_maps.len(), "metrics.png"),
    )?;
    written.push(plot);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: usize, robot: usize) -> RoundRecord {
        RoundRecord {
            round,
            robot_id: robot,
            rmse_local: 0.1 * (round as f64 + 1.0) / 3.0,
            rmse_distributed: 0.07 * (round as f64 + 1.0) / 3.0,
            consensus_err_vs_poe: 1e-3 / (round as f64 + 1.0),
            dataset_size: 10,
            pred_time: 1.25e-5,
            compress_time: 3.5e-5,
        }
    }

    #[test]
    fn empty_records_still_emit_the_header() {
        let csv = records_to_csv(&[]);
        assert_eq!(
            csv.trim_end(),
            "round,robot_id,rmse_local,rmse_distributed,consensus_err_vs_poe,dataset_size,pred_time,compress_time"
        );
    }

    #[test]
    fn csv_round_trips_exactly() {
        let records: Vec<RoundRecord> = (0..6).map(|i| record(i / 2, i % 2)).collect();
        let text = records_to_csv(&records);
        let parsed = records_from_csv(&text).unwrap();
        assert_eq!(parsed, records);
    }

    #[test]
    fn timing_strip_keeps_six_columns() {
        let records = vec![record(0, 0), record(0, 1)];
        let stripped = strip_timing_columns(&records_to_csv(&records));
        for line in stripped.lines() {
            assert_eq!(line.split(',').count(), 6);
        }
        assert!(stripped.starts_with("round,robot_id,rmse_local"));
        assert!(!stripped.contains("pred_time"));
    }

    #[test]
    fn plot_script_renders_two_panels() {
        let script = plot_script("records.csv", 3, "metrics.png");
        assert!(script.contains("multiplot layout 2,1"));
        assert_eq!(script.matches("plot for [r=0:2]").count(), 2);
        assert!(script.contains("records.csv"));
    }
}
