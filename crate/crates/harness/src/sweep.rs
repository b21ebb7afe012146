//! Parallel sweeps over sampling frequencies and replicates.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use dlf_core::scenario::{run_scenario, RunSummary, ScenarioConfig};

use crate::error::{HarnessError, Result};
use crate::output::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub spatial_freq: f64,
    pub temporal_freq: f64,
    pub replicate: u64,
    pub config: ScenarioConfig,
    pub summary: RunSummary,
}

/// Mean and median of one metric over the replicates of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub median: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Stat {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
        }
    }
}

pub const METRICS: [&str; 8] = [
    "rmse_model",
    "rmse_kf",
    "rmse_dlf",
    "com_err_model",
    "com_err_kf",
    "com_err_dlf",
    "final_trace_kf",
    "final_trace_dlf",
];

pub fn metric_values(s: &RunSummary) -> [f64; 8] {
    [
        s.rmse_model,
        s.rmse_kf,
        s.rmse_dlf,
        s.com_err_model,
        s.com_err_kf,
        s.com_err_dlf,
        s.final_trace_kf,
        s.final_trace_dlf,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub spatial_freq: f64,
    pub temporal_freq: f64,
    pub replicates: usize,
    /// In the order of [`METRICS`].
    pub stats: [Stat; 8],
}

impl CellSummary {
    pub fn stat(&self, metric: &str) -> Stat {
        let i = METRICS
            .iter()
            .position(|&m| m == metric)
            .unwrap_or_else(|| panic!("unknown metric `{metric}`"));
        self.stats[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<ReplicateRow>,
    pub cells: Vec<CellSummary>,
}

/// Runs every `(xi, tau)` cell for replicates `0..n_replicates`.
/// Replicate `r` offsets all seeds of `base` by `r`.
pub fn sweep(
    base: &ScenarioConfig,
    xi_list: &[f64],
    tau_list: &[f64],
    n_replicates: u64,
) -> Result<SweepTable> {
    let jobs: Vec<(f64, f64, u64)> = xi_list
        .iter()
        .flat_map(|&xi| tau_list.iter().map(move |&tau| (xi, tau)))
        .flat_map(|(xi, tau)| (0..n_replicates).map(move |r| (xi, tau, r)))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(xi, tau, r)| {
            let config = base.clone().with_sampling(xi, tau).replicate(r);
            let result = run_scenario(&config).map_err(|e| HarnessError::Run {
                context: format!("xi={xi}, tau={tau}, replicate {r}"),
                source: e,
            })?;
            Ok(ReplicateRow {
                spatial_freq: xi,
                temporal_freq: tau,
                replicate: r,
                summary: result.summary(),
                config,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let cells = rows
        .chunks(n_replicates.max(1) as usize)
        .map(|chunk| {
            let values: Vec<[f64; 8]> = chunk.iter().map(|r| metric_values(&r.summary)).collect();
            let stats =
                std::array::from_fn(|m| Stat::of(&values.iter().map(|v| v[m]).collect::<Vec<_>>()));
            CellSummary {
                spatial_freq: chunk[0].spatial_freq,
                temporal_freq: chunk[0].temporal_freq,
                replicates: chunk.len(),
                stats,
            }
        })
        .collect();
    Ok(SweepTable { rows, cells })
}

/// Writes `replicates.csv` and `summary.csv` into `dir`.
pub fn write_sweep(table: &SweepTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;

    let path = dir.join("replicates.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::csv(&path, e))?;
    let mut header = vec![
        "spatial_freq",
        "temporal_freq",
        "replicate",
        "truth_seed",
        "model_seed",
        "obs_seed",
    ];
    header.extend(METRICS);
    w.write_record(&header)
        .map_err(|e| HarnessError::csv(&path, e))?;
    for r in &table.rows {
        let mut rec = vec![
            fmt_f64(r.spatial_freq),
            fmt_f64(r.temporal_freq),
            r.replicate.to_string(),
            r.config.truth_seed.to_string(),
            r.config.model_seed.to_string(),
            r.config.obs_seed.to_string(),
        ];
        rec.extend(metric_values(&r.summary).map(fmt_f64));
        w.write_record(&rec)
            .map_err(|e| HarnessError::csv(&path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;

    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::csv(&path, e))?;
    let mut header = vec![
        "spatial_freq".to_string(),
        "temporal_freq".to_string(),
        "replicates".to_string(),
    ];
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_median"));
    }
    w.write_record(&header)
        .map_err(|e| HarnessError::csv(&path, e))?;
    for c in &table.cells {
        let mut rec = vec![
            fmt_f64(c.spatial_freq),
            fmt_f64(c.temporal_freq),
            c.replicates.to_string(),
        ];
        for s in c.stats {
            rec.push(fmt_f64(s.mean));
            rec.push(fmt_f64(s.median));
        }
        w.write_record(&rec)
            .map_err(|e| HarnessError::csv(&path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))
}
