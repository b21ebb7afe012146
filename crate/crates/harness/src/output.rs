//! CSV and manifest outputs of a run.
//!
//! Every float is written with 17 significant digits so that reading a file
//! back recovers the in-memory value bit for bit.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use dlf_core::scenario::{PoolStatus, RunResult, ScenarioConfig};
use dlf_core::GridSpec;

use crate::error::{HarnessError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// serde_json formatter printing floats like [`fmt_f64`].
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `value` as JSON with [`fmt_f64`] floats.
pub fn to_json_exact<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    value
        .serialize(&mut ser)
        .expect("in-memory JSON serialization cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[derive(Debug, Serialize)]
pub struct Tool {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Serialize)]
pub struct Seeds {
    pub truth: u64,
    pub model: u64,
    pub obs: u64,
}

#[derive(Debug, Serialize)]
pub struct NetworkInfo {
    pub n_stations: usize,
    pub station_stride: usize,
    pub time_stride: usize,
    pub n_observations: usize,
}

#[derive(Debug, Serialize)]
pub struct SummaryInfo {
    pub rmse_model: f64,
    pub rmse_kf: f64,
    pub rmse_dlf: f64,
    pub com_err_model: f64,
    pub com_err_kf: f64,
    pub com_err_dlf: f64,
    pub final_trace_kf: f64,
    pub final_trace_dlf: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: Tool,
    pub config: ScenarioConfig,
    pub seeds: Seeds,
    pub grid: GridSpec,
    pub network: NetworkInfo,
    pub summary: SummaryInfo,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(result: &RunResult, files: Vec<String>) -> Self {
        let cfg = &result.config;
        let s = result.summary();
        Manifest {
            tool: Tool {
                name: TOOL_NAME.to_string(),
                version: TOOL_VERSION.to_string(),
            },
            config: cfg.clone(),
            seeds: Seeds {
                truth: cfg.truth_seed,
                model: cfg.model_seed,
                obs: cfg.obs_seed,
            },
            grid: result.grid,
            network: NetworkInfo {
                n_stations: result.network.len(),
                station_stride: result.network.station_stride,
                time_stride: result.network.time_stride,
                n_observations: result.observations.len(),
            },
            summary: SummaryInfo {
                rmse_model: s.rmse_model,
                rmse_kf: s.rmse_kf,
                rmse_dlf: s.rmse_dlf,
                com_err_model: s.com_err_model,
                com_err_kf: s.com_err_kf,
                com_err_dlf: s.com_err_dlf,
                final_trace_kf: s.final_trace_kf,
                final_trace_dlf: s.final_trace_dlf,
            },
            files,
        }
    }
}

type CsvOut = csv::Writer<BufWriter<File>>;

fn create_csv(path: &Path) -> Result<CsvOut> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish(mut w: CsvOut, path: &Path) -> Result<()> {
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn station_header(n: usize) -> Vec<String> {
    std::iter::once("step".to_string())
        .chain((0..n).map(|l| format!("x_{l}")))
        .collect()
}

/// One row per time index: the step, then one value per station.
pub fn write_trajectory<'a, I>(path: &Path, n: usize, rows: I) -> Result<()>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let mut w = create_csv(path)?;
    let err = |e| HarnessError::csv(path, e);
    w.write_record(station_header(n)).map_err(err)?;
    for (step, row) in rows.into_iter().enumerate() {
        let rec = std::iter::once(step.to_string()).chain(row.iter().map(|&v| fmt_f64(v)));
        w.write_record(rec).map_err(err)?;
    }
    finish(w, path)
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = create_csv(path)?;
    let err = |e| HarnessError::csv(path, e);
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    finish(w, path)
}

fn status_name(s: PoolStatus) -> &'static str {
    match s {
        PoolStatus::Selected => "selected",
        PoolStatus::Discarded => "discarded",
        PoolStatus::Expired => "expired",
    }
}

/// Writes every output file of `result` into `dir`, creating it if needed,
/// and returns the manifest. `pool_trace` adds the per-step fate of every
/// DLF pool member.
pub fn write_outputs(result: &RunResult, dir: &Path, pool_trace: bool) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let n = result.grid.n_points;
    let mut files = Vec::new();
    let mut path = |name: &str| -> PathBuf {
        files.push(name.to_string());
        dir.join(name)
    };

    write_trajectory(&path("truth.csv"), n, &result.truth.values)?;
    write_trajectory(
        &path("truth_paths.csv"),
        n,
        &result.truth.characteristic_paths,
    )?;
    write_trajectory(&path("model.csv"), n, &result.model_only)?;
    write_trajectory(&path("kf_mean.csv"), n, result.kf.iter().map(|e| &e.mean))?;
    write_trajectory(&path("dlf_mean.csv"), n, result.dlf.iter().map(|e| &e.mean))?;
    let diag = |traj: &[dlf_core::StateEstimate]| -> Vec<DVector<f64>> {
        traj.iter().map(|e| e.covariance.diagonal()).collect()
    };
    write_trajectory(&path("kf_variance.csv"), n, &diag(&result.kf))?;
    write_trajectory(&path("dlf_variance.csv"), n, &diag(&result.dlf))?;

    write_rows(
        &path("metrics.csv"),
        &[
            "step",
            "com_truth",
            "com_model",
            "com_kf",
            "com_dlf",
            "trace_kf",
            "trace_dlf",
            "rmse_model",
            "rmse_kf",
            "rmse_dlf",
        ],
        result.metrics.steps.iter().map(|m| {
            let mut r = vec![m.step.to_string()];
            r.extend(
                [
                    m.com_truth,
                    m.com_model,
                    m.com_kf,
                    m.com_dlf,
                    m.trace_kf,
                    m.trace_dlf,
                    m.rmse_model,
                    m.rmse_kf,
                    m.rmse_dlf,
                ]
                .map(fmt_f64),
            );
            r
        }),
    )?;

    let mt = &result.metrics;
    write_rows(
        &path("final_diff.csv"),
        &["station", "x", "model", "kf", "dlf"],
        (0..n).map(|l| {
            vec![
                l.to_string(),
                fmt_f64(result.grid.x(l)),
                fmt_f64(mt.final_diff_model[l]),
                fmt_f64(mt.final_diff_kf[l]),
                fmt_f64(mt.final_diff_dlf[l]),
            ]
        }),
    )?;

    write_rows(
        &path("observations.csv"),
        &["time_index", "station", "value", "variance"],
        result.observations.iter().map(|o| {
            vec![
                o.time_index.to_string(),
                o.station.to_string(),
                fmt_f64(o.value),
                fmt_f64(o.variance),
            ]
        }),
    )?;

    if pool_trace {
        write_rows(
            &path("pool_trace.csv"),
            &[
                "step",
                "origin_time",
                "origin_station",
                "position",
                "variance",
                "status",
            ],
            result.dlf_trace.iter().map(|r| {
                vec![
                    r.step.to_string(),
                    r.origin_time.to_string(),
                    r.origin_station.to_string(),
                    fmt_f64(r.position),
                    fmt_f64(r.variance),
                    status_name(r.status).to_string(),
                ]
            }),
        )?;
    }

    let mpath = path(MANIFEST_FILE);
    let manifest = Manifest::new(result, files);
    fs::write(&mpath, to_json_exact(&manifest)).map_err(|e| HarnessError::io(&mpath, e))?;
    Ok(manifest)
}

/// A numeric CSV: its header and rows parsed as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    let header = r
        .headers()
        .map_err(|e| HarnessError::csv(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| HarnessError::csv(path, e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| HarnessError::parse(path, format!("`{f}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Trajectory file back as one vector per time index (step column dropped).
pub fn read_trajectory(path: &Path) -> Result<Vec<DVector<f64>>> {
    let t = read_table(path)?;
    Ok(t.rows
        .into_iter()
        .map(|r| DVector::from_iterator(r.len() - 1, r.into_iter().skip(1)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_text_is_exact() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 2.0f64.sqrt(), 0.0] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn manifest_floats_use_exact_form() {
        #[derive(Serialize)]
        struct S {
            a: f64,
        }
        assert_eq!(
            to_json_exact(&S { a: 0.25 }),
            "{\"a\":2.5000000000000000e-1}\n"
        );
    }
}
