//! Fixed observation network: every `s`-th station, read every `q` steps.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, NoiseSource};
use crate::linalg;
use crate::truth::TruthField;

#[derive(Debug, Clone, PartialEq)]
pub struct ObsNetwork {
    /// Strictly increasing station indices `{0, s, 2s, ...}`.
    pub station_indices: Vec<usize>,
    pub spatial_freq: f64,
    pub temporal_freq: f64,
    pub meas_var: f64,
    pub station_stride: usize,
    pub time_stride: usize,
}

/// A measurement taken at a grid station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub value: f64,
    pub station: usize,
    pub time_index: usize,
    pub variance: f64,
}

/// Integer stride `1 / freq`, rejecting frequencies whose inverse is not a
/// positive integer.
pub fn stride_from_freq(freq: f64, name: &'static str) -> Result<usize> {
    if !(freq > 0.0 && freq <= 1.0) {
        return Err(Error::InvalidParameter {
            name,
            reason: "frequency must lie in (0, 1]",
        });
    }
    let inv = 1.0 / freq;
    let s = libm::round(inv);
    if libm::fabs(inv - s) > 1e-9 * s {
        return Err(Error::InvalidParameter {
            name,
            reason: "inverse frequency must be an integer stride",
        });
    }
    Ok(s as usize)
}

pub fn build_network(grid: &GridSpec, xi: f64, tau: f64, meas_var: f64) -> Result<ObsNetwork> {
    let station_stride = stride_from_freq(xi, "spatial_freq")?;
    let time_stride = stride_from_freq(tau, "temporal_freq")?;
    if !(meas_var >= 0.0) || !meas_var.is_finite() {
        return Err(Error::InvalidParameter {
            name: "meas_var",
            reason: "must be nonnegative and finite",
        });
    }
    Ok(ObsNetwork {
        station_indices: (0..grid.n_points).step_by(station_stride).collect(),
        spatial_freq: xi,
        temporal_freq: tau,
        meas_var,
        station_stride,
        time_stride,
    })
}

impl ObsNetwork {
    pub fn len(&self) -> usize {
        self.station_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.station_indices.is_empty()
    }

    /// Whether data is read at `step`; the first acquisition is at step `q`.
    pub fn is_acquisition(&self, step: usize, present_time: usize) -> bool {
        step > 0 && step <= present_time && step.is_multiple_of(self.time_stride)
    }

    /// Acquisition steps `q, 2q, ...` not exceeding `present_time`.
    pub fn acquisition_times(&self, present_time: usize) -> impl Iterator<Item = usize> {
        (self.time_stride..=present_time).step_by(self.time_stride)
    }
}

/// Truth at each acquisition station and time plus `N(0, R)` error. Output
/// is ordered by time, then station.
pub fn sample_observations(
    truth: &TruthField,
    net: &ObsNetwork,
    present_time: usize,
    src: &mut NoiseSource,
) -> Result<Vec<Observation>> {
    let last = truth.values.len().saturating_sub(1);
    if present_time > last {
        return Err(Error::InvalidParameter {
            name: "present_time",
            reason: "truth does not cover every observation time",
        });
    }
    let sd = libm::sqrt(net.meas_var);
    let mut out = Vec::new();
    for m in net.acquisition_times(present_time) {
        let row = &truth.values[m];
        let errs = src.gaussian_vector(net.len(), sd);
        for (&station, e) in net.station_indices.iter().zip(errs) {
            out.push(Observation {
                value: row[station] + e,
                station,
                time_index: m,
                variance: net.meas_var,
            });
        }
    }
    Ok(out)
}

/// `K x N` selector with a single one per row at the network's stations.
pub fn observation_matrix(net: &ObsNetwork, grid: &GridSpec) -> DMatrix<f64> {
    linalg::selector(&net.station_indices, grid.n_points)
}
