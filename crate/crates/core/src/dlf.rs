//! Dynamic likelihood filter.
//!
//! Observations are carried forward along the mean characteristics with a
//! growing variance, projected onto the lattice, rank-ordered so that each
//! station keeps only its least uncertain datum, and blended with the Kalman
//! forecast in a single multi-analysis.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, StateEstimate};
use crate::kf;
use crate::linalg;
use crate::model::ModelConfig;
use crate::obsnet::Observation;
use crate::truth::{self, TruthConfig};

/// An observation moved forward in time from its acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiveObservation {
    pub value: f64,
    /// Characteristic position in `[0, L)`.
    pub position: f64,
    pub variance: f64,
    pub origin_variance: f64,
    pub origin_station: usize,
    pub origin_time: usize,
    pub current_time: usize,
}

impl LiveObservation {
    /// A datum at its acquisition time, sitting on its station.
    pub fn fresh(obs: &Observation, grid: &GridSpec) -> Self {
        LiveObservation {
            value: obs.value,
            position: grid.x(obs.station),
            variance: obs.variance,
            origin_variance: obs.variance,
            origin_station: obs.station,
            origin_time: obs.time_index,
            current_time: obs.time_index,
        }
    }

    pub fn age(&self) -> usize {
        self.current_time - self.origin_time
    }
}

/// Semi-Lagrangian step `zeta <- zeta + dt c(zeta, t_n)`; the value is
/// unchanged and the position wrapped into `[0, L)`.
pub fn propagate_observation(
    obs: &LiveObservation,
    grid: &GridSpec,
    truth_cfg: &TruthConfig,
) -> LiveObservation {
    let t = grid.time(obs.current_time);
    let c = truth::mean_speed(truth_cfg, obs.position, t);
    LiveObservation {
        position: grid.wrap(obs.position + grid.dt * c),
        current_time: obs.current_time + 1,
        ..*obs
    }
}

/// Inflates the datum variance by `A^2 dt`.
pub fn propagate_variance(obs: &LiveObservation, forcing_amp: f64, dt: f64) -> LiveObservation {
    LiveObservation {
        variance: obs.variance + forcing_amp * forcing_amp * dt,
        ..*obs
    }
}

/// Station closest to `position`, modulo `N`.
pub fn nearest_station(grid: &GridSpec, position: f64) -> usize {
    grid.station(libm::round(position / grid.dx) as isize)
}

/// Splits the pool into `(viable, expired)`: a datum stays viable while its
/// variance does not exceed the forecast variance at its nearest station.
pub fn viability_filter(
    live: Vec<LiveObservation>,
    forecast_cov: &DMatrix<f64>,
    grid: &GridSpec,
) -> (Vec<LiveObservation>, Vec<LiveObservation>) {
    live.into_iter().partition(|o| {
        let s = nearest_station(grid, o.position);
        o.variance <= forecast_cov[(s, s)]
    })
}

/// How a continuous position is mapped onto lattice stations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ProjectionMode {
    /// Whole datum to the node at `floor(zeta / dx)`.
    #[default]
    NearestLeft,
    /// Fragments on both bracketing nodes with weights `1 - b` and `b`,
    /// `b = rem(zeta, dx) / dx`; each fragment keeps the full variance.
    Linear,
}

/// A datum, or a fragment of one, placed on a station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedDatum {
    pub station: usize,
    pub value: f64,
    pub variance: f64,
    pub weight: f64,
    /// Index of the originating entry in the projected pool.
    pub source: usize,
}

// Positions within this many cells of a node count as on it, so that a
// station's own coordinate `l * dx` maps back to `l`.
const NODE_SNAP: f64 = 1e-9;

fn cell_of(grid: &GridSpec, position: f64) -> (isize, f64) {
    let r = position / grid.dx;
    let k = libm::round(r);
    if libm::fabs(r - k) < NODE_SNAP {
        return (k as isize, 0.0);
    }
    let j = libm::floor(r);
    (j as isize, r - j)
}

pub fn project(
    live: &[LiveObservation],
    grid: &GridSpec,
    mode: ProjectionMode,
) -> Vec<ProjectedDatum> {
    let mut out = Vec::with_capacity(live.len());
    for (source, o) in live.iter().enumerate() {
        let (j, b) = cell_of(grid, o.position);
        let datum = |station, weight| ProjectedDatum {
            station,
            value: o.value,
            variance: o.variance,
            weight,
            source,
        };
        match mode {
            ProjectionMode::NearestLeft => out.push(datum(grid.station(j), 1.0)),
            ProjectionMode::Linear => {
                out.push(datum(grid.station(j), 1.0 - b));
                if b > 0.0 {
                    out.push(datum(grid.station(j + 1), b));
                }
            }
        }
    }
    out
}

/// At most one datum per station, chosen by least variance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LikelihoodAssembly {
    /// Informed stations in increasing order.
    pub informed_stations: Vec<usize>,
    pub projected_values: Vec<f64>,
    pub projected_variances: Vec<f64>,
    /// Winning candidate index (into the projected list) per informed
    /// station.
    pub winners: Vec<usize>,
    /// Per candidate: whether it supplied its station's datum.
    pub selected: Vec<bool>,
}

impl LikelihoodAssembly {
    pub fn len(&self) -> usize {
        self.informed_stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.informed_stations.is_empty()
    }
}

/// Scans candidates in order of increasing variance; each station keeps the
/// first datum offered to it. Ties go to the earlier candidate.
pub fn rank_order(projected: &[ProjectedDatum]) -> LikelihoodAssembly {
    let mut order: Vec<usize> = (0..projected.len()).collect();
    order.sort_by(|&a, &b| projected[a].variance.total_cmp(&projected[b].variance));

    let mut chosen: Vec<(usize, usize)> = Vec::new();
    let mut selected = alloc::vec![false; projected.len()];
    for idx in order {
        let station = projected[idx].station;
        if chosen.iter().all(|&(s, _)| s != station) {
            chosen.push((station, idx));
            selected[idx] = true;
        }
    }
    chosen.sort_unstable_by_key(|&(s, _)| s);

    LikelihoodAssembly {
        informed_stations: chosen.iter().map(|&(s, _)| s).collect(),
        projected_values: chosen.iter().map(|&(_, i)| projected[i].value).collect(),
        projected_variances: chosen.iter().map(|&(_, i)| projected[i].variance).collect(),
        winners: chosen.iter().map(|&(_, i)| i).collect(),
        selected,
    }
}

/// Gain columns for the informed stations `S`:
/// `P[:, S] (P[S, S] + diag(r_S))^{-1}`, an `N x |S|` matrix.
pub fn restricted_gain(
    forecast_cov: &DMatrix<f64>,
    assembly: &LikelihoodAssembly,
    time_index: usize,
) -> Result<DMatrix<f64>> {
    let n = forecast_cov.nrows();
    let s = &assembly.informed_stations;
    if let Some(&bad) = s.iter().find(|&&i| i >= n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad + 1,
        });
    }
    let cross = forecast_cov.select_columns(s.iter());
    let mut inner = cross.select_rows(s.iter());
    for (k, &r) in assembly.projected_variances.iter().enumerate() {
        inner[(k, k)] += r;
    }
    linalg::solve_right_spd(&cross, inner).ok_or(Error::SingularInnovation { time_index })
}

/// Full `N x N` multi-gain. Columns of uninformed stations are zero, the
/// limit of an infinite data variance there.
pub fn multi_gain(
    forecast_cov: &DMatrix<f64>,
    assembly: &LikelihoodAssembly,
    time_index: usize,
) -> Result<DMatrix<f64>> {
    if assembly.is_empty() {
        return Err(Error::InvalidParameter {
            name: "assembly",
            reason: "multi-gain needs at least one informed station",
        });
    }
    let compact = restricted_gain(forecast_cov, assembly, time_index)?;
    let n = forecast_cov.nrows();
    let mut full = DMatrix::zeros(n, n);
    for (k, &s) in assembly.informed_stations.iter().enumerate() {
        full.set_column(s, &compact.column(k));
    }
    Ok(full)
}

/// Mean `V + K (HY - V)` with the innovation nonzero only on informed
/// stations, and covariance `(I - K) P`.
pub fn multi_analysis(
    forecast: &StateEstimate,
    assembly: &LikelihoodAssembly,
) -> Result<StateEstimate> {
    if assembly.is_empty() {
        return Ok(forecast.clone());
    }
    let gain = multi_gain(&forecast.covariance, assembly, forecast.time_index)?;
    let n = forecast.dim();
    let mut innovation = DVector::zeros(n);
    for (&s, &y) in assembly
        .informed_stations
        .iter()
        .zip(&assembly.projected_values)
    {
        innovation[s] = y - forecast.mean[s];
    }
    let mean = &forecast.mean + &gain * innovation;
    let mut cov = (DMatrix::<f64>::identity(n, n) - gain) * &forecast.covariance;
    linalg::symmetrize(&mut cov);
    StateEstimate::new(forecast.time_index, mean, cov)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlfOptions {
    pub projection: ProjectionMode,
    /// Pool capacity as a multiple of `N`; the oldest data are evicted first.
    pub pool_cap_factor: usize,
}

impl Default for DlfOptions {
    fn default() -> Self {
        DlfOptions {
            projection: ProjectionMode::NearestLeft,
            pool_cap_factor: 4,
        }
    }
}

/// Everything produced by one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct DlfStep {
    pub estimate: StateEstimate,
    /// Surviving pool at the new time, oldest first.
    pub pool: Vec<LiveObservation>,
    /// Data removed this step by the viability threshold or the pool cap.
    pub expired: Vec<LiveObservation>,
    /// Projection of `pool`; `assembly.selected` indexes into it.
    pub candidates: Vec<ProjectedDatum>,
    pub assembly: LikelihoodAssembly,
}

/// Forecast, propagate the pool, ingest fresh data, shed non-viable data,
/// project, rank-order and run the multi-analysis.
pub fn dlf_step(
    prev: &StateEstimate,
    pool: &[LiveObservation],
    fresh: &[Observation],
    grid: &GridSpec,
    model_cfg: &ModelConfig,
    truth_cfg: &TruthConfig,
    options: &DlfOptions,
) -> Result<DlfStep> {
    if let Some(o) = pool.iter().find(|o| o.current_time != prev.time_index) {
        return Err(Error::ObservationTime {
            expected: prev.time_index,
            found: o.current_time,
        });
    }
    let speeds = truth::station_speeds(grid, truth_cfg, grid.time(prev.time_index));
    let forecast = kf::forecast(prev, grid, model_cfg, &speeds)?;
    if let Some(o) = fresh.iter().find(|o| o.time_index != forecast.time_index) {
        return Err(Error::ObservationTime {
            expected: forecast.time_index,
            found: o.time_index,
        });
    }

    let mut live: Vec<LiveObservation> = pool
        .iter()
        .map(|o| {
            let moved = propagate_observation(o, grid, truth_cfg);
            propagate_variance(&moved, truth_cfg.forcing_amp, grid.dt)
        })
        .collect();
    live.extend(fresh.iter().map(|o| LiveObservation::fresh(o, grid)));

    let (mut live, mut expired) = viability_filter(live, &forecast.covariance, grid);
    let cap = options.pool_cap_factor.saturating_mul(grid.n_points);
    if live.len() > cap {
        let evicted = live.len() - cap;
        expired.extend(live.drain(..evicted));
    }

    let candidates = project(&live, grid, options.projection);
    let assembly = rank_order(&candidates);
    let estimate = multi_analysis(&forecast, &assembly)?;
    Ok(DlfStep {
        estimate,
        pool: live,
        expired,
        candidates,
        assembly,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::truth::Problem;
    use approx::assert_relative_eq;

    fn constant_speed(c: f64) -> TruthConfig {
        TruthConfig {
            problem: Problem::Two,
            alpha: 0.0,
            alpha0: c,
            alpha1: 0.0,
            beta: 0.0,
            forcing_amp: 0.01,
            forcing_mean: 0.0,
            init_center: 1.0,
            init_var: 0.0,
        }
    }

    fn live_at(position: f64, variance: f64) -> LiveObservation {
        LiveObservation {
            value: 2.0,
            position,
            variance,
            origin_variance: variance,
            origin_station: 0,
            origin_time: 0,
            current_time: 0,
        }
    }

    #[test]
    fn constant_advection() {
        let grid = GridSpec::with_dt(2.0, 50, 0.1, 10).unwrap();
        let cfg = constant_speed(1.0);
        let o = propagate_observation(&live_at(0.5, 0.02), &grid, &cfg);
        assert_relative_eq!(o.position, 0.6, epsilon = 1e-15);
        assert_eq!(o.value, 2.0);
        assert_eq!(o.current_time, 1);
        let o = propagate_observation(&live_at(1.95, 0.02), &grid, &cfg);
        assert_relative_eq!(o.position, 0.05, epsilon = 1e-14);
    }

    #[test]
    fn accelerating_characteristic_tracks_fine_integration() {
        let grid = GridSpec::with_dt(2.0, 50, 0.2, 10).unwrap();
        let cfg = TruthConfig {
            alpha0: 0.1,
            alpha1: 0.01,
            ..constant_speed(0.0)
        };
        let mut o = live_at(1.0, 0.02);
        for _ in 0..10 {
            o = propagate_observation(&o, &grid, &cfg);
        }
        // Independent oracle: Euler at dt / 100 over the same interval.
        let h = grid.dt / 100.0;
        let mut z = 1.0;
        for i in 0..1000 {
            z += h * (0.1 + 0.01 * libm::sqrt(i as f64 * h));
        }
        let z = grid.wrap(z);
        assert!((o.position - z).abs() < grid.dt, "{} vs {}", o.position, z);
    }

    #[test]
    fn variance_inflation() {
        let o = live_at(0.0, 0.02);
        assert_eq!(propagate_variance(&o, 0.0, 0.3).variance, 0.02);
        let one = propagate_variance(&o, 0.01, 0.0396);
        assert_relative_eq!(one.variance, 0.02 + 1e-4 * 0.0396, epsilon = 1e-17);
    }

    #[test]
    fn viability_threshold() {
        let grid = GridSpec::with_dt(0.16, 4, 0.04, 1).unwrap();
        let p = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.1, 0.2, 0.3, 0.4]));
        let all = alloc::vec![live_at(0.0, 0.05), live_at(0.085, 0.09)];
        let (kept, gone) = viability_filter(all.clone(), &p, &grid);
        assert_eq!(kept, all);
        assert!(gone.is_empty());
        let (kept, gone) = viability_filter(alloc::vec![live_at(0.04, 4.0)], &p, &grid);
        assert!(kept.is_empty());
        assert_eq!(gone.len(), 1);
    }

    #[test]
    fn projection_modes() {
        let grid = GridSpec::with_dt(2.0, 50, 0.1, 1).unwrap();
        let on = [live_at(grid.x(3), 0.02)];
        for mode in [ProjectionMode::NearestLeft, ProjectionMode::Linear] {
            let p = project(&on, &grid, mode);
            assert_eq!(p.len(), 1);
            assert_eq!((p[0].station, p[0].weight), (3, 1.0));
        }
        let p = project(&[live_at(0.059, 0.02)], &grid, ProjectionMode::NearestLeft);
        assert_eq!(p[0].station, 1);
        let p = project(&[live_at(0.06, 0.02)], &grid, ProjectionMode::Linear);
        assert_eq!((p[0].station, p[1].station), (1, 2));
        assert_relative_eq!(p[0].weight, 0.5, epsilon = 1e-12);
        assert_relative_eq!(p[1].weight, 0.5, epsilon = 1e-12);
        assert_eq!(p[1].variance, 0.02);
        // The right fragment of the last cell wraps to station 0.
        let p = project(&[live_at(1.98, 0.02)], &grid, ProjectionMode::Linear);
        assert_eq!((p[0].station, p[1].station), (49, 0));
    }

    #[test]
    fn every_station_coordinate_projects_to_itself() {
        let grid = GridSpec::with_dt(2.0, 50, 0.1, 1).unwrap();
        let live: Vec<_> = (0..50).map(|l| live_at(grid.x(l), 0.02)).collect();
        let p = project(&live, &grid, ProjectionMode::NearestLeft);
        assert!(p.iter().enumerate().all(|(l, d)| d.station == l));
    }

    fn datum(station: usize, variance: f64, value: f64) -> ProjectedDatum {
        ProjectedDatum {
            station,
            value,
            variance,
            weight: 1.0,
            source: 0,
        }
    }

    #[test]
    fn rank_order_disjoint_and_min() {
        let d = [datum(4, 0.3, 1.0), datum(1, 0.1, 2.0)];
        let a = rank_order(&d);
        assert_eq!(a.informed_stations, [1, 4]);
        assert_eq!(a.projected_values, [2.0, 1.0]);
        assert_eq!(a.selected, [true, true]);

        let d = [datum(2, 0.05, 9.0), datum(2, 0.02, 7.0)];
        let a = rank_order(&d);
        assert_eq!(a.informed_stations, [2]);
        assert_eq!(a.projected_values, [7.0]);
        assert_eq!(a.projected_variances, [0.02]);
        assert_eq!(a.selected, [false, true]);
        assert_eq!(a.winners, [1]);
    }

    #[test]
    fn multi_gain_limits() {
        let p = DMatrix::<f64>::identity(3, 3);
        let a = rank_order(&[datum(0, 1.0, 0.0), datum(1, 1.0, 0.0), datum(2, 1.0, 0.0)]);
        let k = multi_gain(&p, &a, 0).unwrap();
        assert_relative_eq!(k, DMatrix::identity(3, 3) * 0.5, epsilon = 1e-15);
        let a = rank_order(&[datum(0, 1e12, 0.0), datum(2, 1e12, 0.0)]);
        assert!(multi_gain(&p, &a, 0).unwrap().norm() < 1e-11);
        assert!(multi_gain(&p, &LikelihoodAssembly::default(), 0).is_err());
    }

    #[test]
    fn per_station_scalar_update() {
        let (pv, r) = (0.08, 0.02);
        let f = StateEstimate::new(
            1,
            DVector::from_column_slice(&[0.0, 1.0, -1.0]),
            DMatrix::identity(3, 3) * pv,
        )
        .unwrap();
        let y = [0.5, 0.5, 0.5];
        let d: Vec<_> = y.iter().enumerate().map(|(i, &v)| datum(i, r, v)).collect();
        let post = multi_analysis(&f, &rank_order(&d)).unwrap();
        for (i, &v) in y.iter().enumerate() {
            let expect = f.mean[i] + pv / (pv + r) * (v - f.mean[i]);
            assert_relative_eq!(post.mean[i], expect, epsilon = 1e-14);
            assert_relative_eq!(post.covariance[(i, i)], pv * r / (pv + r), epsilon = 1e-15);
        }
        assert_eq!(
            multi_analysis(&f, &LikelihoodAssembly::default()).unwrap(),
            f
        );
    }

    #[test]
    fn step_carries_old_data_forward() {
        let grid = GridSpec::with_dt(2.0, 50, 0.1, 10).unwrap();
        let truth_cfg = constant_speed(0.2);
        let model_cfg = ModelConfig::new(0.08).unwrap();
        let prev =
            StateEstimate::new(0, DVector::zeros(50), DMatrix::identity(50, 50) * 0.02).unwrap();
        let fresh = [Observation {
            value: 1.0,
            station: 10,
            time_index: 1,
            variance: 0.02,
        }];
        let opts = DlfOptions::default();
        let s1 = dlf_step(&prev, &[], &fresh, &grid, &model_cfg, &truth_cfg, &opts).unwrap();
        assert_eq!(s1.assembly.informed_stations, [10]);
        let s2 = dlf_step(
            &s1.estimate,
            &s1.pool,
            &[],
            &grid,
            &model_cfg,
            &truth_cfg,
            &opts,
        )
        .unwrap();
        assert_eq!(s2.pool.len(), 1);
        assert_eq!(s2.pool[0].age(), 1);
        assert_relative_eq!(s2.pool[0].position, 0.42, epsilon = 1e-14);
        assert_relative_eq!(s2.pool[0].variance, 0.02 + 1e-5, epsilon = 1e-16);
        assert_eq!(s2.assembly.informed_stations, [10]);
        assert!(s2.estimate.trace() < s1.estimate.trace() + 50.0 * 0.08);
    }

    #[test]
    fn pool_cap_evicts_oldest() {
        let grid = GridSpec::with_dt(0.16, 4, 0.01, 10).unwrap();
        let truth_cfg = TruthConfig {
            forcing_amp: 0.0,
            ..constant_speed(0.0)
        };
        let model_cfg = ModelConfig::new(1.0).unwrap();
        let prev = StateEstimate::new(0, DVector::zeros(4), DMatrix::identity(4, 4)).unwrap();
        let pool: Vec<_> = (0..5)
            .map(|i| LiveObservation {
                origin_time: 0,
                value: i as f64,
                ..live_at(0.0, 0.02)
            })
            .collect();
        let opts = DlfOptions {
            pool_cap_factor: 1,
            ..DlfOptions::default()
        };
        let s = dlf_step(&prev, &pool, &[], &grid, &model_cfg, &truth_cfg, &opts).unwrap();
        assert_eq!(s.pool.len(), 4);
        assert_eq!(s.expired.len(), 1);
        assert_eq!(s.expired[0].value, 0.0);
    }

    #[test]
    fn step_rejects_stale_pool() {
        let grid = GridSpec::with_dt(0.16, 4, 0.01, 10).unwrap();
        let prev = StateEstimate::new(2, DVector::zeros(4), DMatrix::identity(4, 4)).unwrap();
        let err = dlf_step(
            &prev,
            &[live_at(0.0, 0.02)],
            &[],
            &grid,
            &ModelConfig::new(0.0).unwrap(),
            &constant_speed(0.0),
            &DlfOptions::default(),
        );
        assert!(matches!(err, Err(Error::ObservationTime { .. })));
    }
}
