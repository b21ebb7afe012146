//! End-to-end runs: one truth member, its synthetic observations, and the
//! model-only, Kalman and dynamic-likelihood estimates scored against it.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::dlf::{self, DlfOptions, LiveObservation, ProjectionMode};
use crate::error::{Error, Result};
use crate::grid::{streams, GridSpec, NoiseSource, StateEstimate};
use crate::kf;
use crate::model::{self, ModelConfig};
use crate::obsnet::{self, ObsNetwork, Observation};
use crate::truth::{self, Problem, TruthConfig, TruthField, TruthNoise};

/// How the model-only comparator is advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ModelOnlyMode {
    /// A single noisy trajectory with model noise `Q` each step.
    #[default]
    Stochastic,
    /// The noise-free model mean.
    Mean,
}

/// Full description of one run. Seeds fix every random draw.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ScenarioConfig {
    pub problem: Problem,
    pub domain_length: f64,
    pub n_points: usize,
    pub cfl: f64,
    /// Number of model steps `N_f`; the final time index.
    pub horizon: usize,
    pub alpha: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta: f64,
    pub forcing_amp: f64,
    pub init_center: f64,
    pub init_var: f64,
    pub model_noise_var: f64,
    pub spatial_freq: f64,
    pub temporal_freq: f64,
    pub meas_var: f64,
    pub truth_seed: u64,
    pub model_seed: u64,
    pub obs_seed: u64,
    /// Last step at which data is read.
    pub present_time: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub projection: ProjectionMode,
    #[cfg_attr(feature = "serde", serde(default))]
    pub model_only_mode: ModelOnlyMode,
}

impl ScenarioConfig {
    fn fixed(problem: Problem, init_center: f64, horizon: usize) -> Self {
        let meas_var = 0.02;
        ScenarioConfig {
            problem,
            domain_length: 2.0,
            n_points: 50,
            cfl: 0.99,
            horizon,
            alpha: 0.01,
            alpha0: 0.1,
            alpha1: 0.01,
            beta: 0.02,
            forcing_amp: 0.01,
            init_center,
            init_var: 0.02,
            model_noise_var: 4.0 * meas_var,
            spatial_freq: 1.0,
            temporal_freq: 1.0,
            meas_var,
            truth_seed: 1,
            model_seed: 2,
            obs_seed: 3,
            present_time: horizon,
            projection: ProjectionMode::NearestLeft,
            model_only_mode: ModelOnlyMode::Stochastic,
        }
    }

    /// Ornstein-Uhlenbeck drift: `x0 = 1.25`, 200 steps.
    pub fn problem_one() -> Self {
        Self::fixed(Problem::One, 1.25, 200)
    }

    /// Accelerating drift: `x0 = 1`, 100 steps.
    pub fn problem_two() -> Self {
        Self::fixed(Problem::Two, 1.0, 100)
    }

    pub fn with_sampling(mut self, spatial_freq: f64, temporal_freq: f64) -> Self {
        self.spatial_freq = spatial_freq;
        self.temporal_freq = temporal_freq;
        self
    }

    /// Seed policy for replicate `r`: every seed is offset by `r`.
    pub fn replicate(&self, r: u64) -> Self {
        ScenarioConfig {
            truth_seed: self.truth_seed.wrapping_add(r),
            model_seed: self.model_seed.wrapping_add(r),
            obs_seed: self.obs_seed.wrapping_add(r),
            ..self.clone()
        }
    }

    pub fn truth_config(&self) -> TruthConfig {
        TruthConfig {
            problem: self.problem,
            alpha: self.alpha,
            alpha0: self.alpha0,
            alpha1: self.alpha1,
            beta: self.beta,
            forcing_amp: self.forcing_amp,
            forcing_mean: 0.0,
            init_center: self.init_center,
            init_var: self.init_var,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::new(self.model_noise_var)
    }

    pub fn validate(&self) -> Result<()> {
        self.truth_config().validate()?;
        for (name, v) in [
            ("model_noise_var", self.model_noise_var),
            ("meas_var", self.meas_var),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be nonnegative and finite",
                });
            }
        }
        if self.present_time > self.horizon {
            return Err(Error::InvalidParameter {
                name: "present_time",
                reason: "must not exceed the horizon",
            });
        }
        Ok(())
    }

    /// Lattice whose time step keeps the Courant number at most `cfl` over
    /// the whole horizon.
    pub fn grid(&self) -> Result<GridSpec> {
        let probe = GridSpec::new(
            self.domain_length,
            self.n_points,
            self.cfl,
            1.0,
            self.horizon,
        )?;
        let tc = self.truth_config();
        let budget = self.cfl * probe.dx;
        let max_speed = match self.problem {
            Problem::One => truth::horizon_max_speed(&probe, &tc, 0.0),
            Problem::Two => {
                // dt * c_max(dt) grows with dt; bisect for dt * c_max = cfl dx.
                let c0 = truth::horizon_max_speed(&probe, &tc, 0.0);
                if !(c0 > 0.0) {
                    return GridSpec::new(
                        self.domain_length,
                        self.n_points,
                        self.cfl,
                        c0,
                        self.horizon,
                    );
                }
                let (mut lo, mut hi) = (0.0, budget / c0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid * truth::horizon_max_speed(&probe, &tc, mid) <= budget {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                budget / lo
            }
        };
        GridSpec::new(
            self.domain_length,
            self.n_points,
            self.cfl,
            max_speed,
            self.horizon,
        )
    }
}

/// Circular center of mass of the positive part of `field`.
pub fn center_of_mass(field: &DVector<f64>, grid: &GridSpec) -> Result<f64> {
    let l = grid.domain_length;
    let (mut s, mut c, mut mass) = (0.0, 0.0, 0.0);
    for (i, &v) in field.iter().enumerate() {
        let w = v.max(0.0);
        let theta = 2.0 * PI * grid.x(i) / l;
        s += w * libm::sin(theta);
        c += w * libm::cos(theta);
        mass += w;
    }
    if !(mass > 0.0) {
        return Err(Error::NoPositiveMass);
    }
    Ok(grid.wrap(l / (2.0 * PI) * libm::atan2(s, c)))
}

/// Shortest distance between two positions on the circle of length `l`.
pub fn circular_distance(a: f64, b: f64, l: f64) -> f64 {
    let d = libm::fabs(a - b) % l;
    d.min(l - d)
}

fn rmse(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    libm::sqrt((a - b).norm_squared() / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub com_truth: f64,
    pub com_model: f64,
    pub com_kf: f64,
    pub com_dlf: f64,
    pub trace_kf: f64,
    pub trace_dlf: f64,
    pub rmse_model: f64,
    pub rmse_kf: f64,
    pub rmse_dlf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub steps: Vec<StepMetrics>,
    /// Estimate minus truth at the final time.
    pub final_diff_model: DVector<f64>,
    pub final_diff_kf: DVector<f64>,
    pub final_diff_dlf: DVector<f64>,
}

/// Time averages over all recorded steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub rmse_model: f64,
    pub rmse_kf: f64,
    pub rmse_dlf: f64,
    pub com_err_model: f64,
    pub com_err_kf: f64,
    pub com_err_dlf: f64,
    pub final_trace_kf: f64,
    pub final_trace_dlf: f64,
}

impl MetricTable {
    pub fn summary(&self, domain_length: f64) -> RunSummary {
        let n = self.steps.len() as f64;
        let avg = |f: &dyn Fn(&StepMetrics) -> f64| self.steps.iter().map(f).sum::<f64>() / n;
        let last = self.steps.last().copied();
        RunSummary {
            rmse_model: avg(&|m| m.rmse_model),
            rmse_kf: avg(&|m| m.rmse_kf),
            rmse_dlf: avg(&|m| m.rmse_dlf),
            com_err_model: avg(&|m| circular_distance(m.com_model, m.com_truth, domain_length)),
            com_err_kf: avg(&|m| circular_distance(m.com_kf, m.com_truth, domain_length)),
            com_err_dlf: avg(&|m| circular_distance(m.com_dlf, m.com_truth, domain_length)),
            final_trace_kf: last.map_or(f64::NAN, |m| m.trace_kf),
            final_trace_dlf: last.map_or(f64::NAN, |m| m.trace_dlf),
        }
    }
}

/// Fate of a pool member at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolStatus {
    /// Supplied its station's datum.
    Selected,
    /// Viable but beaten by a less uncertain datum.
    Discarded,
    /// Removed by the viability threshold or the pool cap.
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolTraceRow {
    pub step: usize,
    pub origin_time: usize,
    pub origin_station: usize,
    pub position: f64,
    pub variance: f64,
    pub status: PoolStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub grid: GridSpec,
    pub network: ObsNetwork,
    pub truth: TruthField,
    pub observations: Vec<Observation>,
    pub model_only: Vec<DVector<f64>>,
    pub kf: Vec<StateEstimate>,
    pub dlf: Vec<StateEstimate>,
    pub metrics: MetricTable,
    pub dlf_trace: Vec<PoolTraceRow>,
}

impl RunResult {
    pub fn summary(&self) -> RunSummary {
        self.metrics.summary(self.grid.domain_length)
    }

    /// Every filter mean and covariance entry is finite.
    pub fn filters_finite(&self) -> bool {
        self.kf.iter().chain(&self.dlf).all(|e| {
            e.mean.iter().all(|v| v.is_finite()) && e.covariance.iter().all(|v| v.is_finite())
        })
    }
}

/// Observations grouped by time index, `0..=horizon`.
fn group_by_step(obs: &[Observation], horizon: usize) -> Vec<&[Observation]> {
    let mut out: Vec<&[Observation]> = alloc::vec![&[]; horizon + 1];
    let mut start = 0;
    while start < obs.len() {
        let t = obs[start].time_index;
        let end = start
            + obs[start..]
                .iter()
                .take_while(|o| o.time_index == t)
                .count();
        out[t] = &obs[start..end];
        start = end;
    }
    out
}

fn trace_step(step: usize, out: &dlf::DlfStep) -> impl Iterator<Item = PoolTraceRow> + '_ {
    let mut chosen = alloc::vec![false; out.pool.len()];
    for (cand, &sel) in out.candidates.iter().zip(&out.assembly.selected) {
        if sel {
            chosen[cand.source] = true;
        }
    }
    let row = move |o: &LiveObservation, status| PoolTraceRow {
        step,
        origin_time: o.origin_time,
        origin_station: o.origin_station,
        position: o.position,
        variance: o.variance,
        status,
    };
    out.pool
        .iter()
        .zip(chosen)
        .map(move |(o, c)| {
            row(
                o,
                if c {
                    PoolStatus::Selected
                } else {
                    PoolStatus::Discarded
                },
            )
        })
        .chain(out.expired.iter().map(move |o| row(o, PoolStatus::Expired)))
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunResult> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let tc = cfg.truth_config();
    let mc = cfg.model_config()?;
    let n = grid.n_points;

    let truth = truth::generate_truth(&grid, &tc, &mut TruthNoise::from_seed(cfg.truth_seed))?;
    let network = obsnet::build_network(&grid, cfg.spatial_freq, cfg.temporal_freq, cfg.meas_var)?;
    let observations = obsnet::sample_observations(
        &truth,
        &network,
        cfg.present_time,
        &mut NoiseSource::new(cfg.obs_seed, streams::OBSERVATION),
    )?;
    let by_step = group_by_step(&observations, cfg.horizon);
    let h = obsnet::observation_matrix(&network, &grid);

    let prior_mean = truth::mean_pulse(&grid, &tc)?;
    let prior = StateEstimate::new(
        0,
        prior_mean.clone(),
        DMatrix::identity(n, n) * cfg.init_var,
    )?;

    let mut model_src = NoiseSource::new(cfg.model_seed, streams::MODEL);
    let mut model_only = Vec::with_capacity(cfg.horizon + 1);
    let mut kf_traj = Vec::with_capacity(cfg.horizon + 1);
    let mut dlf_traj = Vec::with_capacity(cfg.horizon + 1);
    let mut dlf_trace = Vec::new();
    model_only.push(prior_mean);
    kf_traj.push(prior.clone());
    dlf_traj.push(prior);

    let opts = DlfOptions {
        projection: cfg.projection,
        ..DlfOptions::default()
    };
    let mut pool: Vec<LiveObservation> = Vec::new();
    for step in 1..=cfg.horizon {
        let speeds = truth::station_speeds(&grid, &tc, grid.time(step - 1));
        let prev_model = &model_only[step - 1];
        let next_model = match cfg.model_only_mode {
            ModelOnlyMode::Stochastic => {
                model::model_step(prev_model, &grid, &mc, &speeds, step - 1, &mut model_src)?
            }
            ModelOnlyMode::Mean => {
                model::propagate_mean(prev_model, &grid, &mc, &speeds, step - 1)?
            }
        };
        model_only.push(next_model);

        let fresh = by_step[step];
        let forecast = kf::forecast(&kf_traj[step - 1], &grid, &mc, &speeds)?;
        let kf_next = if fresh.is_empty() {
            forecast
        } else {
            kf::analysis(&forecast, fresh, &h, cfg.meas_var)?
        };
        kf_traj.push(kf_next);

        let out = dlf::dlf_step(&dlf_traj[step - 1], &pool, fresh, &grid, &mc, &tc, &opts)?;
        dlf_trace.extend(trace_step(step, &out));
        pool = out.pool;
        dlf_traj.push(out.estimate);
    }

    let mut steps = Vec::with_capacity(cfg.horizon + 1);
    for step in 0..=cfg.horizon {
        let t = &truth.values[step];
        let (m, k, d) = (&model_only[step], &kf_traj[step], &dlf_traj[step]);
        steps.push(StepMetrics {
            step,
            com_truth: center_of_mass(t, &grid)?,
            com_model: center_of_mass(m, &grid)?,
            com_kf: center_of_mass(&k.mean, &grid)?,
            com_dlf: center_of_mass(&d.mean, &grid)?,
            trace_kf: k.trace(),
            trace_dlf: d.trace(),
            rmse_model: rmse(m, t),
            rmse_kf: rmse(&k.mean, t),
            rmse_dlf: rmse(&d.mean, t),
        });
    }
    let last = &truth.values[cfg.horizon];
    let metrics = MetricTable {
        steps,
        final_diff_model: &model_only[cfg.horizon] - last,
        final_diff_kf: &kf_traj[cfg.horizon].mean - last,
        final_diff_dlf: &dlf_traj[cfg.horizon].mean - last,
    };

    Ok(RunResult {
        config: cfg.clone(),
        grid,
        network,
        truth,
        observations,
        model_only,
        kf: kf_traj,
        dlf: dlf_traj,
        metrics,
        dlf_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn com_of_symmetric_pulse() {
        let cfg = ScenarioConfig::problem_one();
        let grid = GridSpec::new(2.0, 50, 1.0, 1.0, 1).unwrap();
        let tc = TruthConfig {
            init_center: 1.0,
            ..cfg.truth_config()
        };
        let u = truth::mean_pulse(&grid, &tc).unwrap();
        assert_relative_eq!(center_of_mass(&u, &grid).unwrap(), 1.0, epsilon = 1e-6);
        // Midway between stations the sampled pulse is symmetric as well.
        let tc = TruthConfig {
            init_center: 1.02,
            ..cfg.truth_config()
        };
        let u = truth::mean_pulse(&grid, &tc).unwrap();
        assert_relative_eq!(center_of_mass(&u, &grid).unwrap(), 1.02, epsilon = 1e-6);
    }

    #[test]
    fn com_is_shift_equivariant() {
        let grid = GridSpec::new(2.0, 50, 1.0, 1.0, 1).unwrap();
        let u = DVector::from_fn(50, |i, _| {
            if (3..9).contains(&i) {
                (i % 4) as f64 + 0.5
            } else {
                0.0
            }
        });
        let c0 = center_of_mass(&u, &grid).unwrap();
        for d in [1usize, 7, 30, 47] {
            let shifted = DVector::from_fn(50, |i, _| u[grid.station(i as isize - d as isize)]);
            let expect = grid.wrap(c0 + d as f64 * grid.dx);
            let got = center_of_mass(&shifted, &grid).unwrap();
            assert!(circular_distance(got, expect, 2.0) < 1e-12);
        }
    }

    #[test]
    fn com_matches_linear_moment_away_from_seam() {
        // Deterministic positive bump on stations 22..28.
        let grid = GridSpec::new(2.0, 50, 1.0, 1.0, 1).unwrap();
        let w = [0.3, 0.9, 1.4, 0.2, 0.7, 1.1, 0.5];
        let u = DVector::from_fn(50, |i, _| {
            if (22..29).contains(&i) {
                w[i - 22]
            } else {
                0.0
            }
        });
        let linear = (0..50).map(|i| grid.x(i) * u[i]).sum::<f64>() / u.sum();
        assert!((center_of_mass(&u, &grid).unwrap() - linear).abs() < 1e-3);
    }

    #[test]
    fn com_needs_positive_mass() {
        let grid = GridSpec::new(2.0, 10, 1.0, 1.0, 1).unwrap();
        assert_eq!(
            center_of_mass(&DVector::from_element(10, -1.0), &grid),
            Err(Error::NoPositiveMass)
        );
    }

    #[test]
    fn grids_respect_cfl_over_horizon() {
        let g1 = ScenarioConfig::problem_one().grid().unwrap();
        assert_relative_eq!(g1.dt, 0.99 * 0.04 / 0.0196, epsilon = 1e-12);
        let c2 = ScenarioConfig::problem_two();
        let g2 = c2.grid().unwrap();
        let t_end = g2.time(c2.horizon);
        let lambda = g2.dt / g2.dx * truth::mean_speed(&c2.truth_config(), 0.0, t_end);
        assert_relative_eq!(lambda, 0.99, epsilon = 1e-9);
    }

    #[test]
    fn replicate_seed_policy() {
        let c = ScenarioConfig::problem_two().replicate(3);
        assert_eq!((c.truth_seed, c.model_seed, c.obs_seed), (4, 5, 6));
    }

    #[test]
    fn short_run_shapes() {
        let mut cfg = ScenarioConfig::problem_two().with_sampling(0.25, 0.1);
        cfg.horizon = 30;
        cfg.present_time = 30;
        let r = run_scenario(&cfg).unwrap();
        assert_eq!(r.model_only.len(), 31);
        assert_eq!(r.kf.len(), 31);
        assert_eq!(r.dlf.len(), 31);
        assert_eq!(r.metrics.steps.len(), 31);
        assert!(r.filters_finite());
        assert!(r.dlf.iter().all(|e| e.covariance_is_valid()));
        assert_eq!(r.observations.len(), 3 * 13);
    }

    #[test]
    fn forecasting_beyond_present_reads_no_data() {
        let mut cfg = ScenarioConfig::problem_two();
        cfg.horizon = 20;
        cfg.present_time = 10;
        let r = run_scenario(&cfg).unwrap();
        assert!(r.observations.iter().all(|o| o.time_index <= 10));
        // Past t_p the KF only forecasts, so its trace grows.
        assert!(r.kf[20].trace() > r.kf[10].trace());
    }
}
