//! Benchmark dynamical systems, trajectory simulation and datasets.

mod dataset;
mod io;
mod ode;

use ndarray::{Array2, ArrayView1};
use thiserror::Error;

pub use dataset::{
    generate_dataset, Dataset, DatasetConfig, DatasetMeta, Decimation, IcBox, SplitCounts,
    DATASET_FORMAT_VERSION,
};
pub use io::{format_f64, load_dataset, read_trajectory_csv, save_dataset, write_trajectory_csv};
pub use ode::{
    fluidflow_rhs, lorenz_rhs, pendulum_rhs, rk4_step, FluidFlowParams, LorenzParams, OdeSystem,
    PendulumParams,
};

/// Default number of RK4 substeps per sampling interval.
pub const DEFAULT_SUBSTEPS: usize = 10;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("integration produced a non-finite state")]
    NonFinite,
    #[error("decimation factor {factor} leaves fewer than 2 of {samples} samples")]
    FactorTooLarge { factor: usize, samples: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed data in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A regularly sampled solution: row `k` of `states` is the observation at
/// time `t0 + k·dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Array2<f64>,
    pub initial_condition: Vec<f64>,
}

impl Trajectory {
    pub fn new(
        t0: f64,
        dt: f64,
        states: Array2<f64>,
        initial_condition: Vec<f64>,
    ) -> Result<Self, SystemError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SystemError::InvalidConfig(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if states.nrows() < 2 {
            return Err(SystemError::InvalidConfig(
                "a trajectory needs at least 2 samples".into(),
            ));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(SystemError::NonFinite);
        }
        Ok(Self {
            t0,
            dt,
            states,
            initial_condition,
        })
    }

    /// Number of samples `T`.
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.states.row(k)
    }

    /// Keeps rows `0, f, 2f, …`; a trailing partial interval is dropped.
    pub fn subsample(&self, factor: usize) -> Result<Self, SystemError> {
        if factor == 0 {
            return Err(SystemError::InvalidConfig("factor must be positive".into()));
        }
        let kept = (self.len() - 1) / factor + 1;
        if kept < 2 {
            return Err(SystemError::FactorTooLarge {
                factor,
                samples: self.len(),
            });
        }
        let rows: Vec<usize> = (0..kept).map(|k| k * factor).collect();
        Ok(Self {
            t0: self.t0,
            dt: self.dt * factor as f64,
            states: self.states.select(ndarray::Axis(0), &rows),
            initial_condition: self.initial_condition.clone(),
        })
    }
}

/// Integrates `system` from `x0`, sampling every `dt_sample` for `steps`
/// intervals (so `steps + 1` rows) with `substeps` RK4 steps per interval.
pub fn simulate(
    system: &OdeSystem,
    x0: &[f64],
    dt_sample: f64,
    steps: usize,
    substeps: usize,
) -> Result<Trajectory, SystemError> {
    if !(dt_sample > 0.0) || substeps == 0 {
        return Err(SystemError::InvalidConfig(format!(
            "need dt_sample > 0 and substeps >= 1 (got {dt_sample}, {substeps})"
        )));
    }
    if x0.len() != system.state_dim() {
        return Err(SystemError::InvalidConfig(format!(
            "{} expects a {}-dimensional state, got {}",
            system.name(),
            system.state_dim(),
            x0.len()
        )));
    }
    let h = dt_sample / substeps as f64;
    let n = system.obs_dim();
    let mut states = Array2::zeros((steps + 1, n));
    let mut x = x0.to_vec();
    let rhs = |s: &[f64], out: &mut [f64]| system.rhs(s, out);
    for (k, mut row) in states.rows_mut().into_iter().enumerate() {
        if k > 0 {
            for _ in 0..substeps {
                x = rk4_step(rhs, &x, h)?;
            }
        }
        for (dst, v) in row.iter_mut().zip(system.observe(&x)) {
            *dst = v;
        }
    }
    Trajectory::new(0.0, dt_sample, states, x0.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_at_rest_stays_at_rest() {
        let sys = OdeSystem::from_name("pendulum").unwrap();
        let tr = simulate(&sys, &[0.0, 0.0], 0.05, 10, 3).unwrap();
        assert_eq!(tr.len(), 11);
        assert!(tr.states.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_angle_pendulum_follows_cosine() {
        let sys = OdeSystem::from_name("pendulum").unwrap();
        let tr = simulate(&sys, &[0.01, 0.0], 0.01, 1000, DEFAULT_SUBSTEPS).unwrap();
        let err = (0..tr.len())
            .map(|k| (tr.states[[k, 0]] - 0.01 * tr.time(k).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err < 2e-6, "max error {err}");
    }

    #[test]
    fn lorenz_stays_in_bounding_box() {
        let sys = OdeSystem::from_name("lorenz63").unwrap();
        let tr = simulate(&sys, &[1.0, 1.0, 20.0], 0.01, 10_000, DEFAULT_SUBSTEPS).unwrap();
        for row in tr.states.rows() {
            assert!(row[0].abs() < 30.0 && row[1].abs() < 30.0);
            assert!(row[2] > 0.0 && row[2] < 60.0);
        }
    }

    #[test]
    fn substeps_match_fine_sampling() {
        let sys = OdeSystem::from_name("fluidflow").unwrap();
        let x0 = [0.5, -0.3, 0.8];
        let coarse = simulate(&sys, &x0, 0.04, 20, 4).unwrap();
        let fine = simulate(&sys, &x0, 0.04 / 4.0, 80, 1).unwrap();
        for k in 0..coarse.len() {
            assert_eq!(coarse.row(k), fine.row(4 * k));
        }
    }

    #[test]
    fn rk4_global_error_is_fourth_order() {
        let decay = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut x = vec![1.0];
            for _ in 0..steps {
                x = rk4_step(|s, o: &mut [f64]| o[0] = -s[0], &x, dt).unwrap();
            }
            (x[0] - (-1.0f64).exp()).abs()
        };
        let ratio = decay(0.1) / decay(0.05);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    fn ramp(rows: usize) -> Trajectory {
        let states = Array2::from_shape_fn((rows, 2), |(i, j)| (i * 2 + j) as f64);
        Trajectory::new(0.0, 0.01, states, vec![0.0, 1.0]).unwrap()
    }

    #[test]
    fn subsample_fenceposts() {
        let tr = ramp(1001);
        assert_eq!(tr.subsample(1).unwrap(), tr);
        let lf = tr.subsample(20).unwrap();
        assert_eq!(lf.len(), 51);
        assert!((lf.dt - 0.2).abs() < 1e-15);
        assert_eq!(lf.initial_condition, tr.initial_condition);
        let fl = Trajectory {
            dt: 0.02,
            ..ramp(121)
        }
        .subsample(20)
        .unwrap();
        assert_eq!(fl.len(), 7);
        assert!((fl.dt - 0.4).abs() < 1e-15);
        assert!(matches!(
            ramp(10).subsample(10),
            Err(SystemError::FactorTooLarge { .. })
        ));
    }

    #[test]
    fn subsample_composes() {
        let tr = ramp(97);
        for (a, b) in [(2, 3), (4, 5), (3, 3)] {
            let two_step = tr.subsample(a).unwrap().subsample(b).unwrap();
            let one_step = tr.subsample(a * b).unwrap();
            assert_eq!(two_step.states, one_step.states);
        }
    }
}
