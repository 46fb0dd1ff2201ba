use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate, OdeSystem, SystemError, Trajectory, DEFAULT_SUBSTEPS};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Fresh initial-condition draws allowed after a trajectory blows up.
const MAX_RETRIES: usize = 16;

/// Axis-aligned box of initial conditions, sampled uniformly per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Replace the last component by the sum of squares of the others,
    /// i.e. start on the paraboloid `z = x² + y²` (the fluid flow's slow
    /// manifold). The box bounds for that component are then unused.
    #[serde(default)]
    pub on_slow_manifold: bool,
}

impl IcBox {
    pub fn for_system(system: &OdeSystem) -> Self {
        match system {
            // Zero initial speed; angles stay below the separatrix.
            OdeSystem::Pendulum(_) => Self {
                lo: vec![-3.0, 0.0],
                hi: vec![3.0, 0.0],
                on_slow_manifold: false,
            },
            OdeSystem::FluidFlow(_) => Self {
                lo: vec![-1.1, -1.1, 0.0],
                hi: vec![1.1, 1.1, 2.42],
                on_slow_manifold: true,
            },
            OdeSystem::Lorenz63(_) => Self {
                lo: vec![-20.0, -20.0, 0.0],
                hi: vec![20.0, 20.0, 40.0],
                on_slow_manifold: false,
            },
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut x: Vec<f64> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&lo, &hi)| {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            })
            .collect();
        if self.on_slow_manifold {
            if let Some((last, rest)) = x.split_last_mut() {
                *last = rest.iter().map(|v| v * v).sum();
            }
        }
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub system: OdeSystem,
    pub dt: f64,
    /// Samples per trajectory (`T`).
    pub samples: usize,
    pub counts: SplitCounts,
    pub seed: u64,
    pub substeps: usize,
    pub initial_conditions: IcBox,
}

impl DatasetConfig {
    /// Config with `samples` rows per trajectory.
    pub fn new(system: OdeSystem, dt: f64, samples: usize, counts: SplitCounts, seed: u64) -> Self {
        Self {
            initial_conditions: IcBox::for_system(&system),
            system,
            dt,
            samples,
            counts,
            seed,
            substeps: DEFAULT_SUBSTEPS,
        }
    }

    /// Config covering `[0, duration]` inclusive, i.e. `duration/dt + 1` rows.
    pub fn from_duration(
        system: OdeSystem,
        dt: f64,
        duration: f64,
        counts: SplitCounts,
        seed: u64,
    ) -> Result<Self, SystemError> {
        let ratio = duration / dt;
        let intervals = ratio.round();
        if !(dt > 0.0) || (ratio - intervals).abs() > 1e-9 * ratio.max(1.0) || intervals < 1.0 {
            return Err(SystemError::InvalidConfig(format!(
                "duration {duration} is not a positive integer multiple of dt {dt}"
            )));
        }
        Ok(Self::new(system, dt, intervals as usize + 1, counts, seed))
    }

    pub fn duration(&self) -> f64 {
        (self.samples - 1) as f64 * self.dt
    }

    fn validate(&self) -> Result<(), SystemError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SystemError::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.samples < 2 {
            return Err(SystemError::InvalidConfig(
                "trajectories need at least 2 samples".into(),
            ));
        }
        if self.substeps == 0 {
            return Err(SystemError::InvalidConfig("substeps must be >= 1".into()));
        }
        let d = self.system.state_dim();
        if self.initial_conditions.lo.len() != d || self.initial_conditions.hi.len() != d {
            return Err(SystemError::InvalidConfig(format!(
                "initial-condition box must be {d}-dimensional"
            )));
        }
        Ok(())
    }
}

/// Recorded when a dataset was produced by decimating another one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decimation {
    pub factor: usize,
    pub source_dt: f64,
    pub source_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub system: OdeSystem,
    pub dt: f64,
    pub duration: f64,
    pub samples: usize,
    pub counts: SplitCounts,
    pub seed: u64,
    pub substeps: usize,
    pub initial_conditions: IcBox,
    pub decimation: Option<Decimation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn system(&self) -> &OdeSystem {
        &self.meta.system
    }

    pub fn splits(&self) -> [(&'static str, &[Trajectory]); 3] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ]
    }

    /// Decimates every trajectory by `factor`.
    pub fn subsample(&self, factor: usize) -> Result<Self, SystemError> {
        let dec = |v: &[Trajectory]| -> Result<Vec<Trajectory>, SystemError> {
            v.iter().map(|t| t.subsample(factor)).collect()
        };
        let samples = (self.meta.samples - 1) / factor.max(1) + 1;
        if factor == 0 || samples < 2 {
            return Err(SystemError::FactorTooLarge {
                factor,
                samples: self.meta.samples,
            });
        }
        let dt = self.meta.dt * factor as f64;
        Ok(Self {
            meta: DatasetMeta {
                dt,
                samples,
                duration: (samples - 1) as f64 * dt,
                decimation: Some(Decimation {
                    factor,
                    source_dt: self.meta.dt,
                    source_samples: self.meta.samples,
                }),
                ..self.meta.clone()
            },
            train: dec(&self.train)?,
            val: dec(&self.val)?,
            test: dec(&self.test)?,
        })
    }
}

fn generate_one(config: &DatasetConfig, index: usize) -> Result<Trajectory, SystemError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let mut last_err = SystemError::NonFinite;
    for _ in 0..MAX_RETRIES {
        let x0 = config.initial_conditions.sample(&mut rng);
        match simulate(
            &config.system,
            &x0,
            config.dt,
            config.samples - 1,
            config.substeps,
        ) {
            Ok(t) => return Ok(t),
            Err(e @ SystemError::NonFinite) => last_err = e,
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

/// Simulates every split. Trajectory `i` (numbered train, then val, then
/// test) draws its initial condition from its own ChaCha stream, so output is
/// identical however the work is scheduled.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset, SystemError> {
    config.validate()?;
    let total = config.counts.total();
    let mut all: Vec<Trajectory> = (0..total)
        .into_par_iter()
        .map(|i| generate_one(config, i))
        .collect::<Result<_, _>>()?;
    let test = all.split_off(config.counts.train + config.counts.val);
    let val = all.split_off(config.counts.train);
    Ok(Dataset {
        meta: DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            system: config.system,
            dt: config.dt,
            duration: config.duration(),
            samples: config.samples,
            counts: config.counts,
            seed: config.seed,
            substeps: config.substeps,
            initial_conditions: config.initial_conditions.clone(),
            decimation: None,
        },
        train: all,
        val,
        test,
    })
}
