//! Forecast error against ground truth, `K` spectra, Lyapunov exponents and
//! the report files built from them.

mod lyapunov;
mod report;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::continuous::{
    discrete_forecast, integer_ratio, latent_linear_interp, propagate_decode, ContinuousError,
    ContinuousOperator,
};
use crate::koopman::{KoopmanError, KoopmanModel};
use crate::numlin::{eig, LinalgError, RealMatrix};
use crate::systems::{Dataset, SystemError, Trajectory};

pub use lyapunov::{
    lyapunov_spectrum, JacobianMode, LearnedFlow, LinearFlow, LyapunovConfig, LyapunovResult,
    OdeFlow, TangentFlow,
};
pub use report::{
    emit_curves, emit_report, emit_trajectory_curves, read_report, EvalReport, SpectrumEntry,
    TrajectoryResult, REPORT_FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("the test split is empty")]
    EmptyTestSplit,
    #[error("the {0} method needs a generator")]
    MissingGenerator(Method),
    #[error("trajectory or tangent frame became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("tangent frame degenerated at step {step}")]
    FrameDegenerate { step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Continuous(#[from] ContinuousError),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// How forecasts reach the evaluation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// `ψ(exp((t/Δ)·D)·φ(x₀))` at every grid time.
    Continuous,
    /// Linear interpolation of the `K`-rollout latents, then decode.
    LatentInterp,
    /// `ψ(K^k φ(x₀))`; the grid must be a multiple of the training step.
    Discrete,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Continuous => "continuous",
            Method::LatentInterp => "latent-interp",
            Method::Discrete => "discrete",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuous" => Ok(Method::Continuous),
            "latent-interp" => Ok(Method::LatentInterp),
            "discrete" => Ok(Method::Discrete),
            other => Err(format!(
                "unknown method {other:?} (expected continuous, latent-interp or discrete)"
            )),
        }
    }
}

/// Mean squared error over all points plus its per-timestep profile.
#[derive(Clone, Debug, PartialEq)]
pub struct MseResult {
    pub mse: f64,
    /// Mean over components at each timestep.
    pub curve: Vec<f64>,
}

pub fn mse(predicted: &Trajectory, truth: &Trajectory) -> Result<MseResult, EvalError> {
    let same_dt = (predicted.dt - truth.dt).abs() <= 1e-12 * truth.dt;
    let same_t0 = (predicted.t0 - truth.t0).abs() <= 1e-12 * truth.dt;
    if predicted.len() != truth.len() || predicted.dim() != truth.dim() || !same_dt || !same_t0 {
        return Err(EvalError::GridMismatch(format!(
            "prediction {}x{} (t0 {}, dt {}) vs truth {}x{} (t0 {}, dt {})",
            predicted.len(),
            predicted.dim(),
            predicted.t0,
            predicted.dt,
            truth.len(),
            truth.dim(),
            truth.t0,
            truth.dt
        )));
    }
    let n = truth.dim() as f64;
    let curve: Vec<f64> = predicted
        .states
        .rows()
        .into_iter()
        .zip(truth.states.rows())
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
        .collect();
    let mse = curve.iter().sum::<f64>() / curve.len() as f64;
    Ok(MseResult { mse, curve })
}

/// Eigenvalues of `K` as (modulus, argument), sorted by argument.
pub fn k_spectrum(k: &RealMatrix) -> Result<Vec<SpectrumEntry>, EvalError> {
    let decomp = eig(k)?;
    let mut out: Vec<SpectrumEntry> = decomp
        .eigenvalues
        .iter()
        .map(|z| SpectrumEntry {
            modulus: z.norm(),
            argument: z.im.atan2(z.re),
        })
        .collect();
    out.sort_by(|a, b| {
        a.argument
            .total_cmp(&b.argument)
            .then(a.modulus.total_cmp(&b.modulus))
    });
    Ok(out)
}

/// What to evaluate and how.
#[derive(Clone, Debug)]
pub struct EvalSpec<'a> {
    pub method: Method,
    /// Spacing of the evaluation grid; a multiple of the ground-truth step.
    pub eval_dt: f64,
    /// Sampling period the model was trained at.
    pub source_dt: f64,
    pub generator: Option<&'a ContinuousOperator>,
    pub model_id: String,
    pub dataset_id: String,
}

/// Forecasts every test trajectory of `dataset_hf` from its first sample over
/// its full span at `eval_dt` and scores it against the ground truth there.
/// Per-trajectory failures are recorded in the report rather than aborting.
pub fn evaluate_model(
    model: &KoopmanModel,
    dataset_hf: &Dataset,
    spec: &EvalSpec<'_>,
) -> Result<EvalReport, EvalError> {
    let hf_dt = dataset_hf.meta.dt;
    let stride = integer_ratio(spec.eval_dt, hf_dt).ok_or_else(|| {
        EvalError::GridMismatch(format!(
            "eval dt {} is not a multiple of the ground-truth step {hf_dt}",
            spec.eval_dt
        ))
    })?;
    let spectrum = k_spectrum(&model.k)?;
    let truths: Vec<Trajectory> = dataset_hf
        .test
        .iter()
        .map(|t| t.subsample(stride))
        .collect::<Result<_, _>>()?;

    let steps = truths.first().map_or(0, |t| t.len() - 1);
    let props = match spec.method {
        Method::Continuous => {
            let gen = spec
                .generator
                .ok_or(EvalError::MissingGenerator(spec.method))?;
            (0..=steps)
                .map(|k| gen.propagator(k as f64 * spec.eval_dt))
                .collect::<Result<Vec<_>, _>>()?
        }
        _ => Vec::new(),
    };
    let lf_stride = match spec.method {
        Method::LatentInterp => Some(integer_ratio(spec.source_dt, hf_dt).ok_or_else(|| {
            EvalError::GridMismatch(format!(
                "training step {} is not a multiple of the ground-truth step {hf_dt}",
                spec.source_dt
            ))
        })?),
        _ => None,
    };
    let discrete_stride = match spec.method {
        Method::Discrete => Some(integer_ratio(spec.eval_dt, spec.source_dt).ok_or_else(|| {
            EvalError::GridMismatch(format!(
                "discrete rollouts need eval dt {} to be a multiple of the training step {}",
                spec.eval_dt, spec.source_dt
            ))
        })?),
        _ => None,
    };

    let forecast = |i: usize, truth: &Trajectory| -> Result<MseResult, EvalError> {
        let x0 = truth.row(0).to_vec();
        let states = match spec.method {
            Method::Continuous => propagate_decode(model, &props, &x0)?,
            Method::Discrete => {
                discrete_forecast(model, &x0, discrete_stride.expect("set"), truth.len() - 1)?
            }
            Method::LatentInterp => {
                let lf = dataset_hf.test[i].subsample(lf_stride.expect("set"))?;
                latent_linear_interp(model, &lf, spec.eval_dt)?.states
            }
        };
        let pred = Trajectory::new(truth.t0, truth.dt, states, truth.initial_condition.clone())
            .map_err(|_| EvalError::NonFinite { step: 0 })?;
        mse(&pred, truth)
    };
    let results: Vec<TrajectoryResult> = truths
        .par_iter()
        .enumerate()
        .map(|(i, truth)| match forecast(i, truth) {
            Ok(r) => TrajectoryResult {
                index: i,
                mse: Some(r.mse),
                curve: r.curve,
                error: None,
            },
            Err(e) => TrajectoryResult {
                index: i,
                mse: None,
                curve: Vec::new(),
                error: Some(e.to_string()),
            },
        })
        .collect();

    let times: Vec<f64> = truths.first().map_or_else(Vec::new, |t| t.times());
    Ok(EvalReport::assemble(
        spec, results, times, spectrum, &model.k,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn traj(states: ndarray::Array2<f64>, dt: f64) -> Trajectory {
        Trajectory::new(0.0, dt, states, vec![]).unwrap()
    }

    #[test]
    fn mse_examples() {
        let t = traj(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], 0.1);
        let same = mse(&t, &t).unwrap();
        assert_eq!(same.mse, 0.0);
        assert_eq!(same.curve, vec![0.0; 3]);
        let shifted = traj(t.states.mapv(|v| v + 0.5), 0.1);
        assert_eq!(mse(&shifted, &t).unwrap().mse, 0.25);
        let a = traj(array![[0.0], [0.0]], 1.0);
        let b = traj(array![[0.0], [2.0]], 1.0);
        let r = mse(&a, &b).unwrap();
        assert_eq!(r.mse, 2.0);
        assert_eq!(r.curve, vec![0.0, 4.0]);
    }

    #[test]
    fn mse_rejects_mismatched_grids() {
        let a = traj(array![[0.0], [1.0]], 0.1);
        let b = traj(array![[0.0], [1.0]], 0.2);
        let c = traj(array![[0.0], [1.0], [2.0]], 0.1);
        assert!(matches!(mse(&a, &b), Err(EvalError::GridMismatch(_))));
        assert!(matches!(mse(&a, &c), Err(EvalError::GridMismatch(_))));
    }

    #[test]
    fn spectrum_examples() {
        let id = k_spectrum(&RealMatrix::identity(3)).unwrap();
        assert!(id.iter().all(|e| e.modulus == 1.0 && e.argument == 0.0));
        let half = k_spectrum(&RealMatrix::identity(4).scale(0.5)).unwrap();
        assert!(half.iter().all(|e| e.modulus == 0.5));
        let rot = k_spectrum(&RealMatrix::rotation(0.3)).unwrap();
        assert!((rot[0].argument + 0.3).abs() < 1e-14 && (rot[1].argument - 0.3).abs() < 1e-14);
    }

    #[test]
    fn method_tags_round_trip() {
        for m in [Method::Continuous, Method::LatentInterp, Method::Discrete] {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.tag())
            );
        }
        assert!("spline".parse::<Method>().is_err());
    }
}
