//! Continuous-time view of a trained model: `D = log K` and predictions
//! `ψ(exp((t/Δ)·D)·φ(x₀))` at any real time `t`, where `Δ` is the sampling
//! period `K` was trained on.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::koopman::{KoopmanError, KoopmanModel};
use crate::numlin::{eig, matrix_exp, principal_log, LinalgError, RealMatrix};
use crate::systems::Trajectory;

pub const GENERATOR_FORMAT_VERSION: u32 = 1;

/// Relative tolerance for deciding that one time step divides another.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ContinuousError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid time {0}")]
    InvalidTime(f64),
    #[error("generator file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Real generator `D` with `exp(D) = K`, plus extraction diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousOperator {
    pub generator: RealMatrix,
    /// Time covered by one application of `K`.
    pub source_dt: f64,
    /// Eigenvalues of `K` the logarithm was taken of.
    pub eigenvalues: Vec<Complex64>,
    /// `‖exp(D) − K‖_F / ‖K‖_F`.
    pub residual: f64,
    /// Fingerprint of the `K` this was extracted from.
    pub k_checksum: u64,
}

pub fn k_checksum(k: &RealMatrix) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in k.as_slice() {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Principal logarithm of the model's `K`; fails rather than returning a
/// generator contaminated by eigenvalues on the negative real axis.
pub fn extract_generator(
    model: &KoopmanModel,
    source_dt: f64,
) -> Result<ContinuousOperator, ContinuousError> {
    if !(source_dt > 0.0) || !source_dt.is_finite() {
        return Err(ContinuousError::InvalidTime(source_dt));
    }
    let decomp = eig(&model.k)?;
    let generator = principal_log(&decomp)?;
    let back = matrix_exp(&generator, 1.0)?;
    let residual = back.sub(&model.k).frobenius_norm() / model.k.frobenius_norm();
    Ok(ContinuousOperator {
        generator,
        source_dt,
        eigenvalues: decomp.eigenvalues,
        residual,
        k_checksum: k_checksum(&model.k),
    })
}

impl ContinuousOperator {
    /// Whether this generator was extracted from exactly this model's `K`.
    pub fn matches(&self, model: &KoopmanModel) -> bool {
        self.generator.rows() == model.d() && self.k_checksum == k_checksum(&model.k)
    }

    /// Latent propagator `exp((t/source_dt)·D)`.
    pub fn propagator(&self, t: f64) -> Result<RealMatrix, ContinuousError> {
        if !t.is_finite() {
            return Err(ContinuousError::InvalidTime(t));
        }
        Ok(matrix_exp(&self.generator, t / self.source_dt)?)
    }

    pub fn to_json(&self) -> Result<String, ContinuousError> {
        let file = GeneratorFile {
            format_version: GENERATOR_FORMAT_VERSION,
            source_dt: self.source_dt,
            dim: self.generator.rows(),
            generator: (0..self.generator.rows())
                .map(|i| {
                    (0..self.generator.cols())
                        .map(|j| self.generator[(i, j)])
                        .collect()
                })
                .collect(),
            eigenvalues: self.eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
            round_trip_residual: self.residual,
            k_checksum: format!("{:016x}", self.k_checksum),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ContinuousError> {
        let f: GeneratorFile = serde_json::from_str(text)?;
        if f.format_version != GENERATOR_FORMAT_VERSION {
            return Err(ContinuousError::Format(format!(
                "unsupported version {}",
                f.format_version
            )));
        }
        if f.generator.len() != f.dim {
            return Err(ContinuousError::Format(
                "generator row count differs from dim".into(),
            ));
        }
        let generator = RealMatrix::from_rows(&f.generator)?;
        if !generator.is_square() {
            return Err(ContinuousError::Format("generator is not square".into()));
        }
        let k_checksum = u64::from_str_radix(&f.k_checksum, 16)
            .map_err(|e| ContinuousError::Format(format!("k_checksum: {e}")))?;
        Ok(Self {
            generator,
            source_dt: f.source_dt,
            eigenvalues: f
                .eigenvalues
                .iter()
                .map(|&[re, im]| Complex64::new(re, im))
                .collect(),
            residual: f.round_trip_residual,
            k_checksum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContinuousError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContinuousError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct GeneratorFile {
    format_version: u32,
    source_dt: f64,
    dim: usize,
    generator: Vec<Vec<f64>>,
    eigenvalues: Vec<[f64; 2]>,
    round_trip_residual: f64,
    k_checksum: String,
}

/// States at the requested times, one row each.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousPrediction {
    pub times: Vec<f64>,
    pub states: Array2<f64>,
    /// Set when any requested time was negative (integration backward in
    /// time, which the model was never trained for).
    pub backward: bool,
}

/// `ψ(exp((t/source_dt)·D)·φ(x₀))` for each `t` in `times`.
pub fn predict_continuous(
    model: &KoopmanModel,
    gen: &ContinuousOperator,
    x0: &[f64],
    times: &[f64],
) -> Result<ContinuousPrediction, ContinuousError> {
    let props = times
        .iter()
        .map(|&t| gen.propagator(t))
        .collect::<Result<Vec<_>, _>>()?;
    let states = propagate_decode(model, &props, x0)?;
    Ok(ContinuousPrediction {
        times: times.to_vec(),
        states,
        backward: times.iter().any(|&t| t < 0.0),
    })
}

/// Decodes `P_j φ(x₀)` for each propagator `P_j`.
pub fn propagate_decode(
    model: &KoopmanModel,
    props: &[RealMatrix],
    x0: &[f64],
) -> Result<Array2<f64>, ContinuousError> {
    let z0 = model.encode(x0)?;
    let mut z = Array2::zeros((props.len(), model.d()));
    for (mut row, p) in z.rows_mut().into_iter().zip(props) {
        row.assign(&ArrayView1::from(&p.mat_vec(&z0)));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(KoopmanError::RolloutOverflow { steps: props.len() }.into());
    }
    Ok(model.decode_rows(z.view())?)
}

/// Number of `target_dt` steps covering `span`, requiring an integer ratio
/// up to [`GRID_TOL`] when `exact` is set.
pub fn grid_steps(span: f64, target_dt: f64, exact: bool) -> Result<usize, ContinuousError> {
    if !(target_dt > 0.0) || !target_dt.is_finite() {
        return Err(ContinuousError::InvalidTime(target_dt));
    }
    let ratio = span / target_dt;
    let rounded = ratio.round();
    if (ratio - rounded).abs() <= GRID_TOL * ratio.max(1.0) {
        return Ok(rounded as usize);
    }
    if exact {
        return Err(ContinuousError::GridMismatch(format!(
            "step {target_dt} does not divide span {span}"
        )));
    }
    Ok(ratio.floor() as usize)
}

/// `Some(r)` when `coarse = r·fine` for a positive integer `r`.
pub fn integer_ratio(coarse: f64, fine: f64) -> Option<usize> {
    let ratio = coarse / fine;
    let r = ratio.round();
    ((ratio - r).abs() <= GRID_TOL * ratio.max(1.0) && r >= 1.0).then_some(r as usize)
}

/// Forecast from the first sample of `traj_lf` onto a `target_dt` grid
/// spanning the same interval. Later samples of `traj_lf` are not used.
pub fn upsample_forecast(
    model: &KoopmanModel,
    gen: &ContinuousOperator,
    traj_lf: &Trajectory,
    target_dt: f64,
) -> Result<Trajectory, ContinuousError> {
    let span = traj_lf.time(traj_lf.len() - 1) - traj_lf.t0;
    let steps = grid_steps(span, target_dt, false)?;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * target_dt).collect();
    let pred = predict_continuous(model, gen, &traj_lf.row(0).to_vec(), &times)?;
    Ok(Trajectory::new(
        traj_lf.t0,
        target_dt,
        pred.states,
        traj_lf.initial_condition.clone(),
    )
    .map_err(|_| KoopmanError::RolloutOverflow { steps })?)
}

/// Like [`upsample_forecast`], but every target time is predicted from the
/// latest sample of `traj_lf` at or before it.
pub fn upsample_reanchored(
    model: &KoopmanModel,
    gen: &ContinuousOperator,
    traj_lf: &Trajectory,
    target_dt: f64,
) -> Result<Trajectory, ContinuousError> {
    let span = traj_lf.time(traj_lf.len() - 1) - traj_lf.t0;
    let steps = grid_steps(span, target_dt, false)?;
    let ratio = integer_ratio(traj_lf.dt, target_dt);
    let mut states = Array2::zeros((steps + 1, model.n()));
    for k in 0..=steps {
        let (anchor, offset) = match ratio {
            Some(r) => (k / r, (k % r) as f64 * target_dt),
            None => {
                let t = k as f64 * target_dt;
                let j = ((t / traj_lf.dt).floor() as usize).min(traj_lf.len() - 1);
                (j, t - j as f64 * traj_lf.dt)
            }
        };
        let anchor = anchor.min(traj_lf.len() - 1);
        let x = traj_lf.row(anchor).to_vec();
        let p = predict_continuous(model, gen, &x, &[offset])?;
        states.row_mut(k).assign(&p.states.row(0));
    }
    Ok(Trajectory::new(
        traj_lf.t0,
        target_dt,
        states,
        traj_lf.initial_condition.clone(),
    )
    .map_err(|_| KoopmanError::RolloutOverflow { steps })?)
}

/// Baseline without a generator: roll out `z_k = K^k φ(x₀)` on the grid of
/// `traj_lf`, interpolate linearly between consecutive `z_k` and decode.
pub fn latent_linear_interp(
    model: &KoopmanModel,
    traj_lf: &Trajectory,
    target_dt: f64,
) -> Result<Trajectory, ContinuousError> {
    let last = traj_lf.len() - 1;
    let span = traj_lf.time(last) - traj_lf.t0;
    let steps = grid_steps(span, target_dt, false)?;
    let z = model.latent_rollout(&traj_lf.row(0).to_vec(), last)?;
    let ratio = integer_ratio(traj_lf.dt, target_dt);
    let mut zi = Array2::zeros((steps + 1, model.d()));
    for k in 0..=steps {
        let (j, frac) = match ratio {
            Some(r) => (k / r, (k % r) as f64 / r as f64),
            None => {
                let s = k as f64 * target_dt / traj_lf.dt;
                let j = s.floor() as usize;
                (j, s - j as f64)
            }
        };
        let mut row = zi.row_mut(k);
        if j >= last || frac == 0.0 {
            row.assign(&z.row(j.min(last)));
        } else {
            row.assign(&(&z.row(j) * (1.0 - frac) + &z.row(j + 1) * frac));
        }
    }
    let states = model.decode_rows(zi.view())?;
    Ok(Trajectory::new(
        traj_lf.t0,
        target_dt,
        states,
        traj_lf.initial_condition.clone(),
    )
    .map_err(|_| KoopmanError::RolloutOverflow { steps })?)
}

/// `ψ(K^{k·stride} φ(x₀))` for `k = 0..=steps`.
pub fn discrete_forecast(
    model: &KoopmanModel,
    x0: &[f64],
    stride: usize,
    steps: usize,
) -> Result<Array2<f64>, ContinuousError> {
    let z = model.latent_rollout(x0, stride * steps)?;
    let picked: Vec<usize> = (0..=steps).map(|k| k * stride).collect();
    let z = z.select(ndarray::Axis(0), &picked);
    Ok(model.decode_rows(z.view())?)
}
