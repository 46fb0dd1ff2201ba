//! Benettin estimation of Lyapunov spectra.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::continuous::ContinuousOperator;
use crate::koopman::KoopmanModel;
use crate::numlin::{matrix_exp, RealMatrix};
use crate::systems::{rk4_step, OdeSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    /// Integrate the variational equation with the analytic right-hand-side
    /// Jacobian alongside the state.
    AnalyticRhs,
    /// Central differences of the one-step flow map.
    FiniteDifferenceOfFlow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LyapunovConfig {
    pub steps: usize,
    pub dt: f64,
    /// Leading steps used only to settle onto the attractor.
    pub discard: usize,
    pub renorm_interval: usize,
    pub jacobian_mode: JacobianMode,
    pub fd_step: f64,
    /// RK4 substeps per `dt` for true systems.
    pub substeps: usize,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            dt: 0.01,
            discard: 10_000,
            renorm_interval: 10,
            jacobian_mode: JacobianMode::AnalyticRhs,
            fd_step: 1e-5,
            substeps: 1,
        }
    }
}

impl LyapunovConfig {
    /// Same settings with `steps` steps and a 10% discard.
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            discard: steps / 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidConfig(m));
        if self.discard >= self.steps {
            return bad(format!(
                "discard {} must be below steps {}",
                self.discard, self.steps
            ));
        }
        if self.renorm_interval == 0 {
            return bad("renormalization interval must be at least 1".into());
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.fd_step > 0.0) || self.substeps == 0 {
            return bad("fd_step and substeps must be positive".into());
        }
        Ok(())
    }
}

/// A time-`dt` map together with its action on tangent vectors.
pub trait TangentFlow {
    fn dim(&self) -> usize;
    fn dt(&self) -> f64;
    /// Advances `x` by one step and replaces each column of `frame` (n×m)
    /// with its image under the linearized map at `x`.
    fn step(&self, x: &[f64], frame: &mut Array2<f64>) -> Result<Vec<f64>, EvalError>;
}

/// Jacobian of `map` at `x` by central differences.
fn fd_jacobian<F>(map: F, x: &[f64], h: f64) -> Result<Array2<f64>, EvalError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, EvalError>,
{
    let n = x.len();
    let mut jac = Array2::zeros((n, n));
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = map(&xp)?;
        xp[j] = x[j] - h;
        let fm = map(&xp)?;
        xp[j] = x[j];
        for i in 0..n {
            jac[[i, j]] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// A true system integrated with RK4 on its internal state.
#[derive(Clone, Debug)]
pub struct OdeFlow {
    pub system: OdeSystem,
    dt: f64,
    substeps: usize,
    mode: JacobianMode,
    fd_step: f64,
}

impl OdeFlow {
    pub fn new(system: OdeSystem, config: &LyapunovConfig) -> Self {
        Self {
            system,
            dt: config.dt,
            substeps: config.substeps,
            mode: config.jacobian_mode,
            fd_step: config.fd_step,
        }
    }

    fn advance(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let h = self.dt / self.substeps as f64;
        let mut s = x.to_vec();
        for _ in 0..self.substeps {
            s = rk4_step(|a, b| self.system.rhs(a, b), &s, h)?;
        }
        Ok(s)
    }
}

impl TangentFlow for OdeFlow {
    fn dim(&self) -> usize {
        self.system.state_dim()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, x: &[f64], frame: &mut Array2<f64>) -> Result<Vec<f64>, EvalError> {
        let n = x.len();
        let m = frame.ncols();
        match self.mode {
            JacobianMode::FiniteDifferenceOfFlow => {
                let jac = fd_jacobian(|p| self.advance(p), x, self.fd_step)?;
                *frame = jac.dot(&*frame);
                self.advance(x)
            }
            JacobianMode::AnalyticRhs => {
                // Augmented state [x, V] with V' = J(x) V, V stored row-major.
                let rhs = |s: &[f64], out: &mut [f64]| {
                    self.system.rhs(&s[..n], &mut out[..n]);
                    let jac = self.system.jacobian(&s[..n]);
                    for i in 0..n {
                        for c in 0..m {
                            out[n + i * m + c] =
                                (0..n).map(|k| jac[(i, k)] * s[n + k * m + c]).sum();
                        }
                    }
                };
                let mut s = Vec::with_capacity(n + n * m);
                s.extend_from_slice(x);
                s.extend(frame.iter().copied());
                let h = self.dt / self.substeps as f64;
                for _ in 0..self.substeps {
                    s = rk4_step(rhs, &s, h)?;
                }
                *frame = Array2::from_shape_vec((n, m), s[n..].to_vec())
                    .expect("frame shape is preserved");
                Ok(s[..n].to_vec())
            }
        }
    }
}

/// `ẋ = A x`, stepped exactly with `exp(dt·A)`.
#[derive(Clone, Debug)]
pub struct LinearFlow {
    propagator: Array2<f64>,
    dt: f64,
}

impl LinearFlow {
    pub fn new(a: &RealMatrix, config: &LyapunovConfig) -> Result<Self, EvalError> {
        Ok(Self {
            propagator: matrix_exp(a, config.dt)?.to_array(),
            dt: config.dt,
        })
    }
}

impl TangentFlow for LinearFlow {
    fn dim(&self) -> usize {
        self.propagator.nrows()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, x: &[f64], frame: &mut Array2<f64>) -> Result<Vec<f64>, EvalError> {
        *frame = self.propagator.dot(&*frame);
        Ok(self.propagator.dot(&ndarray::ArrayView1::from(x)).to_vec())
    }
}

/// The learned map `x ↦ ψ(exp((dt/Δ)·D) φ(x))` on observations in raw units.
pub struct LearnedFlow<'a> {
    model: &'a KoopmanModel,
    /// Transpose of the latent propagator, for row-batched products.
    prop_t: Array2<f64>,
    dt: f64,
    fd_step: f64,
}

impl<'a> LearnedFlow<'a> {
    pub fn new(
        model: &'a KoopmanModel,
        gen: &ContinuousOperator,
        config: &LyapunovConfig,
    ) -> Result<Self, EvalError> {
        let prop = gen.propagator(config.dt)?;
        Ok(Self {
            model,
            prop_t: prop.transpose().to_array(),
            dt: config.dt,
            fd_step: config.fd_step,
        })
    }

    fn map_rows(&self, x: &Array2<f64>) -> Result<Array2<f64>, EvalError> {
        let z = self.model.encode_rows(x.view())?.dot(&self.prop_t);
        Ok(self.model.decode_rows(z.view())?)
    }
}

impl TangentFlow for LearnedFlow<'_> {
    fn dim(&self) -> usize {
        self.model.n()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, x: &[f64], frame: &mut Array2<f64>) -> Result<Vec<f64>, EvalError> {
        let n = x.len();
        let h = self.fd_step;
        // Row 0 is x itself, rows 1+2j and 2+2j are x ± h e_j.
        let mut rows = Array2::zeros((2 * n + 1, n));
        for mut r in rows.rows_mut() {
            r.assign(&ndarray::ArrayView1::from(x));
        }
        for j in 0..n {
            rows[[1 + 2 * j, j]] += h;
            rows[[2 + 2 * j, j]] -= h;
        }
        let out = self.map_rows(&rows)?;
        let mut jac = Array2::zeros((n, n));
        for j in 0..n {
            for i in 0..n {
                jac[[i, j]] = (out[[1 + 2 * j, i]] - out[[2 + 2 * j, i]]) / (2.0 * h);
            }
        }
        *frame = jac.dot(&*frame);
        Ok(out.row(0).to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    /// Sorted descending.
    pub exponents: Vec<f64>,
    pub sum: f64,
    /// Time over which stretching was accumulated.
    pub elapsed: f64,
    pub final_state: Vec<f64>,
}

/// Modified Gram–Schmidt on the columns of `frame`, in place; returns the
/// diagonal of R.
fn orthonormalize(frame: &mut Array2<f64>) -> Vec<f64> {
    let m = frame.ncols();
    let mut diag = Vec::with_capacity(m);
    for j in 0..m {
        for i in 0..j {
            let r = frame.column(i).dot(&frame.column(j));
            let qi = frame.column(i).to_owned();
            frame.column_mut(j).scaled_add(-r, &qi);
        }
        let norm = frame.column(j).dot(&frame.column(j)).sqrt();
        frame.column_mut(j).mapv_inplace(|v| v / norm);
        diag.push(norm);
    }
    diag
}

/// Follows `flow` from `x0` for `config.steps` steps, re-orthonormalizing
/// the tangent frame every `renorm_interval` steps and averaging the log
/// stretching factors collected after the first `discard` steps.
pub fn lyapunov_spectrum(
    flow: &dyn TangentFlow,
    x0: &[f64],
    config: &LyapunovConfig,
) -> Result<LyapunovResult, EvalError> {
    config.validate()?;
    let n = flow.dim();
    if x0.len() != n {
        return Err(EvalError::InvalidConfig(format!(
            "initial state has {} components, the flow has {n}",
            x0.len()
        )));
    }
    let mut x = x0.to_vec();
    let mut frame = Array2::eye(n);
    let mut logs = vec![0.0; n];
    for s in 1..=config.steps {
        x = flow.step(&x, &mut frame)?;
        if x.iter().chain(frame.iter()).any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite { step: s });
        }
        let renorm = if s <= config.discard {
            s % config.renorm_interval == 0 || s == config.discard
        } else {
            (s - config.discard) % config.renorm_interval == 0 || s == config.steps
        };
        if !renorm {
            continue;
        }
        let diag = orthonormalize(&mut frame);
        if diag.iter().any(|&r| !(r >= 1e-300)) {
            return Err(EvalError::FrameDegenerate { step: s });
        }
        if s > config.discard {
            for (l, r) in logs.iter_mut().zip(&diag) {
                *l += r.ln();
            }
        }
    }
    let elapsed = (config.steps - config.discard) as f64 * flow.dt();
    let mut exponents: Vec<f64> = logs.iter().map(|l| l / elapsed).collect();
    exponents.sort_by(|a, b| b.total_cmp(a));
    Ok(LyapunovResult {
        sum: exponents.iter().sum(),
        exponents,
        elapsed,
        final_state: x,
    })
}
