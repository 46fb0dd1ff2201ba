use serde::{Deserialize, Serialize};

use crate::numlin::RealMatrix;

use super::SystemError;

/// Pendulum `θ̈ = −(g/l)·sin θ`; the observation is `(θ, θ̇)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub g_over_l: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { g_over_l: 1.0 }
    }
}

/// Mean-field model of the low-dimensional attractor of a cylinder wake.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidFlowParams {
    pub mu: f64,
    pub omega: f64,
    pub a: f64,
    pub lambda: f64,
}

impl Default for FluidFlowParams {
    fn default() -> Self {
        Self {
            mu: 0.1,
            omega: 1.0,
            a: -0.1,
            lambda: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

impl PendulumParams {
    pub fn rhs(&self, s: [f64; 2]) -> [f64; 2] {
        [s[1], -self.g_over_l * s[0].sin()]
    }
}

impl FluidFlowParams {
    pub fn rhs(&self, s: [f64; 3]) -> [f64; 3] {
        let [x, y, z] = s;
        [
            self.mu * x - self.omega * y + self.a * x * z,
            self.omega * x + self.mu * y + self.a * y * z,
            -self.lambda * (z - x * x - y * y),
        ]
    }
}

impl LorenzParams {
    pub fn rhs(&self, s: [f64; 3]) -> [f64; 3] {
        let [x, y, z] = s;
        [
            self.sigma * (y - x),
            x * (self.rho - z) - y,
            x * y - self.beta * z,
        ]
    }
}

pub fn lorenz_rhs(state: [f64; 3]) -> [f64; 3] {
    LorenzParams::default().rhs(state)
}

pub fn pendulum_rhs(state: [f64; 2]) -> [f64; 2] {
    PendulumParams::default().rhs(state)
}

pub fn fluidflow_rhs(state: [f64; 3]) -> [f64; 3] {
    FluidFlowParams::default().rhs(state)
}

/// One of the three benchmark systems together with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum OdeSystem {
    Pendulum(PendulumParams),
    FluidFlow(FluidFlowParams),
    Lorenz63(LorenzParams),
}

impl OdeSystem {
    /// Looks a system up by name with default parameters.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "pendulum" => Some(Self::Pendulum(PendulumParams::default())),
            "fluidflow" => Some(Self::FluidFlow(FluidFlowParams::default())),
            "lorenz63" => Some(Self::Lorenz63(LorenzParams::default())),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Pendulum(_) => "pendulum",
            Self::FluidFlow(_) => "fluidflow",
            Self::Lorenz63(_) => "lorenz63",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Self::Pendulum(_) => 2,
            Self::FluidFlow(_) | Self::Lorenz63(_) => 3,
        }
    }

    /// Observation dimension `n`; Lorenz observes its state and derivative.
    pub fn obs_dim(&self) -> usize {
        match self {
            Self::Pendulum(_) => 2,
            Self::FluidFlow(_) => 3,
            Self::Lorenz63(_) => 6,
        }
    }

    pub fn rhs(&self, state: &[f64], out: &mut [f64]) {
        match self {
            Self::Pendulum(p) => out.copy_from_slice(&p.rhs([state[0], state[1]])),
            Self::FluidFlow(p) => out.copy_from_slice(&p.rhs([state[0], state[1], state[2]])),
            Self::Lorenz63(p) => out.copy_from_slice(&p.rhs([state[0], state[1], state[2]])),
        }
    }

    /// Jacobian of the right-hand side at `state`.
    pub fn jacobian(&self, state: &[f64]) -> RealMatrix {
        let rows = match self {
            Self::Pendulum(p) => vec![vec![0.0, 1.0], vec![-p.g_over_l * state[0].cos(), 0.0]],
            Self::FluidFlow(p) => {
                let [x, y, z] = [state[0], state[1], state[2]];
                vec![
                    vec![p.mu + p.a * z, -p.omega, p.a * x],
                    vec![p.omega, p.mu + p.a * z, p.a * y],
                    vec![2.0 * p.lambda * x, 2.0 * p.lambda * y, -p.lambda],
                ]
            }
            Self::Lorenz63(p) => {
                let [x, y, z] = [state[0], state[1], state[2]];
                vec![
                    vec![-p.sigma, p.sigma, 0.0],
                    vec![p.rho - z, -1.0, -x],
                    vec![y, x, -p.beta],
                ]
            }
        };
        RealMatrix::from_rows(&rows).expect("jacobian rows are well formed")
    }

    /// Maps an internal state to its observation vector.
    pub fn observe(&self, state: &[f64]) -> Vec<f64> {
        match self {
            Self::Pendulum(_) | Self::FluidFlow(_) => state.to_vec(),
            Self::Lorenz63(p) => {
                let d = p.rhs([state[0], state[1], state[2]]);
                vec![state[0], state[1], state[2], d[0], d[1], d[2]]
            }
        }
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(rhs: F, state: &[f64], dt: f64) -> Result<Vec<f64>, SystemError>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = state.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    rhs(state, &mut k1);
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k1[i];
    }
    rhs(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k2[i];
    }
    rhs(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = state[i] + dt * k3[i];
    }
    rhs(&tmp, &mut k4);
    let out: Vec<f64> = (0..n)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(SystemError::NonFinite);
    }
    Ok(out)
}
