//! The encoder/decoder/`K` model, its losses and two-stage training.

mod checkpoint;
mod loss;
mod train;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{mlp_init, Mlp, NetError, ParamLayout, ParamVector};
use crate::numlin::{LinalgError, RealMatrix};

pub use checkpoint::{
    from_bytes, load_checkpoint, save_checkpoint, to_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use loss::{
    loss_l1, loss_l1_with_grad, loss_l2, loss_l2_with_grad, loss_lin, loss_lin_with_grad,
    loss_long_baseline, loss_long_baseline_with_grad, loss_orth, loss_orth_with_grad, loss_pred,
    loss_pred_with_grad, LossBreakdown, LossTerm,
};
pub use train::{l1_pairs, train_on, train_two_stage, BaselineLoss, TrainConfig, TrainHistory};

/// Hidden widths of the encoder; the decoder mirrors them.
pub const DEFAULT_HIDDEN: [usize; 2] = [256, 128];
pub const DEFAULT_LATENT_DIM: usize = 16;

#[derive(Debug, Error)]
pub enum KoopmanError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("latent rollout overflowed after {steps} steps")]
    RolloutOverflow { steps: usize },
    #[error("non-finite {term} loss in stage {stage}, epoch {epoch}")]
    NonFiniteLoss {
        stage: u8,
        epoch: usize,
        term: String,
    },
    #[error("trajectory has {got} samples, at least {needed} required")]
    TrajectoryTooShort { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-component affine standardization applied before the encoder and
/// undone after the decoder: `x̃ = (x − mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ObsScaling {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Mean and standard deviation of every component over all rows.
    pub fn fit<'a>(data: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Self {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for block in data {
            if sum.is_empty() {
                sum = vec![0.0; block.ncols()];
                sq = vec![0.0; block.ncols()];
            }
            for row in block.rows() {
                for (j, v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
                count += 1;
            }
        }
        let c = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / c - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.scale.iter().all(|&s| s == 1.0)
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn normalize_rows(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        if !self.is_identity() {
            for mut row in out.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - self.mean[j]) / self.scale[j];
                }
            }
        }
        out
    }

    pub fn denormalize_rows(&self, mut x: Array2<f64>) -> Array2<f64> {
        if !self.is_identity() {
            for mut row in x.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = *v * self.scale[j] + self.mean[j];
                }
            }
        }
        x
    }
}

/// Encoder φ: ℝⁿ → ℝᵈ, decoder ψ: ℝᵈ → ℝⁿ and the one-step latent map `K`.
///
/// Both networks act on standardized observations (see [`ObsScaling`]);
/// `encode`, `decode` and the predictors take and return raw observations.
#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub k: RealMatrix,
    pub scaling: ObsScaling,
}

impl KoopmanModel {
    pub fn new(
        encoder: Mlp,
        decoder: Mlp,
        k: RealMatrix,
        scaling: ObsScaling,
    ) -> Result<Self, KoopmanError> {
        let n = encoder.in_dim();
        let d = encoder.out_dim();
        let ok = decoder.in_dim() == d
            && decoder.out_dim() == n
            && k.rows() == d
            && k.cols() == d
            && scaling.dim() == n
            && scaling.scale.len() == n;
        if !ok {
            return Err(KoopmanError::DimensionMismatch(format!(
                "encoder {:?}, decoder {:?}, K {}x{}, scaling {}",
                encoder.dims(),
                decoder.dims(),
                k.rows(),
                k.cols(),
                scaling.dim()
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            k,
            scaling,
        })
    }

    /// Fresh model `n → hidden → d → reversed(hidden) → n` with `K = I`.
    pub fn init(n: usize, d: usize, hidden: &[usize], seed: u64) -> Result<Self, KoopmanError> {
        let enc_dims: Vec<usize> = std::iter::once(n)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(d))
            .collect();
        let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
        let encoder = mlp_init(&enc_dims, seed.wrapping_mul(2))?;
        let decoder = mlp_init(&dec_dims, seed.wrapping_mul(2).wrapping_add(1))?;
        Self::new(
            encoder,
            decoder,
            RealMatrix::identity(d),
            ObsScaling::identity(n),
        )
    }

    pub fn n(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn d(&self) -> usize {
        self.encoder.out_dim()
    }

    /// Parameter order: encoder layers, decoder layers, then `K` row-major.
    pub fn param_layout(&self) -> ParamLayout {
        let mut shapes = Vec::new();
        for (tag, net) in [("enc", &self.encoder), ("dec", &self.decoder)] {
            for (i, l) in net.layers().iter().enumerate() {
                shapes.push((format!("{tag}.{i}.w"), l.in_dim(), l.out_dim()));
                shapes.push((format!("{tag}.{i}.b"), 1, l.out_dim()));
            }
        }
        shapes.push(("K".to_string(), self.d(), self.d()));
        ParamLayout::new(shapes)
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count() + self.d() * self.d()
    }

    pub fn params(&self) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        self.encoder.write_params(&mut values);
        self.decoder.write_params(&mut values);
        values.extend_from_slice(self.k.as_slice());
        ParamVector::new(values, self.param_layout()).expect("layout matches model")
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), KoopmanError> {
        if values.len() != self.param_count() {
            return Err(KoopmanError::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let e = self.encoder.read_params(values)?;
        let dd = self.decoder.read_params(&values[e..])?;
        self.k = RealMatrix::from_vec(self.d(), self.d(), values[e + dd..].to_vec())?;
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>, KoopmanError> {
        self.check_obs(x.len())?;
        Ok(self.encoder.forward(&self.scaling.normalize(x))?)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, KoopmanError> {
        if z.len() != self.d() {
            return Err(KoopmanError::DimensionMismatch(format!(
                "latent vector has {} entries, model has d = {}",
                z.len(),
                self.d()
            )));
        }
        Ok(self.scaling.denormalize(&self.decoder.forward(z)?))
    }

    /// Encodes each row of a raw `(rows, n)` observation matrix.
    pub fn encode_rows(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, KoopmanError> {
        self.check_obs(x.ncols())?;
        Ok(self
            .encoder
            .forward_batch(self.scaling.normalize_rows(x).view())?)
    }

    /// Decodes each row of a `(rows, d)` latent matrix to raw observations.
    pub fn decode_rows(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>, KoopmanError> {
        Ok(self
            .scaling
            .denormalize_rows(self.decoder.forward_batch(z)?))
    }

    /// `ψ(K^steps φ(x))`.
    pub fn predict_discrete(&self, x: &[f64], steps: usize) -> Result<Vec<f64>, KoopmanError> {
        let mut z = self.encode(x)?;
        for s in 0..steps {
            z = self.k.mat_vec(&z);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(KoopmanError::RolloutOverflow { steps: s + 1 });
            }
        }
        self.decode(&z)
    }

    /// Latent codes `K^k φ(x)` for `k = 0..=steps`, one per row.
    pub fn latent_rollout(&self, x: &[f64], steps: usize) -> Result<Array2<f64>, KoopmanError> {
        let d = self.d();
        let mut out = Array2::zeros((steps + 1, d));
        let mut z = self.encode(x)?;
        for k in 0..=steps {
            if k > 0 {
                z = self.k.mat_vec(&z);
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(KoopmanError::RolloutOverflow { steps: k });
                }
            }
            out.row_mut(k).assign(&ndarray::ArrayView1::from(&z));
        }
        Ok(out)
    }

    fn check_obs(&self, got: usize) -> Result<(), KoopmanError> {
        if got != self.n() {
            return Err(KoopmanError::DimensionMismatch(format!(
                "observation has {got} entries, model has n = {}",
                self.n()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::net::Layer;
    use ndarray::Array1;

    /// Single identity layers for φ and ψ with `K` a rotation by `theta`.
    pub(crate) fn linear_rotation_model(theta: f64) -> KoopmanModel {
        let id = || {
            Mlp::from_layers(vec![Layer {
                w: Array2::eye(2),
                b: Array1::zeros(2),
            }])
            .unwrap()
        };
        KoopmanModel::new(
            id(),
            id(),
            RealMatrix::rotation(theta),
            ObsScaling::identity(2),
        )
        .unwrap()
    }

    #[test]
    fn init_shapes_and_identity_k() {
        let m = KoopmanModel::init(3, 16, &DEFAULT_HIDDEN, 0).unwrap();
        assert_eq!(m.encoder.dims(), vec![3, 256, 128, 16]);
        assert_eq!(m.decoder.dims(), vec![16, 128, 256, 3]);
        assert_eq!(m.k, RealMatrix::identity(16));
        assert_eq!(m.param_count(), m.params().len());
        assert_eq!(
            m.param_layout().segment("K").unwrap().offset,
            m.param_count() - 256
        );
    }

    #[test]
    fn params_round_trip() {
        let m = KoopmanModel::init(2, 4, &[8], 5).unwrap();
        let mut z = KoopmanModel::init(2, 4, &[8], 6).unwrap();
        assert_ne!(z, m);
        z.set_params(&m.params().values).unwrap();
        assert_eq!(z, m);
        assert!(z.set_params(&[0.0; 3]).is_err());
    }

    #[test]
    fn zero_steps_is_reconstruction() {
        let m = KoopmanModel::init(2, 4, &[8], 1).unwrap();
        let x = [0.4, -0.3];
        let recon = m.decode(&m.encode(&x).unwrap()).unwrap();
        assert_eq!(m.predict_discrete(&x, 0).unwrap(), recon);
    }

    #[test]
    fn rotation_model_rotates() {
        let theta = 0.3;
        let m = linear_rotation_model(theta);
        let x = [1.0, 0.5];
        for k in [1usize, 4, 17] {
            let got = m.predict_discrete(&x, k).unwrap();
            let want = RealMatrix::rotation(theta * k as f64).mat_vec(&x);
            assert!((got[0] - want[0]).abs() < 1e-13 && (got[1] - want[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn dimension_errors() {
        let m = KoopmanModel::init(2, 4, &[8], 1).unwrap();
        assert!(matches!(
            m.encode(&[1.0]),
            Err(KoopmanError::DimensionMismatch(_))
        ));
        assert!(matches!(
            m.decode(&[1.0; 3]),
            Err(KoopmanError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn expanding_k_overflows() {
        let mut m = linear_rotation_model(0.0);
        m.k = RealMatrix::identity(2).scale(1e10);
        assert!(matches!(
            m.predict_discrete(&[1.0, 1.0], 100),
            Err(KoopmanError::RolloutOverflow { .. })
        ));
    }

    #[test]
    fn scaling_fit_and_round_trip() {
        let data = ndarray::array![[1.0, 10.0], [3.0, 10.0], [5.0, 10.0]];
        let s = ObsScaling::fit([data.view()]);
        assert_eq!(s.mean, vec![3.0, 10.0]);
        assert!((s.scale[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.scale[1], 1.0);
        let x = [2.5, -4.0];
        let back = s.denormalize(&s.normalize(&x));
        assert!((back[0] - x[0]).abs() < 1e-15 && (back[1] - x[1]).abs() < 1e-15);
    }
}
