//! Fully connected ReLU networks with hand-written reverse-mode gradients,
//! a flat parameter layout and the Adam optimizer.

mod adam;
mod params;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{ParamLayout, ParamSegment, ParamVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer dimensions must contain at least input and output sizes, all nonzero")]
    InvalidDims,
    #[error("non-finite value encountered")]
    NonFinite,
}

/// One affine map `y = x·W + b`, with `W` stored as `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Affine layers with ReLU between them and an identity output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Intermediate values kept by [`Mlp::forward_cached`] for the backward pass.
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
}

/// Seeded network with weights uniform in `±1/√fan_in` and zero biases.
pub fn mlp_init(dims: &[usize], seed: u64) -> Result<Mlp, NetError> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(NetError::InvalidDims);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let bound = 1.0 / (w[0] as f64).sqrt();
            Layer {
                w: Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..bound)),
                b: Array1::zeros(w[1]),
            }
        })
        .collect();
    Ok(Mlp { layers })
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::InvalidDims);
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NetError::DimensionMismatch {
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        for l in &layers {
            if l.b.len() != l.out_dim() {
                return Err(NetError::DimensionMismatch {
                    expected: l.out_dim(),
                    got: l.b.len(),
                });
            }
            if l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite);
            }
        }
        Ok(Self { layers })
    }

    /// Same shape with every parameter zero.
    pub fn zeros(dims: &[usize]) -> Result<Self, NetError> {
        let mut m = mlp_init(dims, 0)?;
        for l in &mut m.layers {
            l.w.fill(0.0);
        }
        Ok(m)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[in, hidden..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Appends parameters layer by layer: `W` row-major, then `b`.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
    }

    /// Inverse of [`Mlp::write_params`]; returns the number of values read.
    pub fn read_params(&mut self, src: &[f64]) -> Result<usize, NetError> {
        let count = self.param_count();
        if src.len() < count {
            return Err(NetError::DimensionMismatch {
                expected: count,
                got: src.len(),
            });
        }
        let mut pos = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = src[pos];
                pos += 1;
            }
        }
        Ok(pos)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Row-wise forward pass over a `(batch, in)` matrix.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, NetError> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            a = a.dot(&l.w) + &l.b;
            if i < last {
                a.mapv_inplace(relu);
            }
        }
        Ok(a)
    }

    pub fn forward_cached(
        &self,
        x: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, ForwardCache), NetError> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let next = a.dot(&l.w) + &l.b;
            inputs.push(a);
            a = if i < last { next.mapv(relu) } else { next };
        }
        Ok((a, ForwardCache { inputs }))
    }

    /// Accumulates parameter gradients into `grad` (layout of
    /// [`Mlp::write_params`]) given `g_out = ∂L/∂output`, and returns
    /// `∂L/∂input` when `want_input` is set.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        g_out: Array2<f64>,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Array2<f64>> {
        assert_eq!(grad.len(), self.param_count());
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.param_count();
                Some(o)
            })
            .collect();
        let mut g = g_out;
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let a = &cache.inputs[i];
            let gw = a.t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            let seg = &mut grad[offsets[i]..offsets[i] + l.param_count()];
            let (sw, sb) = seg.split_at_mut(l.w.len());
            for (dst, v) in sw.iter_mut().zip(gw.iter()) {
                *dst += v;
            }
            for (dst, v) in sb.iter_mut().zip(gb.iter()) {
                *dst += v;
            }
            if i == 0 && !want_input {
                return None;
            }
            let mut gin = g.dot(&l.w.t());
            if i > 0 {
                // `a` is the ReLU output of the previous layer, zero exactly
                // where its pre-activation was non-positive.
                gin.zip_mut_with(a, |gv, &av| {
                    if av <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            g = gin;
        }
        Some(g)
    }

    /// Smallest |pre-activation| over all hidden units and rows of `x`; the
    /// network is not differentiable where this is zero.
    pub fn min_abs_preactivation(&self, x: ArrayView2<'_, f64>) -> f64 {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        let mut min = f64::INFINITY;
        for l in &self.layers[..last] {
            let pre = a.dot(&l.w) + &l.b;
            min = pre.iter().fold(min, |m, v| m.min(v.abs()));
            a = pre.mapv(relu);
        }
        min
    }

    fn check_input(&self, got: usize) -> Result<(), NetError> {
        if got != self.in_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.in_dim(),
                got,
            });
        }
        Ok(())
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}
