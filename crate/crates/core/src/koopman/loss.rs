//! Prediction, linearity and orthogonality losses with exact gradients.
//!
//! Every composite loss is a weighted sum of three kinds of per-window terms,
//! where a window is a run of consecutive samples `x_0, x_1, …` and
//! `z_k = K^k φ(x_0)`:
//!
//! - prediction `‖x_k − ψ(z_k)‖²`
//! - linearity `‖φ(x_k) − z_k‖²`
//! - reconstruction `‖x_k − ψ(φ(x_k))‖²`
//!
//! plus `‖KKᵀ − I‖²_F`. Values are averaged over windows. All errors are
//! measured on standardized observations when the model carries a scaling.

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KoopmanError, KoopmanModel};
use crate::numlin::orth_defect;
use crate::systems::Trajectory;

/// Encoder rows per work chunk. Fixed so that gradient sums do not depend on
/// the number of threads.
const CHUNK_ROWS: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub weight: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub stage: u8,
    pub epoch: usize,
    pub split: String,
    pub total: f64,
    pub terms: Vec<LossTerm>,
}

impl LossBreakdown {
    pub fn from_terms(terms: Vec<LossTerm>) -> Self {
        let total = terms.iter().map(|t| t.weight * t.value).sum();
        Self {
            stage: 0,
            epoch: 0,
            split: String::new(),
            total,
            terms,
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms.iter().all(|t| t.value.is_finite())
    }

    /// Name of the first non-finite term, or `"total"`.
    pub fn first_non_finite(&self) -> Option<String> {
        if let Some(t) = self.terms.iter().find(|t| !t.value.is_finite()) {
            return Some(t.name.clone());
        }
        (!self.total.is_finite()).then(|| "total".to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum TermKind {
    Pred,
    Lin,
    Recon,
}

/// A named term `weight · Σ_k w_k · mean_windows(kind_k)`.
#[derive(Clone, Debug)]
pub(crate) struct TermSpec {
    pub name: String,
    pub kind: TermKind,
    pub ks: Vec<(usize, f64)>,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct LossSpec {
    pub terms: Vec<TermSpec>,
    pub orth_weight: f64,
}

impl LossSpec {
    /// Short-horizon loss on windows of 6 samples.
    pub fn l1(beta1: f64) -> Self {
        let term = |name: &str, kind, k| TermSpec {
            name: name.into(),
            kind,
            ks: vec![(k, 1.0)],
            weight: 1.0,
        };
        Self {
            terms: vec![
                term("pred_0", TermKind::Pred, 0),
                term("pred_1", TermKind::Pred, 1),
                term("pred_5", TermKind::Pred, 5),
                term("lin_1", TermKind::Lin, 1),
                term("lin_5", TermKind::Lin, 5),
            ],
            orth_weight: beta1,
        }
    }

    /// Long-horizon loss over `0..=horizon` from the window start, averaged
    /// over the `horizon + 1` offsets so `beta2` keeps its weight at any
    /// horizon.
    pub fn l2(horizon: usize, beta2: f64) -> Self {
        let w = 1.0 / (horizon + 1) as f64;
        let all = |from: usize| (from..=horizon).map(|k| (k, w)).collect::<Vec<_>>();
        Self {
            terms: vec![
                TermSpec {
                    name: "recon".into(),
                    kind: TermKind::Recon,
                    ks: all(0),
                    weight: 1.0,
                },
                TermSpec {
                    name: "pred".into(),
                    kind: TermKind::Pred,
                    ks: all(0),
                    weight: 1.0,
                },
                TermSpec {
                    name: "lin".into(),
                    kind: TermKind::Lin,
                    ks: all(1),
                    weight: 1.0,
                },
            ],
            orth_weight: beta2,
        }
    }

    /// Discounted rollout loss `Σ_k δ^k (pred_k + β·lin_k)`, divided by
    /// `horizon + 1` like L2.
    pub fn baseline(horizon: usize, delta: f64, beta: f64, orth_weight: f64) -> Self {
        let w = 1.0 / (horizon + 1) as f64;
        let disc = |from: usize| {
            (from..=horizon)
                .map(|k| (k, w * delta.powi(k as i32)))
                .collect::<Vec<_>>()
        };
        Self {
            terms: vec![
                TermSpec {
                    name: "pred".into(),
                    kind: TermKind::Pred,
                    ks: disc(0),
                    weight: 1.0,
                },
                TermSpec {
                    name: "lin".into(),
                    kind: TermKind::Lin,
                    ks: disc(1),
                    weight: beta,
                },
            ],
            orth_weight,
        }
    }

    /// Largest offset any term reads.
    pub fn span(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|t| t.ks.iter().map(|&(k, _)| k))
            .max()
            .unwrap_or(0)
    }

    fn rollout_len(&self) -> usize {
        self.terms
            .iter()
            .filter(|t| t.kind != TermKind::Recon)
            .flat_map(|t| t.ks.iter().map(|&(k, _)| k))
            .max()
            .unwrap_or(0)
    }

    fn ks_of(&self, kind: TermKind) -> Vec<usize> {
        let mut ks: Vec<usize> = self
            .terms
            .iter()
            .filter(|t| t.kind == kind)
            .flat_map(|t| t.ks.iter().map(|&(k, _)| k))
            .collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    /// Combined gradient coefficient of each `k` in `ks` for `kind`.
    fn coefficients(&self, kind: TermKind, ks: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; ks.len()];
        for t in self.terms.iter().filter(|t| t.kind == kind) {
            for &(k, w) in &t.ks {
                let i = ks.binary_search(&k).expect("k collected from terms");
                c[i] += t.weight * w;
            }
        }
        c
    }
}

/// Which rows go through which network, shared by all chunks.
struct Plan {
    enc_ks: Vec<usize>,
    pred_ks: Vec<usize>,
    recon_ks: Vec<usize>,
    lin_ks: Vec<usize>,
    pred_c: Vec<f64>,
    recon_c: Vec<f64>,
    lin_c: Vec<f64>,
    horizon: usize,
}

impl Plan {
    fn new(spec: &LossSpec, count: usize) -> Self {
        let pred_ks = spec.ks_of(TermKind::Pred);
        let recon_ks = spec.ks_of(TermKind::Recon);
        let lin_ks = spec.ks_of(TermKind::Lin);
        let mut enc_ks: Vec<usize> = std::iter::once(0)
            .chain(lin_ks.iter().copied())
            .chain(recon_ks.iter().copied())
            .collect();
        enc_ks.sort_unstable();
        enc_ks.dedup();
        let scale = 1.0 / count as f64;
        let sc = |v: Vec<f64>| v.into_iter().map(|c| c * scale).collect();
        Self {
            pred_c: sc(spec.coefficients(TermKind::Pred, &pred_ks)),
            recon_c: sc(spec.coefficients(TermKind::Recon, &recon_ks)),
            lin_c: sc(spec.coefficients(TermKind::Lin, &lin_ks)),
            enc_ks,
            pred_ks,
            recon_ks,
            lin_ks,
            horizon: spec.rollout_len(),
        }
    }

    fn enc_block(&self, k: usize) -> usize {
        self.enc_ks.binary_search(&k).expect("k is encoded")
    }
}

/// Raw squared-error sums per `(kind, k)` plus an optional gradient.
struct Partial {
    pred: Vec<f64>,
    recon: Vec<f64>,
    lin: Vec<f64>,
    grad: Option<Vec<f64>>,
}

fn eval_chunk(
    model: &KoopmanModel,
    plan: &Plan,
    windows: &[ArrayView2<'_, f64>],
    want_grad: bool,
) -> Result<Partial, KoopmanError> {
    let b = windows.len();
    let n = model.n();
    let d = model.d();
    let blk = |i: usize| s![i * b..(i + 1) * b, ..];

    let mut xe = Array2::zeros((plan.enc_ks.len() * b, n));
    for (bi, &k) in plan.enc_ks.iter().enumerate() {
        for (j, w) in windows.iter().enumerate() {
            xe.row_mut(bi * b + j).assign(&w.row(k));
        }
    }
    let (e, enc_cache) = if want_grad {
        let (e, c) = model.encoder.forward_cached(xe.view())?;
        (e, Some(c))
    } else {
        (model.encoder.forward_batch(xe.view())?, None)
    };

    let k_mat = model.k.to_array();
    let k_t = k_mat.t().to_owned();
    let mut z = Vec::with_capacity(plan.horizon + 1);
    z.push(e.slice(blk(plan.enc_block(0))).to_owned());
    for k in 1..=plan.horizon {
        let next = z[k - 1].dot(&k_t);
        z.push(next);
    }

    let np = plan.pred_ks.len();
    let mut xd = Array2::zeros(((np + plan.recon_ks.len()) * b, d));
    for (i, &k) in plan.pred_ks.iter().enumerate() {
        xd.slice_mut(blk(i)).assign(&z[k]);
    }
    for (i, &k) in plan.recon_ks.iter().enumerate() {
        xd.slice_mut(blk(np + i))
            .assign(&e.slice(blk(plan.enc_block(k))));
    }
    let (y, dec_cache) = if xd.nrows() == 0 {
        (Array2::zeros((0, n)), None)
    } else if want_grad {
        let (y, c) = model.decoder.forward_cached(xd.view())?;
        (y, Some(c))
    } else {
        (model.decoder.forward_batch(xd.view())?, None)
    };

    let mut gy = if want_grad {
        Array2::zeros(y.raw_dim())
    } else {
        Array2::zeros((0, 0))
    };
    let mut ge = if want_grad {
        Array2::zeros(e.raw_dim())
    } else {
        Array2::zeros((0, 0))
    };
    let mut gz: Vec<Array2<f64>> = if want_grad {
        (0..=plan.horizon).map(|_| Array2::zeros((b, d))).collect()
    } else {
        Vec::new()
    };

    // Decoder outputs against observed rows.
    let mut out_sums = |ks: &[usize], coeffs: &[f64], offset: usize| -> Vec<f64> {
        let mut sums = vec![0.0; ks.len()];
        for (i, &k) in ks.iter().enumerate() {
            let mut r = y.slice(blk(offset + i)).to_owned();
            for (j, w) in windows.iter().enumerate() {
                let mut row = r.row_mut(j);
                row -= &w.row(k);
            }
            sums[i] = r.iter().map(|v| v * v).sum();
            if want_grad {
                r *= 2.0 * coeffs[i];
                gy.slice_mut(blk(offset + i)).assign(&r);
            }
        }
        sums
    };
    let pred = out_sums(&plan.pred_ks, &plan.pred_c, 0);
    let recon = out_sums(&plan.recon_ks, &plan.recon_c, np);

    let mut lin = vec![0.0; plan.lin_ks.len()];
    for (i, &k) in plan.lin_ks.iter().enumerate() {
        let eb = plan.enc_block(k);
        let mut r = e.slice(blk(eb)).to_owned() - &z[k];
        lin[i] = r.iter().map(|v| v * v).sum();
        if want_grad {
            r *= 2.0 * plan.lin_c[i];
            let mut g = ge.slice_mut(blk(eb));
            g += &r;
            gz[k] -= &r;
        }
    }

    if !want_grad {
        return Ok(Partial {
            pred,
            recon,
            lin,
            grad: None,
        });
    }

    let ne = model.encoder.param_count();
    let nd = model.decoder.param_count();
    let mut grad = vec![0.0; model.param_count()];
    if let Some(cache) = dec_cache {
        let gin = model
            .decoder
            .backward(&cache, gy, &mut grad[ne..ne + nd], true)
            .expect("input gradient requested");
        for (i, &k) in plan.pred_ks.iter().enumerate() {
            gz[k] += &gin.slice(blk(i));
        }
        for (i, &k) in plan.recon_ks.iter().enumerate() {
            let mut g = ge.slice_mut(blk(plan.enc_block(k)));
            g += &gin.slice(blk(np + i));
        }
    }
    let mut dk = Array2::<f64>::zeros((d, d));
    for k in (1..=plan.horizon).rev() {
        // z_k = z_{k-1} Kᵀ
        dk += &gz[k].t().dot(&z[k - 1]);
        let back = gz[k].dot(&k_mat);
        gz[k - 1] += &back;
    }
    {
        let mut g = ge.slice_mut(blk(plan.enc_block(0)));
        g += &gz[0];
    }
    model.encoder.backward(
        enc_cache.as_ref().expect("cached forward"),
        ge,
        &mut grad[..ne],
        false,
    );
    for (dst, v) in grad[ne + nd..].iter_mut().zip(dk.iter()) {
        *dst += v;
    }
    Ok(Partial {
        pred,
        recon,
        lin,
        grad: Some(grad),
    })
}

/// Evaluates `spec` averaged over `windows` (standardized, each at least
/// `spec.span() + 1` rows).
pub(crate) fn evaluate(
    model: &KoopmanModel,
    windows: &[ArrayView2<'_, f64>],
    spec: &LossSpec,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>), KoopmanError> {
    let need = spec.span() + 1;
    for w in windows {
        if w.nrows() < need {
            return Err(KoopmanError::TrajectoryTooShort {
                needed: need,
                got: w.nrows(),
            });
        }
        if w.ncols() != model.n() {
            return Err(KoopmanError::DimensionMismatch(format!(
                "window has {} columns, model has n = {}",
                w.ncols(),
                model.n()
            )));
        }
    }
    let plan = Plan::new(spec, windows.len().max(1));
    let per_chunk = (CHUNK_ROWS / plan.enc_ks.len()).max(1);
    let partials: Vec<Partial> = windows
        .par_chunks(per_chunk)
        .map(|c| eval_chunk(model, &plan, c, want_grad))
        .collect::<Result<_, _>>()?;

    let mut pred = vec![0.0; plan.pred_ks.len()];
    let mut recon = vec![0.0; plan.recon_ks.len()];
    let mut lin = vec![0.0; plan.lin_ks.len()];
    let mut grad = want_grad.then(|| vec![0.0; model.param_count()]);
    for p in &partials {
        for (a, v) in pred.iter_mut().zip(&p.pred) {
            *a += v;
        }
        for (a, v) in recon.iter_mut().zip(&p.recon) {
            *a += v;
        }
        for (a, v) in lin.iter_mut().zip(&p.lin) {
            *a += v;
        }
        if let (Some(g), Some(pg)) = (grad.as_mut(), p.grad.as_ref()) {
            for (a, v) in g.iter_mut().zip(pg) {
                *a += v;
            }
        }
    }

    let count = windows.len().max(1) as f64;
    let mut terms: Vec<LossTerm> = spec
        .terms
        .iter()
        .map(|t| {
            let (ks, sums) = match t.kind {
                TermKind::Pred => (&plan.pred_ks, &pred),
                TermKind::Recon => (&plan.recon_ks, &recon),
                TermKind::Lin => (&plan.lin_ks, &lin),
            };
            let value =
                t.ks.iter()
                    .map(|&(k, w)| w * sums[ks.binary_search(&k).expect("planned")] / count)
                    .sum();
            LossTerm {
                name: t.name.clone(),
                weight: t.weight,
                value,
            }
        })
        .collect();

    terms.push(LossTerm {
        name: "orth".into(),
        weight: spec.orth_weight,
        value: orth_defect(&model.k),
    });
    if let Some(g) = grad.as_mut() {
        add_orth_grad(model, spec.orth_weight, g);
    }
    Ok((LossBreakdown::from_terms(terms), grad))
}

/// Adds `weight · 4(KKᵀ − I)K` to the `K` block, which is stored last.
fn add_orth_grad(model: &KoopmanModel, weight: f64, g: &mut [f64]) {
    if weight == 0.0 {
        return;
    }
    let k = model.k.to_array();
    let m = k.dot(&k.t()) - Array2::<f64>::eye(model.d());
    let gk = m.dot(&k) * (4.0 * weight);
    let off = g.len() - model.d() * model.d();
    for (dst, v) in g[off..].iter_mut().zip(gk.iter()) {
        *dst += v;
    }
}

fn standardized(
    model: &KoopmanModel,
    trajs: &[Trajectory],
) -> Result<Vec<Array2<f64>>, KoopmanError> {
    trajs
        .iter()
        .map(|t| {
            if t.dim() != model.n() {
                return Err(KoopmanError::DimensionMismatch(format!(
                    "trajectory has {} columns, model has n = {}",
                    t.dim(),
                    model.n()
                )));
            }
            Ok(model.scaling.normalize_rows(t.states.view()))
        })
        .collect()
}

fn one_step(model: &KoopmanModel, x: &[f64], dt: usize) -> Result<Vec<f64>, KoopmanError> {
    let mut z = model.encoder.forward(&model.scaling.normalize(x))?;
    for _ in 0..dt {
        z = model.k.mat_vec(&z);
    }
    Ok(z)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `‖x_{t+Δt} − ψ(K^Δt φ(x_t))‖²`.
pub fn loss_pred(
    model: &KoopmanModel,
    x_t: &[f64],
    x_later: &[f64],
    dt: usize,
) -> Result<f64, KoopmanError> {
    let z = one_step(model, x_t, dt)?;
    let y = model.decoder.forward(&z)?;
    Ok(sq_dist(&y, &model.scaling.normalize(x_later)))
}

/// `‖φ(x_{t+Δt}) − K^Δt φ(x_t)‖²`; identically zero for `Δt = 0`.
pub fn loss_lin(
    model: &KoopmanModel,
    x_t: &[f64],
    x_later: &[f64],
    dt: usize,
) -> Result<f64, KoopmanError> {
    if dt == 0 {
        return Ok(0.0);
    }
    let z = one_step(model, x_t, dt)?;
    let target = model.encoder.forward(&model.scaling.normalize(x_later))?;
    Ok(sq_dist(&target, &z))
}

/// `‖KKᵀ − I‖²_F`.
pub fn loss_orth(model: &KoopmanModel) -> f64 {
    orth_defect(&model.k)
}

pub fn loss_orth_with_grad(model: &KoopmanModel) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; model.param_count()];
    add_orth_grad(model, 1.0, &mut g);
    (orth_defect(&model.k), g)
}

/// `‖x_{t+Δt} − ψ(K^Δt φ(x_t))‖²` (pred) or `‖φ(x_{t+Δt}) − K^Δt φ(x_t)‖²`
/// (lin) for one pair, backpropagated directly.
fn pair_with_grad(
    model: &KoopmanModel,
    kind: TermKind,
    x_t: &[f64],
    x_later: &[f64],
    dt: usize,
) -> Result<(f64, Vec<f64>), KoopmanError> {
    let n = model.n();
    if x_t.len() != n || x_later.len() != n {
        return Err(KoopmanError::DimensionMismatch(format!(
            "pair has {} and {} components, model has n = {n}",
            x_t.len(),
            x_later.len()
        )));
    }
    let (a, b) = (
        model.scaling.normalize(x_t),
        model.scaling.normalize(x_later),
    );
    let mut xin = Array2::zeros((2, n));
    xin.row_mut(0).assign(&ArrayView1::from(&a[..]));
    xin.row_mut(1).assign(&ArrayView1::from(&b[..]));
    let (e, enc_cache) = model.encoder.forward_cached(xin.view())?;
    let k = model.k.to_array();
    let mut z = vec![e.row(0).to_owned()];
    for i in 0..dt {
        z.push(k.dot(&z[i]));
    }

    let ne = model.encoder.param_count();
    let nd = model.decoder.param_count();
    let mut grad = vec![0.0; model.param_count()];
    let mut ge = Array2::zeros(e.raw_dim());
    let (value, mut gz) = match kind {
        TermKind::Pred => {
            let zin = z[dt].view().insert_axis(ndarray::Axis(0));
            let (y, dec_cache) = model.decoder.forward_cached(zin)?;
            let r = &y.row(0) - &ArrayView1::from(&b[..]);
            let gy = (&r * 2.0).insert_axis(ndarray::Axis(0));
            let gin = model
                .decoder
                .backward(&dec_cache, gy, &mut grad[ne..ne + nd], true)
                .expect("input gradient requested");
            (r.dot(&r), gin.row(0).to_owned())
        }
        _ => {
            let r = &e.row(1) - &z[dt];
            ge.row_mut(1).assign(&(&r * 2.0));
            (r.dot(&r), &r * -2.0)
        }
    };
    let mut dk = Array2::<f64>::zeros(k.raw_dim());
    for i in (1..=dt).rev() {
        // z_i = K z_{i-1}
        dk += &gz
            .view()
            .insert_axis(ndarray::Axis(1))
            .dot(&z[i - 1].view().insert_axis(ndarray::Axis(0)));
        gz = k.t().dot(&gz);
    }
    {
        let mut row = ge.row_mut(0);
        row += &gz;
    }
    model
        .encoder
        .backward(&enc_cache, ge, &mut grad[..ne], false);
    for (dst, v) in grad[ne + nd..].iter_mut().zip(dk.iter()) {
        *dst += v;
    }
    Ok((value, grad))
}

pub fn loss_pred_with_grad(
    model: &KoopmanModel,
    x_t: &[f64],
    x_later: &[f64],
    dt: usize,
) -> Result<(f64, Vec<f64>), KoopmanError> {
    pair_with_grad(model, TermKind::Pred, x_t, x_later, dt)
}

pub fn loss_lin_with_grad(
    model: &KoopmanModel,
    x_t: &[f64],
    x_later: &[f64],
    dt: usize,
) -> Result<(f64, Vec<f64>), KoopmanError> {
    if dt == 0 {
        return Ok((0.0, vec![0.0; model.param_count()]));
    }
    pair_with_grad(model, TermKind::Lin, x_t, x_later, dt)
}

fn l1_windows<'a>(
    data: &'a [Array2<f64>],
    samples: &[(usize, usize)],
) -> Result<Vec<ArrayView2<'a, f64>>, KoopmanError> {
    samples
        .iter()
        .map(|&(i, t)| {
            let traj = data.get(i).ok_or_else(|| {
                KoopmanError::InvalidConfig(format!("sample refers to trajectory {i}"))
            })?;
            if t + 5 >= traj.nrows() {
                return Err(KoopmanError::TrajectoryTooShort {
                    needed: t + 6,
                    got: traj.nrows(),
                });
            }
            Ok(traj.slice(s![t..t + 6, ..]))
        })
        .collect()
}

fn l1_impl(
    model: &KoopmanModel,
    trajs: &[Trajectory],
    samples: &[(usize, usize)],
    beta1: f64,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>), KoopmanError> {
    let data = standardized(model, trajs)?;
    let windows = l1_windows(&data, samples)?;
    evaluate(model, &windows, &LossSpec::l1(beta1), want_grad)
}

/// Short-horizon loss averaged over `(trajectory, t)` samples, each needing
/// `x_{t+5}`.
pub fn loss_l1(
    model: &KoopmanModel,
    trajs: &[Trajectory],
    samples: &[(usize, usize)],
    beta1: f64,
) -> Result<LossBreakdown, KoopmanError> {
    Ok(l1_impl(model, trajs, samples, beta1, false)?.0)
}

pub fn loss_l1_with_grad(
    model: &KoopmanModel,
    trajs: &[Trajectory],
    samples: &[(usize, usize)],
    beta1: f64,
) -> Result<(LossBreakdown, Vec<f64>), KoopmanError> {
    let (b, g) = l1_impl(model, trajs, samples, beta1, true)?;
    Ok((b, g.expect("gradient requested")))
}

/// Rollout horizon `min(T − 1, cap)` shared by a set of trajectories.
pub(crate) fn common_horizon(trajs: &[Trajectory], cap: usize) -> Result<usize, KoopmanError> {
    let len = trajs.first().map_or(2, Trajectory::len);
    if trajs.iter().any(|t| t.len() != len) {
        return Err(KoopmanError::DimensionMismatch(
            "trajectories must share a common length".into(),
        ));
    }
    if len < 2 {
        return Err(KoopmanError::TrajectoryTooShort {
            needed: 2,
            got: len,
        });
    }
    Ok((len - 1).min(cap.max(1)))
}

fn rollout_impl(
    model: &KoopmanModel,
    trajs: &[Trajectory],
    spec: &LossSpec,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>), KoopmanError> {
    let data = standardized(model, trajs)?;
    let windows: Vec<_> = data.iter().map(|a| a.view()).collect();
    evaluate(model, &windows, spec, want_grad)
}

/// Long-horizon loss: for `t ≤ min(T − 1, horizon_cap)`, reconstruction of
/// every `x_t` plus prediction and linearity of `t` steps from `x_0`,
/// averaged over `t` and over trajectories.
pub fn loss_l2(
    model: &KoopmanModel,
    trajs: &[Trajectory],
    horizon_cap: usize,
    beta2: f64,
) -> Result<LossBreakdown, KoopmanError> {
    let h = common_horizon(trajs, horizon_cap)?;
    Ok(rollout_impl(model, trajs, &LossSpec::l2(h, beta2), false)?.0)
}

pub fn loss_l2_with_grad(
    model: &KoopmanModel,
    trajs: &[Trajectory],
    horizon_cap: usize,
    beta2: f64,
) -> Result<(LossBreakdown, Vec<f64>), KoopmanError> {
    let h = common_horizon(trajs, horizon_cap)?;
    let (b, g) = rollout_impl(model, trajs, &LossSpec::l2(h, beta2), true)?;
    Ok((b, g.expect("gradient requested")))
}

/// Discounted long-term loss `Σ_t δ^t (pred_t + β·lin_t) / (h + 1)` from
/// `x_0`, plus `orth_weight · ‖KKᵀ − I‖²`.
pub fn loss_long_baseline(
    model: &KoopmanModel,
    trajs: &[Trajectory],
    horizon_cap: usize,
    delta: f64,
    beta: f64,
    orth_weight: f64,
) -> Result<LossBreakdown, KoopmanError> {
    check_delta(delta)?;
    let h = common_horizon(trajs, horizon_cap)?;
    let spec = LossSpec::baseline(h, delta, beta, orth_weight);
    Ok(rollout_impl(model, trajs, &spec, false)?.0)
}

pub fn loss_long_baseline_with_grad(
    model: &KoopmanModel,
    trajs: &[Trajectory],
    horizon_cap: usize,
    delta: f64,
    beta: f64,
    orth_weight: f64,
) -> Result<(LossBreakdown, Vec<f64>), KoopmanError> {
    check_delta(delta)?;
    let h = common_horizon(trajs, horizon_cap)?;
    let spec = LossSpec::baseline(h, delta, beta, orth_weight);
    let (b, g) = rollout_impl(model, trajs, &spec, true)?;
    Ok((b, g.expect("gradient requested")))
}

pub(crate) fn check_delta(delta: f64) -> Result<(), KoopmanError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(KoopmanError::InvalidConfig(format!(
            "discount must lie in (0, 1], got {delta}"
        )));
    }
    Ok(())
}
