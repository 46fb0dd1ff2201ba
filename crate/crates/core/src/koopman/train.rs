use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{check_delta, common_horizon, evaluate, LossSpec};
use super::{
    KoopmanError, KoopmanModel, LossBreakdown, ObsScaling, DEFAULT_HIDDEN, DEFAULT_LATENT_DIM,
};
use crate::net::{adam_step, AdamConfig, AdamState};
use crate::systems::{format_f64, Dataset, Trajectory};

/// Discounted long-term loss used in place of the stage-2 loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineLoss {
    pub delta: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub adam: AdamConfig,
    /// `(trajectory, t)` samples per stage-1 step.
    pub batch_size: usize,
    /// Whole trajectories per stage-2 step.
    pub l2_batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub horizon_cap: usize,
    pub baseline: Option<BaselineLoss>,
    /// Fit per-component mean/std on the training split and learn in
    /// standardized coordinates.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: DEFAULT_LATENT_DIM,
            hidden: DEFAULT_HIDDEN.to_vec(),
            stage1_epochs: 100,
            stage2_epochs: 100,
            adam: AdamConfig::default(),
            batch_size: 256,
            l2_batch_size: 10,
            beta1: 10.0,
            beta2: 10.0,
            horizon_cap: 200,
            baseline: None,
            standardize: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), KoopmanError> {
        let bad = |m: String| Err(KoopmanError::InvalidConfig(m));
        if self.latent_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return bad(format!(
                "beta1/beta2 must be >= 0, got {}/{}",
                self.beta1, self.beta2
            ));
        }
        if self.horizon_cap == 0 {
            return bad("horizon_cap must be >= 1".into());
        }
        if self.batch_size == 0 || self.l2_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(self.adam.lr >= 0.0) || !self.adam.lr.is_finite() {
            return bad(format!(
                "learning rate must be finite and >= 0, got {}",
                self.adam.lr
            ));
        }
        if let Some(b) = self.baseline {
            check_delta(b.delta)?;
            if !(b.beta >= 0.0) {
                return bad(format!("baseline beta must be >= 0, got {}", b.beta));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Stage-1 `train` rows are averages over the epoch's mini-batches; all
    /// other rows are full evaluations at the end of the epoch.
    pub records: Vec<LossBreakdown>,
    /// Stage-2 epoch whose parameters were kept.
    pub best_stage2_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn last(&self, stage: u8, split: &str) -> Option<&LossBreakdown> {
        self.records
            .iter()
            .rev()
            .find(|r| r.stage == stage && r.split == split)
    }

    /// Long format, one row per (record, term); `total` appears as a term.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "stage,epoch,split,term,weight,value")?;
        for r in &self.records {
            let prefix = format!("{},{},{}", r.stage, r.epoch, r.split);
            writeln!(
                w,
                "{prefix},total,{},{}",
                format_f64(1.0),
                format_f64(r.total)
            )?;
            for t in &r.terms {
                writeln!(
                    w,
                    "{prefix},{},{},{}",
                    t.name,
                    format_f64(t.weight),
                    format_f64(t.value)
                )?;
            }
        }
        w.flush()
    }
}

/// Every `(trajectory, t)` with `x_{t+5}` available.
pub fn l1_pairs(lengths: impl IntoIterator<Item = usize>) -> Vec<(usize, usize)> {
    lengths
        .into_iter()
        .enumerate()
        .flat_map(|(i, len)| (0..len.saturating_sub(5)).map(move |t| (i, t)))
        .collect()
}

pub fn train_two_stage(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(KoopmanModel, TrainHistory), KoopmanError> {
    train_on(&dataset.train, &dataset.val, config, |_| {})
}

/// Stage 1 minimizes the short-horizon loss over shuffled mini-batches of
/// `(trajectory, t)` samples; stage 2 restarts Adam from the stage-1
/// parameters and minimizes the long-horizon loss over mini-batches of whole
/// trajectories, keeping the epoch with the lowest validation loss (training
/// loss if `val` is empty). `observe` sees every history record as it is
/// produced.
pub fn train_on(
    train: &[Trajectory],
    val: &[Trajectory],
    config: &TrainConfig,
    mut observe: impl FnMut(&LossBreakdown),
) -> Result<(KoopmanModel, TrainHistory), KoopmanError> {
    config.validate()?;
    let first = train
        .first()
        .ok_or_else(|| KoopmanError::InvalidConfig("training split is empty".into()))?;
    let n = first.dim();
    let len = first.len();
    if train
        .iter()
        .chain(val)
        .any(|t| t.dim() != n || t.len() != len)
    {
        return Err(KoopmanError::DimensionMismatch(
            "all trajectories must share dimension and length".into(),
        ));
    }

    let mut model = KoopmanModel::init(n, config.latent_dim, &config.hidden, config.seed)?;
    if config.standardize {
        model.scaling = ObsScaling::fit(train.iter().map(|t| t.states.view()));
    }
    let norm = |v: &[Trajectory]| -> Vec<Array2<f64>> {
        v.iter()
            .map(|t| model.scaling.normalize_rows(t.states.view()))
            .collect()
    };
    let train_data = norm(train);
    let val_data = norm(val);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut history = TrainHistory::default();
    let mut params = model.params().values;

    if config.stage1_epochs > 0 {
        if len < 6 {
            return Err(KoopmanError::TrajectoryTooShort {
                needed: 6,
                got: len,
            });
        }
        let spec = LossSpec::l1(config.beta1);
        let mut pairs = l1_pairs(train_data.iter().map(|a| a.nrows()));
        let val_pairs = l1_pairs(val_data.iter().map(|a| a.nrows()));
        let mut adam = AdamState::new(params.len(), config.adam);
        for epoch in 0..config.stage1_epochs {
            pairs.shuffle(&mut rng);
            let mut acc: Option<LossBreakdown> = None;
            for batch in pairs.chunks(config.batch_size) {
                let windows = l1_views(&train_data, batch);
                let (bd, grad) = evaluate(&model, &windows, &spec, true)?;
                let grad = grad.expect("gradient requested");
                check_step(&bd, &grad, 1, epoch)?;
                adam_step(&mut params, &grad, &mut adam);
                model
                    .set_params(&params)
                    .map_err(|_| non_finite(1, epoch, "parameters"))?;
                accumulate(&mut acc, &bd, batch.len() as f64);
            }
            let mut rec = acc.expect("at least one batch");
            let scale = 1.0 / pairs.len() as f64;
            rec.total *= scale;
            for t in &mut rec.terms {
                t.value *= scale;
            }
            push(&mut history, &mut observe, rec, 1, epoch, "train");
            if !val_pairs.is_empty() {
                let windows = l1_views(&val_data, &val_pairs);
                let (bd, _) = evaluate(&model, &windows, &spec, false)?;
                push(&mut history, &mut observe, bd, 1, epoch, "val");
            }
        }
    }

    if config.stage2_epochs > 0 {
        let h = common_horizon(train, config.horizon_cap)?;
        let spec = match config.baseline {
            Some(b) => LossSpec::baseline(h, b.delta, b.beta, config.beta2),
            None => LossSpec::l2(h, config.beta2),
        };
        let train_views: Vec<_> = train_data
            .iter()
            .map(|a| a.slice(s![..h + 1, ..]))
            .collect();
        let val_views: Vec<_> = val_data.iter().map(|a| a.slice(s![..h + 1, ..])).collect();
        let mut order: Vec<usize> = (0..train_views.len()).collect();
        let mut adam = AdamState::new(params.len(), config.adam);
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for epoch in 0..config.stage2_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.l2_batch_size) {
                let windows: Vec<_> = batch.iter().map(|&i| train_views[i]).collect();
                let (bd, grad) = evaluate(&model, &windows, &spec, true)?;
                let grad = grad.expect("gradient requested");
                check_step(&bd, &grad, 2, epoch)?;
                adam_step(&mut params, &grad, &mut adam);
                model
                    .set_params(&params)
                    .map_err(|_| non_finite(2, epoch, "parameters"))?;
            }
            let (train_bd, _) = evaluate(&model, &train_views, &spec, false)?;
            let mut selection = train_bd.total;
            push(&mut history, &mut observe, train_bd, 2, epoch, "train");
            if !val_views.is_empty() {
                let (val_bd, _) = evaluate(&model, &val_views, &spec, false)?;
                selection = val_bd.total;
                push(&mut history, &mut observe, val_bd, 2, epoch, "val");
            }
            if !selection.is_finite() {
                return Err(non_finite(2, epoch, "selection"));
            }
            if best.as_ref().is_none_or(|(b, _, _)| selection < *b) {
                best = Some((selection, epoch, params.clone()));
            }
        }
        let (_, epoch, p) = best.expect("at least one epoch");
        model.set_params(&p)?;
        history.best_stage2_epoch = Some(epoch);
    }
    Ok((model, history))
}

fn l1_views<'a>(data: &'a [Array2<f64>], pairs: &[(usize, usize)]) -> Vec<ArrayView2<'a, f64>> {
    pairs
        .iter()
        .map(|&(i, t)| data[i].slice(s![t..t + 6, ..]))
        .collect()
}

fn non_finite(stage: u8, epoch: usize, term: &str) -> KoopmanError {
    KoopmanError::NonFiniteLoss {
        stage,
        epoch,
        term: term.to_string(),
    }
}

fn check_step(
    bd: &LossBreakdown,
    grad: &[f64],
    stage: u8,
    epoch: usize,
) -> Result<(), KoopmanError> {
    if let Some(term) = bd.first_non_finite() {
        return Err(non_finite(stage, epoch, &term));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(non_finite(stage, epoch, "gradient"));
    }
    Ok(())
}

fn accumulate(acc: &mut Option<LossBreakdown>, bd: &LossBreakdown, weight: f64) {
    match acc {
        None => {
            let mut first = bd.clone();
            first.total *= weight;
            for t in &mut first.terms {
                t.value *= weight;
            }
            *acc = Some(first);
        }
        Some(a) => {
            a.total += weight * bd.total;
            for (t, u) in a.terms.iter_mut().zip(&bd.terms) {
                t.value += weight * u.value;
            }
        }
    }
}

fn push(
    history: &mut TrainHistory,
    observe: &mut impl FnMut(&LossBreakdown),
    mut rec: LossBreakdown,
    stage: u8,
    epoch: usize,
    split: &str,
) {
    rec.stage = stage;
    rec.epoch = epoch;
    rec.split = split.to_string();
    observe(&rec);
    history.records.push(rec);
}
