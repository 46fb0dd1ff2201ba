use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use koopflow::continuous::extract_generator;
use koopflow::koopman::{save_checkpoint, train_on, BaselineLoss, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{open_dataset, open_model, require_path, sibling, CHECKPOINT_FILE, GENERATOR_FILE, RUN_FILE};
use crate::{record, usage, Command};

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset directory to train on.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint, history and generator.
    #[arg(long, default_value = "runs/model")]
    pub out: PathBuf,
    /// JSON TrainConfig used as the base; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// (trajectory, t) pairs per stage-1 batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Trajectories per stage-2 batch.
    #[arg(long)]
    pub l2_batch_size: Option<usize>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Drop the orthogonality penalty: beta1 = beta2 = 0.
    #[arg(long, conflicts_with_all = ["beta1", "beta2"])]
    pub ablate_orth: bool,
    /// Longest rollout in the stage-2 loss.
    #[arg(long)]
    pub horizon_cap: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Hidden widths, e.g. 256,128.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Replace stage 2 by the discounted loss with this δ.
    #[arg(long)]
    pub baseline_delta: Option<f64>,
    /// Linearity weight of the discounted loss.
    #[arg(long, requires = "baseline_delta")]
    pub baseline_beta: Option<f64>,
    /// Train on per-component standardized observations.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainArgs {
    fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => {
                require_path(path, "training config")?;
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text)
                    .map_err(|e| usage(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(stage1_epochs, stage2_epochs, batch_size, l2_batch_size, beta1, beta2);
        set!(horizon_cap, latent_dim, hidden, seed);
        if let Some(lr) = self.lr {
            c.adam.lr = lr;
        }
        if self.ablate_orth {
            c.beta1 = 0.0;
            c.beta2 = 0.0;
        }
        if let Some(delta) = self.baseline_delta {
            c.baseline = Some(BaselineLoss {
                delta,
                beta: self.baseline_beta.unwrap_or(1.0),
            });
        }
        c.standardize |= self.standardize;
        c.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }
}

pub fn train(a: &TrainArgs, cmd: &Command) -> anyhow::Result<()> {
    let config = a.resolve()?;
    let ds = open_dataset(&a.data)?;
    if ds.train.is_empty() {
        return Err(usage(format!("{} has no training trajectories", a.data.display())));
    }
    super::create_dir(&a.out)?;
    eprintln!(
        "training on {} trajectories of {} samples (dt {})",
        ds.train.len(),
        ds.meta.samples,
        ds.meta.dt
    );
    let (model, history) = train_on(&ds.train, &ds.val, &config, |b| {
        if b.split == "train" && (b.epoch + 1) % 10 == 0 {
            eprintln!("stage {} epoch {:>5}  loss {:.6e}", b.stage, b.epoch + 1, b.total);
        }
    })?;

    let ckpt = a.out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &ckpt)?;
    history.write_csv(&a.out.join("history.csv"))?;
    let gen_path = a.out.join(GENERATOR_FILE);
    let generator = match extract_generator(&model, ds.meta.dt) {
        Ok(gen) => {
            gen.save(&gen_path)?;
            json!({ "path": gen_path, "round_trip_residual": gen.residual })
        }
        Err(e) => {
            // A stale generator from an earlier run must not survive.
            let _ = std::fs::remove_file(&gen_path);
            eprintln!("warning: no generator extracted: {e}");
            json!({ "error": e.to_string() })
        }
    };
    let resolved = json!({
        "train_config": config,
        "source_dt": ds.meta.dt,
        "dataset": ds.meta,
        "best_stage2_epoch": history.best_stage2_epoch,
        "generator": generator,
    });
    record::save(&a.out.join(RUN_FILE), cmd, resolved)?;
    for (stage, split) in [(1, "train"), (2, "train"), (2, "val")] {
        if let Some(b) = history.last(stage, split) {
            println!("stage {stage} final {split} loss {:.6e}", b.total);
        }
    }
    println!("wrote {}", ckpt.display());
    Ok(())
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sampling period the model was trained at.
    #[arg(long)]
    pub source_dt: Option<f64>,
    /// Read the training step from this dataset's metadata instead.
    #[arg(long, conflicts_with = "source_dt")]
    pub data: Option<PathBuf>,
    /// Output file [default: generator.json next to the checkpoint].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn extract(a: &ExtractArgs, cmd: &Command) -> anyhow::Result<()> {
    let model = open_model(&a.checkpoint)?;
    let dt = match (a.source_dt, &a.data) {
        (Some(dt), _) => dt,
        (None, Some(dir)) => open_dataset(dir)?.meta.dt,
        (None, None) => super::resolve_source_dt(&a.checkpoint, None, None)?,
    };
    let gen = extract_generator(&model, dt).context("extracting the generator")?;
    let out = a.out.clone().unwrap_or_else(|| sibling(&a.checkpoint, GENERATOR_FILE));
    gen.save(&out)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("generator");
    record::save(
        &sibling(&out, &format!("{stem}.run.json")),
        cmd,
        json!({ "source_dt": dt, "round_trip_residual": gen.residual }),
    )?;
    println!("round-trip residual {:.3e}", gen.residual);
    for z in &gen.eigenvalues {
        println!("eigenvalue of K: {:.12} {:+.12}i  |λ| = {:.6}", z.re, z.im, z.norm());
    }
    println!("wrote {}", out.display());
    Ok(())
}
