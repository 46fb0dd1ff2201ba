use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use koopflow::continuous::{latent_linear_interp, upsample_forecast, upsample_reanchored};
use koopflow::eval::{
    emit_curves, emit_report, emit_trajectory_curves, evaluate_model, EvalSpec, Method,
};
use koopflow::systems::{read_trajectory_csv, write_trajectory_csv, Trajectory};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    create_dir, open_dataset, open_model, require_path, resolve_generator, resolve_source_dt,
    sibling, RUN_FILE,
};
use crate::{record, usage, Command};

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Ground-truth dataset; its test split is forecast.
    #[arg(long)]
    pub data: PathBuf,
    /// continuous, latent-interp or discrete.
    #[arg(long, default_value = "continuous")]
    pub method: Method,
    /// Evaluation grid spacing [default: the dataset's dt].
    #[arg(long)]
    pub eval_dt: Option<f64>,
    /// Sampling period the model was trained at [default: from generator.json].
    #[arg(long)]
    pub source_dt: Option<f64>,
    #[arg(long)]
    pub generator: Option<PathBuf>,
    /// Output directory [default: eval_<method> next to the checkpoint].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn id_of(path: &Path) -> String {
    path.display().to_string()
}

pub fn eval(a: &EvalArgs, cmd: &Command) -> anyhow::Result<()> {
    let model = open_model(&a.checkpoint)?;
    let ds = open_dataset(&a.data)?;
    if ds.meta.system.obs_dim() != model.n() {
        return Err(usage(format!(
            "model observes {} components but {} has {}",
            model.n(),
            a.data.display(),
            ds.meta.system.obs_dim()
        )));
    }
    let eval_dt = a.eval_dt.unwrap_or(ds.meta.dt);
    let generator = match a.method {
        Method::Continuous => Some(resolve_generator(
            &model,
            &a.checkpoint,
            a.generator.as_deref(),
            a.source_dt,
        )?),
        _ => None,
    };
    let source_dt = match &generator {
        Some(g) => g.source_dt,
        None => resolve_source_dt(&a.checkpoint, a.generator.as_deref(), a.source_dt)?,
    };
    let spec = EvalSpec {
        method: a.method,
        eval_dt,
        source_dt,
        generator: generator.as_ref(),
        model_id: id_of(&a.checkpoint),
        dataset_id: id_of(&a.data),
    };
    let report = evaluate_model(&model, &ds, &spec)?;

    let out = a
        .out
        .clone()
        .unwrap_or_else(|| sibling(&a.checkpoint, &format!("eval_{}", a.method)));
    create_dir(&out)?;
    emit_report(&report, &out.join("report.json"))?;
    emit_curves(&report, &out.join("curve.csv"))?;
    emit_trajectory_curves(&report, &out.join("curves"))?;
    record::save(
        &out.join(RUN_FILE),
        cmd,
        json!({ "method": a.method, "eval_dt": eval_dt, "source_dt": source_dt }),
    )?;
    for t in report.trajectories.iter().filter(|t| t.error.is_some()) {
        eprintln!("trajectory {} failed: {}", t.index, t.error.as_deref().unwrap_or(""));
    }
    println!("wrote {}", out.display());
    match report.aggregate_mse {
        Some(mse) => {
            println!("aggregate MSE ({}, dt {eval_dt}): {mse:.6e}", a.method);
            Ok(())
        }
        None => anyhow::bail!("no trajectory could be evaluated; aggregate MSE is undefined"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpsampleMethod {
    Continuous,
    LatentInterp,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct UpsampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One trajectory CSV to upsample.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub input: Option<PathBuf>,
    /// Upsample every trajectory of one split of this dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub target_dt: f64,
    #[arg(long, value_enum, default_value = "continuous")]
    pub method: UpsampleMethod,
    /// Restart the forecast from every low-frequency sample (continuous only).
    #[arg(long)]
    pub reanchor: bool,
    #[arg(long)]
    pub source_dt: Option<f64>,
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn upsample(a: &UpsampleArgs, cmd: &Command) -> anyhow::Result<()> {
    let model = open_model(&a.checkpoint)?;
    if a.reanchor && a.method != UpsampleMethod::Continuous {
        return Err(usage("--reanchor applies to the continuous method only"));
    }
    let inputs: Vec<(String, Trajectory)> = match (&a.input, &a.data) {
        (Some(path), _) => {
            require_path(path, "input trajectory")?;
            let t = read_trajectory_csv(path, None, vec![])
                .with_context(|| format!("reading {}", path.display()))?;
            let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("traj.csv");
            vec![(name.to_string(), t)]
        }
        (None, Some(dir)) => {
            let ds = open_dataset(dir)?;
            let split = match a.split.as_str() {
                "train" => ds.train,
                "val" => ds.val,
                "test" => ds.test,
                other => return Err(usage(format!("unknown split {other:?}"))),
            };
            split
                .into_iter()
                .enumerate()
                .map(|(i, t)| (format!("traj_{i:04}.csv"), t))
                .collect()
        }
        (None, None) => return Err(usage("give --input or --data")),
    };
    if let Some((_, t)) = inputs.iter().find(|(_, t)| t.dim() != model.n()) {
        return Err(usage(format!(
            "trajectory has {} components, model observes {}",
            t.dim(),
            model.n()
        )));
    }
    let generator = match a.method {
        UpsampleMethod::Continuous => Some(resolve_generator(
            &model,
            &a.checkpoint,
            a.generator.as_deref(),
            a.source_dt,
        )?),
        UpsampleMethod::LatentInterp => None,
    };
    create_dir(&a.out)?;
    for (name, lf) in &inputs {
        let up = match (&generator, a.reanchor) {
            (Some(g), false) => upsample_forecast(&model, g, lf, a.target_dt)?,
            (Some(g), true) => upsample_reanchored(&model, g, lf, a.target_dt)?,
            (None, _) => latent_linear_interp(&model, lf, a.target_dt)?,
        };
        write_trajectory_csv(&up, &a.out.join(name))?;
    }
    record::save(
        &a.out.join(RUN_FILE),
        cmd,
        json!({
            "method": a.method,
            "target_dt": a.target_dt,
            "source_dt": generator.as_ref().map(|g| g.source_dt),
            "trajectories": inputs.len(),
        }),
    )?;
    println!("upsampled {} trajectories into {}", inputs.len(), a.out.display());
    Ok(())
}
