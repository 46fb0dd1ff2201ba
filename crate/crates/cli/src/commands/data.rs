use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use koopflow::systems::{
    generate_dataset, save_dataset, Dataset, DatasetConfig, OdeSystem, SplitCounts,
    DEFAULT_SUBSTEPS,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{open_dataset, require_path, RUN_FILE};
use crate::{record, usage, Command};

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// pendulum, fluidflow or lorenz63.
    #[arg(long)]
    pub system: Option<String>,
    /// Sampling period in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Trajectory span in seconds; trajectories hold duration/dt + 1 samples.
    #[arg(long, conflicts_with = "steps")]
    pub duration: Option<f64>,
    /// Samples per trajectory.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub train: usize,
    #[arg(long, default_value_t = 25)]
    pub val: usize,
    #[arg(long, default_value_t = 10)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// RK4 steps per sampling period.
    #[arg(long, default_value_t = DEFAULT_SUBSTEPS)]
    pub substeps: usize,
    /// Decimate an existing dataset instead of simulating.
    #[arg(long, value_name = "DIR", requires = "factor")]
    pub subsample_from: Option<PathBuf>,
    #[arg(long, requires = "subsample_from")]
    pub factor: Option<usize>,
    /// Output directory [default: runs/<system>, or <source>_x<factor>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn summary(ds: &Dataset) -> String {
    let c = ds.meta.counts;
    format!(
        "{}: dt {} s, T = {} samples, train/val/test = {}/{}/{}",
        ds.meta.system.name(),
        ds.meta.dt,
        ds.meta.samples,
        c.train,
        c.val,
        c.test
    )
}

pub fn generate(a: &GenerateArgs, cmd: &Command) -> anyhow::Result<()> {
    let (ds, out) = match (&a.subsample_from, a.factor) {
        (Some(src), Some(factor)) => {
            require_path(src, "dataset")?;
            let source = open_dataset(src)?;
            if let Some(name) = &a.system {
                if name != source.meta.system.name() {
                    return Err(usage(format!(
                        "--system {name} but {} holds {}",
                        src.display(),
                        source.meta.system.name()
                    )));
                }
            }
            if factor == 0 {
                return Err(usage("--factor must be at least 1"));
            }
            let ds = source.subsample(factor)?;
            let default = PathBuf::from(format!("{}_x{factor}", src.display()));
            (ds, a.out.clone().unwrap_or(default))
        }
        _ => {
            let name = a
                .system
                .as_deref()
                .ok_or_else(|| usage("--system is required unless --subsample-from is given"))?;
            let system = OdeSystem::from_name(name).ok_or_else(|| {
                usage(format!("unknown system {name:?} (pendulum, fluidflow, lorenz63)"))
            })?;
            let dt = a.dt.ok_or_else(|| usage("--dt is required"))?;
            let counts = SplitCounts {
                train: a.train,
                val: a.val,
                test: a.test,
            };
            let mut config = match (a.duration, a.steps) {
                (Some(d), None) => DatasetConfig::from_duration(system, dt, d, counts, a.seed)
                    .map_err(|e| usage(e.to_string()))?,
                (None, Some(s)) => DatasetConfig::new(system, dt, s, counts, a.seed),
                _ => return Err(usage("give exactly one of --duration or --steps")),
            };
            config.substeps = a.substeps;
            let ds = generate_dataset(&config).context("simulating")?;
            (ds, a.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name)))
        }
    };
    save_dataset(&ds, &out).with_context(|| format!("writing {}", out.display()))?;
    record::save(&out.join(RUN_FILE), cmd, json!({ "dataset": ds.meta }))?;
    println!("{}", summary(&ds));
    println!("wrote {}", out.display());
    Ok(())
}
