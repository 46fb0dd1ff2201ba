mod data;
mod evaluate;
mod lyap;
mod plot;
mod train;

use std::path::{Path, PathBuf};

use anyhow::Context;
use koopflow::continuous::{extract_generator, ContinuousOperator};
use koopflow::koopman::{load_checkpoint, KoopmanModel};
use koopflow::systems::{load_dataset, Dataset};

use crate::usage;

pub use data::{generate, GenerateArgs};
pub use evaluate::{eval, upsample, EvalArgs, UpsampleArgs};
pub use lyap::{lyapunov, LyapunovArgs};
pub use plot::{plot, PlotArgs};
pub use train::{extract, train, ExtractArgs, TrainArgs};

pub const GENERATOR_FILE: &str = "generator.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RUN_FILE: &str = "run.json";

fn require_path(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn open_dataset(dir: &Path) -> anyhow::Result<Dataset> {
    require_path(&dir.join("meta.json"), "dataset metadata")?;
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn open_model(path: &Path) -> anyhow::Result<KoopmanModel> {
    require_path(path, "checkpoint")?;
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

/// The generator to use with `model`: an explicit file, else the
/// `generator.json` next to the checkpoint, else a fresh extraction at
/// `source_dt`. A cached generator must match the checkpoint's `K`.
fn resolve_generator(
    model: &KoopmanModel,
    checkpoint: &Path,
    explicit: Option<&Path>,
    source_dt: Option<f64>,
) -> anyhow::Result<ContinuousOperator> {
    let cached = explicit
        .map(Path::to_path_buf)
        .or_else(|| Some(sibling(checkpoint, GENERATOR_FILE)).filter(|p| p.exists()));
    if let Some(path) = cached {
        require_path(&path, "generator")?;
        let gen = ContinuousOperator::load(&path)
            .with_context(|| format!("loading generator {}", path.display()))?;
        if !gen.matches(model) {
            anyhow::bail!(
                "generator {} was extracted from a different K than {}",
                path.display(),
                checkpoint.display()
            );
        }
        if let Some(dt) = source_dt {
            if (dt - gen.source_dt).abs() > 1e-12 * dt {
                return Err(usage(format!(
                    "--source-dt {dt} disagrees with the generator's source dt {}",
                    gen.source_dt
                )));
            }
        }
        return Ok(gen);
    }
    let dt = source_dt.ok_or_else(|| {
        usage("no generator.json next to the checkpoint; pass --source-dt or --generator")
    })?;
    extract_generator(model, dt).context("extracting the generator")
}

/// Training step of a model: `--source-dt`, else the cached generator's.
fn resolve_source_dt(
    checkpoint: &Path,
    explicit_generator: Option<&Path>,
    source_dt: Option<f64>,
) -> anyhow::Result<f64> {
    if let Some(dt) = source_dt {
        return Ok(dt);
    }
    let path = explicit_generator
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sibling(checkpoint, GENERATOR_FILE));
    if path.exists() {
        let gen = ContinuousOperator::load(&path)
            .with_context(|| format!("loading generator {}", path.display()))?;
        return Ok(gen.source_dt);
    }
    let run = sibling(checkpoint, RUN_FILE);
    if let Some(dt) = crate::record::resolved_field(&run, "source_dt").and_then(|v| v.as_f64()) {
        return Ok(dt);
    }
    Err(usage("cannot tell the model's training step; pass --source-dt"))
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect()
}
