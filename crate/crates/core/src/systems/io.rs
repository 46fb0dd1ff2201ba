//! On-disk dataset layout:
//!
//! ```text
//! <dir>/meta.json
//! <dir>/{train,val,test}/traj_0000.csv
//! ```
//!
//! Each CSV has a `t,x1,...,xn` header and 17-significant-digit floats, which
//! round-trip 64-bit values exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, SystemError, Trajectory, DATASET_FORMAT_VERSION};

/// Scientific notation with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Serialize, Deserialize)]
struct SplitIcs {
    train: Vec<Vec<f64>>,
    val: Vec<Vec<f64>>,
    test: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    #[serde(flatten)]
    meta: DatasetMeta,
    trajectory_initial_conditions: SplitIcs,
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<(), SystemError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=traj.dim()).map(|i| format!("x{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (k, row) in traj.states.rows().into_iter().enumerate() {
        let mut line = format_f64(traj.time(k));
        for v in row {
            line.push(',');
            line.push_str(&format_f64(*v));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory CSV; `dt` is recovered from the first two timestamps
/// unless `dt_hint` is given.
pub fn read_trajectory_csv(
    path: &Path,
    dt_hint: Option<f64>,
    initial_condition: Vec<f64>,
) -> Result<Trajectory, SystemError> {
    let p = path.display().to_string();
    let bad = |msg: String| SystemError::Parse {
        path: p.clone(),
        msg,
    };
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"t") || cols.len() < 2 {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let n = cols.len() - 1;
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("line {}: {e}", lineno + 2)))?;
        if vals.len() != n + 1 {
            return Err(bad(format!(
                "line {}: expected {} fields",
                lineno + 2,
                n + 1
            )));
        }
        times.push(vals[0]);
        data.extend_from_slice(&vals[1..]);
    }
    if times.len() < 2 {
        return Err(bad("fewer than 2 samples".into()));
    }
    let dt = dt_hint.unwrap_or(times[1] - times[0]);
    let states = Array2::from_shape_vec((times.len(), n), data).map_err(|e| bad(e.to_string()))?;
    Trajectory::new(times[0], dt, states, initial_condition)
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), SystemError> {
    fs::create_dir_all(dir)?;
    let ics = |v: &[Trajectory]| v.iter().map(|t| t.initial_condition.clone()).collect();
    let meta = MetaFile {
        meta: ds.meta.clone(),
        trajectory_initial_conditions: SplitIcs {
            train: ics(&ds.train),
            val: ics(&ds.val),
            test: ics(&ds.test),
        },
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    fs::write(dir.join("meta.json"), json)?;
    for (name, split) in ds.splits() {
        let sub = dir.join(name);
        fs::create_dir_all(&sub)?;
        for (i, traj) in split.iter().enumerate() {
            write_trajectory_csv(traj, &sub.join(format!("traj_{i:04}.csv")))?;
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, SystemError> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path)?;
    let file: MetaFile = serde_json::from_str(&text)?;
    let meta = file.meta;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(SystemError::Parse {
            path: meta_path.display().to_string(),
            msg: format!("unsupported format version {}", meta.format_version),
        });
    }
    let load_split = |name: &str, count: usize, ics: Vec<Vec<f64>>| {
        if ics.len() != count {
            return Err(SystemError::Parse {
                path: meta_path.display().to_string(),
                msg: format!(
                    "{name}: {count} trajectories but {} initial conditions",
                    ics.len()
                ),
            });
        }
        ics.into_iter()
            .enumerate()
            .map(|(i, ic)| {
                let path = dir.join(name).join(format!("traj_{i:04}.csv"));
                let t = read_trajectory_csv(&path, Some(meta.dt), ic)?;
                if t.len() != meta.samples || t.dim() != meta.system.obs_dim() {
                    return Err(SystemError::Parse {
                        path: path.display().to_string(),
                        msg: format!(
                            "expected {}x{} samples, found {}x{}",
                            meta.samples,
                            meta.system.obs_dim(),
                            t.len(),
                            t.dim()
                        ),
                    });
                }
                Ok(t)
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let ics = file.trajectory_initial_conditions;
    Ok(Dataset {
        train: load_split("train", meta.counts.train, ics.train)?,
        val: load_split("val", meta.counts.val, ics.val)?,
        test: load_split("test", meta.counts.test, ics.test)?,
        meta,
    })
}
