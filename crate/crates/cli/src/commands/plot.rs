use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{create_dir, require_path, RUN_FILE};
use crate::svg::{Chart, Series};
use crate::{record, usage, Command};

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PlotArgs {
    #[command(subcommand)]
    pub kind: PlotKind,
    /// Output directory for the SVG files.
    #[arg(long, global = true, default_value = "runs/plots")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    /// Each component against time, truth solid and prediction dashed;
    /// one SVG per component.
    Overlay {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Error curves (`t,mse` CSVs), one line per file.
    Error {
        #[arg(long, required = true)]
        curve: Vec<PathBuf>,
        #[arg(long)]
        log10: bool,
    },
    /// Phase portrait: one component against another.
    Phase {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        /// Zero-based component indices, e.g. 0,2 for x–z.
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1])]
        axes: Vec<usize>,
    },
}

/// A numeric CSV with a header; `t` is the first column.
struct Table {
    header: Vec<String>,
    columns: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> anyhow::Result<Table> {
    require_path(path, "CSV")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| anyhow::anyhow!("{}: empty file", path.display()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    if header.len() < 2 {
        anyhow::bail!("{}: need a time column and at least one value column", path.display());
    }
    let mut columns = vec![Vec::new(); header.len()];
    for (i, line) in lines.enumerate() {
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != header.len() {
            anyhow::bail!(
                "{} line {}: expected {} fields, found {}",
                path.display(),
                i + 2,
                header.len(),
                vals.len()
            );
        }
        for (col, v) in columns.iter_mut().zip(vals) {
            let x: f64 = v
                .trim()
                .parse()
                .with_context(|| format!("{} line {}: {v:?}", path.display(), i + 2))?;
            col.push(x);
        }
    }
    Ok(Table { header, columns })
}

fn label(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("series")
        .to_string()
}

fn write_svg(path: &Path, chart: &Chart) -> anyhow::Result<()> {
    std::fs::write(path, chart.render()).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn points(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    x.iter().copied().zip(y.iter().copied()).collect()
}

pub fn plot(a: &PlotArgs, cmd: &Command) -> anyhow::Result<()> {
    create_dir(&a.out)?;
    let mut written = Vec::new();
    match &a.kind {
        PlotKind::Overlay { truth, pred } => {
            let t = read_table(truth)?;
            let p = pred.as_deref().map(read_table).transpose()?;
            if let Some(p) = &p {
                if p.header.len() != t.header.len() {
                    return Err(usage("truth and prediction have different component counts"));
                }
            }
            for c in 1..t.header.len() {
                let mut series = vec![Series {
                    label: "truth".into(),
                    points: points(&t.columns[0], &t.columns[c]),
                    dashed: false,
                }];
                if let Some(p) = &p {
                    series.push(Series {
                        label: "prediction".into(),
                        points: points(&p.columns[0], &p.columns[c]),
                        dashed: true,
                    });
                }
                let name = format!("component_{}.svg", c - 1);
                write_svg(
                    &a.out.join(&name),
                    &Chart {
                        title: format!("component {}", t.header[c]),
                        x_label: "t".into(),
                        y_label: t.header[c].clone(),
                        log10_y: false,
                        series,
                    },
                )?;
                written.push(name);
            }
        }
        PlotKind::Error { curve, log10 } => {
            let mut series = Vec::new();
            for path in curve {
                let t = read_table(path)?;
                series.push(Series {
                    label: label(path),
                    points: points(&t.columns[0], &t.columns[1]),
                    dashed: false,
                });
            }
            let name = "error.svg".to_string();
            write_svg(
                &a.out.join(&name),
                &Chart {
                    title: "squared error".into(),
                    x_label: "t".into(),
                    y_label: "MSE".into(),
                    log10_y: *log10,
                    series,
                },
            )?;
            written.push(name);
        }
        PlotKind::Phase { input, axes } => {
            let [i, j] = axes[..] else {
                return Err(usage("--axes takes exactly two component indices"));
            };
            let mut series = Vec::new();
            let mut names = None;
            for path in input {
                let t = read_table(path)?;
                let n = t.header.len() - 1;
                if i >= n || j >= n {
                    return Err(usage(format!("{}: {n} components, --axes {i},{j}", path.display())));
                }
                names.get_or_insert((t.header[i + 1].clone(), t.header[j + 1].clone()));
                series.push(Series {
                    label: label(path),
                    points: points(&t.columns[i + 1], &t.columns[j + 1]),
                    dashed: false,
                });
            }
            let (xn, yn) = names.unwrap_or_default();
            let name = format!("phase_{i}_{j}.svg");
            write_svg(
                &a.out.join(&name),
                &Chart {
                    title: format!("{xn}–{yn} portrait"),
                    x_label: xn,
                    y_label: yn,
                    log10_y: false,
                    series,
                },
            )?;
            written.push(name);
        }
    }
    record::save(&a.out.join(RUN_FILE), cmd, json!({ "files": written }))?;
    Ok(())
}
