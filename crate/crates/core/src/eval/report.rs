use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalSpec, Method};
use crate::numlin::{orth_defect, RealMatrix};
use crate::systems::format_f64;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub modulus: f64,
    pub argument: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    /// Position in the test split.
    pub index: usize,
    pub mse: Option<f64>,
    pub error: Option<String>,
    pub curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub model_id: String,
    pub dataset_id: String,
    pub method: Method,
    pub eval_dt: f64,
    pub source_dt: f64,
    pub trajectories: Vec<TrajectoryResult>,
    /// Mean over every (trajectory, timestep, component) of the successful
    /// forecasts; `None` when there are none.
    pub aggregate_mse: Option<f64>,
    pub failures: usize,
    pub curve_t: Vec<f64>,
    /// Per-timestep error averaged over the successful trajectories.
    pub curve_mse: Vec<f64>,
    pub spectrum: Vec<SpectrumEntry>,
    pub orth_defect: f64,
    pub lyapunov: Option<Vec<f64>>,
}

impl EvalReport {
    pub(crate) fn assemble(
        spec: &EvalSpec<'_>,
        trajectories: Vec<TrajectoryResult>,
        times: Vec<f64>,
        spectrum: Vec<SpectrumEntry>,
        k: &RealMatrix,
    ) -> Self {
        let ok: Vec<&TrajectoryResult> = trajectories.iter().filter(|t| t.mse.is_some()).collect();
        let mut sums = vec![0.0; times.len()];
        let mut counts = vec![0usize; times.len()];
        let (mut total, mut points) = (0.0, 0usize);
        for t in &ok {
            for (j, &e) in t.curve.iter().enumerate() {
                sums[j] += e;
                counts[j] += 1;
                total += e;
                points += 1;
            }
        }
        let curve_mse = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect();
        Self {
            format_version: REPORT_FORMAT_VERSION,
            model_id: spec.model_id.clone(),
            dataset_id: spec.dataset_id.clone(),
            method: spec.method,
            eval_dt: spec.eval_dt,
            source_dt: spec.source_dt,
            failures: trajectories.len() - ok.len(),
            aggregate_mse: (points > 0).then(|| total / points as f64),
            trajectories,
            curve_t: times,
            curve_mse,
            spectrum,
            orth_defect: orth_defect(k),
            lyapunov: None,
        }
    }

    pub fn mse_values(&self) -> Vec<f64> {
        self.trajectories.iter().filter_map(|t| t.mse).collect()
    }
}

pub fn emit_report(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport, EvalError> {
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if report.format_version != REPORT_FORMAT_VERSION {
        return Err(EvalError::InvalidConfig(format!(
            "unsupported report version {}",
            report.format_version
        )));
    }
    Ok(report)
}

fn curve_csv(t: &[f64], mse: &[f64]) -> String {
    let mut out = String::from("t,mse\n");
    for (t, e) in t.iter().zip(mse) {
        let _ = writeln!(out, "{},{}", format_f64(*t), format_f64(*e));
    }
    out
}

/// Writes the aggregate per-timestep curve as `t,mse` rows.
pub fn emit_curves(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, curve_csv(&report.curve_t, &report.curve_mse))?;
    Ok(())
}

/// One `traj_NNNN.csv` per successful trajectory in `dir`.
pub fn emit_trajectory_curves(report: &EvalReport, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    for t in report.trajectories.iter().filter(|t| t.mse.is_some()) {
        let path = dir.join(format!("traj_{:04}.csv", t.index));
        std::fs::write(path, curve_csv(&report.curve_t, &t.curve))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> EvalSpec<'static> {
        EvalSpec {
            method: Method::Continuous,
            eval_dt: 0.5,
            source_dt: 1.0,
            generator: None,
            model_id: "m".into(),
            dataset_id: "d".into(),
        }
    }

    fn result(index: usize, curve: Vec<f64>) -> TrajectoryResult {
        TrajectoryResult {
            index,
            mse: Some(curve.iter().sum::<f64>() / curve.len() as f64),
            error: None,
            curve,
        }
    }

    fn sample() -> EvalReport {
        let trajs = vec![
            result(0, vec![0.0, 1.0, 2.0]),
            TrajectoryResult {
                index: 1,
                mse: None,
                error: Some("diverged".into()),
                curve: vec![],
            },
            result(2, vec![1.0, 1.0, 4.0]),
        ];
        let spectrum = vec![SpectrumEntry {
            modulus: 1.0,
            argument: 0.0,
        }];
        EvalReport::assemble(
            &spec(),
            trajs,
            vec![0.0, 0.5, 1.0],
            spectrum,
            &RealMatrix::identity(1),
        )
    }

    #[test]
    fn aggregate_skips_failures() {
        let r = sample();
        assert_eq!(r.failures, 1);
        assert_eq!(r.aggregate_mse, Some(9.0 / 6.0));
        assert_eq!(r.curve_mse, vec![0.5, 1.0, 3.0]);
        assert_eq!(r.mse_values(), vec![1.0, 2.0]);
        let mean_of_curve = r.curve_mse.iter().sum::<f64>() / 3.0;
        assert!((mean_of_curve - r.aggregate_mse.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn empty_split_gives_null_aggregate() {
        let r = EvalReport::assemble(&spec(), vec![], vec![], vec![], &RealMatrix::identity(2));
        assert_eq!(r.aggregate_mse, None);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"aggregate_mse\":null"));
    }

    #[test]
    fn report_and_curves_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = sample();
        r.lyapunov = Some(vec![0.9, 0.0, -14.5]);
        let p = dir.path().join("report.json");
        emit_report(&r, &p).unwrap();
        assert_eq!(read_report(&p).unwrap(), r);

        let c = dir.path().join("curve.csv");
        emit_curves(&r, &c).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), r.curve_t.len() + 1);
        assert_eq!(lines[0], "t,mse");
        assert_eq!(lines[2], "5.0000000000000000e-1,1.0000000000000000e0");

        emit_trajectory_curves(&r, &dir.path().join("per")).unwrap();
        assert!(dir.path().join("per/traj_0000.csv").exists());
        assert!(!dir.path().join("per/traj_0001.csv").exists());
        assert!(dir.path().join("per/traj_0002.csv").exists());
    }
}
