use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use koopflow::eval::{
    lyapunov_spectrum, JacobianMode, LearnedFlow, LinearFlow, LyapunovConfig, OdeFlow,
    TangentFlow,
};
use koopflow::numlin::RealMatrix;
use koopflow::systems::OdeSystem;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{create_dir, open_dataset, open_model, parse_floats, resolve_generator, RUN_FILE};
use crate::{record, usage, Command};

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovArgs {
    /// true:<system>, model:<checkpoint> or linear:<a11,a12;a21,a22> (rows split by ';').
    #[arg(long)]
    pub flow: String,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Steps run before stretching factors are recorded [default: steps/10].
    #[arg(long)]
    pub discard: Option<usize>,
    #[arg(long)]
    pub renorm_interval: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub jacobian_mode: Option<JacobianMode>,
    #[arg(long)]
    pub fd_step: Option<f64>,
    /// RK4 substeps per step of a true flow.
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "x0_data")]
    pub x0: Option<Vec<f64>>,
    /// Start from the first sample of this dataset's first test trajectory.
    #[arg(long)]
    pub x0_data: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub source_dt: Option<f64>,
    #[arg(long, default_value = "runs/lyapunov")]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> Result<JacobianMode, String> {
    match s {
        "analytic-rhs" => Ok(JacobianMode::AnalyticRhs),
        "finite-difference-of-flow" => Ok(JacobianMode::FiniteDifferenceOfFlow),
        _ => Err(format!("{s:?}: use analytic-rhs or finite-difference-of-flow")),
    }
}

enum Flow {
    True(OdeSystem),
    Model(PathBuf),
    Linear(RealMatrix),
}

fn parse_flow(spec: &str) -> anyhow::Result<Flow> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| usage(format!("--flow {spec:?}: expected <kind>:<value>")))?;
    match kind {
        "true" => OdeSystem::from_name(rest)
            .map(Flow::True)
            .ok_or_else(|| usage(format!("unknown system {rest:?}"))),
        "model" => Ok(Flow::Model(PathBuf::from(rest))),
        "linear" => {
            let rows: Vec<Vec<f64>> = rest
                .split(';')
                .map(parse_floats)
                .collect::<Result<_, _>>()
                .map_err(|e| usage(format!("--flow linear: {e}")))?;
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(usage("--flow linear: the matrix must be square"));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            Ok(Flow::Linear(RealMatrix::from_vec(n, n, flat)?))
        }
        _ => Err(usage(format!("--flow kind {kind:?}: use true, model or linear"))),
    }
}

fn default_x0(system: &OdeSystem) -> Vec<f64> {
    match system.state_dim() {
        2 => vec![1.0, 0.0],
        _ => vec![1.0, 1.0, 1.0],
    }
}

impl LyapunovArgs {
    fn config(&self) -> anyhow::Result<LyapunovConfig> {
        let mut c = match self.steps {
            Some(n) => LyapunovConfig::with_steps(n),
            None => LyapunovConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(dt, discard, renorm_interval, jacobian_mode, fd_step, substeps);
        c.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }

    fn x0(&self, fallback: Option<Vec<f64>>) -> anyhow::Result<Vec<f64>> {
        if let Some(x) = &self.x0 {
            return Ok(x.clone());
        }
        if let Some(dir) = &self.x0_data {
            let ds = open_dataset(dir)?;
            let first = ds
                .test
                .first()
                .ok_or_else(|| usage(format!("{} has no test trajectories", dir.display())))?;
            return Ok(first.row(0).to_vec());
        }
        fallback.ok_or_else(|| usage("give --x0 or --x0-data for this flow"))
    }
}

pub fn lyapunov(a: &LyapunovArgs, cmd: &Command) -> anyhow::Result<()> {
    let config = a.config()?;
    let flow = parse_flow(&a.flow)?;
    // Model flows borrow the model, so it has to outlive the flow object.
    let model = match &flow {
        Flow::Model(ckpt) => Some(open_model(ckpt)?),
        _ => None,
    };
    let (tangent, x0): (Box<dyn TangentFlow + '_>, Vec<f64>) = match (&flow, &model) {
        (Flow::True(system), _) => (
            Box::new(OdeFlow::new(*system, &config)),
            a.x0(Some(default_x0(system)))?,
        ),
        (Flow::Linear(m), _) => {
            let n = m.rows();
            let mut x = vec![0.0; n];
            x[0] = 1.0;
            (Box::new(LinearFlow::new(m, &config)?), a.x0(Some(x))?)
        }
        (Flow::Model(ckpt), Some(model)) => {
            let gen = resolve_generator(model, ckpt, a.generator.as_deref(), a.source_dt)?;
            (Box::new(LearnedFlow::new(model, &gen, &config)?), a.x0(None)?)
        }
        (Flow::Model(_), None) => unreachable!(),
    };
    if x0.len() != tangent.dim() {
        return Err(usage(format!(
            "initial state has {} components, the flow has {}",
            x0.len(),
            tangent.dim()
        )));
    }
    let result = lyapunov_spectrum(tangent.as_ref(), &x0, &config).context("estimating exponents")?;

    create_dir(&a.out)?;
    let doc = json!({ "flow": a.flow, "x0": x0, "config": config, "result": result });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(a.out.join("lyapunov.json"), text)?;
    record::save(&a.out.join(RUN_FILE), cmd, json!({ "config": config, "x0": x0 }))?;
    let shown: Vec<String> = result.exponents.iter().map(|l| format!("{l:.4}")).collect();
    println!("exponents: {}", shown.join(", "));
    println!("sum: {:.4}", result.sum);
    println!("wrote {}", a.out.display());
    Ok(())
}
