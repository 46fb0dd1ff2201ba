//! Python bindings. Vectors and matrices cross the boundary as plain lists
//! (matrices as lists of rows).

use std::path::PathBuf;

use koopflow::continuous::{self, ContinuousOperator};
use koopflow::eval::{self, EvalSpec, LyapunovConfig, Method, OdeFlow};
use koopflow::koopman::{self, KoopmanModel, TrainConfig};
use koopflow::numlin::{self, RealMatrix};
use koopflow::systems::{self, OdeSystem, SplitCounts, DEFAULT_SUBSTEPS};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

type Rows = Vec<Vec<f64>>;

fn runtime<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn value<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_rows(m: &RealMatrix) -> Rows {
    m.as_slice().chunks(m.cols()).map(<[f64]>::to_vec).collect()
}

fn from_rows(rows: &Rows) -> PyResult<RealMatrix> {
    RealMatrix::from_rows(rows).map_err(value)
}

fn system(name: &str) -> PyResult<OdeSystem> {
    OdeSystem::from_name(name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown system {name:?}")))
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A trained (or freshly initialised) autoencoder with its Koopman matrix.
#[pyclass(name = "Model", module = "koopflow_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: KoopmanModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (n, d, hidden, seed = 0))]
    fn init(n: usize, d: usize, hidden: Vec<usize>, seed: u64) -> PyResult<Self> {
        let inner = KoopmanModel::init(n, d, &hidden, seed).map_err(value)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = koopman::load_checkpoint(&path).map_err(runtime)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        koopman::save_checkpoint(&self.inner, &path).map_err(runtime)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn k(&self) -> Rows {
        to_rows(&self.inner.k)
    }

    fn orth_defect(&self) -> f64 {
        numlin::orth_defect(&self.inner.k)
    }

    fn encode(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.encode(&x).map_err(value)
    }

    fn decode(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.decode(&z).map_err(value)
    }

    /// `ψ(K^steps φ(x))`.
    fn predict_discrete(&self, x: Vec<f64>, steps: usize) -> PyResult<Vec<f64>> {
        self.inner.predict_discrete(&x, steps).map_err(runtime)
    }

    fn __repr__(&self) -> String {
        format!("Model(n={}, d={}, params={})", self.inner.n(), self.inner.d(), self.inner.param_count())
    }
}

/// The generator `D = log K` together with the step it was trained at.
#[pyclass(name = "Generator", module = "koopflow_py", skip_from_py_object)]
#[derive(Clone)]
struct PyGenerator {
    inner: ContinuousOperator,
}

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    fn extract(model: &PyModel, source_dt: f64) -> PyResult<Self> {
        let inner = continuous::extract_generator(&model.inner, source_dt).map_err(runtime)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = ContinuousOperator::load(&path).map_err(runtime)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(runtime)
    }

    #[getter]
    fn matrix(&self) -> Rows {
        to_rows(&self.inner.generator)
    }

    #[getter]
    fn source_dt(&self) -> f64 {
        self.inner.source_dt
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }

    /// Eigenvalues of `K` as Python complex numbers.
    #[getter]
    fn eigenvalues(&self) -> Vec<Complex64> {
        self.inner.eigenvalues.clone()
    }

    /// `exp((t / source_dt)·D)`.
    fn propagator(&self, t: f64) -> PyResult<Rows> {
        Ok(to_rows(&self.inner.propagator(t).map_err(value)?))
    }

    fn matches(&self, model: &PyModel) -> bool {
        self.inner.matches(&model.inner)
    }
}

/// Decoded states at each requested time, one row per time.
#[pyfunction]
fn predict_continuous(
    model: &PyModel,
    generator: &PyGenerator,
    x0: Vec<f64>,
    times: Vec<f64>,
) -> PyResult<Rows> {
    let p = continuous::predict_continuous(&model.inner, &generator.inner, &x0, &times)
        .map_err(runtime)?;
    Ok(p.states.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Integrates a benchmark system; returns `(times, states)`.
#[pyfunction]
#[pyo3(signature = (name, x0, dt, steps, substeps = DEFAULT_SUBSTEPS))]
fn simulate(name: &str, x0: Vec<f64>, dt: f64, steps: usize, substeps: usize) -> PyResult<(Vec<f64>, Rows)> {
    let t = systems::simulate(&system(name)?, &x0, dt, steps, substeps).map_err(value)?;
    let rows = (0..t.len()).map(|k| t.row(k).to_vec()).collect();
    Ok((t.times(), rows))
}

/// Simulates a dataset and writes it to `out`.
#[pyfunction]
#[pyo3(signature = (name, dt, steps, out, train = 100, val = 25, test = 10, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    name: &str,
    dt: f64,
    steps: usize,
    out: PathBuf,
    train: usize,
    val: usize,
    test: usize,
    seed: u64,
) -> PyResult<()> {
    let counts = SplitCounts { train, val, test };
    let config = systems::DatasetConfig::new(system(name)?, dt, steps, counts, seed);
    let ds = systems::generate_dataset(&config).map_err(runtime)?;
    systems::save_dataset(&ds, &out).map_err(runtime)
}

/// Trains on a dataset directory. `config` is a JSON TrainConfig; missing
/// fields take their defaults.
#[pyfunction]
#[pyo3(signature = (data, config = None))]
fn train(py: Python<'_>, data: PathBuf, config: Option<&str>) -> PyResult<PyModel> {
    let config: TrainConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(value)?,
        None => TrainConfig::default(),
    };
    let ds = systems::load_dataset(&data).map_err(runtime)?;
    let (inner, _) = py
        .detach(|| koopman::train_two_stage(&ds, &config))
        .map_err(runtime)?;
    Ok(PyModel { inner })
}

/// Scores a model on a dataset's test split; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (model, data, method, source_dt, eval_dt = None, generator = None))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &PyModel,
    data: PathBuf,
    method: &str,
    source_dt: f64,
    eval_dt: Option<f64>,
    generator: Option<&PyGenerator>,
) -> PyResult<Bound<'py, PyAny>> {
    let method: Method = method.parse().map_err(PyValueError::new_err)?;
    let ds = systems::load_dataset(&data).map_err(runtime)?;
    let spec = EvalSpec {
        method,
        eval_dt: eval_dt.unwrap_or(ds.meta.dt),
        source_dt,
        generator: generator.map(|g| &g.inner),
        model_id: "python".into(),
        dataset_id: data.display().to_string(),
    };
    let report = py
        .detach(|| eval::evaluate_model(&model.inner, &ds, &spec))
        .map_err(runtime)?;
    json_to_py(py, &serde_json::to_string(&report).map_err(runtime)?)
}

/// Lyapunov exponents of a benchmark system, sorted descending.
#[pyfunction]
#[pyo3(signature = (name, x0, steps = 100_000, dt = 0.01))]
fn lyapunov_true(py: Python<'_>, name: &str, x0: Vec<f64>, steps: usize, dt: f64) -> PyResult<Vec<f64>> {
    let mut config = LyapunovConfig::with_steps(steps);
    config.dt = dt;
    let flow = OdeFlow::new(system(name)?, &config);
    let r = py
        .detach(|| eval::lyapunov_spectrum(&flow, &x0, &config))
        .map_err(runtime)?;
    Ok(r.exponents)
}

/// Principal real logarithm of a square matrix.
#[pyfunction]
fn matrix_log(k: Rows) -> PyResult<Rows> {
    let decomp = numlin::eig(&from_rows(&k)?).map_err(value)?;
    Ok(to_rows(&numlin::principal_log(&decomp).map_err(value)?))
}

/// `exp(t·D)`.
#[pyfunction]
#[pyo3(signature = (d, t = 1.0))]
fn matrix_exp(d: Rows, t: f64) -> PyResult<Rows> {
    Ok(to_rows(&numlin::matrix_exp(&from_rows(&d)?, t).map_err(value)?))
}

#[pymodule]
fn koopflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyGenerator>()?;
    m.add_function(wrap_pyfunction!(predict_continuous, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_true, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_log, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_exp, m)?)?;
    Ok(())
}
