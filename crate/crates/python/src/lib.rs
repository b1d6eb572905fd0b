//! Python bindings. Structured results cross the boundary as plain
//! dictionaries built from their JSON form.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;
use teh_core::config::PipelineConfig;
use teh_core::inference::{self, NullScheme};
use teh_core::{ErrorClass, TehError};

fn to_py(e: TehError) -> PyErr {
    match e.class() {
        ErrorClass::Numerical => PyArithmeticError::new_err(e.to_string()),
        ErrorClass::Config | ErrorClass::Data => PyValueError::new_err(e.to_string()),
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn scheme(name: &str) -> PyResult<NullScheme> {
    match name {
        "parametric" => Ok(NullScheme::Parametric),
        "permutation" => Ok(NullScheme::Permutation),
        other => Err(PyValueError::new_err(format!("unknown null scheme `{other}`"))),
    }
}

#[pyclass(module = "teh_screen", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Dataset {
    inner: teh_core::TrialDataset,
}

#[pymethods]
impl Dataset {
    /// `x` is row-major: one inner list per subject.
    #[new]
    #[pyo3(signature = (y, treatment, x, names=None))]
    fn new(
        y: Vec<f64>,
        treatment: Vec<f64>,
        x: Vec<Vec<f64>>,
        names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let n = y.len();
        let p = x.first().map_or(0, Vec::len);
        if x.len() != n || x.iter().any(|row| row.len() != p) {
            return Err(PyValueError::new_err("x must be an n-by-p list of rows"));
        }
        let xm = DMatrix::from_fn(n, p, |i, j| x[i][j]);
        let names = names.unwrap_or_else(|| (0..p).map(|j| format!("x{j}")).collect());
        let inner = teh_core::TrialDataset::new(
            DVector::from_vec(y),
            DVector::from_vec(treatment),
            xm,
            DMatrix::zeros(n, 0),
            names,
            Vec::new(),
        )
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, outcome="y", treatment="treatment", adjust=Vec::new()))]
    fn from_csv(path: &str, outcome: &str, treatment: &str, adjust: Vec<String>) -> PyResult<Self> {
        let inner = teh_core::load_csv(path, outcome, treatment, &adjust).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Draw the synthetic trial described by a config's `[generator]` table.
    #[staticmethod]
    #[pyo3(signature = (config, seed=None))]
    fn generate(config: &str, seed: Option<u64>) -> PyResult<Self> {
        let cfg = PipelineConfig::from_toml_str(config).map_err(to_py)?;
        let spec = cfg.generator().map_err(to_py)?;
        let spec = seed.map_or_else(|| spec.clone(), |s| spec.with_seed(s));
        let inner = teh_core::generate_trial(&spec).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn candidate_names(&self) -> Vec<String> {
        self.inner.candidate_names().to_vec()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().iter().copied().collect()
    }

    #[getter]
    fn treatment(&self) -> Vec<f64> {
        self.inner.treatment().iter().copied().collect()
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path, "y", "treatment").map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

#[pyclass(module = "teh_screen", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct ScreeningResult {
    inner: teh_core::ScreeningResult,
}

#[pymethods]
impl ScreeningResult {
    #[getter]
    fn ranking(&self) -> Vec<usize> {
        self.inner.ranking.clone()
    }

    #[getter]
    fn k_selected(&self) -> usize {
        self.inner.k_selected
    }

    #[getter]
    fn selected(&self) -> Vec<usize> {
        self.inner.selected_indices().to_vec()
    }

    fn with_k(&self, k: usize) -> Self {
        Self {
            inner: self.inner.with_k(k),
        }
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn trace_digest(&self) -> String {
        self.inner.trace_digest()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(py, &self.inner)
    }
}

#[pyclass(module = "teh_screen", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct NullDistribution {
    inner: teh_core::NullDistribution,
}

#[pymethods]
impl NullDistribution {
    #[getter]
    fn p_values(&self) -> Vec<f64> {
        self.inner.p_values.clone()
    }

    #[getter]
    fn reps(&self) -> usize {
        self.inner.reps
    }

    #[getter]
    fn failures(&self) -> usize {
        self.inner.failures
    }

    fn correct(&self, p_raw: f64) -> f64 {
        teh_core::correct_pvalue(p_raw, &self.inner)
    }
}

#[pyclass(module = "teh_screen", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct InteractionTest {
    inner: teh_core::InteractionTest,
}

#[pymethods]
impl InteractionTest {
    #[getter]
    fn statistic(&self) -> f64 {
        self.inner.statistic
    }

    #[getter]
    fn df(&self) -> usize {
        self.inner.df
    }

    #[getter]
    fn p_raw(&self) -> f64 {
        self.inner.p_raw
    }

    #[getter]
    fn p_corrected(&self) -> Option<f64> {
        self.inner.p_corrected
    }

    #[getter]
    fn standardized_differences(&self) -> Vec<Option<f64>> {
        self.inner.standardized_differences.clone()
    }

    #[getter]
    fn screening(&self) -> ScreeningResult {
        ScreeningResult {
            inner: self.inner.screening.clone(),
        }
    }

    fn corrected(&self, null: &NullDistribution) -> Self {
        Self {
            inner: self.inner.clone().corrected(&null.inner),
        }
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "InteractionTest(statistic={:.4}, df={}, p_raw={:.4})",
            self.inner.statistic, self.inner.df, self.inner.p_raw
        )
    }
}

/// A configured two-stage analysis, built from TOML text.
#[pyclass(module = "teh_screen", frozen)]
pub struct Pipeline {
    config: PipelineConfig,
}

#[pymethods]
impl Pipeline {
    #[new]
    fn new(config: &str) -> PyResult<Self> {
        let config = PipelineConfig::from_toml_str(config).map_err(to_py)?;
        Ok(Self { config })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn k_for(&self, n: usize) -> PyResult<usize> {
        self.config.pipeline().k_for(n).map_err(to_py)
    }

    #[pyo3(signature = (data, seed=None))]
    fn screen(&self, py: Python<'_>, data: &Dataset, seed: Option<u64>) -> PyResult<ScreeningResult> {
        let seed = seed.unwrap_or(self.config.seed);
        let pipeline = self.config.pipeline();
        let inner = py
            .detach(|| pipeline.screen(&data.inner, seed))
            .map_err(to_py)?;
        Ok(ScreeningResult { inner })
    }

    fn test(&self, data: &Dataset, screening: &ScreeningResult) -> PyResult<InteractionTest> {
        let inner = inference::test_interaction(&data.inner, self.config.family, &screening.inner)
            .map_err(to_py)?;
        Ok(InteractionTest { inner })
    }

    #[pyo3(signature = (data, seed=None))]
    fn run(&self, py: Python<'_>, data: &Dataset, seed: Option<u64>) -> PyResult<InteractionTest> {
        let seed = seed.unwrap_or(self.config.seed);
        let pipeline = self.config.pipeline();
        let inner = py
            .detach(|| pipeline.run(&data.inner, seed))
            .map_err(to_py)?;
        Ok(InteractionTest { inner })
    }

    #[pyo3(signature = (data, reps, seed=None, scheme="parametric"))]
    fn simulate_null(
        &self,
        py: Python<'_>,
        data: &Dataset,
        reps: usize,
        seed: Option<u64>,
        scheme: &str,
    ) -> PyResult<NullDistribution> {
        let seed = seed.unwrap_or(self.config.seed);
        let scheme = self::scheme(scheme)?;
        let pipeline = self.config.pipeline();
        let inner = py
            .detach(|| inference::simulate_null(&data.inner, &pipeline, scheme, reps, seed))
            .map_err(to_py)?;
        Ok(NullDistribution { inner })
    }

    /// Independence check on the config's synthetic null trial.
    #[pyo3(signature = (reps=None, seed=None))]
    fn validate_theorem(
        &self,
        py: Python<'_>,
        reps: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<Py<PyAny>> {
        let spec = self.config.generator().map_err(to_py)?.clone();
        let reps = reps.unwrap_or(self.config.theorem.reps);
        let seed = seed.unwrap_or(self.config.seed);
        let pipeline = self.config.pipeline();
        let report = py
            .detach(|| inference::validate_theorem1(&spec, &pipeline, reps, seed))
            .map_err(to_py)?;
        to_dict(py, &report)
    }

    /// Paired power study over the config's `[power]` methods.
    #[pyo3(signature = (reps=None, seed=None))]
    fn power_study(&self, py: Python<'_>, reps: Option<usize>, seed: Option<u64>) -> PyResult<Py<PyAny>> {
        let spec = self.config.generator().map_err(to_py)?.clone();
        let methods = self.config.power_pipelines().map_err(to_py)?;
        let power = self
            .config
            .power
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("config has no [power] section"))?;
        let reps = reps.unwrap_or(power.reps);
        let alpha = power.alpha;
        let seed = seed.unwrap_or(self.config.seed);
        let report = py
            .detach(|| inference::power_study(&spec, &methods, reps, seed, alpha))
            .map_err(to_py)?;
        to_dict(py, &report)
    }
}

#[pymodule]
fn teh_screen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", teh_core::VERSION)?;
    m.add_class::<Dataset>()?;
    m.add_class::<ScreeningResult>()?;
    m.add_class::<NullDistribution>()?;
    m.add_class::<InteractionTest>()?;
    m.add_class::<Pipeline>()?;
    Ok(())
}
