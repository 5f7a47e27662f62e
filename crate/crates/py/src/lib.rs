//! Python bindings. Matrices cross the boundary as lists of rows; iterate
//! blocks (`x0`, model vectors) likewise.

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use expograph::consensus::{self, WeightSchedule};
use expograph::optimizer::{self, Algorithm, StepSize, TrainConfig, TrainTrace};
use expograph::spectral::{self, Regime, SpectrumReport};
use expograph::synthdata::{self, Heterogeneity, NodeDataset};
use expograph::topology::{self, validate_doubly_stochastic, STOCHASTIC_TOL};
use expograph::{Error, TopologyKind, TopologySpec, WeightMatrix};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidSize(_)
        | Error::InvalidAdjacency(_)
        | Error::Domain(_)
        | Error::Parse(_)
        | Error::Unsupported(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn rows_to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Doubly-stochastic mixing matrix.
#[pyclass(name = "WeightMatrix", module = "expograph_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyWeightMatrix {
    inner: WeightMatrix,
}

#[pymethods]
impl PyWeightMatrix {
    /// Validates double stochasticity of a square list of rows.
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = WeightMatrix::from_entries(rows_to_array(rows)?).map_err(to_py)?;
        if !validate_doubly_stochastic(&inner, STOCHASTIC_TOL) {
            return Err(PyValueError::new_err("matrix is not doubly stochastic"));
        }
        Ok(PyWeightMatrix { inner })
    }

    /// Realization `k` of a family (`ring`, `grid`, `static-exp`, ...).
    #[staticmethod]
    #[pyo3(signature = (family, n, seed = 0, k = 0))]
    fn family(family: &str, n: usize, seed: u64, k: u64) -> PyResult<Self> {
        let kind: TopologyKind = parse(family)?;
        let spec = TopologySpec::new(kind, n).with_seed(seed);
        let mut r = expograph::rng::stream(seed, expograph::rng::domain::TOPOLOGY, k);
        let inner = topology::build_family(&spec, k, &mut r).map_err(to_py)?;
        Ok(PyWeightMatrix { inner })
    }

    #[staticmethod]
    fn static_exponential(n: usize) -> PyResult<Self> {
        Ok(PyWeightMatrix {
            inner: topology::build_static_exponential(n).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn one_peer_exponential(n: usize, k: u64) -> PyResult<Self> {
        Ok(PyWeightMatrix {
            inner: topology::build_one_peer_exponential(n, k).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.inner.n();
        if i >= n || j >= n {
            return Err(PyValueError::new_err(format!("index ({i}, {j}) out of range for n = {n}")));
        }
        Ok(self.inner.get(i, j))
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        array_to_rows(self.inner.entries())
    }

    #[pyo3(signature = (tol = STOCHASTIC_TOL))]
    fn is_doubly_stochastic(&self, tol: f64) -> bool {
        validate_doubly_stochastic(&self.inner, tol)
    }

    fn is_circulant(&self) -> bool {
        self.inner.is_circulant(spectral::CIRCULANT_TOL)
    }

    fn max_out_degree(&self) -> usize {
        self.inner.max_out_degree()
    }

    /// `self @ other`.
    fn compose(&self, other: &PyWeightMatrix) -> PyWeightMatrix {
        PyWeightMatrix {
            inner: self.inner.compose(&other.inner),
        }
    }

    fn eigenvalues(&self) -> PyResult<Vec<num_complex::Complex64>> {
        spectral::eigenvalues(&self.inner).map_err(to_py)
    }

    fn spectrum(&self) -> PyResult<PySpectrum> {
        Ok(PySpectrum {
            inner: spectral::full_spectrum(&self.inner).map_err(to_py)?,
        })
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(PyWeightMatrix {
            inner: WeightMatrix::read_csv(text.as_bytes()).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("WeightMatrix(n={})", self.inner.n())
    }
}

#[pyclass(name = "Spectrum", module = "expograph_py", frozen)]
pub struct PySpectrum {
    inner: SpectrumReport,
}

#[pymethods]
impl PySpectrum {
    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }
    #[getter]
    fn gap(&self) -> f64 {
        self.inner.gap
    }
    #[getter]
    fn deviation_norm(&self) -> f64 {
        self.inner.deviation_norm
    }
    #[getter]
    fn predicted_gap(&self) -> Option<f64> {
        self.inner.predicted_gap
    }
    #[getter]
    fn eigenvalues(&self) -> Vec<num_complex::Complex64> {
        self.inner.eigenvalues.clone()
    }

    fn __repr__(&self) -> String {
        format!("Spectrum(n={}, rho={}, gap={})", self.inner.n, self.inner.rho, self.inner.gap)
    }
}

/// Per-iteration weight matrices. Tokens: `cyclic`, `permutation`,
/// `uniform`, `bipartite`, `static:<family>` or a family name.
#[pyclass(name = "WeightSchedule", module = "expograph_py", frozen)]
pub struct PyWeightSchedule {
    inner: WeightSchedule,
}

#[pymethods]
impl PyWeightSchedule {
    #[new]
    #[pyo3(signature = (token, n, seed = 0))]
    fn new(token: &str, n: usize, seed: u64) -> PyResult<Self> {
        Ok(PyWeightSchedule {
            inner: WeightSchedule::from_token(token, n, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn tau(&self) -> u32 {
        self.inner.tau()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.series_name()
    }

    fn matrix(&self, k: u64) -> PyWeightMatrix {
        PyWeightMatrix {
            inner: self.inner.next_matrix(k),
        }
    }

    /// Max-abs deviation of `W(start+len-1)...W(start)` from `11^T/n`.
    fn product_exactness(&self, start: u64, len: u64) -> f64 {
        consensus::product_exactness(&self.inner, start, len)
    }

    #[pyo3(signature = (tol = consensus::EXACT_TOL, cap = None))]
    fn min_exact_steps(&self, tol: f64, cap: Option<u64>) -> Option<u64> {
        let cap = cap.unwrap_or_else(|| consensus::default_exact_cap(self.inner.n()));
        consensus::min_exact_steps(&self.inner, tol, cap)
    }

    /// Residue after each of `steps` mixing rounds applied to `x0` (rows are nodes).
    fn residue_decay(&self, py: Python<'_>, x0: Vec<Vec<f64>>, steps: usize) -> PyResult<Vec<f64>> {
        let x0 = rows_to_array(x0)?;
        py.detach(|| consensus::residue_decay(&self.inner, &x0, steps))
            .map(|s| s.values)
            .map_err(to_py)
    }

    fn product_norm_series(&self, py: Python<'_>, steps: usize) -> PyResult<Vec<f64>> {
        py.detach(|| consensus::product_norm_series(&self.inner, steps)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("WeightSchedule({:?}, n={})", self.inner.series_name(), self.inner.n())
    }
}

/// Synthetic per-node logistic-regression data.
#[pyclass(name = "Dataset", module = "expograph_py", frozen)]
pub struct PyDataset {
    inner: NodeDataset,
}

#[pymethods]
impl PyDataset {
    /// Generates data and solves for the global minimizer.
    #[staticmethod]
    #[pyo3(signature = (n, m, d = 10, heterogeneity = "non-iid", seed = 0))]
    fn generate(py: Python<'_>, n: usize, m: usize, d: usize, heterogeneity: &str, seed: u64) -> PyResult<Self> {
        let h: Heterogeneity = parse(heterogeneity)?;
        let inner = py
            .detach(|| synthdata::generate_logistic(n, m, d, h, seed)?.with_reference(synthdata::REFERENCE_TOL))
            .map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let f = std::fs::File::open(path).map_err(|e| to_py(e.into()))?;
        Ok(PyDataset {
            inner: NodeDataset::read_from(std::io::BufReader::new(f)).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(|e| to_py(e.into()))?;
        self.inner.write_to(std::io::BufWriter::new(f)).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }
    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }
    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }
    #[getter]
    fn x_star(&self) -> Option<Vec<f64>> {
        self.inner.x_star.clone()
    }

    fn loss(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check(&x)?;
        Ok(synthdata::global_loss(&self.inner, &x))
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&x)?;
        Ok(synthdata::global_gradient(&self.inner, &x))
    }

    fn local_gradient(&self, node: usize, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&x)?;
        if node >= self.inner.n {
            return Err(PyValueError::new_err(format!("node {node} out of range")));
        }
        Ok(synthdata::local_full_gradient(&self.inner, node, &x))
    }
}

impl PyDataset {
    fn check(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.inner.d {
            return Err(PyValueError::new_err(format!("expected {} coordinates, got {}", self.inner.d, x.len())));
        }
        Ok(())
    }
}

/// Trial-averaged training metrics.
#[pyclass(name = "Trace", module = "expograph_py", frozen)]
pub struct PyTrace {
    inner: TrainTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn k(&self) -> Vec<u64> {
        self.inner.records.iter().map(|r| r.k).collect()
    }
    #[getter]
    fn mse(&self) -> Vec<f64> {
        self.inner.mse()
    }
    #[getter]
    fn grad_norm(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.grad_norm).collect()
    }
    #[getter]
    fn consensus(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.consensus).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Runs `trials` seeded trials of `algorithm` over `schedule` and averages them.
#[pyfunction]
#[pyo3(signature = (
    dataset, schedule, algorithm = "dmsgd", gamma = 0.2, beta = 0.8, iterations = 1000,
    batch_size = 1, trials = 1, seed = 0, record_every = 1, gamma_period = 0, gamma_factor = 0.5
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    schedule: &PyWeightSchedule,
    algorithm: &str,
    gamma: f64,
    beta: f64,
    iterations: u64,
    batch_size: usize,
    trials: usize,
    seed: u64,
    record_every: u64,
    gamma_period: u64,
    gamma_factor: f64,
) -> PyResult<PyTrace> {
    let algorithm: Algorithm = parse(algorithm)?;
    let gamma = if gamma_period == 0 {
        StepSize::constant(gamma)
    } else {
        StepSize::stepped(gamma, gamma_factor, gamma_period, iterations)
    };
    let cfg = TrainConfig {
        n: schedule.inner.n(),
        d: dataset.inner.d,
        gamma,
        beta,
        iterations,
        batch_size,
        schedule: schedule.inner.clone(),
        algorithm,
        seed,
        trials,
        record_every,
    };
    let inner = py.detach(|| optimizer::run_training(&cfg, &dataset.inner)).map_err(to_py)?;
    Ok(PyTrace { inner })
}

#[pyfunction]
#[pyo3(signature = (dec, par, delta = optimizer::DEFAULT_DELTA))]
fn estimate_transient_iterations(dec: &PyTrace, par: &PyTrace, delta: f64) -> PyResult<usize> {
    optimizer::estimate_transient_iterations(&dec.inner, &par.inner, delta).map_err(to_py)
}

#[pyfunction]
fn predicted_gap(family: &str, n: usize) -> PyResult<Option<f64>> {
    Ok(spectral::predicted_gap(parse(family)?, n))
}

#[pyfunction]
#[pyo3(signature = (n, gap, regime = "heterogeneous"))]
fn transient_bound(n: usize, gap: f64, regime: &str) -> PyResult<f64> {
    let regime: Regime = parse(regime)?;
    spectral::transient_bound(n, gap, regime).map_err(to_py)
}

/// Rows of the communication / transient-iteration comparison as dicts.
#[pyfunction]
#[pyo3(signature = (ns, regime = "heterogeneous", seed = 0))]
fn comparison_table<'py>(py: Python<'py>, ns: Vec<usize>, regime: &str, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let regime: Regime = parse(regime)?;
    let rows = py.detach(|| spectral::comparison_table(&ns, regime, seed)).map_err(to_py)?;
    rows.into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("n", r.n)?;
            d.set_item("family", r.family.name())?;
            d.set_item("per_iter_degree", r.per_iter_degree)?;
            d.set_item("gap", r.gap)?;
            d.set_item("transient_bound", r.transient_bound)?;
            Ok(d)
        })
        .collect()
}

/// `||prod_{i<k} (W(i) - 11^T/n)||_2` along the cyclic one-peer schedule.
#[pyfunction]
fn rho_max_series(n: usize, steps: usize) -> PyResult<Vec<f64>> {
    consensus::rho_max_series(n, steps).map_err(to_py)
}

/// Grid search over symmetric two-step one-peer weights for n = 3.
/// Returns `(min_deviation, (alpha, beta), (discriminant_num, discriminant_den))`.
#[pyfunction]
#[pyo3(signature = (grid_steps = 1000))]
fn two_step_search(py: Python<'_>, grid_steps: usize) -> PyResult<(f64, (f64, f64), (i64, i64))> {
    let s = py.detach(|| consensus::two_step_symmetric_search(3, grid_steps)).map_err(to_py)?;
    Ok((s.min_deviation, s.argmin, (*s.discriminant.numer(), *s.discriminant.denom())))
}

#[pymodule]
fn expograph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWeightMatrix>()?;
    m.add_class::<PySpectrum>()?;
    m.add_class::<PyWeightSchedule>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_transient_iterations, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_gap, m)?)?;
    m.add_function(wrap_pyfunction!(transient_bound, m)?)?;
    m.add_function(wrap_pyfunction!(comparison_table, m)?)?;
    m.add_function(wrap_pyfunction!(rho_max_series, m)?)?;
    m.add_function(wrap_pyfunction!(two_step_search, m)?)?;
    m.add("FAMILIES", TopologyKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>())?;
    Ok(())
}
