//! Python bindings. Tensors and matrices cross the boundary as flat
//! row-major lists of floats.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use coupled_fuse::experiments::{
    add_noise_snr, gen_synthetic_coupled, metric_fms, metric_hsr, random_init, relerr_pair, rng_stream, SynthSpec,
};
use coupled_fuse::io::{read_tnsr, write_tnsr};
use coupled_fuse::prox::prox_l1_offset as core_prox_l1_offset;
use coupled_fuse::solver::{run_with_observer, MetricSample};
use coupled_fuse::tensor::{fold, khatri_rao as core_khatri_rao, mttkrp as core_mttkrp, unfold};
use coupled_fuse::{
    kruskal_reconstruct, CoupledProblem, Coupling, DenseTensor, Error, KruskalFactors, Matrix, SolverConfig,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NonFinite(_) | Error::Divergence { .. } | Error::NotPositiveDefinite => {
            PyArithmeticError::new_err(e.to_string())
        }
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for coupled_fuse::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Dense real tensor in row-major order.
#[pyclass(name = "Tensor", module = "coupled_fuse", skip_from_py_object)]
#[derive(Clone)]
struct PyTensor(DenseTensor);

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self(DenseTensor::new(shape, data).py()?))
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> PyResult<Self> {
        Ok(Self(DenseTensor::zeros(&shape).py()?))
    }

    /// Reads a TNSR v1 file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self(read_tnsr(path).py()?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_tnsr(path, &self.0).py()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    fn tolist(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn __getitem__(&self, idx: Vec<usize>) -> PyResult<f64> {
        if idx.len() != self.0.order() || idx.iter().zip(self.0.shape()).any(|(&i, &d)| i >= d) {
            return Err(PyValueError::new_err(format!("index {idx:?} out of range for shape {:?}", self.0.shape())));
        }
        Ok(self.0.get(&idx))
    }

    fn norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    /// Mode-`mode` unfolding; the first remaining mode varies fastest along columns.
    fn unfold(&self, mode: usize) -> PyResult<PyMatrix> {
        Ok(PyMatrix(unfold(&self.0, mode).py()?))
    }

    #[staticmethod]
    fn fold(m: PyRef<'_, PyMatrix>, mode: usize, shape: Vec<usize>) -> PyResult<Self> {
        Ok(Self(fold(&m.0, mode, &shape).py()?))
    }

    /// Copy with white Gaussian noise at the given SNR in dB.
    fn with_noise(&self, snr_db: f64, seed: u64) -> PyResult<Self> {
        Ok(Self(add_noise_snr(&self.0, snr_db, &mut rng_stream(seed, 0)).py()?))
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.0.shape())
    }
}

/// Dense real matrix in row-major order.
#[pyclass(name = "Matrix", module = "coupled_fuse", skip_from_py_object)]
#[derive(Clone)]
struct PyMatrix(Matrix);

#[pymethods]
impl PyMatrix {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self(Matrix::from_rows(&rows).py()?))
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.rows(), self.0.cols())
    }

    fn tolist(&self) -> Vec<Vec<f64>> {
        self.0.to_rows()
    }

    fn __getitem__(&self, idx: (usize, usize)) -> PyResult<f64> {
        if idx.0 >= self.0.rows() || idx.1 >= self.0.cols() {
            return Err(PyValueError::new_err(format!("index {idx:?} out of range")));
        }
        Ok(self.0[idx])
    }

    fn __repr__(&self) -> String {
        format!("Matrix(shape=({}, {}))", self.0.rows(), self.0.cols())
    }
}

/// Factor matrices of a CP model sharing one rank.
#[pyclass(name = "Factors", module = "coupled_fuse", skip_from_py_object)]
#[derive(Clone)]
struct PyFactors(KruskalFactors);

#[pymethods]
impl PyFactors {
    #[new]
    fn new(factors: Vec<PyRef<'_, PyMatrix>>) -> PyResult<Self> {
        Ok(Self(KruskalFactors::new(factors.iter().map(|m| m.0.clone()).collect()).py()?))
    }

    #[getter]
    fn rank(&self) -> usize {
        self.0.rank()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape()
    }

    fn __len__(&self) -> usize {
        self.0.order()
    }

    fn __getitem__(&self, n: usize) -> PyResult<PyMatrix> {
        if n >= self.0.order() {
            return Err(PyValueError::new_err(format!("factor {n} out of range")));
        }
        Ok(PyMatrix(self.0.factor(n).clone()))
    }

    /// Full tensor of the CP model.
    fn reconstruct(&self) -> PyTensor {
        PyTensor(kruskal_reconstruct(&self.0))
    }

    /// Unfolding of `t` along `mode` times the Khatri-Rao product of the other factors.
    fn mttkrp(&self, t: PyRef<'_, PyTensor>, mode: usize) -> PyResult<PyMatrix> {
        Ok(PyMatrix(core_mttkrp(&t.0, &self.0, mode).py()?))
    }

    fn __repr__(&self) -> String {
        format!("Factors(shape={:?}, rank={})", self.0.shape(), self.0.rank())
    }
}

/// Two tensors fitted jointly under a coupling penalty.
#[pyclass(name = "Problem", module = "coupled_fuse", skip_from_py_object)]
struct PyProblem(CoupledProblem);

#[pymethods]
impl PyProblem {
    /// `μ Σ|A[pair.0] - B[pair.1]|` coupling with unit weight on both fits.
    #[staticmethod]
    #[pyo3(signature = (y, y_prime, rank, mu, pair = (2, 0)))]
    fn laplacian(
        y: PyRef<'_, PyTensor>,
        y_prime: PyRef<'_, PyTensor>,
        rank: usize,
        mu: f64,
        pair: (usize, usize),
    ) -> PyResult<Self> {
        let coupling = Coupling::LaplacianL1 { mu, pair };
        Ok(Self(
            CoupledProblem::new(y.0.clone(), y_prime.0.clone(), rank, rank, coupling, 1.0).py()?,
        ))
    }

    #[getter]
    fn y(&self) -> PyTensor {
        PyTensor(self.0.y.clone())
    }

    #[getter]
    fn y_prime(&self) -> PyTensor {
        PyTensor(self.0.y_prime.clone())
    }

    fn objective(&self, a: PyRef<'_, PyFactors>, b: PyRef<'_, PyFactors>) -> PyResult<f64> {
        self.0.objective(&a.0, &b.0).py()
    }

    /// Mean relative reconstruction error over both tensors.
    fn relerr(&self, a: PyRef<'_, PyFactors>, b: PyRef<'_, PyFactors>) -> PyResult<f64> {
        let (ra, rb) = relerr_pair(&self.0.y, &a.0, &self.0.y_prime, &b.0).py()?;
        Ok(0.5 * (ra + rb))
    }

    /// Random starting point drawn from the dedicated init stream of `seed`.
    fn random_init(&self, seed: u64) -> PyResult<(PyFactors, PyFactors)> {
        let (a, b) = random_init(
            self.0.y.shape(),
            self.0.y_prime.shape(),
            self.0.rank_a,
            self.0.rank_b,
            seed,
        )
        .py()?;
        Ok((PyFactors(a), PyFactors(b)))
    }
}

/// Result of `solve`.
#[pyclass(name = "Solution", module = "coupled_fuse", skip_from_py_object)]
struct PySolution {
    #[pyo3(get)]
    a: Py<PyFactors>,
    #[pyo3(get)]
    b: Py<PyFactors>,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    stop_reason: String,
    #[pyo3(get)]
    objectives: Vec<f64>,
    #[pyo3(get)]
    relerr: Vec<f64>,
    #[pyo3(get)]
    fms: Vec<Option<f64>>,
    trace_csv: String,
}

#[pymethods]
impl PySolution {
    /// Trace in CSV form, one row per iterate.
    fn trace_csv(&self) -> String {
        self.trace_csv.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Solution(iterations={}, stop_reason={:?}, objective={:e})",
            self.iterations,
            self.stop_reason,
            self.objectives.last().copied().unwrap_or(f64::NAN)
        )
    }
}

/// Synthetic coupled instance. Returns `(problem, true_a, true_b)`.
#[pyfunction]
#[pyo3(signature = (dims_y = vec![30, 40, 50], dims_y_prime = vec![50, 60, 70], rank = 5, snr_db = 14.0, laplace_scale = 0.1, mu = 0.01, pair = (2, 0), seed = 0))]
#[allow(clippy::too_many_arguments)]
fn synthetic(
    dims_y: Vec<usize>,
    dims_y_prime: Vec<usize>,
    rank: usize,
    snr_db: f64,
    laplace_scale: f64,
    mu: f64,
    pair: (usize, usize),
    seed: u64,
) -> PyResult<(PyProblem, PyFactors, PyFactors)> {
    let spec = SynthSpec {
        dims_y,
        dims_y_prime,
        rank,
        snr_db,
        laplace_scale,
        coupled_pair: pair,
        seed,
    };
    let (p, truth) = gen_synthetic_coupled(&spec, mu).py()?;
    Ok((PyProblem(p), PyFactors(truth.a), PyFactors(truth.b)))
}

/// Runs a solver from `(a, b)`. `config` is a solver config as JSON; keyword
/// arguments override its fields. Pass `truth=(a, b)` to record FMS per sweep.
#[pyfunction]
#[pyo3(signature = (problem, a, b, config = None, algorithm = None, max_iters = None, epsilon = None, truth = None))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    problem: PyRef<'_, PyProblem>,
    a: PyRef<'_, PyFactors>,
    b: PyRef<'_, PyFactors>,
    config: Option<&str>,
    algorithm: Option<&str>,
    max_iters: Option<usize>,
    epsilon: Option<f64>,
    truth: Option<(PyRef<'_, PyFactors>, PyRef<'_, PyFactors>)>,
) -> PyResult<PySolution> {
    let mut cfg: SolverConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("bad solver config: {e}")))?,
        None => SolverConfig::default(),
    };
    if let Some(name) = algorithm {
        cfg.algorithm = serde_json::from_value(serde_json::Value::String(name.into()))
            .map_err(|_| PyValueError::new_err(format!("unknown algorithm {name:?}")))?;
    }
    if let Some(m) = max_iters {
        cfg.max_iters = m;
    }
    if let Some(e) = epsilon {
        cfg.epsilon = e;
    }
    let p = &problem.0;
    let truth = truth.map(|(ta, tb)| (ta.0.clone(), tb.0.clone()));
    let init = (a.0.clone(), b.0.clone());
    let outcome = py
        .detach(|| {
            run_with_observer(p, init, &cfg, |s| MetricSample {
                relerr: relerr_pair(&p.y, &s.a, &p.y_prime, &s.b).ok().map(|(x, y)| 0.5 * (x + y)),
                fms: truth.as_ref().and_then(|(ta, tb)| metric_fms(&s.a, &s.b, ta, tb).ok()),
            })
        })
        .py()?;
    let records = &outcome.trace.records;
    Ok(PySolution {
        a: Py::new(py, PyFactors(outcome.state.a.clone()))?,
        b: Py::new(py, PyFactors(outcome.state.b.clone()))?,
        iterations: outcome.state.k,
        stop_reason: outcome.stop.to_string(),
        objectives: outcome.trace.objectives(),
        relerr: records.iter().map(|r| r.relerr.unwrap_or(f64::NAN)).collect(),
        fms: records.iter().map(|r| r.fms).collect(),
        trace_csv: outcome.trace.to_csv(),
    })
}

#[pyfunction]
fn khatri_rao(ms: Vec<PyRef<'_, PyMatrix>>) -> PyResult<PyMatrix> {
    let refs: Vec<&Matrix> = ms.iter().map(|m| &m.0).collect();
    Ok(PyMatrix(core_khatri_rao(&refs).py()?))
}

/// Elementwise `argmin_x t|x - b| + ½(x - v)²`.
#[pyfunction]
fn prox_l1_offset(v: Vec<f64>, b: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    core_prox_l1_offset(&v, &b, t).py()
}

/// Factor match score between two pairs of factors, in `[-1, 1]`.
#[pyfunction]
fn fms(
    a: PyRef<'_, PyFactors>,
    b: PyRef<'_, PyFactors>,
    true_a: PyRef<'_, PyFactors>,
    true_b: PyRef<'_, PyFactors>,
) -> PyResult<f64> {
    metric_fms(&a.0, &b.0, &true_a.0, &true_b.0).py()
}

/// Image quality metrics of an estimate against the reference image.
#[pyfunction]
fn image_metrics<'py>(
    py: Python<'py>,
    est: PyRef<'_, PyTensor>,
    truth: PyRef<'_, PyTensor>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = metric_hsr(&est.0, &truth.0).py()?;
    let d = PyDict::new(py);
    d.set_item("rsnr", m.rsnr)?;
    d.set_item("ssim", m.ssim)?;
    d.set_item("cc", m.cc)?;
    d.set_item("rmse", m.rmse)?;
    d.set_item("sam", m.sam)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "coupled_fuse")]
fn coupled_fuse_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyFactors>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(khatri_rao, m)?)?;
    m.add_function(wrap_pyfunction!(prox_l1_offset, m)?)?;
    m.add_function(wrap_pyfunction!(fms, m)?)?;
    m.add_function(wrap_pyfunction!(image_metrics, m)?)?;
    Ok(())
}
