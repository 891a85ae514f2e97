//! Python bindings.

use std::str::FromStr;

use chain_surgeon::exact_real;
use chain_surgeon::graph_core::{self, VertexId};
use chain_surgeon::iv_chain::{self, McmcParams};
use chain_surgeon::qsos::{self, MixtureKind, QChainParams};
use chain_surgeon::rng::{stream, Domain};
use chain_surgeon::scaling::{self, FitRow, Model, Regime};
use chain_surgeon::surgery_pipelines::{self, Pipeline};
use chain_surgeon::{Error, VarianceEstimate, VarianceMethod};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

type Estimate = (f64, f64, &'static str);

fn estimate(e: VarianceEstimate) -> Estimate {
    (e.value, e.std_error, e.method.as_str())
}

fn mcmc_params(seed: u64, burn_in: u64, sweeps: u64) -> McmcParams {
    McmcParams { burn_in_sweeps: burn_in, measure_sweeps: sweeps, seed, ..Default::default() }
}

/// Chain half-length `n`, coupling `beta / |i - j|^alpha`, optional SOS exponent `q`.
#[pyclass(name = "ChainSpec", frozen)]
struct PyChainSpec(graph_core::ChainSpec);

#[pymethods]
impl PyChainSpec {
    #[new]
    #[pyo3(signature = (n, beta, alpha, q=None))]
    fn new(n: usize, beta: f64, alpha: f64, q: Option<f64>) -> PyResult<Self> {
        let spec = match q {
            Some(q) => graph_core::ChainSpec::with_q(n, beta, alpha, q),
            None => graph_core::ChainSpec::new(n, beta, alpha),
        };
        spec.map(Self).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    #[getter]
    fn q(&self) -> Option<f64> {
        self.0.q
    }

    fn __repr__(&self) -> String {
        format!("ChainSpec(n={}, beta={}, alpha={}, q={:?})", self.0.n, self.0.beta, self.0.alpha, self.0.q)
    }
}

/// Rooted conductance graph with integer vertex ids.
#[pyclass(name = "Graph")]
struct PyGraph(graph_core::ConductanceGraph);

#[pymethods]
impl PyGraph {
    #[new]
    fn new(root: i64) -> Self {
        Self(graph_core::ConductanceGraph::new(VertexId(root)))
    }

    #[staticmethod]
    fn chain(spec: &PyChainSpec) -> PyResult<Self> {
        graph_core::new_chain_graph(&spec.0).map(Self).map_err(to_py)
    }

    /// Connected random graph on `0..vertices`, root 0.
    #[staticmethod]
    #[pyo3(signature = (vertices, density=0.5, lo=0.3, hi=3.0, seed=0))]
    fn random(vertices: usize, density: f64, lo: f64, hi: f64, seed: u64) -> PyResult<Self> {
        let mut rng = stream(seed, Domain::SelfTest, 0, vertices as u64);
        graph_core::ConductanceGraph::random_connected(vertices, density, (lo, hi), &mut rng)
            .map(Self)
            .map_err(to_py)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        graph_core::ConductanceGraph::from_text(text).map(Self).map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    #[getter]
    fn root(&self) -> i64 {
        self.0.root().0
    }

    fn num_vertices(&self) -> usize {
        self.0.num_vertices()
    }

    fn num_edges(&self) -> usize {
        self.0.num_edges()
    }

    fn edges(&self) -> Vec<(i64, i64, f64)> {
        self.0.edges().map(|(u, v, c)| (u.0, v.0, c)).collect()
    }

    fn conductance(&self, u: i64, v: i64) -> f64 {
        self.0.conductance(VertexId(u), VertexId(v))
    }

    fn add_edge(&mut self, u: i64, v: i64, c: f64) -> PyResult<()> {
        self.0.add_edge(VertexId(u), VertexId(v), c).map_err(to_py)
    }

    fn delete_edge(&self, u: i64, v: i64) -> PyResult<Self> {
        self.0.delete_edge(VertexId(u), VertexId(v)).map(Self).map_err(to_py)
    }

    fn identify(&self, y: i64, z: i64) -> PyResult<Self> {
        self.0.identify_vertices(VertexId(y), VertexId(z)).map(Self).map_err(to_py)
    }

    /// Replaces `{y, z}` by a two-edge path through a new vertex; returns the
    /// new graph and the new vertex id.
    fn split_theta(&self, y: i64, z: i64, theta: f64) -> PyResult<(Self, i64)> {
        let (g, v) = self.0.split_edge_theta(VertexId(y), VertexId(z), theta).map_err(to_py)?;
        Ok((Self(g), v.0))
    }

    fn split_uniform(&self, y: i64, z: i64, n: usize) -> PyResult<(Self, Vec<i64>)> {
        let (g, vs) = self.0.split_edge_uniform(VertexId(y), VertexId(z), n).map_err(to_py)?;
        Ok((Self(g), vs.into_iter().map(|v| v.0).collect()))
    }

    fn effective_conductance(&self, v: i64) -> PyResult<f64> {
        self.0.effective_conductance(VertexId(v)).map_err(to_py)
    }

    /// Exact variance of the real-valued field at `v`.
    fn real_variance(&self, v: i64) -> PyResult<f64> {
        exact_real::real_gff_variance(&self.0, VertexId(v)).map(|e| e.value).map_err(to_py)
    }

    /// Exact variance of the integer-valued field at `v` by enumeration.
    fn integer_variance(&self, v: i64) -> PyResult<f64> {
        let opts = iv_chain::EnumerationOptions::default();
        iv_chain::enumerate(&self.0, iv_chain::Potential::Quadratic, &opts)
            .and_then(|e| e.variance(VertexId(v)))
            .map_err(to_py)
    }

    /// Heat-bath estimate of the integer-valued variance at `v`.
    #[pyo3(signature = (v, seed=0, burn_in=2000, sweeps=20000))]
    fn mcmc_variance(&self, py: Python<'_>, v: i64, seed: u64, burn_in: u64, sweeps: u64) -> PyResult<Estimate> {
        let p = mcmc_params(seed, burn_in, sweeps);
        py.detach(|| iv_chain::mcmc_variance(&self.0, VertexId(v), &p)).map(estimate).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Graph(root={}, vertices={}, edges={})", self.0.root().0, self.0.num_vertices(), self.0.num_edges())
    }
}

#[pyfunction]
fn real_chain_variance(spec: &PyChainSpec) -> PyResult<f64> {
    exact_real::real_chain_variance(&spec.0).map_err(to_py)
}

#[pyfunction]
fn dg_variance(lambda: f64) -> PyResult<f64> {
    exact_real::dg_variance(lambda).map_err(to_py)
}

#[pyfunction]
fn dg_log_partition(lambda: f64) -> PyResult<f64> {
    exact_real::dg_log_partition(lambda).map_err(to_py)
}

/// Integer-valued chain variance at the origin by enumeration (small `n`).
#[pyfunction]
#[pyo3(signature = (spec, m=12))]
fn chain_exact_integer(spec: &PyChainSpec, m: i64) -> PyResult<Estimate> {
    let g = graph_core::new_chain_graph(&spec.0).map_err(to_py)?;
    iv_chain::exact_iv_variance(&g, VertexId(0), m).map(estimate).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (spec, seed=0, burn_in=2000, sweeps=20000, replicas=1))]
fn chain_mcmc(py: Python<'_>, spec: &PyChainSpec, seed: u64, burn_in: u64, sweeps: u64, replicas: u64) -> PyResult<Estimate> {
    let p = mcmc_params(seed, burn_in, sweeps);
    py.detach(|| {
        let g = graph_core::new_chain_graph(&spec.0)?;
        iv_chain::mcmc_variance_replicas(&g, VertexId(0), &p, replicas)
    })
    .map(estimate)
    .map_err(to_py)
}

/// Runs a surgery pipeline; returns the reduced graph, the variance at the
/// origin and the certificate JSON.
#[pyfunction]
fn run_pipeline(py: Python<'_>, name: &str, spec: &PyChainSpec) -> PyResult<(PyGraph, f64, String)> {
    let pipeline = Pipeline::from_str(name).map_err(to_py)?;
    py.detach(|| {
        let r = pipeline.run(&spec.0)?;
        let var = r.variance_at_origin()?;
        let cert = r.certificate_json()?;
        Ok((PyGraph(r.reduced_graph), var, cert))
    })
    .map_err(to_py)
}

/// `(lower, exact, upper)` variances at the origin.
#[pyfunction]
fn sandwich(py: Python<'_>, spec: &PyChainSpec) -> PyResult<(f64, f64, f64)> {
    py.detach(|| surgery_pipelines::sandwich(&spec.0))
        .map(|r| (r.lower, r.oracle, r.upper))
        .map_err(to_py)
}

fn mixture_kind(tilted: bool) -> MixtureKind {
    if tilted {
        MixtureKind::TildeMuQ
    } else {
        MixtureKind::MuQ
    }
}

/// `count` draws from the stable mixing law (or its tilted version).
#[pyfunction]
#[pyo3(signature = (q, count, seed=0, tilted=false))]
fn sample_mixture(q: f64, count: usize, seed: u64, tilted: bool) -> PyResult<Vec<f64>> {
    let law = qsos::MixtureLaw::new(q, mixture_kind(tilted)).map_err(to_py)?;
    let mut rng = stream(seed, Domain::SelfTest, 1, 0);
    Ok((0..count).map(|_| law.sample(&mut rng)).collect())
}

#[pyfunction]
#[pyo3(signature = (spec, m=12))]
fn qsos_exact(spec: &PyChainSpec, m: i64) -> PyResult<Estimate> {
    qsos::qsos_exact(&spec.0, m).map(estimate).map_err(to_py)
}

/// Direct Metropolis estimate for the q-SOS chain.
#[pyfunction]
#[pyo3(signature = (spec, seed=0, burn_in=2000, sweeps=20000))]
fn qsos_mcmc(py: Python<'_>, spec: &PyChainSpec, seed: u64, burn_in: u64, sweeps: u64) -> PyResult<Estimate> {
    let p = mcmc_params(seed, burn_in, sweeps);
    py.detach(|| qsos::qsos_mcmc(&spec.0, &p)).map(|r| estimate(r.estimate)).map_err(to_py)
}

/// Annealed average over random conductance fields; `tilted` selects the
/// upper-bound law. `inner` is `mcmc` or `real`.
#[pyfunction]
#[pyo3(signature = (spec, tilted=false, draws=64, seed=0, inner="mcmc", burn_in=2000, sweeps=20000))]
#[allow(clippy::too_many_arguments)]
fn annealed(
    py: Python<'_>,
    spec: &PyChainSpec,
    tilted: bool,
    draws: u64,
    seed: u64,
    inner: &str,
    burn_in: u64,
    sweeps: u64,
) -> PyResult<Estimate> {
    let inner = match inner {
        "mcmc" => qsos::InnerMethod::Mcmc(mcmc_params(seed, burn_in, sweeps)),
        "real" => qsos::InnerMethod::Real,
        "enumeration" => qsos::InnerMethod::Enumeration,
        other => return Err(PyValueError::new_err(format!("unknown inner method `{other}`"))),
    };
    let params = QChainParams::new(spec.0).map_err(to_py)?;
    let opts = qsos::AnnealedOptions { draws, seed, inner };
    py.detach(|| qsos::annealed_estimate(&params, mixture_kind(tilted), &opts))
        .map(|r| estimate(r.estimate))
        .map_err(to_py)
}

/// Random field of the q-SOS chain for one draw.
#[pyfunction]
#[pyo3(signature = (spec, draw, seed=0, tilted=false))]
fn conductance_field(spec: &PyChainSpec, draw: u64, seed: u64, tilted: bool) -> PyResult<PyGraph> {
    let params = QChainParams::new(spec.0).map_err(to_py)?;
    qsos::conductance_field(&params, mixture_kind(tilted), seed, draw).map(PyGraph).map_err(to_py)
}

/// Edge derivative identity on a tiny graph: `(finite difference, identity,
/// relative error)`.
#[pyfunction]
fn derivative_identity(graph: &PyGraph, k: i64, l: i64, coefficient: f64) -> PyResult<(f64, f64, f64)> {
    qsos::derivative_identity_check(&graph.0, VertexId(k), VertexId(l), coefficient)
        .map(|r| (r.finite_difference, r.identity, r.relative_error))
        .map_err(to_py)
}

/// Fits `model` to exact rows; returns `(a, p)` with `p` set for the power model.
#[pyfunction]
fn fit_exponent(ns: Vec<usize>, variances: Vec<f64>, model: &str) -> PyResult<(f64, Option<f64>)> {
    if ns.len() != variances.len() {
        return Err(PyValueError::new_err("ns and variances differ in length"));
    }
    let model = Model::from_str(model).map_err(to_py)?;
    let rows: Vec<FitRow> = ns
        .into_iter()
        .zip(variances)
        .map(|(n, v)| FitRow::from_estimate(n, &VarianceEstimate::exact(v, VarianceMethod::LaplacianExact), 0))
        .collect();
    scaling::fit_exponent(&rows, model).map(|f| (f.a, f.p)).map_err(to_py)
}

/// Growth regime as JSON, e.g. `{"regime":"power","exponent":0.5}`.
#[pyfunction]
#[pyo3(signature = (alpha, q=2.0))]
fn regime(alpha: f64, q: f64) -> PyResult<String> {
    serde_json::to_string(&Regime::select(alpha, q)).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Sweep over `ns` with one backend; returns the fit as JSON.
#[pyfunction]
#[pyo3(signature = (ns, alpha, backend="real-exact", beta=1.0, q=None, seed=0, draws=64))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    ns: Vec<usize>,
    alpha: f64,
    backend: &str,
    beta: f64,
    q: Option<f64>,
    seed: u64,
    draws: u64,
) -> PyResult<String> {
    let backend = scaling::Backend::from_str(backend).map_err(to_py)?;
    let specs = ns
        .iter()
        .map(|&n| match q {
            Some(q) => graph_core::ChainSpec::with_q(n, beta, alpha, q),
            None => graph_core::ChainSpec::new(n, beta, alpha),
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    let params = scaling::SweepParams { seed, draws, ..Default::default() };
    py.detach(|| scaling::run_sweep(&specs, backend, &params).and_then(|f| f.to_json()))
        .map_err(to_py)
}

/// Quick invariant suite: `(name, passed, note)` per check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn selftest(py: Python<'_>, seed: u64) -> Vec<(String, bool, String)> {
    py.detach(|| chain_surgeon::cli::selftest(seed))
}

#[pymodule]
fn chain_surgeon_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChainSpec>()?;
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(real_chain_variance, m)?)?;
    m.add_function(wrap_pyfunction!(dg_variance, m)?)?;
    m.add_function(wrap_pyfunction!(dg_log_partition, m)?)?;
    m.add_function(wrap_pyfunction!(chain_exact_integer, m)?)?;
    m.add_function(wrap_pyfunction!(chain_mcmc, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(sandwich, m)?)?;
    m.add_function(wrap_pyfunction!(sample_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(qsos_exact, m)?)?;
    m.add_function(wrap_pyfunction!(qsos_mcmc, m)?)?;
    m.add_function(wrap_pyfunction!(annealed, m)?)?;
    m.add_function(wrap_pyfunction!(conductance_field, m)?)?;
    m.add_function(wrap_pyfunction!(derivative_identity, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(regime, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
