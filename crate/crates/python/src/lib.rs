//! Python bindings for the `gtedit` engines and harness.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use gtedit::harness::{self, FuzzConfig, OrderConfig};
use gtedit::metrics::{self, BenchSpec, CsvRow};
use gtedit::ot::OtControl;
use gtedit::{Ablation, EngineKind, ExternalOp, ExternalState, OtEngine, RunOptions, SiteId, WireMessage, WootEngine};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(err)
}

fn json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(err)
}

/// A session description: initial document, sites, delivery mode, latency,
/// seed and script.
#[pyclass(module = "gtedit_py", name = "Scenario", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: gtedit::Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(PyScenario { inner: parse(text)? })
    }

    /// A built-in scenario by name, or a scenario file.
    #[staticmethod]
    fn load(name_or_path: &str) -> PyResult<Self> {
        Ok(PyScenario {
            inner: gtedit::Scenario::load(name_or_path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn fig1() -> Self {
        PyScenario {
            inner: gtedit::Scenario::fig1(),
        }
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn initial(&self) -> String {
        self.inner.initial.clone()
    }

    #[getter]
    fn sites(&self) -> usize {
        self.inner.sites
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, sites={}, mode={})",
            self.inner.name, self.inner.sites, self.inner.mode
        )
    }
}

/// Outcome of one simulated session.
#[pyclass(module = "gtedit_py", name = "RunResult", frozen)]
struct PyRunResult {
    report: gtedit::RunReport,
    trace: String,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn passed(&self) -> bool {
        self.report.passed()
    }

    #[getter]
    fn texts(&self) -> Vec<String> {
        self.report.sites.iter().map(|s| s.text.clone()).collect()
    }

    #[getter]
    fn trace(&self) -> String {
        self.trace.clone()
    }

    #[getter]
    fn trace_digest(&self) -> String {
        self.report.trace_digest.clone()
    }

    #[getter]
    fn first_failure(&self) -> Option<&'static str> {
        self.report.first_failure()
    }

    fn report_json(&self) -> String {
        self.report.to_json()
    }

    fn csv(&self) -> PyResult<String> {
        metrics::to_csv(&[CsvRow::from_report(&self.report.scenario, &self.report)]).map_err(err)
    }
}

/// One replica: a document plus an OT or WOOT engine. OT replicas made
/// here talk to exactly one peer.
#[pyclass(module = "gtedit_py", name = "Site", unsendable)]
struct PySite {
    inner: gtedit::Site,
}

#[pymethods]
impl PySite {
    #[new]
    #[pyo3(signature = (engine, site, initial = ""))]
    fn new(engine: &str, site: u32, initial: &str) -> PyResult<Self> {
        if site == SiteId::INITIAL.0 {
            return Err(PyValueError::new_err("site 0 is reserved"));
        }
        let doc = ExternalState::from(initial);
        let id = SiteId(site);
        let engine: Box<dyn gtedit::Engine> = match parse::<EngineKind>(engine)? {
            EngineKind::Ot => Box::new(OtEngine::new(id, OtControl::PeerPair)),
            EngineKind::Woot => Box::new(WootEngine::new(id, &doc)),
        };
        Ok(PySite {
            inner: gtedit::Site::new(engine, doc),
        })
    }

    #[getter]
    fn id(&self) -> u32 {
        self.inner.id().0
    }

    #[getter]
    fn text(&self) -> String {
        self.inner.external().to_string()
    }

    /// Vector clock as `(site, count)` pairs.
    #[getter]
    fn clock(&self) -> Vec<(u32, u64)> {
        self.inner.engine().clock().iter().map(|(s, n)| (s.0, n)).collect()
    }

    /// Applies a local edit such as `"I 2 c"` or `"D 1"` and returns the
    /// encoded message for the other replicas.
    fn generate<'py>(&mut self, py: Python<'py>, op: &str) -> PyResult<Bound<'py, PyBytes>> {
        let op: ExternalOp = parse(op)?;
        let (msg, _) = self.inner.generate(&op).map_err(err)?;
        Ok(PyBytes::new(py, &msg.encode()))
    }

    /// Integrates a message from another replica. Returns the edit applied
    /// to this replica's document, if any.
    fn deliver(&mut self, message: &[u8]) -> PyResult<Option<String>> {
        let msg = WireMessage::decode(message).map_err(err)?;
        let d = self.inner.deliver(&msg).map_err(err)?;
        Ok(d.applied.map(|op| op.to_string()))
    }

    /// Internal state dump (WOOT object sequence), if the engine has one.
    fn dump(&self) -> Option<String> {
        self.inner.engine().internal_dump()
    }

    /// `(buffer length, visible, total)`.
    fn stats(&self) -> (usize, usize, usize) {
        let s = self.inner.stats();
        (s.buffer_len, s.visible, s.total)
    }
}

/// Transforms `a` against the concurrent `b`; both are defined on the same
/// document state.
#[pyfunction]
fn transform(a: &str, a_site: u32, b: &str, b_site: u32) -> PyResult<String> {
    let (a, b): (ExternalOp, ExternalOp) = (parse(a)?, parse(b)?);
    Ok(gtedit::ot::transform(&a, SiteId(a_site), &b, SiteId(b_site)).to_string())
}

/// Applies a sequence of edits to a document.
#[pyfunction]
fn apply(doc: &str, ops: Vec<String>) -> PyResult<String> {
    let mut state = ExternalState::from(doc);
    for op in ops {
        state.apply(&parse(&op)?).map_err(err)?;
    }
    Ok(state.to_string())
}

#[pyfunction]
#[pyo3(signature = (scenario, engine = "ot", ablation = "none", gc_every = None, timing = false))]
fn run(
    py: Python<'_>,
    scenario: &PyScenario,
    engine: &str,
    ablation: &str,
    gc_every: Option<usize>,
    timing: bool,
) -> PyResult<PyRunResult> {
    let opts = RunOptions {
        ablation: parse::<Ablation>(ablation)?,
        gc_every,
        timing,
        ..RunOptions::new(parse(engine)?)
    };
    let sc = scenario.inner.clone();
    let out = py.detach(move || gtedit::run_scenario(&sc, &opts)).map_err(err)?;
    Ok(PyRunResult {
        trace: out.trace.to_string(),
        report: out.report,
    })
}

/// Runs a seeded random suite and returns the JSON summary.
#[pyfunction]
#[pyo3(signature = (runs = 100, min_sites = 2, max_sites = 5, max_ops = 200, seed = 0, engines = None))]
fn fuzz(
    py: Python<'_>,
    runs: usize,
    min_sites: usize,
    max_sites: usize,
    max_ops: usize,
    seed: u64,
    engines: Option<Vec<String>>,
) -> PyResult<String> {
    if min_sites < 2 || max_sites < min_sites {
        return Err(PyValueError::new_err("invalid site range"));
    }
    let mut cfg = FuzzConfig {
        runs,
        min_sites,
        max_sites,
        max_ops,
        seed,
        ..FuzzConfig::default()
    };
    if let Some(e) = engines {
        cfg.engines = e.iter().map(|s| parse(s)).collect::<PyResult<_>>()?;
    }
    let report = py.detach(|| harness::fuzz(&cfg)).map_err(err)?;
    json(&report)
}

/// Checks that WOOT integration is insensitive to delivery order.
#[pyfunction]
#[pyo3(signature = (sets = 100, seed = 0))]
fn order_check(py: Python<'_>, sets: usize, seed: u64) -> PyResult<String> {
    let cfg = OrderConfig {
        sets,
        seed,
        ..OrderConfig::default()
    };
    let report = py.detach(|| harness::order_insensitivity(&cfg)).map_err(err)?;
    json(&report)
}

#[pyfunction(name = "bench")]
#[pyo3(signature = (doc_len = 10_000, sites = 3, ops = 300, seed = 1))]
fn run_bench(py: Python<'_>, doc_len: usize, sites: usize, ops: usize, seed: u64) -> PyResult<String> {
    let spec = BenchSpec {
        doc_len,
        sites,
        ops,
        seed,
        timing: false,
    };
    let report = py.detach(|| metrics::bench(&spec)).map_err(err)?;
    json(&report)
}

#[pymodule]
fn gtedit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PySite>()?;
    m.add_function(wrap_pyfunction!(transform, m)?)?;
    m.add_function(wrap_pyfunction!(apply, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(fuzz, m)?)?;
    m.add_function(wrap_pyfunction!(order_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}
