//! Python bindings: load scenarios, run them, inspect reports.

use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use idlease::harness::{self, ScenarioConfig, ScenarioReport};
use idlease::ledger::{verify_headers, Chain};
use idlease::simnet::SimDuration;

create_exception!(idlease, SchemaError, PyValueError);

fn schema_err(errs: Vec<harness::SchemaError>) -> PyErr {
    let msg: Vec<String> = errs.iter().map(ToString::to_string).collect();
    SchemaError::new_err(msg.join("; "))
}

/// A validated scenario configuration.
#[pyclass(name = "Scenario", module = "idlease", from_py_object)]
#[derive(Clone)]
pub struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ScenarioConfig::from_toml(text).map(|inner| PyScenario { inner }).map_err(schema_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ScenarioConfig::load(path.as_ref()).map(|inner| PyScenario { inner }).map_err(schema_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn run(&self) -> PyRun {
        run_scenario(self)
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?}, seed={})", self.inner.name, self.inner.seed)
    }
}

/// Everything one run produced.
#[pyclass(name = "Run", module = "idlease", frozen)]
pub struct PyRun {
    report: ScenarioReport,
    #[pyo3(get)]
    event_log: String,
    #[pyo3(get)]
    chain_dump: String,
    state: String,
}

#[pymethods]
impl PyRun {
    /// The report as JSON text; feed it to `json.loads`.
    #[getter]
    fn report_json(&self) -> String {
        self.report.to_json()
    }

    #[getter]
    fn state_json(&self) -> String {
        self.state.clone()
    }

    #[getter]
    fn report_digest(&self) -> String {
        self.report.report_digest.clone()
    }

    #[getter]
    fn event_log_digest(&self) -> String {
        self.report.event_log_digest.clone()
    }

    #[getter]
    fn end_time_secs(&self) -> f64 {
        self.report.end_time_secs
    }

    /// `(party, label)` pairs, e.g. `("host:0", "fair (self-harm)")`.
    fn verdict(&self) -> Vec<(String, String)> {
        self.report.verdict.parties.iter().map(|p| (p.party.clone(), p.label().to_string())).collect()
    }

    fn harmed(&self) -> Vec<String> {
        self.report.verdict.harmed().into_iter().map(String::from).collect()
    }

    fn flags(&self) -> Vec<String> {
        self.report.verdict.flags.clone()
    }

    /// Violated invariants; empty when the run is sound.
    fn check_invariants(&self) -> Vec<String> {
        self.report.check_invariants(Some(&self.event_log))
    }

    fn summary(&self) -> String {
        self.report.render_text()
    }
}

fn run_scenario(s: &PyScenario) -> PyRun {
    let out = harness::run(&s.inner);
    PyRun {
        report: out.report,
        event_log: out.event_log,
        chain_dump: out.chain_dump,
        state: serde_json::to_string_pretty(&out.state).expect("state serializes"),
    }
}

#[pyfunction]
fn run(scenario: &PyScenario) -> PyRun {
    run_scenario(scenario)
}

/// Closed-form `(service_secs, payment_secs)`.
#[pyfunction]
#[pyo3(signature = (count, service_enclaves=1, payment_enclaves=1, action_mean=4.288, snark_mean=4.935))]
fn estimate(
    count: u64,
    service_enclaves: u64,
    payment_enclaves: u64,
    action_mean: f64,
    snark_mean: f64,
) -> PyResult<(f64, f64)> {
    let e = harness::schedule_estimate(
        count,
        service_enclaves,
        payment_enclaves,
        SimDuration::from_secs_f64(action_mean),
        SimDuration::from_secs_f64(snark_mean),
    )
    .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((e.service.as_secs_f64(), e.payment.as_secs_f64()))
}

/// Violations found in a JSON report written by `idlease run --report-out`.
#[pyfunction]
#[pyo3(signature = (report_json, event_log=None))]
fn verify_report(report_json: &str, event_log: Option<&str>) -> PyResult<Vec<String>> {
    let r = ScenarioReport::from_json(report_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(r.check_invariants(event_log))
}

/// Restores a chain dump; returns `(height, headers_valid)`.
#[pyfunction]
fn check_chain(dump: &str) -> PyResult<(u64, bool)> {
    let c = Chain::restore(dump).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok((c.tip_height(), verify_headers(&c.headers(), c.params().difficulty_bits)))
}

#[pymodule(name = "idlease")]
fn idlease_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(verify_report, m)?)?;
    m.add_function(wrap_pyfunction!(check_chain, m)?)?;
    m.add("SchemaError", m.py().get_type::<SchemaError>())?;
    Ok(())
}
