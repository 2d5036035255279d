//! Python bindings. Inputs are plain lists, configs are JSON strings, and
//! reports come back as JSON strings.

use impute_ate::config::{parse_config_for, Command};
use impute_ate::io::{to_json_string, EstimateReport};
use impute_ate::simulation::{efficiency_bound as bound, forest_diag as diag, run_mc, DgpSpec};
use impute_ate::{load_dataset, Dataset, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e.kind() {
        impute_ate::ErrorKind::Consistency => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn dataset(x: Vec<Vec<f64>>, d: Vec<u8>, y: Vec<f64>) -> PyResult<Dataset> {
    if x.len() != d.len() || x.len() != y.len() {
        return Err(PyValueError::new_err(format!(
            "x, d and y lengths differ ({}, {}, {})",
            x.len(),
            d.len(),
            y.len()
        )));
    }
    load_dataset(x.into_iter().zip(d).zip(y).map(|((x, d), y)| (x, d, y))).map_err(py_err)
}

/// Estimate the ATE. Returns the JSON report.
#[pyfunction]
#[pyo3(signature = (x, d, y, config, seed=None))]
fn estimate(x: Vec<Vec<f64>>, d: Vec<u8>, y: Vec<f64>, config: &str, seed: Option<u64>) -> PyResult<String> {
    let ds = dataset(x, d, y)?;
    let mut cfg = parse_config_for(config, Command::Estimate).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let start = std::time::Instant::now();
    let est = cfg.estimator().and_then(|e| e.run(&ds, cfg.seed)).map_err(py_err)?;
    let report = EstimateReport::new(cfg, &ds, est, start.elapsed().as_secs_f64());
    impute_ate::io::IdentityCheck::of(&report.estimate).verify().map_err(py_err)?;
    to_json_string(&report).map_err(py_err)
}

/// Smoothing weights as 0-based `(i, j, w)` triplets.
#[pyfunction]
#[pyo3(signature = (x, d, y, config, seed=None))]
fn weights(
    x: Vec<Vec<f64>>,
    d: Vec<u8>,
    y: Vec<f64>,
    config: &str,
    seed: Option<u64>,
) -> PyResult<Vec<(usize, usize, f64)>> {
    let ds = dataset(x, d, y)?;
    let cfg = parse_config_for(config, Command::Weights).map_err(py_err)?;
    let sm = cfg
        .estimator()
        .and_then(|e| e.smoother.build(&ds, seed.unwrap_or(cfg.seed)))
        .map_err(py_err)?;
    Ok(sm.triplets().collect())
}

/// `(tau, sigma2)` for a named process or a JSON process definition.
#[pyfunction]
fn efficiency_bound(dgp: &str) -> PyResult<(f64, f64)> {
    let spec = match DgpSpec::named(dgp) {
        Some(s) => s,
        None => serde_json::from_str(dgp).map_err(|e| PyValueError::new_err(format!("unknown dgp: {e}")))?,
    };
    let b = bound(&spec).map_err(py_err)?;
    Ok((b.tau, b.sigma2))
}

/// Monte Carlo study from a simulate config. Returns the JSON report.
#[pyfunction]
fn simulate(config: &str) -> PyResult<String> {
    let cfg = parse_config_for(config, Command::Simulate).map_err(py_err)?;
    let dgp = cfg.dgp().map_err(py_err)?;
    let est = cfg.estimator().map_err(py_err)?;
    let grid = cfg.n_grid.clone().unwrap_or_default();
    let rep = run_mc(&dgp, &est, &grid, cfg.replications.unwrap_or(0), cfg.seed).map_err(py_err)?;
    to_json_string(&rep).map_err(py_err)
}

/// Leaf-diameter study from a forest-diag config. Returns the JSON report.
#[pyfunction]
fn forest_diag(config: &str) -> PyResult<String> {
    let cfg = parse_config_for(config, Command::ForestDiag).map_err(py_err)?;
    let rep = diag(&cfg.forest_diag.clone().unwrap_or_default(), cfg.seed).map_err(py_err)?;
    to_json_string(&rep).map_err(py_err)
}

#[pymodule]
fn impute_ate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", impute_ate::io::VERSION)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(weights, m)?)?;
    m.add_function(wrap_pyfunction!(efficiency_bound, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(forest_diag, m)?)?;
    Ok(())
}
