//! Python bindings. Results that are plain records (truth, reports, MH
//! stats) come back as dicts; chains, banks and datasets are wrapped.

use std::path::PathBuf;

use h2s_core::bank::load_bank_dir;
use h2s_core::chain::RunLength;
use h2s_core::diagnostics;
use h2s_core::metrics;
use h2s_core::model::{Depth, ModelSpec};
use h2s_core::{report, stage1::Stage1Run};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyKeyError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(h2s, H2sError, PyException);
create_exception!(h2s, NumericalError, H2sError);

fn err(e: h2s_core::H2sError) -> PyErr {
    match e {
        h2s_core::H2sError::Numerical(_) | h2s_core::H2sError::Stage1Failed { .. } => {
            NumericalError::new_err(e.to_string())
        }
        _ => H2sError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| H2sError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn depth(d: u8) -> PyResult<Depth> {
    Depth::try_from(d).map_err(err)
}

fn run_length(iterations: u64, burn_in: Option<u64>, thin: u64) -> PyResult<RunLength> {
    let burn_in = match burn_in {
        Some(b) => b,
        None => RunLength::with_default_burn_in(iterations).map_err(err)?.burn_in,
    };
    RunLength::new(iterations, burn_in, thin).map_err(err)
}

fn spec_for(d: Depth, stage1_prior_variance: Option<f64>) -> PyResult<ModelSpec> {
    let mut spec = ModelSpec::for_depth(d);
    if let Some(v) = stage1_prior_variance {
        spec.stage1_theta_prior.variance = v;
    }
    spec.validate().map_err(err)?;
    Ok(spec)
}

#[pyclass(name = "Dataset", module = "h2s", frozen)]
pub struct PyDataset(h2s_core::Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (path, depth=None))]
    fn read_csv(path: PathBuf, depth: Option<u8>) -> PyResult<Self> {
        let d = depth.map(self::depth).transpose()?;
        Ok(PyDataset(h2s_core::Dataset::read_csv(&path, d).map_err(err)?))
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.0.write_csv(&path).map_err(err)
    }

    #[getter]
    fn depth(&self) -> u8 {
        self.0.depth.levels()
    }

    #[getter]
    fn group_ids(&self) -> Vec<u64> {
        self.0.groups.iter().map(|g| g.group_id).collect()
    }

    fn __len__(&self) -> usize {
        self.0.n_groups()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(depth={}, groups={})", self.0.depth.levels(), self.0.n_groups())
    }
}

#[pyclass(name = "Chain", module = "h2s", frozen)]
pub struct PyChain(h2s_core::ChainStore);

#[pymethods]
impl PyChain {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyChain(h2s_core::ChainStore::load(&dir).map_err(err)?))
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).map_err(err)
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.0.names().to_vec()
    }

    #[getter]
    fn meta<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.meta)
    }

    /// Retained draws of one parameter, e.g. `chain["theta[3]"]`.
    fn __getitem__(&self, name: &str) -> PyResult<Vec<f64>> {
        self.0
            .get(name)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PyKeyError::new_err(name.to_string()))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Chain(sampler={:?}, draws={}, parameters={})", self.0.meta.sampler, self.0.len(), self.0.names().len())
    }
}

#[pyclass(name = "Bank", module = "h2s", frozen)]
pub struct PyBank(h2s_core::SampleBank);

#[pymethods]
impl PyBank {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyBank(h2s_core::SampleBank::load(&path).map_err(err)?))
    }

    /// Every bank file in a directory, in group order.
    #[staticmethod]
    fn load_dir(dir: PathBuf) -> PyResult<Vec<Self>> {
        Ok(load_bank_dir(&dir).map_err(err)?.into_iter().map(PyBank).collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    fn export_csv(&self, path: PathBuf) -> PyResult<()> {
        self.0.export_csv(&path).map_err(err)
    }

    #[getter]
    fn group_id(&self) -> u64 {
        self.0.group_id
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.0.columns().to_vec()
    }

    #[getter]
    fn meta<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.meta)
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.0.column(name).ok_or_else(|| PyKeyError::new_err(name.to_string()))
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        self.0.to_bytes().map_err(err)
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        Ok(PyBank(h2s_core::SampleBank::from_bytes(&data).map_err(err)?))
    }

    fn __len__(&self) -> usize {
        self.0.rows()
    }

    fn __repr__(&self) -> String {
        format!("Bank(group_id={}, rows={}, columns={:?})", self.0.group_id, self.0.rows(), self.0.columns())
    }
}

/// Simulates a dataset; returns `(Dataset, truth dict)`.
#[pyfunction]
#[pyo3(signature = (groups, *, depth=3, per_group=2000, cells=7, per_cell=500, mu=25.0, tau2=1.5,
                    sigma2_mean=10.0, sigma2_var=1.0, seed=42))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    groups: usize,
    depth: u8,
    per_group: usize,
    cells: usize,
    per_cell: usize,
    mu: f64,
    tau2: f64,
    sigma2_mean: f64,
    sigma2_var: f64,
    seed: u64,
) -> PyResult<(PyDataset, Bound<'py, PyAny>)> {
    let mut cfg = match self::depth(depth)? {
        Depth::Three => h2s_core::SimConfig::three_level(groups, per_group, seed),
        Depth::Four => h2s_core::SimConfig::four_level(groups, cells, per_cell, seed),
    };
    cfg.true_mu = mu;
    cfg.true_tau2 = tau2;
    cfg.sigma2_mean = sigma2_mean;
    cfg.sigma2_var = sigma2_var;
    let (ds, truth) = py.detach(|| h2s_core::simulate(&cfg)).map_err(err)?;
    Ok((PyDataset(ds), to_py(py, &truth)?))
}

/// Full-data Gibbs sampler.
#[pyfunction]
#[pyo3(signature = (dataset, iterations=20000, *, burn_in=None, thin=1, seed=1, parallel=false))]
fn run_full(
    py: Python<'_>,
    dataset: &PyDataset,
    iterations: u64,
    burn_in: Option<u64>,
    thin: u64,
    seed: u64,
    parallel: bool,
) -> PyResult<PyChain> {
    let spec = spec_for(dataset.0.depth, None)?;
    let settings = h2s_core::GibbsSettings { run: run_length(iterations, burn_in, thin)?, seed, parallel_groups: parallel };
    let store = py.detach(|| h2s_core::run_full_gibbs(&dataset.0, &spec, &settings)).map_err(err)?;
    Ok(PyChain(store))
}

/// Stage 1: one bank per group. `draws` is one A for every group or a list.
#[pyfunction]
#[pyo3(signature = (dataset, draws=vec![20000], *, burn_in=2000, thin=1, seed=1, workers=None,
                    stage1_prior_variance=None))]
#[allow(clippy::too_many_arguments)]
fn run_stage1(
    py: Python<'_>,
    dataset: &PyDataset,
    draws: Vec<u64>,
    burn_in: u64,
    thin: u64,
    seed: u64,
    workers: Option<usize>,
    stage1_prior_variance: Option<f64>,
) -> PyResult<Vec<PyBank>> {
    let spec = spec_for(dataset.0.depth, stage1_prior_variance)?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let banks = py
        .detach(|| {
            h2s_core::run_stage1_all(&dataset.0, &spec, &draws, burn_in, thin, seed, workers)
                .and_then(Stage1Run::into_banks)
        })
        .map_err(err)?;
    Ok(banks.into_iter().map(PyBank).collect())
}

/// Stage 2 from banks alone; returns `(Chain, mh_stats dict)`.
#[pyfunction]
#[pyo3(signature = (banks, iterations=20000, *, burn_in=None, thin=1, seed=1, mode="exact", parallel=false))]
#[allow(clippy::too_many_arguments)]
fn run_stage2<'py>(
    py: Python<'py>,
    banks: Vec<PyRef<'py, PyBank>>,
    iterations: u64,
    burn_in: Option<u64>,
    thin: u64,
    seed: u64,
    mode: &str,
    parallel: bool,
) -> PyResult<(PyChain, Bound<'py, PyAny>)> {
    let banks: Vec<h2s_core::SampleBank> = banks.iter().map(|b| b.0.clone()).collect();
    let first = banks.first().ok_or_else(|| H2sError::new_err("need at least one bank"))?;
    let mut spec = ModelSpec::for_depth(first.depth());
    spec.stage1_theta_prior = first.meta.stage1_theta_prior;
    let mut settings = h2s_core::Stage2Settings::new(run_length(iterations, burn_in, thin)?, seed);
    settings.mode = mode.parse().map_err(err)?;
    settings.parallel_groups = parallel;
    let (store, stats) = py.detach(|| h2s_core::run_stage2(&banks, &spec, &settings)).map_err(err)?;
    Ok((PyChain(store), to_py(py, &stats)?))
}

/// Distance report between a reference and an alternative chain, as a dict.
#[pyfunction]
#[pyo3(signature = (reference, alternative, grid=metrics::DEFAULT_GRID_SIZE))]
fn compare<'py>(py: Python<'py>, reference: &PyChain, alternative: &PyChain, grid: usize) -> PyResult<Bound<'py, PyAny>> {
    let (rep, _) = py
        .detach(|| report::compare_chains(&reference.0, &alternative.0, grid, None))
        .map_err(err)?;
    to_py(py, &rep)
}

/// Gaussian KDE; returns `(grid, density, bandwidth)`.
#[pyfunction]
#[pyo3(signature = (samples, grid_size=metrics::DEFAULT_GRID_SIZE))]
fn kde(samples: Vec<f64>, grid_size: usize) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let d = metrics::kde(&samples, grid_size).map_err(err)?;
    Ok((d.grid, d.values, d.bandwidth))
}

/// Relative L1 and L2 distances between the KDEs of two samples.
#[pyfunction]
#[pyo3(signature = (reference, alternative, grid_size=metrics::DEFAULT_GRID_SIZE))]
fn distances(reference: Vec<f64>, alternative: Vec<f64>, grid_size: usize) -> PyResult<(f64, f64)> {
    let c = metrics::compare_samples(&reference, &alternative, grid_size).map_err(err)?;
    Ok((c.d1, c.d2))
}

#[pyfunction]
fn split_rhat(chain: Vec<f64>) -> PyResult<f64> {
    diagnostics::split_rhat(&chain).map_err(err)
}

#[pyfunction]
fn effective_sample_size(chain: Vec<f64>) -> PyResult<f64> {
    diagnostics::effective_sample_size(&chain).map_err(err)
}

#[pymodule]
fn h2s(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("H2sError", py.get_type::<H2sError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyChain>()?;
    m.add_class::<PyBank>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_full, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage1, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage2, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(kde, m)?)?;
    m.add_function(wrap_pyfunction!(distances, m)?)?;
    m.add_function(wrap_pyfunction!(split_rhat, m)?)?;
    m.add_function(wrap_pyfunction!(effective_sample_size, m)?)?;
    Ok(())
}
