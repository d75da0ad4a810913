//! Python bindings: experiment config, data collection, training,
//! generation and evaluation.

use std::collections::BTreeMap;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use diffbid::checkpoint::{load_bundle, save_bundle};
use diffbid::config::ExperimentConfig;
use diffbid::dataset::{dataset_load, dataset_save};
use diffbid::eval::{evaluate, evaluate_pacing, train_bundle, BudgetMetrics, PolicyBundle};
use diffbid::sampler::generate_trajectory;
use diffbid::types::{TrajectoryDataset, STATE_DIM};

fn err(e: diffbid::Error) -> PyErr {
    match e {
        diffbid::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Row = BTreeMap<&'static str, f64>;

fn rows(metrics: &[BudgetMetrics]) -> Vec<Row> {
    metrics
        .iter()
        .map(|m| {
            BTreeMap::from([
                ("budget", m.budget),
                ("top_k_score", m.top_k_score),
                ("mean_score", m.mean_score),
                ("std_score", m.std_score),
                ("mean_cost", m.mean_cost),
                ("oracle", m.oracle),
                ("oracle_ratio", m.oracle_ratio),
                ("failed_runs", m.failed_runs as f64),
            ])
        })
        .collect()
}

/// Experiment configuration parsed from TOML; an empty string gives defaults.
#[pyclass(name = "ExperimentConfig", module = "diffbid_py")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = ""))]
    fn new(toml: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::from_toml(toml).map_err(err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(err)
    }

    #[getter]
    fn condition_layout(&self) -> Vec<String> {
        self.inner.conditions.layout.clone()
    }
}

/// Logged trajectories with their normalization statistics.
#[pyclass(name = "Dataset", module = "diffbid_py")]
struct PyDataset {
    inner: TrajectoryDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: dataset_load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        dataset_save(&self.inner, path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Total reward of every trajectory.
    fn returns(&self) -> Vec<f64> {
        self.inner.trajectories.iter().map(|t| t.total_return()).collect()
    }

    /// Raw `T × 5` state rows of trajectory `i`.
    fn states(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        let t = self.inner.trajectories.get(i).ok_or_else(|| PyValueError::new_err(format!("no trajectory {i}")))?;
        Ok(t.steps.iter().map(|s| s.state.to_array().to_vec()).collect())
    }

    /// Bidding parameters applied at each period of trajectory `i`.
    fn actions(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        let t = self.inner.trajectories.get(i).ok_or_else(|| PyValueError::new_err(format!("no trajectory {i}")))?;
        Ok(t.steps.iter().map(|s| s.action.lambdas.clone()).collect())
    }
}

/// Trained denoiser, inverse dynamics and everything needed to bid.
#[pyclass(name = "PolicyBundle", module = "diffbid_py")]
struct PyBundle {
    inner: PolicyBundle,
}

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyBundle {
            inner: load_bundle(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_bundle(path, &self.inner).map_err(err)
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.denoiser.net.n_params()
    }

    #[getter]
    fn diffusion_steps(&self) -> usize {
        self.inner.schedule.steps
    }

    /// Completes a raw state history into a full raw trajectory. `condition`
    /// maps slot names to values; `None` uses the unconditional token.
    #[pyo3(signature = (history, condition = None, seed = 0))]
    fn generate(&self, history: Vec<Vec<f64>>, condition: Option<BTreeMap<String, f64>>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let b = &self.inner;
        if history.iter().any(|r| r.len() != STATE_DIM) {
            return Err(PyValueError::new_err(format!("history rows must have {STATE_DIM} values")));
        }
        let hist = Array2::from_shape_fn((history.len(), STATE_DIM), |(i, d)| b.feature_stats.normalize_value(d, history[i][d]));
        let y = match condition {
            Some(pairs) => {
                let ret = pairs.get("return").copied();
                let ind: Vec<(&str, f64)> = pairs.iter().filter(|(k, _)| k.as_str() != "return").map(|(k, v)| (k.as_str(), *v)).collect();
                diffbid::conditions::compose_condition(b.layout(), ret, &ind).map_err(err)?.as_input()
            }
            None => None,
        };
        let plan = generate_trajectory(&b.denoiser, &b.schedule, hist.view(), b.horizon, y.as_deref(), &b.sampler, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(err)?;
        Ok(b.feature_stats.denormalize_matrix(&plan).outer_iter().map(|r| r.to_vec()).collect())
    }
}

/// Collects trajectories from exploring pacing agents.
#[pyfunction]
fn collect(config: &PyConfig) -> PyResult<PyDataset> {
    let c = &config.inner;
    Ok(PyDataset {
        inner: diffbid::agents::collect_dataset(&c.env, &c.agent, c.collect.n_trajectories, c.collect.explore_sigma).map_err(err)?,
    })
}

/// Trains the denoiser and inverse dynamics on `dataset`.
#[pyfunction]
fn train(py: Python<'_>, config: &PyConfig, dataset: &PyDataset) -> PyResult<PyBundle> {
    let c = &config.inner;
    let layout = c.conditions.layout().map_err(err)?;
    let den = c.denoiser_config().map_err(err)?;
    let (bundle, _) = py
        .detach(|| {
            train_bundle(
                &dataset.inner,
                &layout,
                &c.conditions.thresholds,
                &c.diffusion,
                &den,
                &c.train,
                &c.invdyn,
                &c.invdyn_train,
                &c.sampler,
            )
        })
        .map_err(err)?;
    Ok(PyBundle { inner: bundle })
}

/// Per-budget metrics of the DiffBid policy under the config's target condition.
#[pyfunction]
fn evaluate_policy(py: Python<'_>, config: &PyConfig, bundle: &PyBundle) -> PyResult<Vec<Row>> {
    let c = &config.inner;
    let y = c.conditions.target_vector().map_err(err)?;
    let res = py.detach(|| evaluate(&bundle.inner, &y, &c.env, &c.agent, &c.eval)).map_err(err)?;
    Ok(rows(&res.rows))
}

/// Per-budget metrics of the pacing behavior policy.
#[pyfunction]
fn evaluate_baseline(py: Python<'_>, config: &PyConfig) -> PyResult<Vec<Row>> {
    let c = &config.inner;
    let res = py.detach(|| evaluate_pacing(&c.env, &c.agent, &c.eval)).map_err(err)?;
    Ok(rows(&res.rows))
}

/// Greedy hindsight oracle over `(value, cost)` items: `(value, cost, lambda_star)`.
#[pyfunction]
fn hindsight_oracle(items: Vec<(f64, f64)>, budget: f64) -> (f64, f64, f64) {
    let o = diffbid::oracle::hindsight_oracle(&items, budget);
    (o.total_value, o.total_cost, o.lambda_star)
}

/// `ᾱ_0..=ᾱ_K` of the cosine schedule.
#[pyfunction]
#[pyo3(signature = (steps, gamma = 0.008))]
fn cosine_alpha_bar(steps: usize, gamma: f64) -> PyResult<Vec<f64>> {
    Ok(diffbid::schedule::NoiseSchedule::cosine(steps, gamma, false).map_err(err)?.alpha_bar)
}

#[pymodule]
fn diffbid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyBundle>()?;
    m.add_function(wrap_pyfunction!(collect, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_policy, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(hindsight_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_alpha_bar, m)?)?;
    Ok(())
}
