//! Python bindings. Markets and matchings are classes; experiment results
//! come back as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use matchsim::counterfactual::{load_programs, load_roster, run_counterfactual};
use matchsim::da::{self, RunTrace};
use matchsim::experiments::{Engine, Harness, MetricStats, ThresholdKind, ThresholdSpec};
use matchsim::theory::{self, Regime};
use matchsim::{oracle, stats, Error, MarketConfig};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::TooLarge { .. } => {
            PyValueError::new_err(err.to_string())
        }
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

/// A market with `n` women and `n + k` men.
#[pyclass(name = "Market", frozen)]
struct PyMarket {
    inner: matchsim::Market,
}

#[pymethods]
impl PyMarket {
    /// Random market: every man lists `d` uniformly chosen women in random
    /// order, every woman ranks her suitors uniformly at random.
    #[staticmethod]
    fn generate(n: usize, k: i64, d: usize, seed: u64) -> PyResult<Self> {
        let cfg = MarketConfig::new(n, k, d, seed).map_err(to_py)?;
        let inner = matchsim::Market::generate(&cfg).map_err(to_py)?;
        Ok(PyMarket { inner })
    }

    /// Build from explicit lists, most preferred first.
    #[staticmethod]
    fn from_lists(men: Vec<Vec<usize>>, women: Vec<Vec<usize>>) -> PyResult<Self> {
        let inner = matchsim::Market::from_lists(&men, &women).map_err(to_py)?;
        Ok(PyMarket { inner })
    }

    #[getter]
    fn num_men(&self) -> usize {
        self.inner.num_men()
    }

    #[getter]
    fn num_women(&self) -> usize {
        self.inner.num_women()
    }

    fn man_list(&self, i: usize) -> PyResult<Vec<usize>> {
        check_index(i, self.inner.num_men(), "man")?;
        Ok(self.inner.man_list(i).iter().map(|&j| j as usize).collect())
    }

    fn woman_list(&self, j: usize) -> PyResult<Vec<usize>> {
        check_index(j, self.inner.num_women(), "woman")?;
        Ok(self
            .inner
            .woman_list(j)
            .iter()
            .map(|&i| i as usize)
            .collect())
    }

    /// `(men_lists, women_lists)`.
    fn to_lists(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        self.inner.to_lists()
    }

    fn count_components(&self) -> usize {
        stats::count_components(&self.inner)
    }

    /// Cumulative fractions of man pairs within `1..=max_hops` hops.
    #[pyo3(signature = (sample, max_hops = 3, seed = 0))]
    fn hop_fractions(&self, sample: usize, max_hops: usize, seed: u64) -> PyResult<Vec<f64>> {
        let mut rng = matchsim::rng::rng_from_seed(seed);
        stats::hop_fractions(&self.inner, sample, max_hops, &mut rng).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Market(men={}, women={}, edges={})",
            self.inner.num_men(),
            self.inner.num_women(),
            self.inner.num_edges()
        )
    }
}

fn check_index(idx: usize, len: usize, what: &str) -> PyResult<()> {
    if idx < len {
        Ok(())
    } else {
        Err(PyValueError::new_err(format!(
            "{what} {idx} out of range ({len})"
        )))
    }
}

#[pyclass(name = "Matching", frozen)]
struct PyMatching {
    inner: da::Matching,
}

#[pymethods]
impl PyMatching {
    fn wife(&self, i: usize) -> PyResult<Option<usize>> {
        check_index(i, self.inner.num_men(), "man")?;
        Ok(self.inner.wife(i))
    }

    fn husband(&self, j: usize) -> PyResult<Option<usize>> {
        check_index(j, self.inner.num_women(), "woman")?;
        Ok(self.inner.husband(j))
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        self.inner.pairs().collect()
    }

    fn unmatched_men(&self) -> Vec<usize> {
        self.inner.unmatched_men()
    }

    fn unmatched_women(&self) -> Vec<usize> {
        self.inner.unmatched_women()
    }

    fn __eq__(&self, other: &PyMatching) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Matching(pairs={})", self.inner.pairs().count())
    }
}

fn trace_dict<'py>(py: Python<'py>, trace: &RunTrace) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tau", trace.tau)?;
    let times: Vec<usize> = (0..trace.delta_m_series.len())
        .map(|i| trace.time_at(i))
        .collect();
    d.set_item("t", times)?;
    d.set_item("delta_m", trace.delta_m_series.clone())?;
    d.set_item("delta_w", trace.delta_w_series.clone())?;
    d.set_item("w_counts", trace.w_counts.clone())?;
    d.set_item("m_counts", trace.m_counts.clone())?;
    Ok(d)
}

/// Man-proposing deferred acceptance. Returns `(matching, trace)`.
#[pyfunction]
fn run_mosm<'py>(py: Python<'py>, market: &PyMarket) -> PyResult<(PyMatching, Bound<'py, PyDict>)> {
    let r = da::run_mosm(&market.inner);
    Ok((PyMatching { inner: r.matching }, trace_dict(py, &r.trace)?))
}

/// Woman-proposing deferred acceptance. Returns `(matching, trace)`.
#[pyfunction]
fn run_wosm<'py>(py: Python<'py>, market: &PyMarket) -> PyResult<(PyMatching, Bound<'py, PyDict>)> {
    let r = da::run_wosm(&market.inner);
    Ok((PyMatching { inner: r.matching }, trace_dict(py, &r.trace)?))
}

/// Average ranks and unmatched counts of `matching`.
#[pyfunction]
fn summarize<'py>(
    py: Python<'py>,
    market: &PyMarket,
    matching: &PyMatching,
) -> PyResult<Bound<'py, PyDict>> {
    let s = stats::summarize(&market.inner, &matching.inner).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("r_men", s.r_men)?;
    d.set_item("r_women", s.r_women)?;
    d.set_item("delta_m", s.delta_m)?;
    d.set_item("delta_w", s.delta_w)?;
    Ok(d)
}

#[pyfunction]
fn find_blocking_pair(market: &PyMarket, matching: &PyMatching) -> Option<(usize, usize)> {
    oracle::find_blocking_pair(&market.inner, &matching.inner)
}

/// Every stable matching, man-optimal first. Small markets only.
#[pyfunction]
fn enumerate_stable_matchings(market: &PyMarket) -> PyResult<Vec<PyMatching>> {
    let all = oracle::enumerate_stable_matchings(&market.inner).map_err(to_py)?;
    Ok(all.into_iter().map(|inner| PyMatching { inner }).collect())
}

fn stats_dict<'py>(py: Python<'py>, s: &MetricStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean", s.mean)?;
    d.set_item("std", s.std)?;
    d.set_item("p10", s.p10)?;
    d.set_item("p90", s.p90)?;
    d.set_item("count", s.count)?;
    Ok(d)
}

fn harness(workers: Option<usize>, lazy: bool, wosm: bool) -> PyResult<Harness> {
    Ok(Harness::new(workers)
        .map_err(to_py)?
        .with_engine(if lazy { Engine::Lazy } else { Engine::Eager })
        .with_wosm(wosm))
}

/// Replicate one `(n, k, d)` cell. Returns `{metric: {mean, std, p10, p90, count}}`.
#[pyfunction]
#[pyo3(signature = (n, k, d, reps, seed, workers = None, lazy = false, wosm = false))]
#[allow(clippy::too_many_arguments)]
fn run_replications<'py>(
    py: Python<'py>,
    n: usize,
    k: i64,
    d: usize,
    reps: usize,
    seed: u64,
    workers: Option<usize>,
    lazy: bool,
    wosm: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = MarketConfig::new(n, k, d, 0).map_err(to_py)?;
    let h = harness(workers, lazy, wosm)?;
    let summary = py
        .detach(|| h.run_replications(&cfg, reps, seed))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    for (metric, s) in &summary.metrics {
        out.set_item(metric.name(), stats_dict(py, s)?)?;
    }
    Ok(out)
}

fn threshold_kind(kind: &str) -> PyResult<ThresholdKind> {
    match kind.replace('-', "_").as_str() {
        "rank_gap" => Ok(ThresholdKind::RankGap),
        "unmatched_men" => Ok(ThresholdKind::UnmatchedMen),
        "connectivity" => Ok(ThresholdKind::Connectivity),
        other => Err(PyValueError::new_err(format!(
            "unknown threshold kind {other:?}; expected rank_gap, unmatched_men or connectivity"
        ))),
    }
}

/// Bisection for the smallest `d` where the statistic crosses its target.
/// Returns `{"d_star": int, "probes": [(d, value), ...]}`.
#[pyfunction]
#[pyo3(signature = (kind, n, reps, seed, target = None, d_lo = 1, d_hi = None, k = -1, workers = None))]
#[allow(clippy::too_many_arguments)]
fn find_threshold<'py>(
    py: Python<'py>,
    kind: &str,
    n: usize,
    reps: usize,
    seed: u64,
    target: Option<f64>,
    d_lo: usize,
    d_hi: Option<usize>,
    k: i64,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut spec =
        ThresholdSpec::new(threshold_kind(kind)?, n, reps).with_bounds(d_lo, d_hi.unwrap_or(n));
    spec.k = k;
    if let Some(t) = target {
        spec.target = t;
    }
    let h = harness(workers, false, false)?;
    let result = py.detach(|| h.find_threshold(&spec, seed)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("d_star", result.d_star)?;
    out.set_item("probes", result.probes)?;
    Ok(out)
}

/// Predicted ranks and unmatched count for `(n, k, d)`.
#[pyfunction]
fn predict<'py>(py: Python<'py>, n: usize, k: i64, d: usize) -> PyResult<Bound<'py, PyDict>> {
    let p = theory::predict(n, k, d);
    let out = PyDict::new(py);
    out.set_item("r_men", p.r_men)?;
    out.set_item("r_women", p.r_women)?;
    out.set_item("delta", p.delta)?;
    let regime = match p.regime {
        Regime::Moderate => "moderate",
        Regime::Dense => "dense",
        Regime::Complete => "complete",
    };
    out.set_item("regime", regime)?;
    Ok(out)
}

/// One school-choice counterfactual cell from roster and program CSVs.
#[pyfunction]
#[pyo3(signature = (roster, programs, delta, seed, randomized = false, ks = vec![1, 3]))]
fn counterfactual<'py>(
    py: Python<'py>,
    roster: PathBuf,
    programs: PathBuf,
    delta: i64,
    seed: u64,
    randomized: bool,
    ks: Vec<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let roster = load_roster(&roster).map_err(to_py)?;
    let programs = load_programs(&programs).map_err(to_py)?;
    let row =
        run_counterfactual(&roster, &programs, delta, seed, randomized, &ks).map_err(to_py)?;
    let out = PyDict::new(py);
    for (k, f) in &row.summary.top {
        out.set_item(format!("top{k}"), f)?;
    }
    out.set_item("unassigned", row.summary.unassigned)?;
    Ok(out)
}

#[pymodule(name = "matchsim")]
fn matchsim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarket>()?;
    m.add_class::<PyMatching>()?;
    m.add_function(wrap_pyfunction!(run_mosm, m)?)?;
    m.add_function(wrap_pyfunction!(run_wosm, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(find_blocking_pair, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_stable_matchings, m)?)?;
    m.add_function(wrap_pyfunction!(run_replications, m)?)?;
    m.add_function(wrap_pyfunction!(find_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(counterfactual, m)?)?;
    Ok(())
}

/// Register the module in `sys.modules` of an embedded interpreter.
pub fn register(py: Python<'_>) -> PyResult<()> {
    let module = PyModule::new(py, "matchsim")?;
    matchsim_module(&module)?;
    py.import("sys")?
        .getattr("modules")?
        .set_item("matchsim", module)?;
    Ok(())
}
