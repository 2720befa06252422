//! Python bindings: datasets, training, pruning, path metrics, TCAM mapping
//! and CAM simulation.

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use retention::camsim::{cost_report, random_instances, CamSimulator};
use retention::datasets::Profile;
use retention::ensemble::{self, oob_accuracy, train_forest, Prediction, TrainParams};
use retention::mapping::{self, Strategy};
use retention::pathspace::{self, extract_paths, PathSet};
use retention::pruning::{purity_threshold_prune_with, PruneConfig, SearchStrategy};
use retention::toolkit::{load_ensemble, save_ensemble, save_layout};
use retention::Error;

create_exception!(retention_py, InvariantError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_invariant_violation() => InvariantError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn prediction_to_py(py: Python<'_>, p: Prediction) -> PyResult<Py<PyAny>> {
    Ok(match p {
        Prediction::Class(c) => c.into_pyobject(py)?.into_any().unbind(),
        Prediction::Margin(m) => m.into_pyobject(py)?.into_any().unbind(),
    })
}

#[pyclass(module = "retention_py", skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: ensemble::Dataset,
}

#[pymethods]
impl Dataset {
    /// Rows of feature values and integer labels in `0..class_count`.
    #[new]
    #[pyo3(signature = (rows, labels, class_count=None))]
    fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>, class_count: Option<usize>) -> PyResult<Self> {
        let k = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |&m| m + 1));
        let inner = ensemble::Dataset::new(rows, labels, k).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// CSV with a header row; the last column is the label.
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        let inner = ensemble::Dataset::from_csv_path(path).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Synthetic profile: adult, credit_approval, dry_bean, letter or wine.
    #[staticmethod]
    #[pyo3(signature = (name, size=None, seed=42))]
    fn profile(name: &str, size: Option<usize>, seed: u64) -> PyResult<Self> {
        let p: Profile = name.parse().map_err(to_py)?;
        let inner = p.generate(size.unwrap_or(p.desk_size()), seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn split(&self, train_fraction: f64, seed: u64) -> PyResult<(Dataset, Dataset)> {
        let (a, b) = self.inner.split(train_fraction, seed).map_err(to_py)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows().map(<[f64]>::to_vec).collect()
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn feature_count(&self) -> usize {
        self.inner.feature_count()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(len={}, features={}, classes={})",
            self.inner.len(),
            self.inner.feature_count(),
            self.inner.class_count()
        )
    }
}

#[pyclass(module = "retention_py", skip_from_py_object)]
#[derive(Clone)]
struct Ensemble {
    inner: ensemble::Ensemble,
}

#[pymethods]
impl Ensemble {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_ensemble(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_ensemble(&self.inner, path).map_err(to_py)
    }

    /// Class id for vote models, per-group margins for margin models.
    fn predict(&self, py: Python<'_>, instance: Vec<f64>) -> PyResult<Py<PyAny>> {
        prediction_to_py(py, self.inner.predict(&instance).map_err(to_py)?)
    }

    fn predict_class(&self, instance: Vec<f64>) -> PyResult<usize> {
        self.inner.predict_class(&instance).map_err(to_py)
    }

    fn accuracy(&self, data: &Dataset) -> PyResult<f64> {
        self.inner.accuracy(&data.inner).map_err(to_py)
    }

    fn oob_accuracy(&self, data: &Dataset) -> PyResult<f64> {
        oob_accuracy(&self.inner, &data.inner).map_err(to_py)
    }

    #[getter]
    fn tree_count(&self) -> usize {
        self.inner.trees().len()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn is_prunable(&self) -> bool {
        self.inner.is_prunable()
    }

    fn __repr__(&self) -> String {
        format!(
            "Ensemble(trees={}, nodes={})",
            self.inner.trees().len(),
            self.inner.node_count()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (data, num_trees=100, seed=42, mtry=None, max_depth=None, min_samples_leaf=1))]
fn train(
    py: Python<'_>,
    data: &Dataset,
    num_trees: usize,
    seed: u64,
    mtry: Option<usize>,
    max_depth: Option<usize>,
    min_samples_leaf: usize,
) -> PyResult<Ensemble> {
    let params = TrainParams {
        mtry,
        max_depth,
        min_samples_leaf,
        ..TrainParams::new(num_trees, seed)
    };
    let inner = py.detach(|| train_forest(&data.inner, &params)).map_err(to_py)?;
    Ok(Ensemble { inner })
}

/// Purity-threshold pruning under an OOB accuracy-loss tolerance (a fraction).
#[pyfunction]
#[pyo3(signature = (model, data, tolerance, exhaustive=false))]
fn prune<'py>(
    py: Python<'py>,
    model: &Ensemble,
    data: &Dataset,
    tolerance: f64,
    exhaustive: bool,
) -> PyResult<(Ensemble, Bound<'py, PyDict>)> {
    let search = if exhaustive {
        SearchStrategy::Exhaustive
    } else {
        SearchStrategy::Binary
    };
    let cfg = PruneConfig::new(tolerance).with_search(search);
    let r = py
        .detach(|| purity_threshold_prune_with(&model.inner, &data.inner, &cfg))
        .map_err(to_py)?;
    let info = PyDict::new(py);
    info.set_item("threshold", r.threshold)?;
    info.set_item("oob_before", r.oob_before)?;
    info.set_item("oob_after", r.oob_after)?;
    info.set_item("nodes_removed", r.nodes_removed)?;
    info.set_item("evaluations", r.evaluations)?;
    Ok((Ensemble { inner: r.pruned }, info))
}

/// Path count, unique conditions, lengths, redundancy and sizes in MB.
#[pyfunction]
fn path_stats<'py>(py: Python<'py>, model: &Ensemble) -> PyResult<Bound<'py, PyDict>> {
    let paths = extract_paths(&model.inner);
    let st = paths.stats();
    let size = paths.size();
    let d = PyDict::new(py);
    d.set_item("path_count", st.path_count)?;
    d.set_item("unique_condition_count", st.unique_condition_count)?;
    d.set_item("avg_path_length", st.avg_path_length)?;
    d.set_item("max_path_length", st.max_path_length)?;
    d.set_item("redundancy", paths.redundancy())?;
    d.set_item("nominal_size_mb", size.nominal_mib())?;
    d.set_item("physical_size_mb", size.physical_mib())?;
    Ok(d)
}

/// `(nominal, physical)` unified layout size in MB.
#[pyfunction]
fn layout_size(path_count: usize, unique_condition_count: usize) -> (f64, f64) {
    let s = pathspace::layout_size(path_count, unique_condition_count);
    (s.nominal_mib(), s.physical_mib())
}

#[pyfunction]
fn estimate_condition_checks(feature_count: usize, unique_condition_count: usize) -> f64 {
    pathspace::estimate_condition_checks(feature_count, unique_condition_count)
}

#[pyfunction]
fn redundancy(avg_path_length: f64, unique_condition_count: usize) -> f64 {
    pathspace::redundancy_from_counts(avg_path_length, unique_condition_count)
}

/// A model mapped onto `S x S` TCAM blocks.
#[pyclass(module = "retention_py")]
struct Layout {
    model: ensemble::Ensemble,
    paths: PathSet,
    inner: mapping::Layout,
}

impl Layout {
    fn simulator(&self) -> PyResult<CamSimulator<'_>> {
        CamSimulator::new(&self.inner, &self.paths).map_err(to_py)
    }
}

#[pymethods]
impl Layout {
    #[getter]
    fn strategy(&self) -> &'static str {
        self.inner.strategy.name()
    }

    #[getter]
    fn tcam_size(&self) -> usize {
        self.inner.tcam_size
    }

    #[getter]
    fn tcam_count(&self) -> usize {
        self.inner.total_tcams()
    }

    fn cost<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = cost_report(&self.inner, &self.paths);
        let d = PyDict::new(py);
        d.set_item("tcam_count", c.tcam_count)?;
        d.set_item("query_bits_total", c.query_bits_total)?;
        d.set_item("shared_query_bits", c.shared_query_bits)?;
        d.set_item("condition_checks", c.condition_checks)?;
        d.set_item("retrieval_ops", c.retrieval_ops)?;
        Ok(d)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_layout(&self.inner, path).map_err(to_py)
    }

    /// CAM prediction of one instance, in the same shape as `Ensemble.predict`.
    fn predict(&self, py: Python<'_>, instance: Vec<f64>) -> PyResult<Py<PyAny>> {
        prediction_to_py(py, self.simulator()?.predict(&instance).map_err(to_py)?)
    }

    /// Runs instances (or `random` generated queries) through the CAM and
    /// returns how many predictions differ from tree traversal.
    #[pyo3(signature = (instances=None, random=1000, seed=7))]
    fn simulate(&self, py: Python<'_>, instances: Option<Vec<Vec<f64>>>, random: usize, seed: u64) -> PyResult<usize> {
        let queries = instances.unwrap_or_else(|| random_instances(self.paths.index(), random, seed));
        let sim = self.simulator()?;
        py.detach(|| {
            let mut mismatches = 0;
            for x in &queries {
                if sim.predict(x)? != self.model.predict(x)? {
                    mismatches += 1;
                }
            }
            Ok(mismatches)
        })
        .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Layout(strategy={}, tcam_size={}, tcams={})",
            self.inner.strategy,
            self.inner.tcam_size,
            self.inner.total_tcams()
        )
    }
}

/// Maps a model with one of unified, independent, fr, odr or spc.
#[pyfunction]
#[pyo3(name = "map", signature = (model, strategy, tcam_size=64))]
fn map_model(py: Python<'_>, model: &Ensemble, strategy: &str, tcam_size: usize) -> PyResult<Layout> {
    let st: Strategy = strategy.parse().map_err(to_py)?;
    let model = model.inner.clone();
    py.detach(move || {
        let paths = extract_paths(&model);
        let inner = mapping::map(&paths, st, tcam_size)?;
        inner.validate(&paths)?;
        Ok(Layout { model, paths, inner })
    })
    .map_err(to_py)
}

/// Block count of `strategy` at `tcam_size`.
#[pyfunction]
fn tcam_count(model: &Ensemble, strategy: &str, tcam_size: usize) -> PyResult<usize> {
    let st: Strategy = strategy.parse().map_err(to_py)?;
    let paths = extract_paths(&model.inner);
    Ok(mapping::map(&paths, st, tcam_size).map_err(to_py)?.total_tcams())
}

#[pymodule]
fn retention_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Ensemble>()?;
    m.add_class::<Layout>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(prune, m)?)?;
    m.add_function(wrap_pyfunction!(path_stats, m)?)?;
    m.add_function(wrap_pyfunction!(layout_size, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_condition_checks, m)?)?;
    m.add_function(wrap_pyfunction!(redundancy, m)?)?;
    m.add_function(wrap_pyfunction!(map_model, m)?)?;
    m.add_function(wrap_pyfunction!(tcam_count, m)?)?;
    m.add("InvariantError", m.py().get_type::<InvariantError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
