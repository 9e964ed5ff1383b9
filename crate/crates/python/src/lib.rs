use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use rmips::index::{build_index, BuildConfig};
use rmips::ingest::{generate as generate_dataset, DatasetSpec, VectorDistribution, DEFAULT_NORM_SIGMA};
use rmips::oracle;
use rmips::persist::{load_index_from_path, save_index_to_path};
use rmips::{QueryOptions, Record};

create_exception!(rmips_py, RmipsError, PyException);

fn to_py(e: rmips::Error) -> PyErr {
    RmipsError::new_err(e.to_string())
}

fn records(rows: Vec<Vec<f64>>, ids: Option<Vec<u64>>) -> PyResult<Vec<Record>> {
    if let Some(ids) = &ids {
        if ids.len() != rows.len() {
            return Err(RmipsError::new_err(format!(
                "{} ids given for {} vectors",
                ids.len(),
                rows.len()
            )));
        }
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, v)| {
            let id = ids.as_ref().map_or(i as u64, |ids| ids[i]);
            Record::from_components(id, v).map_err(to_py)
        })
        .collect()
}

fn rows(records: &[Record]) -> (Vec<u64>, Vec<Vec<f64>>) {
    records.iter().map(|r| (r.id, r.vector.as_slice().to_vec())).unzip()
}

/// Outcome of one reverse k-MIPS query.
#[pyclass(name = "QueryReport", frozen, get_all)]
struct PyQueryReport {
    result_ids: Vec<u64>,
    ip_count: u64,
    blocks_total: usize,
    blocks_pruned: usize,
    alpha: f64,
    lower_bound_evaluations: u64,
    scanned_users: u64,
    mean_scan_length: f64,
    elapsed_seconds: f64,
    rebuilt: bool,
}

#[pymethods]
impl PyQueryReport {
    fn __repr__(&self) -> String {
        format!(
            "QueryReport(results={}, ip_count={}, alpha={:.4})",
            self.result_ids.len(),
            self.ip_count,
            self.alpha
        )
    }
}

/// Pre-built reverse k-MIPS index over user and item vectors.
#[pyclass(name = "Index", frozen)]
struct PyIndex {
    inner: rmips::Index,
}

#[pymethods]
impl PyIndex {
    #[new]
    #[pyo3(signature = (users, items, k_max = 25, pool_factor = 2, user_ids = None, item_ids = None))]
    fn new(
        py: Python<'_>,
        users: Vec<Vec<f64>>,
        items: Vec<Vec<f64>>,
        k_max: usize,
        pool_factor: usize,
        user_ids: Option<Vec<u64>>,
        item_ids: Option<Vec<u64>>,
    ) -> PyResult<Self> {
        let users = records(users, user_ids)?;
        let items = records(items, item_ids)?;
        let config = BuildConfig {
            k_max,
            candidate_pool_factor: pool_factor,
        };
        let inner = py.detach(|| build_index(&users, &items, config)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_index_from_path(path).map_err(to_py)?,
        })
    }

    /// Writes the index; returns the byte count.
    fn save(&self, path: std::path::PathBuf) -> PyResult<u64> {
        save_index_to_path(&self.inner, path).map_err(to_py)
    }

    #[pyo3(signature = (q, k, workers = 1, use_blocks = true))]
    fn query(
        &self,
        py: Python<'_>,
        q: Vec<f64>,
        k: usize,
        workers: usize,
        use_blocks: bool,
    ) -> PyResult<PyQueryReport> {
        let options = QueryOptions {
            use_blocks,
            trace: false,
        };
        let r = py
            .detach(|| rmips::reverse_kmips_parallel_with(&self.inner, &q, k, workers, options))
            .map_err(to_py)?;
        Ok(PyQueryReport {
            result_ids: r.result_ids,
            ip_count: r.ip_count,
            blocks_total: r.blocks_total,
            blocks_pruned: r.blocks_pruned,
            alpha: r.alpha,
            lower_bound_evaluations: r.lower_bound_evaluations,
            scanned_users: r.scanned_users,
            mean_scan_length: r.mean_scan_length,
            elapsed_seconds: r.elapsed_seconds,
            rebuilt: r.rebuild_seconds.is_some(),
        })
    }

    /// Users as `(ids, vectors)` in norm-descending order.
    fn users(&self) -> (Vec<u64>, Vec<Vec<f64>>) {
        rows(&self.inner.user_records())
    }

    /// Items as `(ids, vectors)` in norm-descending order.
    fn items(&self) -> (Vec<u64>, Vec<Vec<f64>>) {
        rows(&self.inner.item_records())
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn k_max(&self) -> usize {
        self.inner.k_max()
    }

    #[getter]
    fn num_blocks(&self) -> usize {
        self.inner.blocks().len()
    }

    #[getter]
    fn build_seconds(&self) -> f64 {
        self.inner.stats().build_seconds
    }

    fn __repr__(&self) -> String {
        format!(
            "Index(n={}, m={}, dim={}, k_max={}, blocks={})",
            self.inner.n(),
            self.inner.m(),
            self.inner.dim(),
            self.inner.k_max(),
            self.inner.blocks().len()
        )
    }
}

#[pyfunction]
fn inner_product(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    rmips::inner_product(&a, &b).map_err(to_py)
}

#[pyfunction]
fn euclidean_norm(a: Vec<f64>) -> f64 {
    rmips::euclidean_norm(&a)
}

/// Brute-force reverse k-MIPS, for cross-checking.
#[pyfunction]
#[pyo3(signature = (users, items, q, k, user_ids = None))]
fn brute_reverse_kmips(
    users: Vec<Vec<f64>>,
    items: Vec<Vec<f64>>,
    q: Vec<f64>,
    k: usize,
    user_ids: Option<Vec<u64>>,
) -> PyResult<Vec<u64>> {
    let users = records(users, user_ids)?;
    let items = records(items, None)?;
    Ok(oracle::brute_reverse_kmips(&users, &items, &q, k))
}

type Rows = Vec<Vec<f64>>;

/// Synthetic `(users, items)` as lists of vectors.
#[pyfunction]
#[pyo3(signature = (n, m, d, distribution = "norm-skewed", seed = 0, sigma = DEFAULT_NORM_SIGMA))]
fn generate(n: usize, m: usize, d: usize, distribution: &str, seed: u64, sigma: f64) -> PyResult<(Rows, Rows)> {
    let distribution = match distribution {
        "uniform" => VectorDistribution::Uniform,
        "gaussian" => VectorDistribution::Gaussian,
        "norm-skewed" => VectorDistribution::NormSkewed { sigma },
        other => return Err(RmipsError::new_err(format!("unknown distribution {other:?}"))),
    };
    let (users, items) = generate_dataset(&DatasetSpec {
        n,
        m,
        d,
        distribution,
        seed,
    })
    .map_err(to_py)?;
    Ok((rows(&users).1, rows(&items).1))
}

#[pymodule]
fn rmips_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIndex>()?;
    m.add_class::<PyQueryReport>()?;
    m.add_function(wrap_pyfunction!(inner_product, m)?)?;
    m.add_function(wrap_pyfunction!(euclidean_norm, m)?)?;
    m.add_function(wrap_pyfunction!(brute_reverse_kmips, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add("RmipsError", m.py().get_type::<RmipsError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
