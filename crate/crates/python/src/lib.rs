//! Python bindings for `cpf`.
//!
//! ```python
//! import cpf_py
//! data = cpf_py.Dataset.from_csv("blobs.csv", truth_col="class")
//! result = cpf_py.cluster(data, k=12)
//! print(result.cluster_count, cpf_py.external_indices(result.labels, data.truth))
//! ```

use std::collections::HashMap;

use cpf::dataset::{self, LoadOptions, MixedDataset, WeightScheme};
use cpf::neighbors::{knn_search, KnnBackend};
use cpf::pipeline::{self, ClusteringResult, CpfParams};
use cpf::validation::{self, ExternalIndices, OutlierPolicy};
use cpf::{metric, CpfError};
use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: CpfError) -> PyErr {
    match e {
        CpfError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn scheme(name: &str) -> PyResult<WeightScheme> {
    name.parse().map_err(py_err)
}

fn backend(name: &str, seed: u64) -> PyResult<KnnBackend> {
    Ok(match name {
        "exact" => KnnBackend::Exact,
        "brute" => KnnBackend::BruteForce,
        "kdtree" => KnnBackend::KdTree,
        "approx" => KnnBackend::Approximate { seed },
        other => return Err(PyValueError::new_err(format!("unknown backend `{other}`"))),
    })
}

fn policy(exclude_outliers: bool) -> OutlierPolicy {
    if exclude_outliers {
        OutlierPolicy::Exclude
    } else {
        OutlierPolicy::OwnCluster
    }
}

fn indices_dict(i: &ExternalIndices) -> HashMap<&'static str, f64> {
    HashMap::from([("ari", i.ari), ("nmi", i.nmi), ("purity", i.purity), ("f1", i.f1), ("ca", i.ca)])
}

/// Encoded mixed-type data set.
#[pyclass(module = "cpf_py", frozen)]
struct Dataset {
    inner: MixedDataset,
}

#[pymethods]
impl Dataset {
    /// Loads a delimited file, fits the encoding and encodes it.
    #[staticmethod]
    #[pyo3(signature = (path, truth_col=None, categorical=Vec::new(), weights="w1", delimiter=','))]
    fn from_csv(
        path: &str,
        truth_col: Option<String>,
        categorical: Vec<String>,
        weights: &str,
        delimiter: char,
    ) -> PyResult<Self> {
        let delimiter = u8::try_from(delimiter)
            .map_err(|_| PyValueError::new_err("delimiter must be a single byte"))?;
        let opts = LoadOptions {
            delimiter,
            schema: None,
            categorical,
            label_column: truth_col,
        };
        let table = dataset::load_table(path, &opts).map_err(py_err)?;
        let model = dataset::fit_encoding(&table, scheme(weights)?).map_err(py_err)?;
        let inner = dataset::encode(&table, &model).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Purely numeric points taken as already standardized.
    #[staticmethod]
    #[pyo3(signature = (points, truth=None))]
    fn from_points(points: Vec<Vec<f64>>, truth: Option<Vec<usize>>) -> PyResult<Self> {
        let mut inner = MixedDataset::from_points(points).map_err(py_err)?;
        if let Some(t) = truth {
            inner = inner.with_truth(t).map_err(py_err)?;
        }
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Ground-truth class ids, if a truth column was given.
    #[getter]
    fn truth(&self) -> Option<Vec<usize>> {
        self.inner.truth().map(<[usize]>::to_vec)
    }

    /// Encoding model (category weights, feature weights, trim statistics) as JSON.
    fn model_json(&self) -> PyResult<String> {
        self.inner.model().to_json().map_err(py_err)
    }

    fn distance(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.inner.len();
        if i >= n || j >= n {
            return Err(PyIndexError::new_err(format!("index out of range for {n} points")));
        }
        Ok(metric::distance(&self.inner, i, j))
    }

    /// Copy with the category weights of attribute `attr` multiplied by `factor`.
    fn rescaled(&self, attr: usize, factor: f64) -> PyResult<Self> {
        if attr >= self.inner.categorical_dims() {
            return Err(PyIndexError::new_err("no such categorical attribute"));
        }
        let mut inner = self.inner.clone();
        inner.rescale_category_weights(attr, factor);
        Ok(Self { inner })
    }

    /// `k` nearest neighbors of every point as `(index, distance)` lists.
    #[pyo3(signature = (k, backend="exact", seed=0))]
    fn knn(&self, py: Python<'_>, k: usize, backend: &str, seed: u64) -> PyResult<Vec<Vec<(usize, f64)>>> {
        let b = self::backend(backend, seed)?;
        let lists = py.detach(|| knn_search(&self.inner, k, b)).map_err(py_err)?;
        Ok((0..lists.len())
            .map(|i| {
                lists
                    .neighbors(i)
                    .iter()
                    .zip(lists.sq_distances(i))
                    .map(|(&j, &sq)| (j, sq.sqrt()))
                    .collect()
            })
            .collect())
    }
}

/// Labels and per-component decisions of one run.
#[pyclass(module = "cpf_py", frozen, get_all)]
struct Clustering {
    /// One label per point; -1 marks outliers.
    labels: Vec<i64>,
    cluster_count: usize,
    outlier_count: usize,
    cluster_sizes: Vec<usize>,
    /// Component id per point, -1 for isolated points.
    components: Vec<i64>,
    /// Selected number of centers per component.
    beta_star: Vec<usize>,
    /// Seconds per stage, plus `total`.
    timings: HashMap<&'static str, f64>,
}

impl From<ClusteringResult> for Clustering {
    fn from(r: ClusteringResult) -> Self {
        let t = r.timings;
        Self {
            cluster_sizes: r.cluster_sizes(),
            components: r
                .partition
                .component_of
                .iter()
                .map(|c| c.map_or(-1, |c| c as i64))
                .collect(),
            beta_star: r.components.iter().map(|c| c.trace.beta_star).collect(),
            timings: HashMap::from([
                ("knn", t.knn),
                ("graph", t.graph),
                ("components", t.components),
                ("density", t.density),
                ("big_brother", t.big_brother),
                ("selection", t.selection),
                ("assignment", t.assignment),
                ("total", t.total),
            ]),
            labels: r.labels,
            cluster_count: r.cluster_count,
            outlier_count: r.outlier_count,
        }
    }
}

#[pymethods]
impl Clustering {
    fn __repr__(&self) -> String {
        format!(
            "Clustering(clusters={}, outliers={}, n={})",
            self.cluster_count,
            self.outlier_count,
            self.labels.len()
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn params(
    k: usize,
    density_k: Option<usize>,
    beta: usize,
    k_cap: usize,
    threads: Option<usize>,
    backend: &str,
    seed: u64,
) -> PyResult<CpfParams> {
    Ok(CpfParams {
        density_k,
        beta,
        k_cap,
        threads,
        backend: self::backend(backend, seed)?,
        ..CpfParams::new(k)
    })
}

#[pyfunction]
#[pyo3(signature = (data, k, density_k=None, beta=pipeline::DEFAULT_BETA, k_cap=cpf::peaks::DEFAULT_K_CAP, threads=None, backend="exact", seed=0))]
#[allow(clippy::too_many_arguments)]
fn cluster(
    py: Python<'_>,
    data: &Dataset,
    k: usize,
    density_k: Option<usize>,
    beta: usize,
    k_cap: usize,
    threads: Option<usize>,
    backend: &str,
    seed: u64,
) -> PyResult<Clustering> {
    let p = params(k, density_k, beta, k_cap, threads, backend, seed)?;
    let result = py.detach(|| pipeline::cluster(&data.inner, &p)).map_err(py_err)?;
    Ok(result.into())
}

/// ARI, NMI, purity, pairwise F1 and clustering accuracy.
#[pyfunction]
#[pyo3(signature = (pred, truth, exclude_outliers=false))]
fn external_indices(pred: Vec<i64>, truth: Vec<i64>, exclude_outliers: bool) -> PyResult<HashMap<&'static str, f64>> {
    let i = validation::external_indices(&pred, &truth, policy(exclude_outliers)).map_err(py_err)?;
    Ok(indices_dict(&i))
}

/// Scores every `(k, K)` grid point against the data set's truth labels.
#[pyfunction]
#[pyo3(signature = (data, ks, density_ks, beta=pipeline::DEFAULT_BETA, exclude_outliers=false))]
fn sweep(
    py: Python<'_>,
    data: &Dataset,
    ks: Vec<usize>,
    density_ks: Vec<usize>,
    beta: usize,
    exclude_outliers: bool,
) -> PyResult<Vec<HashMap<&'static str, f64>>> {
    let truth = data
        .inner
        .truth()
        .ok_or_else(|| PyValueError::new_err("sweep needs a data set with truth labels"))?
        .to_vec();
    let first = *ks.first().ok_or_else(|| PyValueError::new_err("empty k grid"))?;
    let base = CpfParams {
        beta,
        ..CpfParams::new(first)
    };
    let result = py
        .detach(|| pipeline::sweep(&data.inner, &ks, &density_ks, &base, &truth, policy(exclude_outliers)))
        .map_err(py_err)?;
    Ok(result
        .rows
        .iter()
        .map(|row| {
            let mut d = indices_dict(&row.indices);
            d.insert("k", row.k as f64);
            d.insert("K", row.density_k as f64);
            d.insert("clusters", row.clusters as f64);
            d.insert("outliers", row.outliers as f64);
            d
        })
        .collect())
}

#[pymodule]
fn cpf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Clustering>()?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(external_indices, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
