use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use descrec::corpus::{self, InteractionMatrix, Interaction, RawInteractions};
use descrec::descriptor;
use descrec::embedder::{encode_texts, EmbeddingMatrix, StubEncoder};
use descrec::eval::{self, RankingResult};
use descrec::graph::{self, GraphConfig, GraphVariant, RefinedGraph, SparseGraph};
use descrec::pipeline::{self, PipelineConfig, PipelineError, RunOptions, Status};

create_exception!(descrec, DescrecError, PyException);
create_exception!(descrec, StageMissingError, DescrecError);
create_exception!(descrec, StaleStageError, DescrecError);
create_exception!(descrec, ConfigError, DescrecError);

fn err(e: impl std::fmt::Display) -> PyErr {
    DescrecError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    let msg = e.to_string();
    match e {
        PipelineError::StageMissing(_) => StageMissingError::new_err(msg),
        PipelineError::Stale { .. } => StaleStageError::new_err(msg),
        e if e.exit_code() == 4 => ConfigError::new_err(msg),
        _ => DescrecError::new_err(msg),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<EmbeddingMatrix> {
    EmbeddingMatrix::from_rows(rows).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// The item-description prompt for `dataset`.
#[pyfunction]
fn item_prompt(dataset: &str) -> PyResult<String> {
    descriptor::render_prompt1(dataset).map_err(err)
}

/// The preference prompt over a user's item descriptions, oldest first.
#[pyfunction]
fn preference_prompt(descriptions: Vec<String>) -> PyResult<String> {
    descriptor::render_prompt2(&descriptions).map_err(err)
}

#[pyfunction]
fn fuse_descriptions(text_meta: &str, semantic_desc: &str) -> String {
    descriptor::fuse_descriptions(text_meta, semantic_desc)
}

/// Deterministic unit vectors derived from each text's hash.
#[pyfunction]
#[pyo3(signature = (texts, dim = 32, seed = 0))]
fn stub_encode(texts: Vec<String>, dim: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    if dim == 0 {
        return Err(PyValueError::new_err("dim must be positive"));
    }
    let m = encode_texts(&StubEncoder::new(dim, seed), &texts).map_err(err)?;
    Ok(m.to_rows())
}

/// Iterated k-core filter over `(user, item)` or `(user, item, timestamp)` records.
#[pyfunction]
#[pyo3(signature = (records, k = 5))]
fn kcore_filter(records: Vec<(String, String, Option<i64>)>, k: usize) -> PyResult<Vec<(String, String, Option<i64>)>> {
    if k == 0 {
        return Err(PyValueError::new_err("k must be at least 1"));
    }
    let raw = RawInteractions::from_records(records.into_iter().map(|(user, item, timestamp)| Interaction {
        user,
        item,
        timestamp,
    }));
    let kept = corpus::kcore_filter(&raw, k).map_err(err)?;
    Ok(kept
        .records()
        .iter()
        .map(|r| (r.user.clone(), r.item.clone(), r.timestamp))
        .collect())
}

fn ranking(lists: Vec<Vec<usize>>) -> RankingResult {
    RankingResult {
        lists: lists.into_iter().enumerate().collect(),
    }
}

/// Mean Recall@k over users with a non-empty truth set; `ranked[u]` is user u's list.
#[pyfunction]
fn recall_at_k(ranked: Vec<Vec<usize>>, truth: Vec<Vec<usize>>, k: usize) -> PyResult<f64> {
    if ranked.len() != truth.len() {
        return Err(PyValueError::new_err("ranked and truth must cover the same users"));
    }
    Ok(eval::recall_at_k(&ranking(ranked), &truth, k))
}

#[pyfunction]
fn ndcg_at_k(ranked: Vec<Vec<usize>>, truth: Vec<Vec<usize>>, k: usize) -> PyResult<f64> {
    if ranked.len() != truth.len() {
        return Err(PyValueError::new_err("ranked and truth must cover the same users"));
    }
    Ok(eval::ndcg_at_k(&ranking(ranked), &truth, k))
}

/// Refined item-item graph with its intermediates and propagated features.
#[pyclass(name = "ItemGraph", module = "descrec", frozen)]
struct PyItemGraph {
    inner: RefinedGraph,
}

#[pymethods]
impl PyItemGraph {
    /// Builds the graph from item embeddings and training `(user, item)` pairs.
    #[staticmethod]
    #[pyo3(signature = (
        item_embeddings, train_pairs, n_users, *,
        k_semantic = 10, alpha = 0.5, k_cooccur = 10, layers = 1,
        symmetrize = false, denoise = true, enhance = true, convolve = true,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn build(
        py: Python<'_>,
        item_embeddings: Vec<Vec<f64>>,
        train_pairs: Vec<(usize, usize)>,
        n_users: usize,
        k_semantic: usize,
        alpha: f64,
        k_cooccur: usize,
        layers: usize,
        symmetrize: bool,
        denoise: bool,
        enhance: bool,
        convolve: bool,
    ) -> PyResult<Self> {
        let items = matrix(item_embeddings)?;
        if let Some(&(u, i)) = train_pairs.iter().find(|&&(u, i)| u >= n_users || i >= items.rows()) {
            return Err(PyValueError::new_err(format!("pair ({u}, {i}) is out of range")));
        }
        let train = InteractionMatrix::from_pairs(n_users, items.rows(), train_pairs);
        let cfg = GraphConfig {
            k_semantic,
            alpha,
            k_cooccur,
            layers,
            symmetrize,
        };
        let variant = GraphVariant {
            denoise,
            enhance,
            convolve,
        };
        let inner = py
            .detach(|| RefinedGraph::build(&items, &train, &cfg, variant))
            .map_err(err)?;
        Ok(PyItemGraph { inner })
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.features.rows()
    }

    /// `(src, dst, weight)` triples of one construction step.
    #[pyo3(signature = (which = "normalized"))]
    fn edges(&self, which: &str) -> PyResult<Vec<(usize, usize, f64)>> {
        Ok(self.graph(which)?.edges().collect())
    }

    fn degrees(&self) -> Vec<f64> {
        self.inner.degrees.as_slice().to_vec()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features.to_rows()
    }

    /// Writes one construction step in the binary graph format.
    #[pyo3(signature = (path, which = "normalized"))]
    fn export(&self, path: PathBuf, which: &str) -> PyResult<()> {
        graph::export_graph(self.graph(which)?, &path).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "ItemGraph(n_items={}, semantic_edges={}, cooccur_edges={}, merged_edges={})",
            self.n_items(),
            self.inner.semantic.n_edges(),
            self.inner.cooccur.n_edges(),
            self.inner.merged.n_edges()
        )
    }
}

impl PyItemGraph {
    fn graph(&self, which: &str) -> PyResult<&SparseGraph> {
        Ok(match which {
            "semantic" => &self.inner.semantic,
            "cooccur" => &self.inner.cooccur,
            "merged" => &self.inner.merged,
            "normalized" => &self.inner.normalized,
            other => return Err(PyValueError::new_err(format!("unknown graph {other:?}"))),
        })
    }
}

/// Reads `(src, dst, weight)` triples from a graph file written by `ItemGraph.export`.
#[pyfunction]
fn import_graph(path: PathBuf) -> PyResult<Vec<(usize, usize, f64)>> {
    Ok(graph::import_graph(&path).map_err(err)?.edges().collect())
}

/// Stage runner over a config file; holds the workdir lock until closed.
#[pyclass(name = "Pipeline", module = "descrec")]
struct PyPipeline {
    inner: Option<pipeline::Pipeline>,
}

#[pymethods]
impl PyPipeline {
    #[new]
    #[pyo3(signature = (config, *, stub = false, force = false, grid = false, seed = None))]
    fn new(config: PathBuf, stub: bool, force: bool, grid: bool, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = PipelineConfig::load(&config).map_err(pipeline_err)?;
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        let opts = RunOptions { force, stub, grid };
        let inner = pipeline::Pipeline::open(cfg, opts).map_err(pipeline_err)?;
        Ok(PyPipeline { inner: Some(inner) })
    }

    /// Runs one stage and returns `(status, summary_json)`, where status is
    /// "completed", "up-to-date" or "partial".
    fn run(&mut self, py: Python<'_>, stage: &str) -> PyResult<(String, String)> {
        let stage: pipeline::Stage = stage.parse().map_err(PyValueError::new_err)?;
        let p = self
            .inner
            .as_mut()
            .ok_or_else(|| DescrecError::new_err("pipeline is closed"))?;
        let out = py.detach(|| p.run(stage)).map_err(pipeline_err)?;
        let status = match out.status {
            Status::Completed => "completed",
            Status::UpToDate => "up-to-date",
            Status::Partial { .. } => "partial",
        };
        Ok((status.to_string(), out.summary.to_string()))
    }

    #[getter]
    fn workdir(&self) -> PyResult<PathBuf> {
        self.inner
            .as_ref()
            .map(|p| p.workdir().to_path_buf())
            .ok_or_else(|| DescrecError::new_err("pipeline is closed"))
    }

    /// Releases the workdir lock.
    fn close(&mut self) {
        self.inner = None;
    }

    fn __enter__(slf: Py<Self>) -> Py<Self> {
        slf
    }

    fn __exit__(&mut self, _exc_type: Py<PyAny>, _exc: Py<PyAny>, _tb: Py<PyAny>) {
        self.close();
    }
}

#[pymodule]
#[pyo3(name = "descrec")]
fn descrec_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("DescrecError", py.get_type::<DescrecError>())?;
    m.add("StageMissingError", py.get_type::<StageMissingError>())?;
    m.add("StaleStageError", py.get_type::<StaleStageError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add_function(wrap_pyfunction!(item_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(preference_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_descriptions, m)?)?;
    m.add_function(wrap_pyfunction!(stub_encode, m)?)?;
    m.add_function(wrap_pyfunction!(kcore_filter, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(import_graph, m)?)?;
    m.add_class::<PyItemGraph>()?;
    m.add_class::<PyPipeline>()?;
    Ok(())
}
