//! Python bindings: graphs, configs, models, rule decoding and the oracle.
//!
//! ```python
//! import lerp_py
//! g = lerp_py.KnowledgeGraph.load("data/umls")
//! model = lerp_py.train(lerp_py.TrainConfig(m=8, T=1, K=2, epochs=1), g)
//! print(model.evaluate(g, "test")["mrr"])
//! ```

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lerp::interpret::{decode_lerp, decode_rules};
use lerp::formula::{render, RelationVocab};
use lerp::{Query, Split};

fn to_py(e: lerp::Error) -> PyErr {
    match e {
        lerp::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

/// A knowledge graph with train, valid and test splits.
#[pyclass(frozen)]
struct KnowledgeGraph {
    inner: lerp::KnowledgeGraph,
}

#[pymethods]
impl KnowledgeGraph {
    /// Loads `train.txt`, `valid.txt` and `test.txt` from a directory.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let inner = lerp::KnowledgeGraph::load_dir(&dir).map_err(to_py)?;
        Ok(KnowledgeGraph { inner })
    }

    /// Builds a train-only graph from `(head, relation, tail)` id triples.
    #[staticmethod]
    fn from_triplets(num_entities: usize, num_relations: usize, triplets: Vec<(usize, usize, usize)>) -> PyResult<Self> {
        let train = triplets.into_iter().map(|(h, r, t)| lerp::Triplet::new(h, r, t)).collect();
        let inner = lerp::KnowledgeGraph::from_triplets(num_entities, num_relations, train).map_err(to_py)?;
        Ok(KnowledgeGraph { inner })
    }

    #[getter]
    fn num_entities(&self) -> usize {
        self.inner.num_entities()
    }

    /// Raw relation count, without reverses or identity.
    #[getter]
    fn num_relations(&self) -> usize {
        self.inner.num_raw_relations()
    }

    #[getter]
    fn relation_names(&self) -> Vec<String> {
        self.inner.relation_names().to_vec()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn entity_name(&self, id: usize) -> PyResult<String> {
        if id >= self.inner.num_entities() {
            return Err(PyValueError::new_err(format!("entity {id} out of range")));
        }
        Ok(self.inner.entity_name(id).to_owned())
    }

    fn relation_id(&self, name: &str) -> Option<usize> {
        self.inner.relation_id(name)
    }

    /// Triplets of `split` as id tuples.
    fn triplets(&self, split: &str) -> PyResult<Vec<(usize, usize, usize)>> {
        let split: Split = split.parse().map_err(to_py)?;
        Ok(split
            .triplets(&self.inner)
            .iter()
            .map(|t| (t.head, t.relation, t.tail))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "KnowledgeGraph(entities={}, relations={}, train={})",
            self.inner.num_entities(),
            self.inner.num_raw_relations(),
            self.inner.train().len()
        )
    }
}

/// Training hyperparameters. Keyword names match the JSON config keys.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct TrainConfig {
    inner: lerp::TrainConfig,
}

#[pymethods]
impl TrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let text = match kwargs {
            Some(d) => d.py().import("json")?.call_method1("dumps", (d,))?.extract::<String>()?,
            None => "{}".to_owned(),
        };
        Self::from_json(&text)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = lerp::TrainConfig::from_json(text).map_err(to_py)?;
        Ok(TrainConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> PyResult<String> {
        Ok(format!("TrainConfig({})", self.to_json()?))
    }
}

/// Learned LERP grid and rules.
#[pyclass]
struct Model {
    inner: lerp::Model,
}

#[pymethods]
impl Model {
    /// A freshly initialized, untrained model.
    #[new]
    fn new(config: &TrainConfig, graph: &KnowledgeGraph) -> PyResult<Self> {
        let inner = lerp::Model::new(config.inner.clone(), &graph.inner).map_err(to_py)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: lerp::Model::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn config(&self) -> TrainConfig {
        TrainConfig {
            inner: self.inner.config.clone(),
        }
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.count_learnable_scalars()
    }

    /// Filtered ranking metrics on `split` as a dict.
    #[pyo3(signature = (graph, split = "test"))]
    fn evaluate(&self, py: Python<'_>, graph: &KnowledgeGraph, split: &str) -> PyResult<Py<PyAny>> {
        let split: Split = split.parse().map_err(to_py)?;
        let report = py
            .detach(|| lerp::evaluate(&self.inner, &graph.inner, split))
            .map_err(to_py)?;
        let text = serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?;
        json_to_py(py, &text)
    }

    /// Scores of every entity as the answer to `relation(head, ?)`.
    fn score(&self, graph: &KnowledgeGraph, head: usize, relation: usize) -> PyResult<Vec<f64>> {
        let scores = self
            .inner
            .score(&graph.inner, &[Query::new(head, relation)])
            .map_err(to_py)?;
        Ok((0..scores.rows()).map(|e| scores.get(e, 0)).collect())
    }

    /// The `(m + 1) × n` LERP matrix as nested lists, one row per function.
    fn lerp_matrix(&self, graph: &KnowledgeGraph) -> PyResult<Vec<Vec<f64>>> {
        let lerp = self.inner.lerp_matrix(&graph.inner).map_err(to_py)?;
        Ok((0..lerp.rows())
            .map(|i| (0..lerp.num_entities()).map(|e| lerp.get(i, e)).collect())
            .collect())
    }

    /// Decoded rules as `(target, weight, text)`, weight-sorted per target.
    fn rules(&self) -> Vec<(String, f64, String)> {
        let vocab = RelationVocab::new(self.inner.relation_names().to_vec());
        decode_rules(&self.inner)
            .into_iter()
            .flatten()
            .map(|r| (vocab.name(r.target).to_owned(), r.weight, r.render(&vocab)))
            .collect()
    }

    /// Decoded LERP functions as `(row, weight, text)`.
    fn functions(&self) -> Vec<(usize, f64, String)> {
        let vocab = RelationVocab::new(self.inner.relation_names().to_vec());
        decode_lerp(&self.inner.store, &self.inner.lerp, vocab.identity())
            .into_iter()
            .map(|f| (f.row, f.weight, render(&f.formula, &vocab, "e", 1)))
            .collect()
    }
}

/// Trains a model from scratch; returns it with per-epoch mean losses.
#[pyfunction]
fn train(py: Python<'_>, config: &TrainConfig, graph: &KnowledgeGraph) -> PyResult<(Model, Vec<f64>)> {
    let mut losses = Vec::new();
    let inner = py
        .detach(|| {
            lerp::fit_with(config.inner.clone(), &graph.inner, |stats, _| {
                losses.push(stats.mean_loss);
                Ok(())
            })
        })
        .map_err(to_py)?;
    Ok((Model { inner }, losses))
}

/// Number of walks from `x` following `chain` that end at each entity.
#[pyfunction]
fn count_paths(graph: &KnowledgeGraph, chain: Vec<usize>, x: usize) -> PyResult<Vec<u64>> {
    let g = &graph.inner;
    if x >= g.num_entities() || chain.iter().any(|&r| r >= g.num_relations()) {
        return Err(PyValueError::new_err("entity or relation id out of range"));
    }
    Ok(lerp::oracle::count_paths(g, &chain, x))
}

/// Runs the randomized verification suites; returns their summaries and
/// whether all of them passed.
#[pyfunction]
#[pyo3(signature = (oracle_cases = 500, gradient_cases = 100, bound_cases = 20, seed = 0))]
fn oracle_check(
    py: Python<'_>,
    oracle_cases: usize,
    gradient_cases: usize,
    bound_cases: usize,
    seed: u64,
) -> (Vec<String>, bool) {
    py.detach(|| {
        let reports = [
            lerp::checks::oracle_suite(oracle_cases, seed),
            lerp::checks::gradient_suite(gradient_cases, seed),
            lerp::checks::bound_suite(&[10, 20, 40], bound_cases, seed),
        ];
        let ok = reports.iter().all(|r| r.passed());
        (reports.iter().map(|r| r.summary()).collect(), ok)
    })
}

#[pymodule]
fn lerp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<KnowledgeGraph>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(count_paths, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
