//! Python bindings: corpora, run configuration, training, generation,
//! evaluation, model archives and the gradient checker.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use semparse::cli::{ModelArchive, RunConfig, KEYS};
use semparse::corpus::{self, ParallelCorpus};
use semparse::gradcheck::{GradCheckConfig, DEFAULT_THRESHOLD};
use semparse::pipeline::{evaluate_exact_match, train_full};

fn py_err(e: semparse::Error) -> PyErr {
    match e {
        semparse::Error::Io(_) | semparse::Error::File { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Parallel question/query corpus.
#[pyclass(name = "Corpus", module = "semparse")]
struct PyCorpus {
    inner: ParallelCorpus,
}

#[pymethods]
impl PyCorpus {
    /// Loads a TSV corpus, skipping malformed lines.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = ParallelCorpus::load(&path).map_err(py_err)?;
        Ok(PyCorpus { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (text, provenance = "<string>"))]
    fn from_tsv(text: &str, provenance: &str) -> PyResult<Self> {
        let (inner, _) = ParallelCorpus::parse(text, provenance).map_err(py_err)?;
        Ok(PyCorpus { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (entities = 5, relations = 4, seed = 0))]
    fn toy(entities: usize, relations: usize, seed: u64) -> PyResult<Self> {
        let inner = corpus::generate_toy_corpus(entities, relations, seed).map_err(py_err)?;
        Ok(PyCorpus { inner })
    }

    /// `(question, query)` pairs as space-joined token strings.
    fn pairs(&self) -> Vec<(String, String)> {
        self.inner
            .pairs()
            .iter()
            .map(|p| (p.question.join(" "), p.query.join(" ")))
            .collect()
    }

    fn to_tsv(&self) -> String {
        self.inner.to_tsv()
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    /// Seeded train/dev/test split.
    fn split(&self, ratios: [f64; 3], seed: u64) -> PyResult<(Self, Self, Self)> {
        let [a, b, c] = self.inner.split(ratios, seed).map_err(py_err)?;
        Ok((
            PyCorpus { inner: a },
            PyCorpus { inner: b },
            PyCorpus { inner: c },
        ))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus({} pairs, {})",
            self.inner.len(),
            self.inner.provenance()
        )
    }
}

/// Training and decoding settings; keyword arguments use the config keys.
#[pyclass(name = "TrainConfig", module = "semparse")]
struct PyTrainConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = RunConfig::default();
        if let Some(kwargs) = kwargs {
            for (k, v) in kwargs.iter() {
                let key: String = k.extract()?;
                let value = if v.is_instance_of::<pyo3::types::PyBool>() {
                    v.extract::<bool>()?.to_string()
                } else {
                    v.str()?.to_string()
                };
                inner.set(&key, &value).map_err(py_err)?;
            }
        }
        Ok(PyTrainConfig { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown key `{key}`")))
    }

    /// Every recognised key with its default.
    #[staticmethod]
    fn keys() -> Vec<(&'static str, &'static str)> {
        KEYS.iter().map(|(k, d, _)| (*k, *d)).collect()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrainConfig {
            inner: RunConfig::load(&path).map_err(py_err)?,
        })
    }
}

/// A trained parser together with the settings it was trained with.
#[pyclass(name = "SemanticParser", module = "semparse")]
struct PySemanticParser {
    archive: ModelArchive,
}

#[pymethods]
impl PySemanticParser {
    /// Runs both training stages; returns `(parser, report)`.
    #[staticmethod]
    fn train<'py>(
        py: Python<'py>,
        corpus: &PyCorpus,
        config: &PyTrainConfig,
    ) -> PyResult<(Self, Bound<'py, PyDict>)> {
        let (parser, report) = train_full(&corpus.inner, &config.inner.train).map_err(py_err)?;
        let summary = PyDict::new(py);
        summary.set_item("final_hinge", report.final_hinge())?;
        summary.set_item("final_nll", report.final_nll())?;
        summary.set_item("final_retrieval", report.final_retrieval())?;
        let hinge: Vec<Vec<f64>> = report
            .rounds
            .iter()
            .map(|r| r.bicvm_trace.clone())
            .collect();
        let nll: Vec<Vec<f64>> = report.rounds.iter().map(|r| r.cnlm_trace.clone()).collect();
        summary.set_item("hinge_trace", hinge)?;
        summary.set_item("nll_trace", nll)?;
        let archive = ModelArchive::new(parser, &config.inner, corpus.inner.content_hash());
        Ok((PySemanticParser { archive }, summary))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySemanticParser {
            archive: ModelArchive::load(&path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PySemanticParser {
            archive: ModelArchive::from_text(text).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.archive.save(&path).map_err(py_err)
    }

    fn to_text(&self) -> String {
        self.archive.to_text()
    }

    /// `(query, log_prob)` for a raw question string.
    fn generate(&self, question: &str) -> PyResult<(String, f64)> {
        let g = self
            .archive
            .parser
            .generate_text(question)
            .map_err(py_err)?;
        Ok((g.query.join(" "), g.log_prob))
    }

    /// Exact-match metrics on `corpus`.
    fn evaluate<'py>(&self, py: Python<'py>, corpus: &PyCorpus) -> PyResult<Bound<'py, PyDict>> {
        let report = evaluate_exact_match(&self.archive.parser, &corpus.inner).map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("rate", report.rate)?;
        out.set_item("matches", report.matches)?;
        let outcomes = PyList::empty(py);
        for o in &report.outcomes {
            outcomes.append((
                o.question.join(" "),
                o.gold.join(" "),
                o.predicted.join(" "),
                o.matched,
            ))?;
        }
        out.set_item("outcomes", outcomes)?;
        Ok(out)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.archive.parser.dim()
    }

    #[getter]
    fn corpus_sha256(&self) -> &str {
        &self.archive.corpus_sha256
    }

    fn config(&self) -> PyTrainConfig {
        PyTrainConfig {
            inner: self.archive.config.clone(),
        }
    }
}

/// Finite-difference check; returns `(passed, {class: max_rel_error})`.
#[pyfunction]
#[pyo3(name = "gradcheck", signature = (instances = 50, seed = 0, threshold = DEFAULT_THRESHOLD))]
fn run_gradcheck<'py>(
    py: Python<'py>,
    instances: usize,
    seed: u64,
    threshold: f64,
) -> PyResult<(bool, Bound<'py, PyDict>)> {
    let report = semparse::gradcheck::run(&GradCheckConfig {
        instances,
        seed,
        threshold,
        ..Default::default()
    })
    .map_err(py_err)?;
    let errors = PyDict::new(py);
    for c in &report.classes {
        errors.set_item(c.name, c.max_rel_error)?;
    }
    Ok((report.passed(), errors))
}

#[pyfunction]
fn log_sum_exp(xs: Vec<f64>) -> PyResult<f64> {
    semparse::numerics::log_sum_exp(&xs).map_err(py_err)
}

#[pyfunction]
fn tokenize_question(text: &str) -> Vec<String> {
    corpus::tokenize_question(text)
}

#[pyfunction]
fn tokenize_query(text: &str) -> Vec<String> {
    corpus::tokenize_query(text)
}

#[pymodule]
#[pyo3(name = "semparse")]
fn semparse_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PySemanticParser>()?;
    m.add_function(wrap_pyfunction!(run_gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(log_sum_exp, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize_question, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize_query, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
