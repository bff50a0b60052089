use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ecqg_core::data::{self, BuildConfig, DatasetMeta, DictionaryNer, NerProvider};
use ecqg_core::metrics::{self, EvalSettings, Smoothing};
use ecqg_core::model::{Checkpoint, DecodeOptions, Strategy};
use ecqg_core::train::{self, GradCheckConfig, TrainConfig};

create_exception!(ecqg, EcqgError, PyException);

fn err(e: ecqg_core::Error) -> PyErr {
    EcqgError::new_err(e.to_string())
}

/// Round-trips a serde value into Python objects through the json module.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn smoothing(name: &str) -> PyResult<Smoothing> {
    match name {
        "none" => Ok(Smoothing::None),
        "epsilon" => Ok(Smoothing::Epsilon),
        other => Err(PyValueError::new_err(format!("smoothing must be 'none' or 'epsilon', got {other:?}"))),
    }
}

/// Lowercased metric tokens.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    metrics::tokenize(text)
}

/// Corpus BLEU-n on the 0-100 scale.
#[pyfunction]
#[pyo3(signature = (candidates, references, n = 4, smoothing = "none"))]
fn bleu(candidates: Vec<String>, references: Vec<String>, n: usize, smoothing: &str) -> PyResult<f64> {
    metrics::compute_bleu(&candidates, &references, n, self::smoothing(smoothing)?).map_err(err)
}

#[pyfunction]
fn meteor(candidates: Vec<String>, references: Vec<String>) -> PyResult<f64> {
    metrics::compute_meteor(&candidates, &references).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (candidates, references, beta = metrics::DEFAULT_BETA))]
fn rouge_l(candidates: Vec<String>, references: Vec<String>, beta: f64) -> PyResult<f64> {
    metrics::compute_rouge_l(&candidates, &references, beta).map_err(err)
}

/// Full evaluation report as a dict; ids default to positions.
#[pyfunction]
#[pyo3(signature = (candidates, references, ids = None, smoothing = "none", rouge_beta = metrics::DEFAULT_BETA))]
fn evaluate<'py>(
    py: Python<'py>,
    candidates: Vec<String>,
    references: Vec<String>,
    ids: Option<Vec<String>>,
    smoothing: &str,
    rouge_beta: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let ids = ids.unwrap_or_else(|| (0..candidates.len()).map(|i| i.to_string()).collect());
    let settings = EvalSettings { bleu_smoothing: self::smoothing(smoothing)?, rouge_beta };
    let report = py.detach(|| metrics::evaluate(&ids, &candidates, &references, settings)).map_err(err)?;
    to_py(py, &report)
}

/// Builds the three splits into `out` with the dictionary NER and returns
/// the build counts.
#[pyfunction]
#[pyo3(signature = (squad, out, seed = 42, val_fraction = 0.074, dev = None))]
fn build_dataset<'py>(
    py: Python<'py>,
    squad: PathBuf,
    out: PathBuf,
    seed: u64,
    val_fraction: f64,
    dev: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let counts = py
        .detach(|| -> ecqg_core::Result<_> {
            let (corpus, _) = data::load_squad_corpus(&squad, dev.as_deref())?;
            let ner = DictionaryNer::resolve(&squad)?;
            let output = data::build_dataset(&corpus, &ner, &BuildConfig { val_fraction, seed })?;
            let meta = DatasetMeta {
                seed,
                val_fraction,
                train_fraction: 1.0 - val_fraction,
                ner_provider: ner.name().into(),
                ner_version: ner.version(),
                inputs: Default::default(),
                counts: output.counts.clone(),
                warnings: output.warnings.clone(),
                command: vec![],
            };
            data::write_dataset(&out, &output, &meta)?;
            Ok(output.counts)
        })
        .map_err(err)?;
    to_py(py, &counts)
}

/// Trains from a JSON config string on `data_dir/{train,validation}.jsonl`,
/// writes the checkpoint to `out` and returns the training history.
#[pyfunction]
fn train_model<'py>(
    py: Python<'py>,
    config_json: &str,
    data_dir: PathBuf,
    out: PathBuf,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: TrainConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let history = py
        .detach(|| -> ecqg_core::Result<_> {
            let tr = data::read_jsonl(&data_dir.join("train.jsonl"))?;
            let val = data::read_jsonl(&data_dir.join("validation.jsonl"))?;
            Ok(train::train(&tr, &val, &cfg, Some(&out))?.1)
        })
        .map_err(err)?;
    to_py(py, &history)
}

/// Gradient check report for one component of a toy model.
#[pyfunction]
#[pyo3(signature = (component, step = 1e-5, tol = 1e-4, seeds = None))]
fn grad_check<'py>(
    py: Python<'py>,
    component: &str,
    step: f64,
    tol: f64,
    seeds: Option<Vec<u64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = GradCheckConfig::default();
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    let report = py.detach(|| train::grad_check(&cfg, component, step, tol)).map_err(err)?;
    to_py(py, &report)
}

/// A trained checkpoint.
#[pyclass(frozen)]
struct Model {
    ckpt: Checkpoint,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(py: Python<'_>, path: PathBuf) -> PyResult<Self> {
        let ckpt = py.detach(|| Checkpoint::load(&path)).map_err(err)?;
        Ok(Self { ckpt })
    }

    #[getter]
    fn mode(&self) -> String {
        self.ckpt.model.mode.to_string()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.ckpt.vocab.len()
    }

    #[getter]
    fn d_model(&self) -> usize {
        self.ckpt.model.config.d_model
    }

    /// Beam search by default; `greedy=True` or `beam=1` decode greedily.
    #[pyo3(signature = (entity, context, beam = 4, greedy = false, max_len = None))]
    fn generate(
        &self,
        py: Python<'_>,
        entity: &str,
        context: &str,
        beam: usize,
        greedy: bool,
        max_len: Option<usize>,
    ) -> PyResult<String> {
        if beam == 0 {
            return Err(PyValueError::new_err("beam must be at least 1"));
        }
        let opts = DecodeOptions {
            strategy: if greedy { Strategy::Greedy } else { Strategy::Beam(beam) },
            max_len: max_len.unwrap_or(self.ckpt.model.config.max_target_len),
        };
        py.detach(|| self.ckpt.model.generate(&self.ckpt.vocab, entity, context, &opts)).map_err(err)
    }

    /// Loss parts and total over samples given as dicts with id, context,
    /// entity, question, answer_text and answer_start.
    fn loss<'py>(&self, py: Python<'py>, samples: Bound<'py, PyAny>) -> PyResult<Bound<'py, PyDict>> {
        let text: String = py.import("json")?.call_method1("dumps", (samples,))?.extract()?;
        let samples: Vec<data::EcqgSample> =
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let model = &self.ckpt.model;
        let (parts, total) = py
            .detach(|| -> ecqg_core::Result<_> {
                let (enc, dropped) = ecqg_core::model::encode_samples(
                    &samples,
                    &self.ckpt.vocab,
                    model.config.max_source_len,
                    model.config.max_target_len,
                );
                if let Some((id, e)) = dropped.into_iter().next() {
                    return Err(ecqg_core::Error::Input(format!("sample {id}: {e}")));
                }
                let batch = ecqg_core::model::TokenBatch::collate(&enc);
                let objective = ecqg_core::model::Objective {
                    mode: model.mode,
                    lambda1: self.ckpt.manifest.lambda1,
                    lambda2: self.ckpt.manifest.lambda2,
                };
                model.loss(&batch, &objective)
            })
            .map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("qg", parts.qg)?;
        out.set_item("cf", parts.cf)?;
        out.set_item("qv", parts.qv)?;
        out.set_item("total", total)?;
        Ok(out)
    }
}

#[pymodule]
fn ecqg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EcqgError", m.py().get_type::<EcqgError>())?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(meteor, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
