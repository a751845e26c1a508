//! C ABI for edgelab.
//!
//! Every fallible function returns an [`EdgelabStatus`]. On failure the
//! message is kept per thread and read with [`edgelab_last_error`].
//! Objects are opaque and released with their `_free` function.
//!
//! Strings are NUL-terminated UTF-8 paths or ids. Output pointers must be
//! non-null.

#![allow(clippy::unnecessary_cast)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use edgelab::checkpoint::Checkpoint;
use edgelab::cli::{embedding_features, load_dataset, Dataset};
use edgelab::embedding_io::TextEmbeddings;
use edgelab::evaluation::{node_classification_experiment, EvalConfig, EvalReport};
use edgelab::graph::load_node_labels;
use edgelab::trainer::{TrainReport, TrainState};
use edgelab::{Error, TrainConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgelabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Config = 6,
    Numerical = 7,
    Checkpoint = 8,
    OutOfRange = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(EdgelabStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } => EdgelabStatus::Parse,
            Error::Validation(_) => EdgelabStatus::Validation,
            Error::Config(_) => EdgelabStatus::Config,
            Error::NonFinite { .. } | Error::Diverged { .. } => EdgelabStatus::Numerical,
            Error::Io { .. } | Error::Stream(_) => EdgelabStatus::Io,
            Error::Checkpoint(_) => EdgelabStatus::Checkpoint,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> EdgelabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EdgelabStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {message}"));
            EdgelabStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(EdgelabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(EdgelabStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn optional_path(p: *const c_char, what: &str) -> FfiResult<Option<PathBuf>> {
    if p.is_null() {
        Ok(None)
    } else {
        path_arg(p, what).map(Some)
    }
}

unsafe fn object<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

fn open(path: &Path) -> FfiResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e).into())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> edgelab::Result<()>) -> FfiResult<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f(&mut out)?;
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A loaded graph with its (possibly empty) edge labels.
pub struct EdgelabDataset {
    inner: Dataset,
}

/// Trained parameters together with the node ids they belong to.
pub struct EdgelabModel {
    config: TrainConfig,
    node_ids: Vec<String>,
    state: TrainState,
    report: Option<TrainReport>,
}

pub struct EdgelabEvalReport {
    inner: EvalReport,
}

/// Training settings. `unsupervised_round_batches = 0` means one pass
/// over the walk corpus per round.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct EdgelabTrainConfig {
    pub lambda: f64,
    pub batches_per_round: usize,
    pub structural_batch: usize,
    pub relational_batch: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub dim: usize,
    pub negatives: usize,
    pub noise_power: f64,
    pub hidden: usize,
    pub learning_rate: f64,
    pub early_stop_window: usize,
    pub max_rounds: usize,
    pub validation_fraction: f64,
    pub unsupervised_rounds: usize,
    pub unsupervised_round_batches: usize,
    pub restore_best: bool,
    pub seed: u64,
}

impl From<&TrainConfig> for EdgelabTrainConfig {
    fn from(c: &TrainConfig) -> Self {
        EdgelabTrainConfig {
            lambda: c.lambda,
            batches_per_round: c.batches_per_round,
            structural_batch: c.structural_batch,
            relational_batch: c.relational_batch,
            walks_per_node: c.walks_per_node,
            walk_length: c.walk_length,
            window: c.window,
            dim: c.dim,
            negatives: c.negatives,
            noise_power: c.noise_power,
            hidden: c.hidden,
            learning_rate: c.learning_rate,
            early_stop_window: c.early_stop_window,
            max_rounds: c.max_rounds,
            validation_fraction: c.validation_fraction,
            unsupervised_rounds: c.unsupervised_rounds,
            unsupervised_round_batches: c.unsupervised_round_batches.unwrap_or(0),
            restore_best: c.restore_best,
            seed: c.seed,
        }
    }
}

impl From<&EdgelabTrainConfig> for TrainConfig {
    fn from(c: &EdgelabTrainConfig) -> Self {
        TrainConfig {
            lambda: c.lambda,
            batches_per_round: c.batches_per_round,
            structural_batch: c.structural_batch,
            relational_batch: c.relational_batch,
            walks_per_node: c.walks_per_node,
            walk_length: c.walk_length,
            window: c.window,
            dim: c.dim,
            negatives: c.negatives,
            noise_power: c.noise_power,
            hidden: c.hidden,
            learning_rate: c.learning_rate,
            early_stop_window: c.early_stop_window,
            max_rounds: c.max_rounds,
            validation_fraction: c.validation_fraction,
            unsupervised_rounds: c.unsupervised_rounds,
            unsupervised_round_batches: (c.unsupervised_round_batches > 0).then_some(c.unsupervised_round_batches),
            restore_best: c.restore_best,
            walk_cache: None,
            seed: c.seed,
        }
    }
}

/// Node-classification settings. `ratios` points to `ratio_count`
/// training ratios; null with a count of 0 selects 5%, 10% and 20%.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct EdgelabEvalConfig {
    pub ratios: *const f64,
    pub ratio_count: usize,
    pub repeats: usize,
    pub l2_strength: f64,
    pub normalize: bool,
    pub seed: u64,
}

unsafe fn eval_config(c: &EdgelabEvalConfig) -> FfiResult<EvalConfig> {
    let mut config = EvalConfig {
        repeats: c.repeats,
        l2_strength: c.l2_strength,
        normalize: c.normalize,
        seed: c.seed,
        ..EvalConfig::default()
    };
    if c.ratio_count > 0 {
        if c.ratios.is_null() {
            return Err(null("ratios"));
        }
        config.train_ratios = std::slice::from_raw_parts(c.ratios, c.ratio_count).to_vec();
    }
    config.validate()?;
    Ok(config)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn edgelab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn edgelab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn edgelab_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Fills `out` with the default training settings.
///
/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn edgelab_train_config_default(out: *mut EdgelabTrainConfig) -> EdgelabStatus {
    guard(|| {
        *out_ptr(out, "out")? = EdgelabTrainConfig::from(&TrainConfig::default());
        Ok(())
    })
}

/// Fills `out` with the default evaluation settings (ratios left null).
///
/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn edgelab_eval_config_default(out: *mut EdgelabEvalConfig) -> EdgelabStatus {
    guard(|| {
        let d = EvalConfig::default();
        *out_ptr(out, "out")? = EdgelabEvalConfig {
            ratios: ptr::null(),
            ratio_count: 0,
            repeats: d.repeats,
            l2_strength: d.l2_strength,
            normalize: d.normalize,
            seed: d.seed,
        };
        Ok(())
    })
}

/// Loads an edge list and, if `edge_labels_path` is non-null, its edge
/// labels.
///
/// # Safety
/// Paths must be null or NUL-terminated; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn edgelab_dataset_load(
    edges_path: *const c_char,
    edge_labels_path: *const c_char,
    out: *mut *mut EdgelabDataset,
) -> EdgelabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let edges = path_arg(edges_path, "edges_path")?;
        let labels = optional_path(edge_labels_path, "edge_labels_path")?;
        let inner = load_dataset(&edges, labels.as_deref())?;
        *out = Box::into_raw(Box::new(EdgelabDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a live dataset.
#[no_mangle]
pub unsafe extern "C" fn edgelab_dataset_node_count(dataset: *const EdgelabDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.graph.node_count())
}

/// # Safety
/// `dataset` must be null or a live dataset.
#[no_mangle]
pub unsafe extern "C" fn edgelab_dataset_edge_count(dataset: *const EdgelabDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.graph.edge_count())
}

/// # Safety
/// `dataset` must be null or a live dataset.
#[no_mangle]
pub unsafe extern "C" fn edgelab_dataset_labeled_edge_count(dataset: *const EdgelabDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.edge_labels.labeled_count())
}

/// # Safety
/// `dataset` must be null or a pointer returned by
/// [`edgelab_dataset_load`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn edgelab_dataset_free(dataset: *mut EdgelabDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains embeddings on `dataset`.
///
/// # Safety
/// `dataset` and `config` must be null or live; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn edgelab_train(
    dataset: *const EdgelabDataset,
    config: *const EdgelabTrainConfig,
    out: *mut *mut EdgelabModel,
) -> EdgelabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let data = &object(dataset, "dataset")?.inner;
        let config = TrainConfig::from(object(config, "config")?);
        edgelab::cli::check_label_requirement(&config, data.edge_labels.labeled_count() > 0)?;
        let trained = edgelab::train(&data.graph, &data.edge_labels, &config)?;
        *out = Box::into_raw(Box::new(EdgelabModel {
            config,
            node_ids: data.graph.node_ids().to_vec(),
            state: trained.state,
            report: Some(trained.report),
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn edgelab_model_dim(model: *const EdgelabModel) -> usize {
    model.as_ref().map_or(0, |m| m.state.tables.dim())
}

/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn edgelab_model_node_count(model: *const EdgelabModel) -> usize {
    model.as_ref().map_or(0, |m| m.node_ids.len())
}

/// Rounds run by the training call that produced `model`; 0 for a model
/// loaded from a checkpoint.
///
/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn edgelab_model_rounds(model: *const EdgelabModel) -> usize {
    model
        .as_ref()
        .and_then(|m| m.report.as_ref())
        .map_or(0, |r| r.rounds.len())
}

/// Dense index of node `id`.
///
/// # Safety
/// `model` live, `id` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn edgelab_model_node_index(
    model: *const EdgelabModel,
    id: *const c_char,
    out: *mut usize,
) -> EdgelabStatus {
    guard(|| {
        let m = object(model, "model")?;
        let out = out_ptr(out, "out")?;
        let id = path_arg(id, "id")?;
        let id = id.to_str().expect("checked UTF-8");
        *out = m
            .node_ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Failure(EdgelabStatus::OutOfRange, format!("unknown node id {id:?}")))?;
        Ok(())
    })
}

/// Copies the id of node `index` with its NUL into `buf`. `needed`, if
/// non-null, receives the required size including the NUL.
///
/// # Safety
/// `model` live; `buf` writable for `len` bytes unless `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn edgelab_model_node_id(
    model: *const EdgelabModel,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> EdgelabStatus {
    guard(|| {
        let m = object(model, "model")?;
        let id = m.node_ids.get(index).ok_or_else(|| {
            Failure(EdgelabStatus::OutOfRange, format!("node {index} of {}", m.node_ids.len()))
        })?;
        let bytes = id.as_bytes();
        if let Some(n) = needed.as_mut() {
            *n = bytes.len() + 1;
        }
        if len < bytes.len() + 1 {
            return Err(Failure(
                EdgelabStatus::BufferTooSmall,
                format!("id needs {} bytes, buffer has {len}", bytes.len() + 1),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
        *buf.add(bytes.len()) = 0;
        Ok(())
    })
}

/// Copies the embedding of node `index` into `out[0..dim]`.
///
/// # Safety
/// `model` live; `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn edgelab_model_embedding(
    model: *const EdgelabModel,
    index: usize,
    out: *mut f64,
    len: usize,
) -> EdgelabStatus {
    guard(|| {
        let m = object(model, "model")?;
        let center = &m.state.tables.center;
        if index >= center.rows() {
            return Err(Failure(
                EdgelabStatus::OutOfRange,
                format!("node {index} of {}", center.rows()),
            ));
        }
        if len < center.cols() {
            return Err(Failure(
                EdgelabStatus::BufferTooSmall,
                format!("embedding has {} values, buffer has {len}", center.cols()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, center.cols());
        for (d, &s) in dst.iter_mut().zip(center.row(index)) {
            *d = s as f64;
        }
        Ok(())
    })
}

/// Writes the embeddings in the text format read by `edgelab evaluate`.
///
/// # Safety
/// `model` live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn edgelab_model_write_embeddings(
    model: *const EdgelabModel,
    path: *const c_char,
) -> EdgelabStatus {
    guard(|| {
        let m = object(model, "model")?;
        let path = path_arg(path, "path")?;
        let emb = TextEmbeddings::from_matrix(&m.node_ids, &m.state.tables.center);
        write_file(&path, |out| emb.write(out))
    })
}

/// # Safety
/// `model` live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn edgelab_model_save_checkpoint(
    model: *const EdgelabModel,
    path: *const c_char,
) -> EdgelabStatus {
    guard(|| {
        let m = object(model, "model")?;
        let path = path_arg(path, "path")?;
        let ckpt = Checkpoint {
            config: m.config.clone(),
            node_ids: m.node_ids.clone(),
            state: m.state.clone(),
        };
        write_file(&path, |out| ckpt.write(out))
    })
}

/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn edgelab_model_load_checkpoint(
    path: *const c_char,
    out: *mut *mut EdgelabModel,
) -> EdgelabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let ckpt = Checkpoint::read(open(&path)?)?;
        *out = Box::into_raw(Box::new(EdgelabModel {
            config: ckpt.config,
            node_ids: ckpt.node_ids,
            state: ckpt.state,
            report: None,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or an unfreed model from this library.
#[no_mangle]
pub unsafe extern "C" fn edgelab_model_free(model: *mut EdgelabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scores the model's embeddings against a node-label file. Labeled
/// nodes unknown to the model are an error.
///
/// # Safety
/// Pointers live or null; `node_labels_path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn edgelab_evaluate_model(
    model: *const EdgelabModel,
    node_labels_path: *const c_char,
    config: *const EdgelabEvalConfig,
    out: *mut *mut EdgelabEvalReport,
) -> EdgelabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let m = object(model, "model")?;
        let path = path_arg(node_labels_path, "node_labels_path")?;
        let config = eval_config(object(config, "config")?)?;
        let (labels, unknown) = load_node_labels(open(&path)?, |id| m.node_ids.iter().position(|x| x == id))?;
        if !unknown.0.is_empty() {
            return Err(Error::Validation(format!(
                "{}: {} labeled nodes are not in the model, first {:?}",
                path.display(),
                unknown.0.len(),
                unknown.0[0]
            ))
            .into());
        }
        let features = embedding_features(&m.state.tables.center);
        let inner = node_classification_experiment(&features, &labels, &config)?;
        *out = Box::into_raw(Box::new(EdgelabEvalReport { inner }));
        Ok(())
    })
}

/// Like [`edgelab_evaluate_model`] for an embedding text file.
///
/// # Safety
/// Paths NUL-terminated; `config` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn edgelab_evaluate_file(
    embeddings_path: *const c_char,
    node_labels_path: *const c_char,
    config: *const EdgelabEvalConfig,
    out: *mut *mut EdgelabEvalReport,
) -> EdgelabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let emb = path_arg(embeddings_path, "embeddings_path")?;
        let labels = path_arg(node_labels_path, "node_labels_path")?;
        let config = eval_config(object(config, "config")?)?;
        let inputs = edgelab::cli::load_eval_inputs(&emb, &labels, true)?;
        let inner = node_classification_experiment(&inputs.features, &inputs.labels, &config)?;
        *out = Box::into_raw(Box::new(EdgelabEvalReport { inner }));
        Ok(())
    })
}

/// # Safety
/// `report` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn edgelab_eval_report_ratio_count(report: *const EdgelabEvalReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.ratios.len())
}

/// Training ratio, mean and standard deviation of Macro-F1 (fractions,
/// not percent) for entry `index`.
///
/// # Safety
/// `report` live; output pointers writable or null (skipped).
#[no_mangle]
pub unsafe extern "C" fn edgelab_eval_report_get(
    report: *const EdgelabEvalReport,
    index: usize,
    ratio: *mut f64,
    mean: *mut f64,
    std: *mut f64,
) -> EdgelabStatus {
    guard(|| {
        let r = object(report, "report")?;
        let s = r.inner.ratios.get(index).ok_or_else(|| {
            Failure(EdgelabStatus::OutOfRange, format!("ratio {index} of {}", r.inner.ratios.len()))
        })?;
        for (p, v) in [(ratio, s.ratio), (mean, s.mean), (std, s.std)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `report` must be null or an unfreed report from this library.
#[no_mangle]
pub unsafe extern "C" fn edgelab_eval_report_free(report: *mut EdgelabEvalReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn message() -> String {
        unsafe { CStr::from_ptr(edgelab_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn panics_become_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, EdgelabStatus::Panic);
        assert!(message().contains("boom"));
    }

    #[test]
    fn error_kinds_map_to_status() {
        let cases = [
            (Error::Config("x".into()), EdgelabStatus::Config),
            (Error::Validation("x".into()), EdgelabStatus::Validation),
            (Error::Checkpoint("x".into()), EdgelabStatus::Checkpoint),
            (Error::Diverged { round: 1, detail: "x".into() }, EdgelabStatus::Numerical),
        ];
        for (e, want) in cases {
            assert_eq!(guard(|| Err(e.into())), want);
        }
    }

    #[test]
    fn errors_are_per_thread() {
        edgelab_clear_error();
        std::thread::spawn(|| guard(|| Err(null("other")))).join().unwrap();
        assert!(edgelab_last_error().is_null());
    }

    #[test]
    fn interior_nul_in_message_is_replaced() {
        set_error("a\0b".into());
        assert_eq!(message(), "a b");
    }
}
