//! C interface.
//!
//! Every fallible call returns a [`PnfpStatus`]; on failure the message is available from
//! [`pnfp_last_error`] on the same thread. Handles are opaque and must be released with the
//! matching `*_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use peaknetfp::encoder::{Fingerprint, ModelParams};
use peaknetfp::index::{best_per_track, read_db, write_db, Backend, FingerprintDB, IvfPqIndex};
use peaknetfp::pipeline::{load_model, Fingerprinter, PipelineConfig};
use peaknetfp::signal::{resample, AudioClip};
use peaknetfp::Error;

/// Mirrors the command-line exit codes, plus codes for misuse of the interface itself.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnfpStatus {
    Ok = 0,
    /// Bad configuration or arguments.
    Config = 1,
    /// Unreadable, malformed or unsuitable input data.
    Data = 2,
    /// Internal invariant violated.
    Internal = 3,
    NullArgument = 4,
    /// Output buffer too small; the required size has been written.
    BufferTooSmall = 5,
    Panic = 6,
}

/// Trained encoder plus its audio front end.
pub struct PnfpModel {
    inner: Fingerprinter,
}

/// Reference fingerprints. Tracks can be added until the first search, which freezes the
/// database.
pub struct PnfpDatabase {
    staged: Vec<(String, Vec<Fingerprint>)>,
    built: Option<(FingerprintDB, Option<IvfPqIndex>)>,
    ids: Vec<CString>,
}

/// One ranked `(track, offset)` hypothesis.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PnfpMatch {
    /// Index into the database's track list; see [`pnfp_db_track_id`].
    pub track: u32,
    /// Segment position of the query start in the track (may be negative).
    pub offset: i64,
    pub score: f32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(e: &Error) -> PnfpStatus {
    set_error(e.to_string());
    match e.exit_code() {
        1 => PnfpStatus::Config,
        2 => PnfpStatus::Data,
        _ => PnfpStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), PnfpStatus>) -> PnfpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PnfpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside peaknetfp");
            PnfpStatus::Panic
        }
    }
}

fn null(what: &str) -> PnfpStatus {
    set_error(format!("{what} is null"));
    PnfpStatus::NullArgument
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, PnfpStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not UTF-8"));
        PnfpStatus::Config
    })?;
    Ok(Path::new(s))
}

unsafe fn clip_arg(
    samples: *const f32,
    n: usize,
    sample_rate: u32,
    target: u32,
) -> Result<AudioClip, PnfpStatus> {
    if samples.is_null() && n > 0 {
        return Err(null("samples"));
    }
    let data = if n == 0 {
        Vec::new()
    } else {
        std::slice::from_raw_parts(samples, n).to_vec()
    };
    let clip = AudioClip::new(data, sample_rate).map_err(|e| fail(&e))?;
    if sample_rate == target {
        Ok(clip)
    } else {
        resample(&clip, target).map_err(|e| fail(&e))
    }
}

/// Message of the last failed call on this thread. Valid until the next call that fails.
#[no_mangle]
pub extern "C" fn pnfp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads weights from `checkpoint`. `config` is a pipeline TOML file; when null, the file
/// next to the checkpoint with a `.toml` extension is used if present, else defaults.
///
/// # Safety
/// Path arguments must be null or NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pnfp_model_load(
    checkpoint: *const c_char,
    config: *const c_char,
    out: *mut *mut PnfpModel,
) -> PnfpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = path_arg(checkpoint, "checkpoint")?;
        let side = ckpt.with_extension("toml");
        let cfg = if !config.is_null() {
            PipelineConfig::load(path_arg(config, "config")?)
        } else if side.exists() {
            PipelineConfig::load(&side)
        } else {
            Ok(PipelineConfig::default())
        }
        .map_err(|e| fail(&e))?;
        let params = load_model(ckpt, &cfg.model).map_err(|e| fail(&e))?;
        let inner = Fingerprinter::new(cfg, params).map_err(|e| fail(&e))?;
        *out = Box::into_raw(Box::new(PnfpModel { inner }));
        Ok(())
    })
}

/// Untrained model with the default layout and seeded weights.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pnfp_model_new_default(seed: u64, out: *mut *mut PnfpModel) -> PnfpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = PipelineConfig::default();
        let params = ModelParams::init(&cfg.model, seed).map_err(|e| fail(&e))?;
        let inner = Fingerprinter::new(cfg, params).map_err(|e| fail(&e))?;
        *out = Box::into_raw(Box::new(PnfpModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn pnfp_model_free(model: *mut PnfpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fingerprint length, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnfp_model_dim(model: *const PnfpModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.inner.config.model.embedding_dim())
}

/// Sample rate the model analyses audio at; input at other rates is resampled.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnfp_model_sample_rate(model: *const PnfpModel) -> u32 {
    model
        .as_ref()
        .map_or(0, |m| m.inner.config.spectrogram.sample_rate)
}

/// Fingerprints mono audio, one row of `pnfp_model_dim` floats per segment, written to
/// `out` (row-major). `*n_segments` receives the segment count; when `out` is null or
/// `capacity` (in segments) is too small nothing is written and `BUFFER_TOO_SMALL` is
/// returned for the latter.
///
/// # Safety
/// `samples` must point at `n` floats, `out` at `capacity * dim` floats, `n_segments` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn pnfp_fingerprint(
    model: *const PnfpModel,
    samples: *const f32,
    n: usize,
    sample_rate: u32,
    out: *mut f32,
    capacity: usize,
    n_segments: *mut usize,
) -> PnfpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if n_segments.is_null() {
            return Err(null("n_segments"));
        }
        let clip = clip_arg(
            samples,
            n,
            sample_rate,
            m.inner.config.spectrogram.sample_rate,
        )?;
        let fps = m.inner.fingerprints(&clip).map_err(|e| fail(&e))?;
        *n_segments = fps.len();
        if out.is_null() {
            return Ok(());
        }
        if capacity < fps.len() {
            set_error(format!("{} segments do not fit in {capacity}", fps.len()));
            return Err(PnfpStatus::BufferTooSmall);
        }
        let dim = m.inner.config.model.embedding_dim();
        let dst = std::slice::from_raw_parts_mut(out, fps.len() * dim);
        for (row, fp) in dst.chunks_exact_mut(dim).zip(&fps) {
            row.copy_from_slice(&fp.values);
        }
        Ok(())
    })
}

/// Empty database.
#[no_mangle]
pub extern "C" fn pnfp_db_new() -> *mut PnfpDatabase {
    Box::into_raw(Box::new(PnfpDatabase {
        staged: Vec::new(),
        built: None,
        ids: Vec::new(),
    }))
}

/// Reads a database file written by `build-db`/`build-index` or [`pnfp_db_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pnfp_db_open(
    path: *const c_char,
    out: *mut *mut PnfpDatabase,
) -> PnfpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (db, ix) = read_db(path_arg(path, "path")?).map_err(|e| fail(&e))?;
        let ids = db
            .tracks()
            .iter()
            .map(|t| CString::new(t.id.clone()).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(PnfpDatabase {
            staged: Vec::new(),
            built: Some((db, ix)),
            ids,
        }));
        Ok(())
    })
}

/// # Safety
/// `db` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnfp_db_free(db: *mut PnfpDatabase) {
    if !db.is_null() {
        drop(Box::from_raw(db));
    }
}

/// Fingerprints a reference track and appends it.
///
/// # Safety
/// `id` must be a NUL-terminated string and `samples` point at `n` floats.
#[no_mangle]
pub unsafe extern "C" fn pnfp_db_add_track(
    db: *mut PnfpDatabase,
    model: *const PnfpModel,
    id: *const c_char,
    samples: *const f32,
    n: usize,
    sample_rate: u32,
) -> PnfpStatus {
    guard(|| {
        let d = db.as_mut().ok_or_else(|| null("db"))?;
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if id.is_null() {
            return Err(null("id"));
        }
        if d.built.is_some() {
            set_error("database is frozen after the first search or when opened from a file");
            return Err(PnfpStatus::Config);
        }
        let name = CStr::from_ptr(id).to_owned();
        let clip = clip_arg(
            samples,
            n,
            sample_rate,
            m.inner.config.spectrogram.sample_rate,
        )?;
        let fps = m.inner.fingerprints(&clip).map_err(|e| fail(&e))?;
        d.staged.push((name.to_string_lossy().into_owned(), fps));
        d.ids.push(name);
        Ok(())
    })
}

impl PnfpDatabase {
    fn freeze(&mut self) -> Result<&(FingerprintDB, Option<IvfPqIndex>), PnfpStatus> {
        if self.built.is_none() {
            let db = FingerprintDB::from_tracks(&self.staged).map_err(|e| fail(&e))?;
            self.staged.clear();
            self.built = Some((db, None));
        }
        Ok(self.built.as_ref().expect("just built"))
    }
}

/// Number of tracks.
///
/// # Safety
/// `db` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnfp_db_track_count(db: *const PnfpDatabase) -> usize {
    db.as_ref().map_or(0, |d| d.ids.len())
}

/// Track id, owned by the database; null when out of range.
///
/// # Safety
/// `db` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnfp_db_track_id(db: *const PnfpDatabase, track: u32) -> *const c_char {
    db.as_ref()
        .and_then(|d| d.ids.get(track as usize))
        .map_or(std::ptr::null(), |s| s.as_ptr())
}

/// Writes the database (and its IVFPQ index, if any) to `path`.
///
/// # Safety
/// `db` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pnfp_db_save(db: *mut PnfpDatabase, path: *const c_char) -> PnfpStatus {
    guard(|| {
        let d = db.as_mut().ok_or_else(|| null("db"))?;
        let path = path_arg(path, "path")?;
        let (fdb, ix) = d.freeze()?;
        write_db(path, fdb, ix.as_ref()).map_err(|e| fail(&e))
    })
}

/// Identifies a query clip. Up to `capacity` matches, one per track and best first, go to
/// `out`; `*n_out` receives how many were written. `use_ivfpq` selects the approximate
/// index when the database has one.
///
/// # Safety
/// `samples` must point at `n` floats, `out` at `capacity` matches; `n_out` writable.
#[no_mangle]
pub unsafe extern "C" fn pnfp_query(
    model: *const PnfpModel,
    db: *mut PnfpDatabase,
    samples: *const f32,
    n: usize,
    sample_rate: u32,
    use_ivfpq: bool,
    out: *mut PnfpMatch,
    capacity: usize,
    n_out: *mut usize,
) -> PnfpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let d = db.as_mut().ok_or_else(|| null("db"))?;
        if n_out.is_null() || (out.is_null() && capacity > 0) {
            return Err(null("output"));
        }
        let clip = clip_arg(
            samples,
            n,
            sample_rate,
            m.inner.config.spectrogram.sample_rate,
        )?;
        let (fdb, ix) = d.freeze()?;
        let backend = match (use_ivfpq, ix) {
            (true, Some(index)) => Backend::IvfPq {
                index,
                n_probe: None,
            },
            _ => Backend::Exact,
        };
        let results = best_per_track(&m.inner.query(fdb, backend, &clip).map_err(|e| fail(&e))?);
        let k = results.len().min(capacity);
        for (i, r) in results.iter().take(k).enumerate() {
            let track = fdb
                .tracks()
                .iter()
                .position(|t| t.id == r.track_id)
                .unwrap_or(usize::MAX);
            *out.add(i) = PnfpMatch {
                track: track as u32,
                offset: r.db_offset,
                score: r.score,
            };
        }
        *n_out = k;
        Ok(())
    })
}

/// Freezes the database and attaches an IVFPQ index with default parameters.
///
/// # Safety
/// `db` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnfp_db_build_ivfpq(db: *mut PnfpDatabase) -> PnfpStatus {
    guard(|| {
        let d = db.as_mut().ok_or_else(|| null("db"))?;
        let fdb = d.freeze()?.0.clone();
        let ix = IvfPqIndex::build(&fdb, &PipelineConfig::default().index).map_err(|e| fail(&e))?;
        d.built = Some((fdb, Some(ix)));
        Ok(())
    })
}
