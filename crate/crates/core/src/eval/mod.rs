//! Synthetic corpus and stretch-robustness evaluation.

mod corpus;
mod sweep;

pub use corpus::{synth_corpus, synth_track, track_id, CorpusConfig};
pub use sweep::{
    hr_at_1, run_sweep, sample_query, top1, Artifacts, Cell, EvalConfig, EvalReport, Query,
    ReportMeta, System, DEFAULT_FACTORS, DEFAULT_LENGTHS,
};
