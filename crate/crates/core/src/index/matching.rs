use std::collections::BTreeSet;

use super::db::{dot, FingerprintDB, Hit};
use super::ivfpq::IvfPqIndex;
use crate::error::{Error, Result};

/// Candidates per query segment.
pub const DEFAULT_CANDIDATES: usize = 20;

/// Candidate generator.
#[derive(Debug, Clone, Copy)]
pub enum Backend<'a> {
    Exact,
    IvfPq {
        index: &'a IvfPqIndex,
        n_probe: Option<usize>,
    },
}

pub fn search_segments(
    db: &FingerprintDB,
    backend: Backend<'_>,
    q: &[f32],
    k: usize,
) -> Result<Vec<Hit>> {
    if db.is_empty() {
        return Err(Error::Search("database is empty".into()));
    }
    match backend {
        Backend::Exact => db.search_exact(q, k),
        Backend::IvfPq { index, n_probe } => index.search(q, k, n_probe),
    }
}

/// A scored `(track, offset)` alignment hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub track_id: String,
    /// Track position aligned with query segment 0; may be negative when only a suffix of
    /// the query overlaps the track.
    pub db_offset: i64,
    pub score: f32,
    pub rank: usize,
}

/// Candidate hit of query segment `q_pos`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub q_pos: usize,
    pub row: usize,
}

/// Scores every hypothesis proposed by the candidates against the full-precision rows.
/// A candidate at query position `q` on track position `p` proposes offset `p - q`; the
/// hypothesis score sums `<query_q, db_{offset+q}>` over the positions inside the track.
pub fn sequence_match(
    db: &FingerprintDB,
    candidates: &[Candidate],
    queries: &[Vec<f32>],
) -> Vec<MatchResult> {
    let hyps: BTreeSet<(usize, i64)> = candidates
        .iter()
        .filter(|c| c.q_pos < queries.len())
        .map(|c| {
            (
                db.track_of(c.row),
                db.position_in_track(c.row) as i64 - c.q_pos as i64,
            )
        })
        .collect();
    let mut out: Vec<MatchResult> = hyps
        .into_iter()
        .map(|(t, offset)| {
            let track = &db.tracks()[t];
            let score = queries
                .iter()
                .enumerate()
                .filter_map(|(q, v)| {
                    let p = offset + q as i64;
                    (p >= 0 && (p as usize) < track.n_segments)
                        .then(|| dot(v, db.row(track.first_row + p as usize)))
                })
                .sum();
            MatchResult {
                track_id: track.id.clone(),
                db_offset: offset,
                score,
                rank: 0,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.track_id.cmp(&b.track_id))
            .then(a.db_offset.cmp(&b.db_offset))
    });
    for (i, r) in out.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    out
}

/// Candidate search for every query segment followed by sequence matching.
pub fn identify(
    db: &FingerprintDB,
    backend: Backend<'_>,
    queries: &[Vec<f32>],
    k: usize,
) -> Result<Vec<MatchResult>> {
    let mut candidates = Vec::new();
    for (q_pos, q) in queries.iter().enumerate() {
        candidates.extend(
            search_segments(db, backend, q, k)?
                .into_iter()
                .map(|h| Candidate { q_pos, row: h.row }),
        );
    }
    Ok(sequence_match(db, &candidates, queries))
}

/// Best hypothesis per track, in rank order.
pub fn best_per_track(results: &[MatchResult]) -> Vec<MatchResult> {
    let mut seen = std::collections::HashSet::new();
    results
        .iter()
        .filter(|r| seen.insert(r.track_id.clone()))
        .cloned()
        .collect()
}
