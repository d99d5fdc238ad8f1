use crate::encoder::Fingerprint;
use crate::error::{Error, Result};

/// Allowed deviation of a stored row's norm from 1.
pub const DB_NORM_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub id: String,
    pub first_row: usize,
    pub n_segments: usize,
}

/// Per-row metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMeta {
    pub track_id: String,
    pub segment_index: u32,
}

/// Row-major fingerprint matrix whose rows are grouped by track in segment order.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDB {
    pub dim: usize,
    data: Vec<f32>,
    tracks: Vec<TrackEntry>,
    row_track: Vec<u32>,
    row_segment: Vec<u32>,
}

/// Candidate row with its (possibly approximate) score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub row: usize,
    pub score: f32,
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Highest score first, then lowest row.
pub fn rank_hits(hits: &mut Vec<Hit>, k: usize) {
    let cmp = |a: &Hit, b: &Hit| b.score.total_cmp(&a.score).then(a.row.cmp(&b.row));
    if k < hits.len() {
        hits.select_nth_unstable_by(k, cmp);
        hits.truncate(k);
    }
    hits.sort_by(cmp);
}

impl FingerprintDB {
    /// Rows with parallel metadata. Rows of one track must be contiguous with strictly
    /// increasing segment indices, and every row must be unit-norm.
    pub fn build_exact(rows: &[Fingerprint], meta: &[SegmentMeta]) -> Result<Self> {
        if rows.len() != meta.len() {
            return Err(Error::Shape(format!(
                "{} fingerprints with {} metadata entries",
                rows.len(),
                meta.len()
            )));
        }
        if rows.is_empty() {
            return Err(Error::Data(
                "cannot build an empty fingerprint database".into(),
            ));
        }
        let dim = rows[0].values.len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut tracks: Vec<TrackEntry> = Vec::new();
        let mut row_track = Vec::with_capacity(rows.len());
        let mut row_segment = Vec::with_capacity(rows.len());
        for (r, (fp, m)) in rows.iter().zip(meta).enumerate() {
            if fp.values.len() != dim {
                return Err(Error::Shape(format!(
                    "row {r} has dim {}, expected {dim}",
                    fp.values.len()
                )));
            }
            let norm = fp.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > DB_NORM_TOLERANCE {
                return Err(Error::Contract(format!("row {r} has norm {norm}")));
            }
            match tracks.last_mut() {
                Some(t) if t.id == m.track_id => {
                    if m.segment_index <= row_segment[r - 1] {
                        return Err(Error::Contract(format!(
                            "track {}: segment {} follows {}",
                            m.track_id,
                            m.segment_index,
                            row_segment[r - 1]
                        )));
                    }
                    t.n_segments += 1;
                }
                _ => {
                    if tracks.iter().any(|t| t.id == m.track_id) {
                        return Err(Error::Contract(format!(
                            "rows of track {} are not contiguous",
                            m.track_id
                        )));
                    }
                    tracks.push(TrackEntry {
                        id: m.track_id.clone(),
                        first_row: r,
                        n_segments: 1,
                    });
                }
            }
            data.extend_from_slice(&fp.values);
            row_track.push((tracks.len() - 1) as u32);
            row_segment.push(m.segment_index);
        }
        Ok(Self {
            dim,
            data,
            tracks,
            row_track,
            row_segment,
        })
    }

    /// One entry per track, fingerprints in segment order starting at segment 0.
    pub fn from_tracks(tracks: &[(String, Vec<Fingerprint>)]) -> Result<Self> {
        let mut rows = Vec::new();
        let mut meta = Vec::new();
        for (id, fps) in tracks {
            for (i, fp) in fps.iter().enumerate() {
                rows.push(fp.clone());
                meta.push(SegmentMeta {
                    track_id: id.clone(),
                    segment_index: i as u32,
                });
            }
        }
        Self::build_exact(&rows, &meta)
    }

    pub(crate) fn from_parts(
        dim: usize,
        data: Vec<f32>,
        tracks: Vec<TrackEntry>,
        row_segment: Vec<u32>,
    ) -> Result<Self> {
        let n = row_segment.len();
        if data.len() != n * dim || n == 0 {
            return Err(Error::Format(
                "fingerprint matrix size does not match row count".into(),
            ));
        }
        let mut row_track = vec![u32::MAX; n];
        for (t, e) in tracks.iter().enumerate() {
            let end = e.first_row + e.n_segments;
            if end > n {
                return Err(Error::Format(format!("track {} overruns the matrix", e.id)));
            }
            for slot in &mut row_track[e.first_row..end] {
                if *slot != u32::MAX {
                    return Err(Error::Format("overlapping track ranges".into()));
                }
                *slot = t as u32;
            }
        }
        if row_track.contains(&u32::MAX) {
            return Err(Error::Format("rows without a track".into()));
        }
        Ok(Self {
            dim,
            data,
            tracks,
            row_track,
            row_segment,
        })
    }

    pub fn len(&self) -> usize {
        self.row_segment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_segment.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn tracks(&self) -> &[TrackEntry] {
        &self.tracks
    }

    pub fn track_of(&self, r: usize) -> usize {
        self.row_track[r] as usize
    }

    pub fn segment_of(&self, r: usize) -> u32 {
        self.row_segment[r]
    }

    pub fn row_segments(&self) -> &[u32] {
        &self.row_segment
    }

    pub fn meta(&self, r: usize) -> SegmentMeta {
        SegmentMeta {
            track_id: self.tracks[self.track_of(r)].id.clone(),
            segment_index: self.row_segment[r],
        }
    }

    /// Position of row `r` within its track.
    pub fn position_in_track(&self, r: usize) -> usize {
        r - self.tracks[self.track_of(r)].first_row
    }

    /// Exhaustive maximum-inner-product search.
    pub fn search_exact(&self, q: &[f32], k: usize) -> Result<Vec<Hit>> {
        if q.len() != self.dim {
            return Err(Error::Shape(format!(
                "query dim {} vs {}",
                q.len(),
                self.dim
            )));
        }
        let mut hits: Vec<Hit> = (0..self.len())
            .map(|row| Hit {
                row,
                score: dot(q, self.row(row)),
            })
            .collect();
        rank_hits(&mut hits, k);
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(v: &[f32]) -> Fingerprint {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        Fingerprint {
            values: v.iter().map(|x| x / n).collect(),
        }
    }

    fn meta(t: &str, s: u32) -> SegmentMeta {
        SegmentMeta {
            track_id: t.into(),
            segment_index: s,
        }
    }

    #[test]
    fn single_row_self_match() {
        let row = fp(&[1.0, 2.0, 2.0]);
        let db = FingerprintDB::build_exact(std::slice::from_ref(&row), &[meta("a", 0)]).unwrap();
        let hits = db.search_exact(&row.values, 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_and_non_unit_rows_are_rejected() {
        assert!(matches!(
            FingerprintDB::build_exact(&[], &[]),
            Err(Error::Data(_))
        ));
        let bad = Fingerprint {
            values: vec![1.0, 1.0],
        };
        assert!(matches!(
            FingerprintDB::build_exact(&[bad], &[meta("a", 0)]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn track_layout_is_checked() {
        let r = fp(&[1.0, 0.0]);
        let rows = vec![r.clone(), r.clone(), r.clone()];
        assert!(
            FingerprintDB::build_exact(&rows, &[meta("a", 0), meta("b", 0), meta("a", 1)]).is_err()
        );
        assert!(
            FingerprintDB::build_exact(&rows, &[meta("a", 1), meta("a", 1), meta("b", 0)]).is_err()
        );
        let db =
            FingerprintDB::build_exact(&rows, &[meta("a", 0), meta("a", 2), meta("b", 0)]).unwrap();
        assert_eq!(db.tracks().len(), 2);
        assert_eq!(db.track_of(2), 1);
        assert_eq!(db.position_in_track(1), 1);
    }

    #[test]
    fn ties_rank_lower_row_first() {
        let r = fp(&[1.0, 0.0]);
        let db = FingerprintDB::from_tracks(&[("a".into(), vec![r.clone(), r.clone()])]).unwrap();
        let hits = db.search_exact(&r.values, 2).unwrap();
        assert_eq!(hits.iter().map(|h| h.row).collect::<Vec<_>>(), vec![0, 1]);
    }
}
