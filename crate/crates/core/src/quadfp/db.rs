use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quad::{quad_hash, Quad};
use crate::error::{Error, Result};

pub const QUAD_MAGIC: &[u8; 8] = b"QUADDB01";

/// Stored reference quad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEntry {
    pub hash: [f32; 4],
    pub track: u32,
    pub a_t: f32,
    pub b_t: f32,
    pub a_f: f32,
    pub b_f: f32,
}

impl QuadEntry {
    pub fn new(q: &Quad, track: u32) -> Result<Self> {
        let h = quad_hash(q)?;
        Ok(Self {
            hash: h.map(|v| v as f32),
            track,
            a_t: q.a.t as f32,
            b_t: q.b.t as f32,
            a_f: q.a.f as f32,
            b_f: q.b.f as f32,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Half-width of the range query per hash component.
    pub epsilon: f32,
    pub min_scale: f32,
    pub max_scale: f32,
    /// Accepted ratio band for frequency extents of matched quads (no pitch change expected).
    pub max_freq_ratio: f32,
    pub scale_bins: usize,
    /// Offset histogram bin width in frames.
    pub offset_bin_frames: f32,
    pub min_votes: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            min_scale: 0.5,
            max_scale: 2.0,
            max_freq_ratio: 1.2,
            scale_bins: 32,
            // 250 ms at 8 kHz with a 256-sample hop
            offset_bin_frames: 0.25 * 8000.0 / 256.0,
            min_votes: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackMatch {
    pub track_id: String,
    pub votes: usize,
    pub scale: f32,
    pub rank: usize,
}

/// Reference quads with a uniform-grid spatial index over hash space.
#[derive(Debug, Clone)]
pub struct QuadDB {
    pub tracks: Vec<String>,
    pub entries: Vec<QuadEntry>,
    cell: f32,
    grid: HashMap<[i16; 4], Vec<u32>>,
}

fn cell_of(h: &[f32; 4], cell: f32) -> [i16; 4] {
    h.map(|v| (v / cell).floor() as i16)
}

impl QuadDB {
    /// Grid cells twice the tolerance wide, so a range query touches at most 16 cells.
    pub fn new(tracks: Vec<String>, entries: Vec<QuadEntry>, epsilon: f32) -> Self {
        let cell = 2.0 * epsilon.max(1e-4);
        let mut grid: HashMap<[i16; 4], Vec<u32>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            grid.entry(cell_of(&e.hash, cell))
                .or_default()
                .push(i as u32);
        }
        Self {
            tracks,
            entries,
            cell,
            grid,
        }
    }

    pub fn from_track_quads(tracks: &[(String, Vec<Quad>)], epsilon: f32) -> Self {
        let mut entries = Vec::new();
        for (t, (_, quads)) in tracks.iter().enumerate() {
            entries.extend(
                quads
                    .iter()
                    .filter_map(|q| QuadEntry::new(q, t as u32).ok()),
            );
        }
        Self::new(
            tracks.iter().map(|t| t.0.clone()).collect(),
            entries,
            epsilon,
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries whose every hash component lies within `eps` of `h`, in entry order.
    pub fn range(&self, h: &[f32; 4], eps: f32) -> Vec<u32> {
        let lo = h.map(|v| ((v - eps) / self.cell).floor() as i16);
        let hi = h.map(|v| ((v + eps) / self.cell).floor() as i16);
        let mut out = Vec::new();
        for c0 in lo[0]..=hi[0] {
            for c1 in lo[1]..=hi[1] {
                for c2 in lo[2]..=hi[2] {
                    for c3 in lo[3]..=hi[3] {
                        if let Some(ids) = self.grid.get(&[c0, c1, c2, c3]) {
                            out.extend(ids.iter().copied().filter(|&i| {
                                let e = &self.entries[i as usize].hash;
                                (0..4).all(|k| (e[k] - h[k]).abs() <= eps)
                            }));
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Range query, scale and frequency-extent filtering, then voting over
    /// `(track, log-scale bin, offset bin)`. Tracks are ranked by their fullest bin.
    pub fn match_query(&self, query: &[Quad], cfg: &MatchConfig) -> Vec<TrackMatch> {
        let (ls_min, ls_max) = ((cfg.min_scale as f64).ln(), (cfg.max_scale as f64).ln());
        let mut votes: HashMap<(u32, i64, i64), usize> = HashMap::new();
        for q in query {
            let Ok(hq) = quad_hash(q) else { continue };
            let hq = hq.map(|v| v as f32);
            let (qw, qh) = (q.b.t - q.a.t, q.b.f - q.a.f);
            for i in self.range(&hq, cfg.epsilon) {
                let e = &self.entries[i as usize];
                let s = (e.b_t - e.a_t) as f64 / qw;
                if !(s >= cfg.min_scale as f64 && s <= cfg.max_scale as f64) {
                    continue;
                }
                let fr = (e.b_f - e.a_f) as f64 / qh;
                if !(fr > 0.0
                    && fr <= cfg.max_freq_ratio as f64
                    && fr >= 1.0 / cfg.max_freq_ratio as f64)
                {
                    continue;
                }
                let sbin = (((s.ln() - ls_min) / (ls_max - ls_min)) * cfg.scale_bins as f64)
                    .floor()
                    .clamp(0.0, cfg.scale_bins as f64 - 1.0) as i64;
                let offset = e.a_t as f64 - s * q.a.t;
                let obin = (offset / cfg.offset_bin_frames as f64).floor() as i64;
                *votes.entry((e.track, sbin, obin)).or_default() += 1;
            }
        }
        let mut best: HashMap<u32, (usize, i64)> = HashMap::new();
        for (&(t, sbin, _), &n) in &votes {
            let slot = best.entry(t).or_insert((0, i64::MAX));
            if n > slot.0 || (n == slot.0 && sbin < slot.1) {
                *slot = (n, sbin);
            }
        }
        let mut out: Vec<TrackMatch> = best
            .into_iter()
            .filter(|&(_, (n, _))| n >= cfg.min_votes)
            .map(|(t, (n, sbin))| TrackMatch {
                track_id: self.tracks[t as usize].clone(),
                votes: n,
                scale: (ls_min + (sbin as f64 + 0.5) / cfg.scale_bins as f64 * (ls_max - ls_min))
                    .exp() as f32,
                rank: 0,
            })
            .collect();
        out.sort_by(|a, b| {
            b.votes
                .cmp(&a.votes)
                .then_with(|| a.track_id.cmp(&b.track_id))
        });
        for (i, m) in out.iter_mut().enumerate() {
            m.rank = i + 1;
        }
        out
    }

    /// Layout: magic `QUADDB01`, `f32` grid tolerance, `u64` track count, per track `u32`
    /// length and UTF-8 id, `u64` entry count, per entry 4 hash `f32`, `u32` track and the
    /// `f32` times and frequencies of `A` and `B`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = QUAD_MAGIC.to_vec();
        out.extend_from_slice(&(self.cell / 2.0).to_le_bytes());
        out.extend_from_slice(&(self.tracks.len() as u64).to_le_bytes());
        for t in &self.tracks {
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            out.extend_from_slice(t.as_bytes());
        }
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            for v in e.hash {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&e.track.to_le_bytes());
            for v in [e.a_t, e.b_t, e.a_f, e.b_f] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let trunc = || Error::Format("truncated quad database".into());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = buf.get(pos..pos + n).ok_or_else(trunc)?;
            pos += n;
            Ok(s)
        };
        if take(8)? != QUAD_MAGIC {
            return Err(Error::Format("missing QUADDB01 magic".into()));
        }
        let f32_at = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap());
        let eps = f32_at(take(4)?);
        let n_tracks = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut tracks = Vec::with_capacity(n_tracks.min(1 << 20));
        for _ in 0..n_tracks {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let id = String::from_utf8(take(len)?.to_vec())
                .map_err(|_| Error::Format("track id is not UTF-8".into()))?;
            tracks.push(id);
        }
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let r = take(36)?;
            let f = |k: usize| f32_at(&r[k * 4..k * 4 + 4]);
            let track = u32::from_le_bytes(r[16..20].try_into().unwrap());
            if track as usize >= tracks.len() {
                return Err(Error::Format("quad references an unknown track".into()));
            }
            entries.push(QuadEntry {
                hash: [f(0), f(1), f(2), f(3)],
                track,
                a_t: f(5),
                b_t: f(6),
                a_f: f(7),
                b_f: f(8),
            });
        }
        Ok(Self::new(tracks, entries, eps))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
