use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{PeakCloud, SegmentConfig};

/// Peak on the absolute spectrogram grid: frame index, mel bin and a strength used to pick roots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPeak {
    pub t: f64,
    pub f: f64,
    pub strength: f32,
}

/// Four peaks; `A` is the root and `B` the far corner of the box that holds `C` and `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub a: GridPeak,
    pub b: GridPeak,
    pub c: GridPeak,
    pub d: GridPeak,
}

/// `(cx, cy, dx, dy)`: `C` and `D` in the frame where `A` is `(0,0)` and `B` is `(1,1)`.
pub type QuadHash = [f64; 4];

fn inside(p: &GridPeak, a: &GridPeak, b: &GridPeak) -> bool {
    let (lo, hi) = if a.f < b.f { (a.f, b.f) } else { (b.f, a.f) };
    p.t > a.t && p.t < b.t && p.f > lo && p.f < hi
}

impl Quad {
    /// Orders `C`/`D` canonically (smaller `cx` first, then smaller `cy`).
    pub fn new(a: GridPeak, b: GridPeak, c: GridPeak, d: GridPeak) -> Self {
        let key = |p: &GridPeak| ((p.t - a.t) / (b.t - a.t), (p.f - a.f) / (b.f - a.f));
        let (kc, kd) = (key(&c), key(&d));
        if kd.0 < kc.0 || (kd.0 == kc.0 && kd.1 < kc.1) {
            Self { a, b, c: d, d: c }
        } else {
            Self { a, b, c, d }
        }
    }

    pub fn is_valid(&self) -> bool {
        self.a.t < self.b.t
            && self.a.f != self.b.f
            && inside(&self.c, &self.a, &self.b)
            && inside(&self.d, &self.a, &self.b)
    }

    /// Same quad with time and frequency coordinates multiplied by `st` and `sf`.
    pub fn scaled(&self, st: f64, sf: f64) -> Self {
        let s = |p: GridPeak| GridPeak {
            t: p.t * st,
            f: p.f * sf,
            strength: p.strength,
        };
        Self {
            a: s(self.a),
            b: s(self.b),
            c: s(self.c),
            d: s(self.d),
        }
    }
}

pub fn quad_hash(q: &Quad) -> Result<QuadHash> {
    let (w, h) = (q.b.t - q.a.t, q.b.f - q.a.f);
    if w == 0.0 || h == 0.0 || !w.is_finite() || !h.is_finite() {
        return Err(Error::DegenerateQuad(format!("box {w} x {h}")));
    }
    Ok([
        (q.c.t - q.a.t) / w,
        (q.c.f - q.a.f) / h,
        (q.d.t - q.a.t) / w,
        (q.d.f - q.a.f) / h,
    ])
}

/// Reference or query side; queries get a larger quad budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadMode {
    Reference,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadConfig {
    /// Quads per second of audio for references.
    pub ref_density: f64,
    /// Quads per second of audio for queries.
    pub query_density: f64,
    /// Look-ahead window for `B`, in frames.
    pub window_frames: f64,
    /// Partners considered as `B` per root, strongest first.
    pub fan_out: usize,
    /// Strongest in-box peaks paired up as `C`/`D`.
    pub inner: usize,
    /// Frames per second of the peak grid.
    pub frame_rate: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            ref_density: 25.0,
            query_density: 100.0,
            window_frames: 64.0,
            fan_out: 6,
            inner: 4,
            frame_rate: 8000.0 / 256.0,
        }
    }
}

impl QuadConfig {
    pub fn density(&self, mode: QuadMode) -> f64 {
        match mode {
            QuadMode::Reference => self.ref_density,
            QuadMode::Query => self.query_density,
        }
    }
}

fn strength_order(x: &GridPeak, y: &GridPeak) -> std::cmp::Ordering {
    y.strength
        .total_cmp(&x.strength)
        .then(x.t.total_cmp(&y.t))
        .then(x.f.total_cmp(&y.f))
}

/// Quads from time-sorted peaks. Roots are visited per one-second bucket, strongest first, and
/// each bucket emits at most `density` quads.
pub fn build_quads(peaks: &[GridPeak], cfg: &QuadConfig, mode: QuadMode) -> Vec<Quad> {
    if peaks.len() < 4 {
        return Vec::new();
    }
    let budget = cfg.density(mode).round().max(0.0) as usize;
    let bucket_of = |p: &GridPeak| (p.t / cfg.frame_rate).floor() as i64;
    let mut roots: Vec<usize> = (0..peaks.len()).collect();
    roots.sort_by(|&i, &j| {
        bucket_of(&peaks[i])
            .cmp(&bucket_of(&peaks[j]))
            .then(strength_order(&peaks[i], &peaks[j]))
    });

    let mut out = Vec::new();
    let mut bucket = i64::MIN;
    let mut used = 0;
    for &ri in &roots {
        let a = peaks[ri];
        if bucket_of(&a) != bucket {
            bucket = bucket_of(&a);
            used = 0;
        }
        if used >= budget {
            continue;
        }
        let lo = peaks.partition_point(|p| p.t <= a.t);
        let hi = peaks.partition_point(|p| p.t <= a.t + cfg.window_frames);
        let window = &peaks[lo..hi];
        let mut partners: Vec<&GridPeak> = window.iter().filter(|p| p.f != a.f).collect();
        partners.sort_by(|x, y| strength_order(x, y));
        partners.truncate(cfg.fan_out);
        // farthest partner first: wider boxes hold more inner peaks
        partners.sort_by(|x, y| y.t.total_cmp(&x.t).then(x.f.total_cmp(&y.f)));
        'partners: for b in partners {
            let mut inner: Vec<&GridPeak> = window.iter().filter(|p| inside(p, &a, b)).collect();
            inner.sort_by(|x, y| strength_order(x, y));
            inner.truncate(cfg.inner);
            for i in 0..inner.len() {
                for j in i + 1..inner.len() {
                    if used >= budget {
                        break 'partners;
                    }
                    out.push(Quad::new(a, *b, *inner[i], *inner[j]));
                    used += 1;
                }
            }
        }
    }
    out
}

/// Merges per-segment clouds into one time-sorted peak list on the absolute frame/bin grid.
/// Peaks seen in overlapping windows are kept once; all-zero padding peaks are dropped.
pub fn grid_peaks_from_clouds(
    clouds: &[PeakCloud],
    segments: &SegmentConfig,
    sample_rate: u32,
    hop: usize,
    n_mels: usize,
) -> Vec<GridPeak> {
    let width = segments.frames_per_segment(sample_rate, hop) as f32;
    let mut map = std::collections::BTreeMap::new();
    for c in clouds {
        let start = segments.start_frame(c.segment_index as usize, sample_rate, hop) as i64;
        for p in &c.peaks {
            if p.t == 0.0 && p.f == 0.0 && p.a == 0.0 {
                continue;
            }
            let frame = start + (p.t * width).round() as i64;
            let bin = (p.f * n_mels as f32).round() as i64;
            let e = map.entry((frame, bin)).or_insert(p.a);
            *e = e.max(p.a);
        }
    }
    map.into_iter()
        .map(|((frame, bin), s)| GridPeak {
            t: frame as f64,
            f: bin as f64,
            strength: s,
        })
        .collect()
}
