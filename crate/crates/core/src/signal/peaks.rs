use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::MelSpectrogram;

/// Number of peaks kept per one-second segment.
pub const CLOUD_SIZE: usize = 256;

/// A spectral peak with all three coordinates normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Peak {
    pub t: f32,
    pub f: f32,
    pub a: f32,
}

impl Peak {
    pub const fn new(t: f32, f: f32, a: f32) -> Self {
        Self { t, f, a }
    }

    pub fn coords(&self) -> [f32; 3] {
        [self.t, self.f, self.a]
    }
}

/// Canonical peak order: amplitude descending, then time and frequency ascending.
pub fn amplitude_order(x: &Peak, y: &Peak) -> Ordering {
    y.a.total_cmp(&x.a)
        .then(x.t.total_cmp(&y.t))
        .then(x.f.total_cmp(&y.f))
}

/// Fixed-size peak set of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakCloud {
    pub peaks: Vec<Peak>,
    pub track_id: String,
    pub segment_index: u32,
}

/// Grid position and raw magnitude of a local maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPeak {
    pub frame: usize,
    pub mel: usize,
    pub value: f32,
}

/// All bins strictly greater than every in-bounds neighbor of their 3x3 neighborhood.
pub fn local_maxima(spec: &MelSpectrogram) -> Vec<RawPeak> {
    let (n_mels, n_frames) = (spec.n_mels, spec.n_frames);
    let mut out = Vec::new();
    for m in 0..n_mels {
        let (m_lo, m_hi) = (m.saturating_sub(1), (m + 1).min(n_mels - 1));
        for t in 0..n_frames {
            let v = spec.at(m, t);
            let (t_lo, t_hi) = (t.saturating_sub(1), (t + 1).min(n_frames - 1));
            let is_max = (m_lo..=m_hi)
                .all(|mm| (t_lo..=t_hi).all(|tt| (mm == m && tt == t) || v > spec.at(mm, tt)));
            if is_max {
                out.push(RawPeak {
                    frame: t,
                    mel: m,
                    value: v,
                });
            }
        }
    }
    out
}

/// Keeps the `n_peaks` strongest local maxima of a segment window as a normalized cloud.
///
/// Amplitudes are min-max scaled over the kept peaks (a single distinct amplitude maps to 1).
/// Short clouds are padded by repeating the kept peaks cyclically, or with `(0, 0, 0)` when
/// the window has no maxima. The result is sorted by [`amplitude_order`].
pub fn extract_peaks(spec: &MelSpectrogram, n_peaks: usize) -> Vec<Peak> {
    let mut raw = local_maxima(spec);
    raw.sort_by(|x, y| {
        y.value
            .total_cmp(&x.value)
            .then(x.frame.cmp(&y.frame))
            .then(x.mel.cmp(&y.mel))
    });
    raw.truncate(n_peaks);

    let (lo, hi) = raw
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.value), hi.max(p.value))
        });
    let range = hi - lo;
    let mut peaks: Vec<Peak> = raw
        .iter()
        .map(|p| Peak {
            t: p.frame as f32 / spec.n_frames as f32,
            f: p.mel as f32 / spec.n_mels as f32,
            a: if range > 0.0 {
                (p.value - lo) / range
            } else {
                1.0
            },
        })
        .collect();

    if peaks.is_empty() {
        peaks.resize(n_peaks, Peak::default());
    } else {
        let kept = peaks.len();
        for i in kept..n_peaks {
            peaks.push(peaks[i % kept]);
        }
    }
    peaks.sort_by(amplitude_order);
    peaks
}

pub fn extract_cloud(
    spec: &MelSpectrogram,
    n_peaks: usize,
    track_id: impl Into<String>,
    segment_index: u32,
) -> PeakCloud {
    PeakCloud {
        peaks: extract_peaks(spec, n_peaks),
        track_id: track_id.into(),
        segment_index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n_mels: usize, n_frames: usize, values: Vec<f32>) -> MelSpectrogram {
        MelSpectrogram {
            values,
            n_mels,
            n_frames,
            hop: 256,
            sample_rate: 8000,
            n_samples: 8000,
        }
    }

    #[test]
    fn unique_center_maximum() {
        let s = spec(3, 3, vec![0.1, 0.2, 0.1, 0.2, 0.9, 0.2, 0.1, 0.2, 0.1]);
        let peaks = extract_peaks(&s, 4);
        assert_eq!(peaks.len(), 4);
        let expected = Peak::new(1.0 / 3.0, 1.0 / 3.0, 1.0);
        assert!(peaks.iter().all(|&p| p == expected));
    }

    #[test]
    fn constant_matrix_has_no_maxima() {
        let s = spec(4, 5, vec![0.7; 20]);
        assert!(local_maxima(&s).is_empty());
        let peaks = extract_peaks(&s, CLOUD_SIZE);
        assert_eq!(peaks.len(), CLOUD_SIZE);
        assert!(peaks.iter().all(|&p| p == Peak::default()));
    }

    #[test]
    fn border_bins_compare_in_bounds_only() {
        // corner maximum at (mel 0, frame 0)
        let s = spec(2, 2, vec![5.0, 1.0, 1.0, 1.0]);
        let m = local_maxima(&s);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].mel, m[0].frame), (0, 0));
    }

    #[test]
    fn ties_are_broken_by_time_then_frequency() {
        // three isolated maxima with equal value; keep two
        let mut v = vec![0.0; 5 * 5];
        v[4 * 5] = 1.0; // mel 4, frame 0
        v[2] = 1.0; // mel 0, frame 2
        v[2 * 5 + 4] = 1.0; // mel 2, frame 4
        let s = spec(5, 5, v);
        let peaks = extract_peaks(&s, 2);
        let cells: Vec<(f32, f32)> = peaks.iter().map(|p| (p.t * 5.0, p.f * 5.0)).collect();
        assert_eq!(cells, vec![(0.0, 4.0), (2.0, 0.0)]);
    }

    #[test]
    fn coordinates_are_normalized() {
        let values: Vec<f32> = (0..64 * 16).map(|i| ((i * 7919) % 1009) as f32).collect();
        let peaks = extract_peaks(&spec(64, 16, values), 32);
        assert!(peaks
            .iter()
            .all(|p| p.coords().iter().all(|c| (0.0..=1.0).contains(c))));
        assert!(peaks
            .windows(2)
            .all(|w| amplitude_order(&w[0], &w[1]) != Ordering::Greater));
    }
}
