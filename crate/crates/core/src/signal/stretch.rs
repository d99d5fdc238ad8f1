//! Tempo changes. A factor `s` multiplies tempo, so durations are divided by `s`.

use super::{AudioClip, MelSpectrogram};
use crate::error::{Error, Result};

fn check_factor(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidFactor(s))
    }
}

/// Frame count after stretching `n_frames` by `s`.
pub fn stretched_len(n_frames: usize, s: f64) -> usize {
    ((n_frames as f64 / s).round() as usize).max(1)
}

/// Resizes the time axis by linear interpolation (half-pixel centers); the mel axis is untouched.
pub fn stretch_spectrogram(spec: &MelSpectrogram, s: f64) -> Result<MelSpectrogram> {
    check_factor(s)?;
    let n_in = spec.n_frames;
    let n_out = stretched_len(n_in, s);
    if n_in == n_out {
        return Ok(spec.clone());
    }
    let scale = n_in as f64 / n_out as f64;
    let taps: Vec<(usize, usize, f32)> = (0..n_out)
        .map(|j| {
            let src = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect();
    let mut values = vec![0.0f32; spec.n_mels * n_out];
    for m in 0..spec.n_mels {
        let row = &spec.values[m * n_in..(m + 1) * n_in];
        for (j, &(lo, hi, w)) in taps.iter().enumerate() {
            values[m * n_out + j] = row[lo] * (1.0 - w) + row[hi] * w;
        }
    }
    Ok(MelSpectrogram {
        values,
        n_mels: spec.n_mels,
        n_frames: n_out,
        hop: spec.hop,
        sample_rate: spec.sample_rate,
        n_samples: (spec.n_samples as f64 / s).round() as usize,
    })
}

/// Waveform-similarity overlap-add parameters.
#[derive(Debug, Clone, Copy)]
pub struct WsolaConfig {
    pub window_secs: f64,
    pub tolerance_secs: f64,
}

impl Default for WsolaConfig {
    fn default() -> Self {
        Self {
            window_secs: 0.040,
            tolerance_secs: 0.010,
        }
    }
}

/// Pitch-preserving time stretch (WSOLA) with the default 40 ms window and 10 ms tolerance.
pub fn stretch_audio(clip: &AudioClip, s: f64) -> Result<AudioClip> {
    stretch_audio_with(clip, s, &WsolaConfig::default())
}

pub fn stretch_audio_with(clip: &AudioClip, s: f64, cfg: &WsolaConfig) -> Result<AudioClip> {
    check_factor(s)?;
    let x = &clip.samples;
    let out_len = (x.len() as f64 / s).round() as usize;
    let win = ((cfg.window_secs * clip.sample_rate as f64).round() as usize).max(4) & !1;
    let hop_out = win / 2;
    let tol = (cfg.tolerance_secs * clip.sample_rate as f64).round() as isize;
    let hop_in = hop_out as f64 * s;

    let window: Vec<f32> = (0..win)
        .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos()) as f32)
        .collect();
    let sample = |i: isize| -> f32 {
        if i >= 0 && (i as usize) < x.len() {
            x[i as usize]
        } else {
            0.0
        }
    };

    let n_frames = out_len.div_ceil(hop_out) + 1;
    let mut out = vec![0.0f32; n_frames * hop_out + win];
    let mut norm = vec![0.0f32; out.len()];
    let mut prev: Option<isize> = None;
    for k in 0..n_frames {
        let nominal = (k as f64 * hop_in).round() as isize;
        let pos = match prev {
            None => nominal,
            Some(p) => {
                // Pick the candidate that best continues the previously copied segment.
                let natural = p + hop_out as isize;
                let reference: Vec<f32> = (0..win as isize).map(|i| sample(natural + i)).collect();
                let mut best = (nominal, f64::NEG_INFINITY);
                for d in std::iter::once(0).chain((1..=tol).flat_map(|d| [-d, d])) {
                    let cand = nominal + d;
                    let (mut dot, mut energy) = (0.0f64, 0.0f64);
                    for (i, &r) in reference.iter().enumerate() {
                        let v = sample(cand + i as isize) as f64;
                        dot += r as f64 * v;
                        energy += v * v;
                    }
                    let score = if energy > 0.0 {
                        dot / energy.sqrt()
                    } else {
                        0.0
                    };
                    if score > best.1 {
                        best = (cand, score);
                    }
                }
                best.0
            }
        };
        let base = k * hop_out;
        for i in 0..win {
            out[base + i] += sample(pos + i as isize) * window[i];
            norm[base + i] += window[i];
        }
        prev = Some(pos);
    }
    out.truncate(out_len);
    for (o, &n) in out.iter_mut().zip(&norm) {
        if n > 1e-3 {
            *o /= n;
        }
    }
    AudioClip::new(out, clip.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec_from(rows: &[Vec<f32>]) -> MelSpectrogram {
        let n_frames = rows[0].len();
        MelSpectrogram {
            values: rows.concat(),
            n_mels: rows.len(),
            n_frames,
            hop: 256,
            sample_rate: 8000,
            n_samples: (n_frames - 1) * 256,
        }
    }

    // Independent resampler: sample the piecewise-linear interpolant of the row at the
    // centers of the output cells expressed in input-cell coordinates.
    fn oracle_resize(row: &[f32], n_out: usize) -> Vec<f32> {
        let n_in = row.len();
        let interp = |pos: f64| -> f64 {
            let pos = pos.max(0.0).min((n_in - 1) as f64);
            let i = pos as usize;
            if i + 1 >= n_in {
                return row[n_in - 1] as f64;
            }
            let frac = pos - i as f64;
            row[i] as f64 + frac * (row[i + 1] as f64 - row[i] as f64)
        };
        (0..n_out)
            .map(|j| {
                let center = (2 * j + 1) as f64 / (2 * n_out) as f64;
                interp(center * n_in as f64 - 0.5) as f32
            })
            .collect()
    }

    fn sine(freq: f64, secs: f64) -> AudioClip {
        let n = (8000.0 * secs) as usize;
        AudioClip::new(
            (0..n)
                .map(|i| {
                    (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 8000.0).sin()) as f32
                })
                .collect(),
            8000,
        )
        .unwrap()
    }

    fn dft_argmax_bin(x: &[f32], n: usize) -> usize {
        let x = &x[..n];
        (1..n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (i, &v) in x.iter().enumerate() {
                    let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    re += v as f64 * ph.cos();
                    im += v as f64 * ph.sin();
                }
                (k, re.hypot(im))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn unit_factor_is_identity() {
        let spec = spec_from(&[vec![1.0, 2.0, 3.0], vec![0.5, 0.0, 4.0]]);
        assert_eq!(stretch_spectrogram(&spec, 1.0).unwrap(), spec);
    }

    #[test]
    fn doubling_tempo_halves_frames() {
        let spec = MelSpectrogram::zeros(4, 32, 256, 8000);
        assert_eq!(stretch_spectrogram(&spec, 2.0).unwrap().n_frames, 16);
    }

    #[test]
    fn bilinear_matches_oracle() {
        let rows: Vec<Vec<f32>> = (0..4)
            .map(|m| {
                (0..8)
                    .map(|t| ((m * 31 + t * 17) % 13) as f32 / 7.0)
                    .collect()
            })
            .collect();
        let spec = spec_from(&rows);
        let out = stretch_spectrogram(&spec, 0.5).unwrap();
        assert_eq!(out.n_frames, 16);
        for (m, row) in rows.iter().enumerate() {
            let expected = oracle_resize(row, 16);
            for t in 0..16 {
                assert!((out.at(m, t) - expected[t]).abs() < 1e-6, "m={m} t={t}");
            }
        }
    }

    #[test]
    fn non_positive_factor_is_rejected() {
        let spec = MelSpectrogram::zeros(2, 4, 256, 8000);
        assert!(matches!(
            stretch_spectrogram(&spec, 0.0),
            Err(Error::InvalidFactor(_))
        ));
        let clip = sine(440.0, 0.5);
        assert!(matches!(
            stretch_audio(&clip, -1.0),
            Err(Error::InvalidFactor(_))
        ));
    }

    #[test]
    fn wsola_unit_factor_keeps_duration_and_samples() {
        let clip = sine(440.0, 1.0);
        let out = stretch_audio(&clip, 1.0).unwrap();
        assert_eq!(out.len(), clip.len());
        for i in 200..7800 {
            assert!((out.samples[i] - clip.samples[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn wsola_half_tempo_doubles_duration() {
        let clip = sine(300.0, 10.0);
        let out = stretch_audio(&clip, 0.5).unwrap();
        assert_eq!(out.len(), 160_000);
    }

    #[test]
    fn wsola_preserves_pitch() {
        let clip = sine(440.0, 2.0);
        let reference = dft_argmax_bin(&clip.samples, 4000);
        for s in [0.5, 0.8, 1.25, 2.0] {
            let out = stretch_audio(&clip, s).unwrap();
            assert!((out.duration_secs() - 2.0 / s).abs() < 0.04);
            let bin = dft_argmax_bin(&out.samples[400..], 4000);
            assert!(
                (bin as i64 - reference as i64).abs() <= 1,
                "s={s}: bin {bin} vs {reference}"
            );
        }
    }

    proptest! {
        #[test]
        fn stretch_then_inverse_restores_frame_count(n in 4usize..200, s in 0.5f64..2.0) {
            let spec = MelSpectrogram::zeros(2, n, 256, 8000);
            let there = stretch_spectrogram(&spec, s).unwrap();
            let back = stretch_spectrogram(&there, 1.0 / s).unwrap();
            prop_assert!((back.n_frames as i64 - n as i64).abs() <= 1);
        }
    }
}
