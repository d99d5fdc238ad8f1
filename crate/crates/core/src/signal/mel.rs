use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::error::{Error, Result};

/// STFT and mel filterbank parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f32,
    pub f_max: f32,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            n_fft: 1024,
            hop: 256,
            n_mels: 256,
            f_min: 300.0,
            f_max: 4000.0,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.n_fft < 2 || self.hop == 0 || self.n_mels == 0 {
            return Err(Error::Config(format!(
                "invalid spectrogram config {self:?}"
            )));
        }
        if !(self.f_min >= 0.0 && self.f_max > self.f_min) {
            return Err(Error::Config(
                "mel range must satisfy 0 <= f_min < f_max".into(),
            ));
        }
        if self.f_max > self.sample_rate as f32 / 2.0 + 1e-3 {
            return Err(Error::Config("f_max above Nyquist".into()));
        }
        Ok(())
    }

    /// Frames a clip of `n_samples` produces (centered framing).
    pub fn frames_for(&self, n_samples: usize) -> usize {
        1 + n_samples / self.hop
    }
}

/// Mel magnitude spectrogram, stored mel-major: `values[m * n_frames + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f32>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Number of audio samples the frames cover.
    pub n_samples: usize,
}

impl MelSpectrogram {
    pub fn zeros(n_mels: usize, n_frames: usize, hop: usize, sample_rate: u32) -> Self {
        Self {
            values: vec![0.0; n_mels * n_frames],
            n_mels,
            n_frames,
            hop,
            sample_rate,
            n_samples: n_frames.saturating_sub(1) * hop,
        }
    }

    #[inline]
    pub fn at(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    pub fn duration_secs(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate as f64
    }

    /// Frames `[start, start + len)`; frames past the end are zero.
    pub fn frames(&self, start: usize, len: usize) -> MelSpectrogram {
        let mut values = vec![0.0; self.n_mels * len];
        let avail = self.n_frames.saturating_sub(start).min(len);
        if avail > 0 {
            for m in 0..self.n_mels {
                let src = &self.values[m * self.n_frames + start..][..avail];
                values[m * len..m * len + avail].copy_from_slice(src);
            }
        }
        MelSpectrogram {
            values,
            n_mels: self.n_mels,
            n_frames: len,
            hop: self.hop,
            sample_rate: self.sample_rate,
            n_samples: len.saturating_sub(1) * self.hop,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank over the `n_fft / 2 + 1` magnitude bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per mel band: first FFT bin and its weights.
    bands: Vec<(usize, Vec<f32>)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &SpectrogramConfig) -> Self {
        let n_bins = cfg.n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.f_min as f64), hz_to_mel(cfg.f_max as f64));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let bands = (0..cfg.n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f32)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > left && f <= center {
                            (f - left) / (center - left)
                        } else if f > center && f < right {
                            (right - f) / (right - center)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w as f32))
                    })
                    .collect();
                let first = weights.first().map_or(0, |&(k, _)| k);
                let mut dense = Vec::new();
                for (k, w) in weights {
                    dense.resize(k - first, 0.0);
                    dense.push(w);
                }
                (first, dense)
            })
            .collect();
        Self {
            bands,
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
        }
    }

    pub fn center_hz(&self, mel: usize) -> f64 {
        self.centers_hz[mel]
    }

    /// Weight of band `mel` at FFT bin `bin`.
    pub fn weight(&self, mel: usize, bin: usize) -> f32 {
        let (first, ref w) = self.bands[mel];
        bin.checked_sub(first)
            .and_then(|i| w.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    fn apply(&self, magnitude: &[f32], out: &mut [f32]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.bands) {
            *o = w.iter().zip(&magnitude[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Reusable STFT + filterbank state for a fixed configuration.
pub struct MelAnalyzer {
    cfg: SpectrogramConfig,
    fft: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
    filterbank: MelFilterbank,
}

impl MelAnalyzer {
    pub fn new(cfg: &SpectrogramConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        let window = (0..cfg.n_fft)
            .map(|i| {
                let x = 2.0 * std::f64::consts::PI * i as f64 / cfg.n_fft as f64;
                (0.5 - 0.5 * x.cos()) as f32
            })
            .collect();
        Ok(Self {
            filterbank: MelFilterbank::new(cfg),
            cfg: cfg.clone(),
            fft,
            window,
        })
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Centered STFT (zero padding of `n_fft / 2` on both sides) followed by the mel projection.
    pub fn compute(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        let cfg = &self.cfg;
        if clip.sample_rate != cfg.sample_rate {
            return Err(Error::Contract(format!(
                "clip sampled at {} Hz, spectrogram expects {} Hz",
                clip.sample_rate, cfg.sample_rate
            )));
        }
        if clip.samples.len() < cfg.n_fft {
            return Err(Error::TooShort {
                needed: format!("{} samples (one FFT window)", cfg.n_fft),
                got: format!("{} samples", clip.samples.len()),
            });
        }
        let n_frames = cfg.frames_for(clip.samples.len());
        let half = cfg.n_fft / 2;
        let n_bins = cfg.n_fft / 2 + 1;
        let mut values = vec![0.0f32; cfg.n_mels * n_frames];
        let mut buf = vec![Complex::new(0.0f32, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0f32, 0.0); self.fft.get_inplace_scratch_len()];
        let mut mag = vec![0.0f32; n_bins];
        let mut column = vec![0.0f32; cfg.n_mels];
        for t in 0..n_frames {
            let start = (t * cfg.hop) as isize - half as isize;
            for (i, c) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let s = if idx >= 0 && (idx as usize) < clip.samples.len() {
                    clip.samples[idx as usize]
                } else {
                    0.0
                };
                *c = Complex::new(s * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (m, c) in mag.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            self.filterbank.apply(&mag, &mut column);
            for (m, &v) in column.iter().enumerate() {
                values[m * n_frames + t] = v;
            }
        }
        Ok(MelSpectrogram {
            values,
            n_mels: cfg.n_mels,
            n_frames,
            hop: cfg.hop,
            sample_rate: cfg.sample_rate,
            n_samples: clip.samples.len(),
        })
    }
}

pub fn melspectrogram(clip: &AudioClip, cfg: &SpectrogramConfig) -> Result<MelSpectrogram> {
    MelAnalyzer::new(cfg)?.compute(clip)
}
