use serde::{Deserialize, Serialize};

use super::{AudioClip, MelSpectrogram};
use crate::error::{Error, Result};

/// Fixed-length analysis windows with overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub length_secs: f64,
    pub hop_secs: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            length_secs: 1.0,
            hop_secs: 0.5,
        }
    }
}

impl SegmentConfig {
    fn lengths(&self, sample_rate: u32) -> (usize, usize) {
        let len = (self.length_secs * sample_rate as f64).round() as usize;
        let hop = (self.hop_secs * sample_rate as f64).round() as usize;
        (len.max(1), hop.max(1))
    }

    /// `floor((n - len) / hop) + 1`, or a too-short error when `n < len`.
    pub fn count(&self, n_samples: usize, sample_rate: u32) -> Result<usize> {
        let (len, hop) = self.lengths(sample_rate);
        if n_samples < len {
            return Err(Error::TooShort {
                needed: format!("{} s", self.length_secs),
                got: format!("{:.3} s", n_samples as f64 / sample_rate as f64),
            });
        }
        Ok((n_samples - len) / hop + 1)
    }

    /// Start sample of segment `index`.
    pub fn start_sample(&self, index: usize, sample_rate: u32) -> usize {
        index * self.lengths(sample_rate).1
    }

    /// Frames in one segment's spectrogram (what a standalone segment-length clip would produce).
    pub fn frames_per_segment(&self, sample_rate: u32, hop: usize) -> usize {
        1 + self.lengths(sample_rate).0 / hop
    }

    /// First spectrogram frame of segment `index`.
    pub fn start_frame(&self, index: usize, sample_rate: u32, hop: usize) -> usize {
        (self.start_sample(index, sample_rate) as f64 / hop as f64).round() as usize
    }
}

pub fn segment_clip(clip: &AudioClip, cfg: &SegmentConfig) -> Result<Vec<AudioClip>> {
    let n = cfg.count(clip.len(), clip.sample_rate)?;
    let (len, _) = cfg.lengths(clip.sample_rate);
    Ok((0..n)
        .map(|i| clip.excerpt(cfg.start_sample(i, clip.sample_rate), len))
        .collect())
}

/// Cuts a whole-clip spectrogram into per-segment frame windows.
pub fn segment_spectrogram(
    spec: &MelSpectrogram,
    cfg: &SegmentConfig,
) -> Result<Vec<MelSpectrogram>> {
    let n = cfg.count(spec.n_samples, spec.sample_rate)?;
    let width = cfg.frames_per_segment(spec.sample_rate, spec.hop);
    Ok((0..n)
        .map(|i| spec.frames(cfg.start_frame(i, spec.sample_rate, spec.hop), width))
        .collect())
}
