//! Audio ingestion, mel spectrograms, tempo changes, segmentation and peak extraction.

mod audio;
mod mel;
pub mod peakfile;
mod peaks;
mod segment;
mod stretch;

pub use audio::{load_audio, resample, write_wav, AudioClip};
pub use mel::{melspectrogram, MelAnalyzer, MelFilterbank, MelSpectrogram, SpectrogramConfig};
pub use peaks::{
    amplitude_order, extract_cloud, extract_peaks, local_maxima, Peak, PeakCloud, RawPeak,
    CLOUD_SIZE,
};
pub use segment::{segment_clip, segment_spectrogram, SegmentConfig};
pub use stretch::{
    stretch_audio, stretch_audio_with, stretch_spectrogram, stretched_len, WsolaConfig,
};

use crate::error::Result;

/// Spectrogram of the whole clip, cut into segment windows, one peak cloud per window.
pub fn clip_to_clouds(
    analyzer: &MelAnalyzer,
    clip: &AudioClip,
    segments: &SegmentConfig,
    n_peaks: usize,
    track_id: &str,
) -> Result<Vec<PeakCloud>> {
    let spec = analyzer.compute(clip)?;
    Ok(segment_spectrogram(&spec, segments)?
        .iter()
        .enumerate()
        .map(|(i, window)| extract_cloud(window, n_peaks, track_id, i as u32))
        .collect())
}
