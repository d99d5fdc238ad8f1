use std::path::Path;

use rubato::{
    Resampler, SincFixedIn, SincInterpolationParameters, SincInterpolationType, WindowFunction,
};

use crate::error::{Error, Result};

/// Mono waveform with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Contract("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sub-clip `[start, start + len)` in samples, zero-padded past the end.
    pub fn excerpt(&self, start: usize, len: usize) -> AudioClip {
        let mut samples = vec![0.0; len];
        if start < self.samples.len() {
            let end = (start + len).min(self.samples.len());
            samples[..end - start].copy_from_slice(&self.samples[start..end]);
        }
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Decodes a WAV file, downmixes to mono and resamples to `target_rate`.
pub fn load_audio(path: impl AsRef<Path>, target_rate: u32) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decode_err = |e: hound::Error| Error::Decode(format!("{}: {e}", path.display()));
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(decode_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;

    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(decode_err)?
        }
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(decode_err)?,
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} has no samples",
            path.display()
        )));
    }
    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();

    let clip = AudioClip::new(mono, spec.sample_rate)?;
    resample(&clip, target_rate)
}

/// Writes a 16-bit PCM mono WAV file.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Decode(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

/// Band-limited sinc resampling. Output length is `round(len * target / source)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Contract(
            "target sample rate must be positive".into(),
        ));
    }
    if clip.sample_rate == target_rate || clip.samples.is_empty() {
        return Ok(AudioClip {
            samples: clip.samples.clone(),
            sample_rate: target_rate,
        });
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = (clip.samples.len() as f64 * ratio).round() as usize;
    let params = SincInterpolationParameters {
        sinc_len: 128,
        f_cutoff: 0.925,
        interpolation: SincInterpolationType::Linear,
        oversampling_factor: 128,
        window: WindowFunction::BlackmanHarris2,
    };
    const CHUNK: usize = 1024;
    let mut rs = SincFixedIn::<f64>::new(ratio, 1.0, params, CHUNK, 1)
        .map_err(|e| Error::Contract(format!("resampler setup: {e}")))?;
    let delay = rs.output_delay();
    let input: Vec<f64> = clip.samples.iter().map(|&s| s as f64).collect();

    let mut out: Vec<f64> = Vec::with_capacity(out_len + delay + CHUNK);
    let rs_err = |e: rubato::ResampleError| Error::Contract(format!("resampler: {e}"));
    let mut pos = 0;
    while pos + CHUNK <= input.len() {
        let block = rs
            .process(&[&input[pos..pos + CHUNK]], None)
            .map_err(rs_err)?;
        out.extend_from_slice(&block[0]);
        pos += CHUNK;
    }
    if pos < input.len() {
        let block = rs
            .process_partial(Some(&[&input[pos..]]), None)
            .map_err(rs_err)?;
        out.extend_from_slice(&block[0]);
    }
    while out.len() < out_len + delay {
        let block = rs.process_partial::<&[f64]>(None, None).map_err(rs_err)?;
        if block[0].is_empty() {
            break;
        }
        out.extend_from_slice(&block[0]);
    }
    let samples = (0..out_len)
        .map(|i| out.get(i + delay).copied().unwrap_or(0.0).clamp(-1.0, 1.0) as f32)
        .collect();
    AudioClip::new(samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f32, rate: u32, secs: f32) -> AudioClip {
        let n = (rate as f32 * secs) as usize;
        let samples = (0..n)
            .map(|i| 0.5 * (2.0 * std::f32::consts::PI * freq * i as f32 / rate as f32).sin())
            .collect();
        AudioClip::new(samples, rate).unwrap()
    }

    // Plain O(n^2) DFT magnitude, independent of rustfft.
    fn dft_argmax_hz(x: &[f32], rate: u32) -> f64 {
        let n = x.len();
        let mut best = (0, 0.0);
        for k in 1..n / 2 {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (i, &v) in x.iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                re += v as f64 * ph.cos();
                im += v as f64 * ph.sin();
            }
            let mag = re.hypot(im);
            if mag > best.1 {
                best = (k, mag);
            }
        }
        best.0 as f64 * rate as f64 / n as f64
    }

    #[test]
    fn silence_roundtrip_through_wav() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        write_wav(&path, &AudioClip::new(vec![0.0; 8000], 8000).unwrap()).unwrap();
        let clip = load_audio(&path, 8000).unwrap();
        assert_eq!(clip.samples.len(), 8000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn downsampled_sine_keeps_its_frequency() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        write_wav(&path, &sine(440.0, 16_000, 1.0)).unwrap();
        let clip = load_audio(&path, 8000).unwrap();
        assert_eq!(clip.sample_rate, 8000);
        assert_eq!(clip.samples.len(), 8000);
        let peak = dft_argmax_hz(&clip.samples[1000..3000], 8000);
        assert!((peak - 440.0).abs() <= 4.0, "peak at {peak} Hz");
    }

    #[test]
    fn corrupt_file_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFF\x10\x00\x00\x00WAVEfmt garbage").unwrap();
        assert!(matches!(load_audio(&path, 8000), Err(Error::Decode(_))));
    }

    #[test]
    fn empty_stream_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        write_wav(&path, &AudioClip::new(vec![], 8000).unwrap()).unwrap();
        assert!(matches!(load_audio(&path, 8000), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn stereo_is_downmixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(16384i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_audio(&path, 8000).unwrap();
        assert_eq!(clip.samples.len(), 100);
        assert!((clip.samples[10] - 0.25).abs() < 1e-4);
    }
}
