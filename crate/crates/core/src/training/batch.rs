use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::signal::{
    extract_cloud, stretch_spectrogram, AudioClip, MelAnalyzer, MelSpectrogram, PeakCloud,
    SegmentConfig,
};

/// Whole-clip spectrograms of the training tracks, addressed by `(track, segment)`.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub tracks: Vec<(String, MelSpectrogram)>,
    pub segments: SegmentConfig,
    pub n_peaks: usize,
    index: Vec<(usize, usize)>,
}

impl TrainingSet {
    pub fn new(
        tracks: Vec<(String, MelSpectrogram)>,
        segments: SegmentConfig,
        n_peaks: usize,
    ) -> Result<Self> {
        let mut index = Vec::new();
        for (t, (id, spec)) in tracks.iter().enumerate() {
            let n = segments
                .count(spec.n_samples, spec.sample_rate)
                .map_err(|e| Error::Data(format!("track {id}: {e}")))?;
            index.extend((0..n).map(|s| (t, s)));
        }
        Ok(Self {
            tracks,
            segments,
            n_peaks,
            index,
        })
    }

    pub fn from_clips(
        analyzer: &MelAnalyzer,
        clips: &[(String, AudioClip)],
        segments: SegmentConfig,
        n_peaks: usize,
    ) -> Result<Self> {
        let tracks = clips
            .iter()
            .map(|(id, clip)| Ok((id.clone(), analyzer.compute(clip)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(tracks, segments, n_peaks)
    }

    /// Number of addressable segments.
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn segment(&self, i: usize) -> (usize, usize) {
        self.index[i]
    }

    fn width(&self, spec: &MelSpectrogram) -> usize {
        self.segments.frames_per_segment(spec.sample_rate, spec.hop)
    }

    /// Cloud of the unmodified window of segment `i`.
    pub fn original(&self, i: usize) -> PeakCloud {
        let (t, s) = self.index[i];
        let (id, spec) = &self.tracks[t];
        let start = self.segments.start_frame(s, spec.sample_rate, spec.hop);
        extract_cloud(
            &spec.frames(start, self.width(spec)),
            self.n_peaks,
            id.as_str(),
            s as u32,
        )
    }

    /// Cloud of segment `i` after a tempo change by `factor`: the source span that plays in one
    /// window at the new tempo is taken from the window start, resampled in time and re-windowed.
    pub fn replica(&self, i: usize, factor: f64) -> Result<PeakCloud> {
        let (t, s) = self.index[i];
        let (id, spec) = &self.tracks[t];
        let width = self.width(spec);
        let start = self.segments.start_frame(s, spec.sample_rate, spec.hop);
        let span = ((width as f64 * factor).round() as usize).max(1);
        let stretched = stretch_spectrogram(&spec.frames(start, span), factor)?;
        Ok(extract_cloud(
            &stretched.frames(0, width),
            self.n_peaks,
            id.as_str(),
            s as u32,
        ))
    }
}

/// Log-uniform tempo factor in `[lo, hi]`.
pub fn sample_factor<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return lo;
    }
    rng.gen_range(lo.ln()..=hi.ln()).exp()
}

/// `2N` clouds ordered `(x_1, x̂_1, ..., x_N, x̂_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub clouds: Vec<PeakCloud>,
    /// Training-set segment of each pair.
    pub sources: Vec<usize>,
    pub factors: Vec<f64>,
}

impl MiniBatch {
    pub fn pairs(&self) -> usize {
        self.sources.len()
    }
}

/// Pairs for the given source segments, one tempo factor drawn per pair.
pub fn build_pairs<R: Rng>(
    set: &TrainingSet,
    sources: &[usize],
    stretch: (f64, f64),
    rng: &mut R,
) -> Result<MiniBatch> {
    let mut clouds = Vec::with_capacity(2 * sources.len());
    let mut factors = Vec::with_capacity(sources.len());
    for &i in sources {
        let s = sample_factor(rng, stretch.0, stretch.1);
        clouds.push(set.original(i));
        clouds.push(set.replica(i, s)?);
        factors.push(s);
    }
    Ok(MiniBatch {
        clouds,
        sources: sources.to_vec(),
        factors,
    })
}

/// `n_pairs` distinct random segments and their replicas.
pub fn build_batch<R: Rng>(
    set: &TrainingSet,
    n_pairs: usize,
    stretch: (f64, f64),
    rng: &mut R,
) -> Result<MiniBatch> {
    if n_pairs > set.len() {
        return Err(Error::Data(format!(
            "batch of {n_pairs} pairs needs that many segments, training set has {}",
            set.len()
        )));
    }
    let sources = sample(rng, set.len(), n_pairs).into_vec();
    build_pairs(set, &sources, stretch, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SpectrogramConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set() -> TrainingSet {
        let cfg = SpectrogramConfig::default();
        let analyzer = MelAnalyzer::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clips: Vec<(String, AudioClip)> = (0..2)
            .map(|k| {
                let samples = (0..8000 * 3)
                    .map(|n| {
                        let x = (n as f32 * 0.05 * (k + 1) as f32).sin();
                        0.5 * x + 0.1 * rng.gen_range(-1.0f32..1.0)
                    })
                    .collect();
                (format!("t{k}"), AudioClip::new(samples, 8000).unwrap())
            })
            .collect();
        TrainingSet::from_clips(&analyzer, &clips, SegmentConfig::default(), 256).unwrap()
    }

    #[test]
    fn pairs_are_adjacent() {
        let set = set();
        assert_eq!(set.len(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = build_batch(&set, 2, (0.5, 2.0), &mut rng).unwrap();
        assert_eq!(b.clouds.len(), 4);
        for k in 0..2 {
            let (x, y) = (&b.clouds[2 * k], &b.clouds[2 * k + 1]);
            assert_eq!(
                (&x.track_id, x.segment_index),
                (&y.track_id, y.segment_index)
            );
        }
    }

    #[test]
    fn unit_factor_replica_is_the_original() {
        let set = set();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = build_batch(&set, 5, (1.0, 1.0), &mut rng).unwrap();
        for pair in b.clouds.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
    }

    #[test]
    fn seeded_batches_repeat() {
        let set = set();
        let a = build_batch(&set, 4, (0.5, 2.0), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = build_batch(&set, 4, (0.5, 2.0), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_batch_is_a_data_error() {
        let set = set();
        let r = build_batch(&set, 11, (0.5, 2.0), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn factors_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let s = sample_factor(&mut rng, 0.5, 2.0);
            assert!((0.5..=2.0).contains(&s));
        }
    }
}
