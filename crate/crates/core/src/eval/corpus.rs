//! Seeded synthetic music: melodic harmonic notes over filtered-noise percussion.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::signal::AudioClip;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_tracks: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_tracks: 50,
            duration_secs: 30.0,
            sample_rate: 8000,
            seed: 2024,
        }
    }
}

pub fn track_id(k: usize) -> String {
    format!("synth_{k:03}")
}

/// Major, minor and pentatonic scale steps in semitones.
const SCALES: [&[i32]; 3] = [
    &[0, 2, 4, 5, 7, 9, 11],
    &[0, 2, 3, 5, 7, 8, 10],
    &[0, 2, 4, 7, 9],
];

fn semitone(root_hz: f64, steps: i32) -> f64 {
    root_hz * 2f64.powf(steps as f64 / 12.0)
}

/// Adds one decaying harmonic tone.
#[allow(clippy::too_many_arguments)]
fn add_note(
    out: &mut [f32],
    rate: f64,
    start: usize,
    len: usize,
    freq: f64,
    gain: f64,
    harmonics: &[f64],
    decay: f64,
) {
    let attack = (0.01 * rate) as usize;
    let end = (start + len).min(out.len());
    for (n, o) in out[start..end].iter_mut().enumerate() {
        let t = n as f64 / rate;
        let env = if n < attack {
            n as f64 / attack as f64
        } else {
            (-(t - attack as f64 / rate) * decay).exp()
        };
        let release = ((end - start - n) as f64 / (0.02 * rate)).min(1.0);
        let mut v = 0.0;
        for (h, &a) in harmonics.iter().enumerate() {
            let f = freq * (h + 1) as f64;
            if f < rate / 2.0 - 100.0 {
                v += a * (TAU * f * t).sin();
            }
        }
        *o += (gain * env * release * v) as f32;
    }
}

/// Burst of one-pole band-limited noise.
#[allow(clippy::too_many_arguments)]
fn add_hit(
    out: &mut [f32],
    rng: &mut ChaCha8Rng,
    start: usize,
    len: usize,
    gain: f64,
    smooth: f64,
    decay: f64,
    rate: f64,
) {
    let end = (start + len).min(out.len());
    let (mut lp, mut prev) = (0.0f64, 0.0f64);
    for (n, o) in out[start..end].iter_mut().enumerate() {
        let white: f64 = rng.gen_range(-1.0..1.0);
        lp += smooth * (white - lp);
        // first difference of the low-passed noise leaves a band around the cutoff
        let band = lp - prev * 0.5;
        prev = lp;
        *o += (gain * (-(n as f64 / rate) * decay).exp() * band) as f32;
    }
}

/// Track `k` of the corpus; each track depends only on `(seed, k)`.
pub fn synth_track(cfg: &CorpusConfig, k: usize) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(k as u64 + 1);
    let rate = cfg.sample_rate as f64;
    let n = (cfg.duration_secs * rate).round() as usize;
    let mut out = vec![0.0f32; n];

    let beat = 60.0 / rng.gen_range(80.0..150.0);
    let scale = SCALES[rng.gen_range(0..SCALES.len())];
    let root = 110.0 * 2f64.powf(rng.gen_range(0..12) as f64 / 12.0);
    let voices = rng.gen_range(2..=3);
    let pattern: Vec<bool> = (0..8).map(|_| rng.gen_bool(0.5)).collect();
    let hit_smooth = rng.gen_range(0.05..0.6);

    for v in 0..voices {
        let harmonics: Vec<f64> = (0..rng.gen_range(3..7))
            .map(|h| rng.gen_range(0.2..1.0) / (h + 1) as f64)
            .collect();
        let octave = 12 * (v + rng.gen_range(0..2));
        let decay = rng.gen_range(1.5..6.0);
        let gain = 0.3 / voices as f64;
        let mut t = rng.gen_range(0.0..beat);
        let mut degree = rng.gen_range(0..scale.len() as i32);
        while t < cfg.duration_secs {
            let dur = beat * [0.5, 1.0, 1.0, 2.0][rng.gen_range(0..4)];
            degree = (degree + rng.gen_range(-2..=2)).clamp(0, 2 * scale.len() as i32 - 1);
            let step = scale[degree as usize % scale.len()] + 12 * (degree / scale.len() as i32);
            if rng.gen_bool(0.85) {
                let freq = semitone(root, step + octave);
                add_note(
                    &mut out,
                    rate,
                    (t * rate) as usize,
                    (dur * rate) as usize,
                    freq,
                    gain,
                    &harmonics,
                    decay,
                );
            }
            t += dur;
        }
    }
    let mut b = 0;
    let mut t = 0.0;
    while t < cfg.duration_secs {
        if pattern[b % pattern.len()] {
            let start = (t * rate) as usize;
            add_hit(
                &mut out,
                &mut rng,
                start,
                (0.15 * rate) as usize,
                0.25,
                hit_smooth,
                25.0,
                rate,
            );
        }
        b += 1;
        t += beat / 2.0;
    }
    let peak = out.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    AudioClip::new(out, cfg.sample_rate).expect("positive rate")
}

/// All tracks with their ids.
pub fn synth_corpus(cfg: &CorpusConfig) -> Vec<(String, AudioClip)> {
    (0..cfg.n_tracks)
        .map(|k| (track_id(k), synth_track(cfg, k)))
        .collect()
}
