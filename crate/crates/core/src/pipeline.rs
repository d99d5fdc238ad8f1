//! Configuration file and the audio-to-result paths shared by the CLI, evaluation and FFI.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{read_checkpoint, write_checkpoint};
use crate::encoder::{Encoder, Fingerprint, LayerSpec, ModelParams};
use crate::error::{Error, Result};
use crate::index::{
    identify, Backend, FingerprintDB, IvfPqConfig, MatchResult, DEFAULT_CANDIDATES,
};
use crate::quadfp::{
    build_quads, grid_peaks_from_clouds, MatchConfig, Quad, QuadConfig, QuadDB, QuadMode,
};
use crate::signal::{
    clip_to_clouds, load_audio, AudioClip, MelAnalyzer, PeakCloud, SegmentConfig, SpectrogramConfig,
};
use crate::training::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Everything tunable, as one versioned TOML document. Missing sections take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub version: u32,
    pub spectrogram: SpectrogramConfig,
    pub segments: SegmentConfig,
    pub model: LayerSpec,
    pub training: TrainConfig,
    pub index: IvfPqConfig,
    pub quad: QuadConfig,
    pub quad_match: MatchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            spectrogram: SpectrogramConfig::default(),
            segments: SegmentConfig::default(),
            model: LayerSpec::default(),
            training: TrainConfig::default(),
            index: IvfPqConfig::default(),
            quad: QuadConfig::default(),
            quad_match: MatchConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::Config(format!("config {} not found", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.spectrogram.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        if self.model.n_peaks == 0 {
            return Err(Error::Config("model.n_peaks must be positive".into()));
        }
        Ok(())
    }

    pub fn analyzer(&self) -> Result<MelAnalyzer> {
        MelAnalyzer::new(&self.spectrogram)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("config serializes"),
        ))
    }
}

pub fn save_model(path: &Path, params: &ModelParams<f32>) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(f), &params.named_tensors())
}

pub fn load_model(path: &Path, spec: &LayerSpec) -> Result<ModelParams<f32>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ModelParams::from_named(spec, &read_checkpoint(std::io::BufReader::new(f))?)
}

/// Short content hash identifying a set of weights.
pub fn model_id(params: &ModelParams<f32>) -> String {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &params.named_tensors()).expect("in-memory write");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

/// Audio front end plus encoder.
pub struct Fingerprinter {
    pub config: PipelineConfig,
    pub analyzer: MelAnalyzer,
    pub encoder: Encoder,
}

impl Fingerprinter {
    pub fn new(config: PipelineConfig, params: ModelParams<f32>) -> Result<Self> {
        if params.spec != config.model {
            return Err(Error::Config(
                "model weights were built for a different layout".into(),
            ));
        }
        Ok(Self {
            analyzer: config.analyzer()?,
            encoder: Encoder::new(params),
            config,
        })
    }

    pub fn clouds(&self, clip: &AudioClip, track_id: &str) -> Result<Vec<PeakCloud>> {
        clip_to_clouds(
            &self.analyzer,
            clip,
            &self.config.segments,
            self.config.model.n_peaks,
            track_id,
        )
    }

    pub fn fingerprints(&self, clip: &AudioClip) -> Result<Vec<Fingerprint>> {
        self.encoder.embed(&self.clouds(clip, "")?)
    }

    pub fn build_db(&self, tracks: &[(String, AudioClip)]) -> Result<FingerprintDB> {
        let fps = tracks
            .iter()
            .map(|(id, clip)| Ok((id.clone(), self.fingerprints(clip)?)))
            .collect::<Result<Vec<_>>>()?;
        FingerprintDB::from_tracks(&fps)
    }

    /// Ranked `(track, offset)` hypotheses for a query clip.
    pub fn query(
        &self,
        db: &FingerprintDB,
        backend: Backend<'_>,
        clip: &AudioClip,
    ) -> Result<Vec<MatchResult>> {
        let qs: Vec<Vec<f32>> = self
            .fingerprints(clip)?
            .into_iter()
            .map(|f| f.values)
            .collect();
        identify(db, backend, &qs, DEFAULT_CANDIDATES)
    }
}

/// Every `.wav` file directly inside `dir`, sorted by name; the file stem is the track id.
pub fn load_audio_dir(dir: &Path, sample_rate: u32) -> Result<Vec<(String, AudioClip)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no .wav files in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((id, load_audio(p, sample_rate)?))
        })
        .collect()
}

pub fn build_quad_db(cfg: &PipelineConfig, tracks: &[(String, AudioClip)]) -> Result<QuadDB> {
    let analyzer = cfg.analyzer()?;
    let quads = tracks
        .iter()
        .map(|(id, clip)| {
            Ok((
                id.clone(),
                clip_quads(&analyzer, cfg, clip, QuadMode::Reference)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuadDB::from_track_quads(&quads, cfg.quad_match.epsilon))
}

/// Quads of a clip through the shared peak-cloud front end.
pub fn clip_quads(
    analyzer: &MelAnalyzer,
    cfg: &PipelineConfig,
    clip: &AudioClip,
    mode: QuadMode,
) -> Result<Vec<Quad>> {
    let clouds = clip_to_clouds(analyzer, clip, &cfg.segments, cfg.model.n_peaks, "")?;
    Ok(clouds_quads(&clouds, cfg, mode))
}

pub fn clouds_quads(clouds: &[PeakCloud], cfg: &PipelineConfig, mode: QuadMode) -> Vec<Quad> {
    let s = &cfg.spectrogram;
    let peaks = grid_peaks_from_clouds(clouds, &cfg.segments, s.sample_rate, s.hop, s.n_mels);
    build_quads(&peaks, &cfg.quad, mode)
}
