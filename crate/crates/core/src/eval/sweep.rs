use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::index::{Backend, FingerprintDB, IvfPqIndex};
use crate::pipeline::{clip_quads, Fingerprinter, PipelineConfig};
use crate::quadfp::{QuadDB, QuadMode};
use crate::signal::{stretch_audio, AudioClip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Peaknetfp,
    Quadfp,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Peaknetfp => "peaknetfp",
            System::Quadfp => "quadfp",
        }
    }
}

pub const DEFAULT_FACTORS: [f64; 14] = [
    0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.975, 1.05, 1.1, 1.2, 1.4, 1.6, 1.8, 2.0,
];
pub const DEFAULT_LENGTHS: [f64; 5] = [2.0, 3.0, 5.0, 6.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub factors: Vec<f64>,
    /// Query lengths in seconds after stretching.
    pub lengths: Vec<f64>,
    pub n_queries: usize,
    pub seed: u64,
    pub systems: Vec<System>,
    /// Use the IVFPQ index for candidate search when the database carries one.
    pub use_ivfpq: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            factors: DEFAULT_FACTORS.to_vec(),
            lengths: DEFAULT_LENGTHS.to_vec(),
            n_queries: 50,
            seed: 0,
            systems: vec![System::Peaknetfp, System::Quadfp],
            use_ivfpq: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.factors.iter().find(|s| !(0.5..=2.0).contains(*s)) {
            return Err(Error::Config(format!(
                "stretch factor {s} outside [0.5, 2]"
            )));
        }
        if let Some(l) = self.lengths.iter().find(|&&l| !(l >= 2.0)) {
            return Err(Error::Config(format!("query length {l} s is below 2 s")));
        }
        if self.n_queries == 0
            || self.factors.is_empty()
            || self.lengths.is_empty()
            || self.systems.is_empty()
        {
            return Err(Error::Config("evaluation grid is empty".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("serializable"),
        ))
    }
}

/// Fraction of queries whose top-ranked track is the true one.
pub fn hr_at_1(top1: &[Option<String>], truth: &[String]) -> Result<f64> {
    if top1.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} results for {} queries",
            top1.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("HR@1 over zero queries".into()));
    }
    let hits = top1
        .iter()
        .zip(truth)
        .filter(|(r, t)| r.as_deref() == Some(t.as_str()))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub system: System,
    pub factor: f64,
    pub length: f64,
    pub hr_at_1: f64,
    pub n_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub cells: Vec<Cell>,
}

impl EvalReport {
    pub fn cell(&self, system: System, factor: f64, length: f64) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.system == system && c.factor == factor && c.length == length)
    }

    /// First line carries the metadata, then one line per cell.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let fmt = |e: serde_json::Error| Error::Format(e.to_string());
        serde_json::to_writer(&mut w, &self.meta).map_err(fmt)?;
        w.write_all(b"\n")?;
        for c in &self.cells {
            serde_json::to_writer(&mut w, c).map_err(fmt)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("system,factor,length,hr_at_1,n_queries\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{}",
                c.system.name(),
                c.factor,
                c.length,
                c.hr_at_1,
                c.n_queries
            );
        }
        s
    }
}

/// Built systems and the reference audio they index.
pub struct Artifacts<'a> {
    pub config: &'a PipelineConfig,
    pub tracks: &'a [(String, AudioClip)],
    pub peaknet: Option<(&'a Fingerprinter, &'a FingerprintDB, Option<&'a IvfPqIndex>)>,
    pub quad: Option<&'a QuadDB>,
    pub checkpoint_id: Option<String>,
}

/// One sampled query: source track, start sample and the stretched excerpt.
#[derive(Debug, Clone)]
pub struct Query {
    pub track: usize,
    pub start: usize,
    pub clip: AudioClip,
}

/// Query `i` of a cell. Its excerpt covers `length * factor` seconds of source, cut at a
/// uniform offset and then stretched to about `length` seconds.
pub fn sample_query(
    tracks: &[(String, AudioClip)],
    factor: f64,
    length: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Query> {
    let track = rng.gen_range(0..tracks.len());
    let clip = &tracks[track].1;
    let need = (length * factor * clip.sample_rate as f64).round() as usize;
    if need > clip.len() {
        return Err(Error::Data(format!(
            "track {} is shorter than the {:.1} s excerpt a {length} s query at {factor}x needs",
            tracks[track].0,
            need as f64 / clip.sample_rate as f64
        )));
    }
    let start = rng.gen_range(0..=clip.len() - need);
    let excerpt = clip.excerpt(start, need);
    Ok(Query {
        track,
        start,
        clip: stretch_audio(&excerpt, factor)?,
    })
}

fn cell_rng(seed: u64, cell: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell as u64 + 1);
    rng
}

/// HR@1 over the full `(factor, length)` grid for every configured system. Each cell draws its
/// own queries from a seed-derived stream; all systems answer the same queries.
pub fn run_sweep(cfg: &EvalConfig, art: &Artifacts<'_>) -> Result<EvalReport> {
    cfg.validate()?;
    if art.tracks.is_empty() {
        return Err(Error::Config("no reference tracks".into()));
    }
    for sys in &cfg.systems {
        let missing = match sys {
            System::Peaknetfp => art.peaknet.is_none(),
            System::Quadfp => art.quad.is_none(),
        };
        if missing {
            return Err(Error::Config(format!(
                "no built artifacts for {}",
                sys.name()
            )));
        }
    }
    let mut cells = Vec::new();
    let mut cell_index = 0;
    for &length in &cfg.lengths {
        for &factor in &cfg.factors {
            let mut rng = cell_rng(cfg.seed, cell_index);
            cell_index += 1;
            let queries = (0..cfg.n_queries)
                .map(|_| sample_query(art.tracks, factor, length, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let truth: Vec<String> = queries
                .iter()
                .map(|q| art.tracks[q.track].0.clone())
                .collect();
            for &sys in &cfg.systems {
                let top1 = queries
                    .iter()
                    .map(|q| top1(sys, cfg, art, &q.clip))
                    .collect::<Result<Vec<_>>>()?;
                let hr = hr_at_1(&top1, &truth)?;
                log::info!("{} s={factor} L={length}: HR@1 {hr:.3}", sys.name());
                cells.push(Cell {
                    system: sys,
                    factor,
                    length,
                    hr_at_1: hr,
                    n_queries: queries.len(),
                });
            }
        }
    }
    Ok(EvalReport {
        meta: ReportMeta {
            seed: cfg.seed,
            config_hash: hex::encode(Sha256::digest(format!(
                "{}{}",
                cfg.hash(),
                art.config.hash()
            ))),
            checkpoint_id: art.checkpoint_id.clone(),
        },
        cells,
    })
}

/// Top-ranked track of one system for one query clip.
pub fn top1(
    sys: System,
    cfg: &EvalConfig,
    art: &Artifacts<'_>,
    clip: &AudioClip,
) -> Result<Option<String>> {
    match sys {
        System::Peaknetfp => {
            let (fp, db, ivf) = art.peaknet.expect("checked by caller");
            let backend = match (cfg.use_ivfpq, ivf) {
                (true, Some(index)) => Backend::IvfPq {
                    index,
                    n_probe: None,
                },
                _ => Backend::Exact,
            };
            let res = fp.query(db, backend, clip)?;
            if res.is_empty() {
                return Err(Error::Search("neural search returned no match".into()));
            }
            Ok(Some(res[0].track_id.clone()))
        }
        System::Quadfp => {
            let qdb = art.quad.expect("checked by caller");
            let analyzer = art.config.analyzer()?;
            let quads = clip_quads(&analyzer, art.config, clip, QuadMode::Query)?;
            Ok(qdb
                .match_query(&quads, &art.config.quad_match)
                .first()
                .map(|m| m.track_id.clone()))
        }
    }
}
