#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use peaknetfp::eval::{run_sweep, synth_corpus, Artifacts, CorpusConfig, EvalConfig, System};
use peaknetfp::index::{best_per_track, read_db, write_db, Backend, IvfPqIndex};
use peaknetfp::pipeline::{
    build_quad_db, clip_quads, load_audio_dir, load_model, model_id, save_model, Fingerprinter,
    PipelineConfig,
};
use peaknetfp::quadfp::{QuadDB, QuadMode};
use peaknetfp::signal::{load_audio, peakfile, write_wav, AudioClip};
use peaknetfp::training::{train, TrainOptions, TrainingSet};
use peaknetfp::{Error, Result};

const DATA_DIR_VAR: &str = "PEAKNETFP_DATA_DIR";

/// Peak-cloud neural audio fingerprinting.
///
/// Relative input paths are resolved against $PEAKNETFP_DATA_DIR when it is set.
#[derive(Parser)]
#[command(name = "peaknetfp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write peak clouds of every .wav file in a directory.
    ExtractPeaks {
        audio_dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
        /// Write JSON lines instead of the binary format.
        #[arg(long)]
        jsonl: bool,
    },
    /// Train an encoder; the config is copied next to the checkpoint as <ckpt>.toml.
    Train {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(short, long)]
        output: PathBuf,
        /// Training audio; the seeded synthetic corpus when omitted.
        #[arg(long)]
        audio: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        tracks: usize,
        /// Directory for the log and periodic checkpoints (default: <ckpt>.run).
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fingerprint reference audio into a database.
    BuildDb {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        audio: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        tracks: usize,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Attach (or with no flag, drop) the IVFPQ index of a database.
    BuildIndex {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        ivfpq: bool,
        /// Defaults to rewriting the database in place.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Identify an audio file.
    Query {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        q: QueryArgs,
        /// Search through the IVFPQ index when the database has one.
        #[arg(long)]
        ivfpq: bool,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// HR@1 sweep over stretch factors and query lengths.
    Evaluate {
        #[arg(short, long)]
        config: PathBuf,
        /// Output prefix; writes <prefix>.jsonl and <prefix>.csv.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Quad-hash baseline.
    Quadfp {
        #[command(subcommand)]
        command: QuadCommand,
    },
    /// Write the synthetic corpus as .wav files.
    Synth {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 50)]
        tracks: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Run the built-in oracle checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum QuadCommand {
    Build {
        #[arg(long)]
        audio: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        tracks: usize,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    Query {
        #[arg(long)]
        db: PathBuf,
        #[command(flatten)]
        q: QueryArgs,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    Evaluate {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration (TOML).
    #[arg(short = 'c', long = "config")]
    path: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    audio: PathBuf,
    /// Use only this many seconds of the file.
    #[arg(long = "len")]
    len: Option<f64>,
    /// Start of the excerpt in seconds.
    #[arg(long, default_value_t = 0.0)]
    offset: f64,
    #[arg(long, default_value_t = 5)]
    top: usize,
}

/// `evaluate -c` file.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EvalFile {
    version: Option<u32>,
    /// Pipeline configuration; the model's sidecar config or defaults otherwise.
    config: Option<PathBuf>,
    model: Option<PathBuf>,
    /// Reference audio directory; the synthetic corpus otherwise.
    audio: Option<PathBuf>,
    corpus: CorpusConfig,
    sweep: EvalConfig,
}

fn resolve(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_VAR) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn sidecar(model: &Path) -> PathBuf {
    model.with_extension("toml")
}

/// Explicit `--config`, else the model's sidecar, else defaults.
fn pipeline_config(arg: &ConfigArg, model: Option<&Path>) -> Result<PipelineConfig> {
    if let Some(p) = &arg.path {
        return PipelineConfig::load(&resolve(p));
    }
    if let Some(side) = model.map(sidecar).filter(|p| p.exists()) {
        return PipelineConfig::load(&side);
    }
    Ok(PipelineConfig::default())
}

fn reference_audio(
    audio: Option<&Path>,
    corpus: &CorpusConfig,
    cfg: &PipelineConfig,
) -> Result<Vec<(String, AudioClip)>> {
    match audio {
        Some(dir) => load_audio_dir(&resolve(dir), cfg.spectrogram.sample_rate),
        None => {
            if corpus.sample_rate != cfg.spectrogram.sample_rate {
                return Err(Error::Config(
                    "corpus and spectrogram sample rates differ".into(),
                ));
            }
            Ok(synth_corpus(corpus))
        }
    }
}

fn corpus_of(tracks: usize) -> CorpusConfig {
    CorpusConfig {
        n_tracks: tracks,
        ..CorpusConfig::default()
    }
}

fn fingerprinter(model: &Path, cfg: PipelineConfig) -> Result<Fingerprinter> {
    let params = load_model(&resolve(model), &cfg.model)?;
    Fingerprinter::new(cfg, params)
}

fn query_clip(q: &QueryArgs, rate: u32) -> Result<AudioClip> {
    let clip = load_audio(resolve(&q.audio), rate)?;
    if !(q.offset >= 0.0) || q.len.is_some_and(|l| !(l > 0.0)) {
        return Err(Error::Config("--offset must be >= 0 and --len > 0".into()));
    }
    let start = (q.offset * rate as f64).round() as usize;
    let len = q.len.map_or(clip.len().saturating_sub(start), |l| {
        (l * rate as f64).round() as usize
    });
    if start + len > clip.len() {
        return Err(Error::Data(format!(
            "excerpt runs past the end of {}",
            q.audio.display()
        )));
    }
    Ok(clip.excerpt(start, len))
}

fn write_report(report: &peaknetfp::eval::EvalReport, prefix: &Path) -> Result<()> {
    let jsonl = prefix.with_extension("jsonl");
    let f = File::create(&jsonl).map_err(|e| Error::Io {
        path: jsonl.clone(),
        source: e,
    })?;
    report.write_jsonl(BufWriter::new(f))?;
    let csv = prefix.with_extension("csv");
    std::fs::write(&csv, report.to_csv()).map_err(|e| Error::Io {
        path: csv.clone(),
        source: e,
    })?;
    print!("{}", report.to_csv());
    Ok(())
}

fn evaluate(path: &Path, output: &Path, only_quad: bool) -> Result<()> {
    let path = resolve(path);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let mut ef: EvalFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if ef.version.is_some_and(|v| v != 1) {
        return Err(Error::Config("evaluation config version must be 1".into()));
    }
    if only_quad {
        ef.sweep.systems = vec![System::Quadfp];
    }
    let cfg = pipeline_config(
        &ConfigArg {
            path: ef.config.clone(),
        },
        ef.model.as_deref(),
    )?;
    let tracks = reference_audio(ef.audio.as_deref(), &ef.corpus, &cfg)?;
    let wants = |s| ef.sweep.systems.contains(&s);

    let neural = match (&ef.model, wants(System::Peaknetfp)) {
        (Some(m), true) => {
            let fp = fingerprinter(m, cfg.clone())?;
            let db = fp.build_db(&tracks)?;
            let ivf = if ef.sweep.use_ivfpq {
                Some(IvfPqIndex::build(&db, &cfg.index)?)
            } else {
                None
            };
            Some((fp, db, ivf))
        }
        (None, true) => return Err(Error::Config("peaknetfp evaluation needs `model`".into())),
        _ => None,
    };
    let quad = if wants(System::Quadfp) {
        Some(build_quad_db(&cfg, &tracks)?)
    } else {
        None
    };
    let art = Artifacts {
        config: &cfg,
        tracks: &tracks,
        peaknet: neural.as_ref().map(|(f, d, i)| (f, d, i.as_ref())),
        quad: quad.as_ref(),
        checkpoint_id: neural
            .as_ref()
            .map(|(f, _, _)| model_id(f.encoder.params())),
    };
    write_report(&run_sweep(&ef.sweep, &art)?, &resolve(output))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ExtractPeaks {
            audio_dir,
            output,
            cfg,
            jsonl,
        } => {
            let cfg = pipeline_config(&cfg, None)?;
            let analyzer = cfg.analyzer()?;
            let mut clouds = Vec::new();
            for (id, clip) in load_audio_dir(&resolve(&audio_dir), cfg.spectrogram.sample_rate)? {
                clouds.extend(peaknetfp::signal::clip_to_clouds(
                    &analyzer,
                    &clip,
                    &cfg.segments,
                    cfg.model.n_peaks,
                    &id,
                )?);
            }
            let f = File::create(&output).map_err(|e| Error::Io {
                path: output.clone(),
                source: e,
            })?;
            if jsonl {
                peakfile::write_peaks_jsonl(BufWriter::new(f), &clouds)?;
            } else {
                peakfile::write_peaks(BufWriter::new(f), &clouds)?;
            }
            println!("{} clouds -> {}", clouds.len(), output.display());
        }
        Command::Train {
            cfg,
            output,
            audio,
            tracks,
            run_dir,
            resume,
        } => {
            let cfg = pipeline_config(&cfg, None)?;
            let clips = reference_audio(audio.as_deref(), &corpus_of(tracks), &cfg)?;
            let set =
                TrainingSet::from_clips(&cfg.analyzer()?, &clips, cfg.segments, cfg.model.n_peaks)?;
            let opts = TrainOptions {
                out_dir: Some(run_dir.unwrap_or_else(|| output.with_extension("run"))),
                resume: resume.map(|p| resolve(&p)),
                init: None,
            };
            let out = train(&set, &cfg.model, &cfg.training, &opts)?;
            save_model(&output, &out.params)?;
            let side = sidecar(&output);
            std::fs::write(&side, cfg.to_toml()).map_err(|e| Error::Io {
                path: side,
                source: e,
            })?;
            let last = out.log.last().map_or(f64::NAN, |r| r.loss);
            println!(
                "{} epochs, {} steps, final loss {last:.4}, model {} -> {}",
                out.epochs_done,
                out.log.len(),
                model_id(&out.params),
                output.display()
            );
        }
        Command::BuildDb {
            model,
            audio,
            tracks,
            output,
            cfg,
        } => {
            let fp = fingerprinter(&model, pipeline_config(&cfg, Some(&resolve(&model)))?)?;
            let refs = reference_audio(audio.as_deref(), &corpus_of(tracks), &fp.config)?;
            let db = fp.build_db(&refs)?;
            write_db(&output, &db, None)?;
            println!(
                "{} tracks, {} segments -> {}",
                db.tracks().len(),
                db.len(),
                output.display()
            );
        }
        Command::BuildIndex {
            db,
            ivfpq,
            output,
            cfg,
        } => {
            let cfg = pipeline_config(&cfg, None)?;
            let src = resolve(&db);
            let (fdb, _) = read_db(&src)?;
            let ix = if ivfpq {
                Some(IvfPqIndex::build(&fdb, &cfg.index)?)
            } else {
                None
            };
            let out = output.unwrap_or(src);
            write_db(&out, &fdb, ix.as_ref())?;
            match &ix {
                Some(ix) => println!(
                    "IVFPQ n_list {} m {} n_probe {} -> {}",
                    ix.n_list,
                    ix.m,
                    ix.n_probe,
                    out.display()
                ),
                None => println!("exact search only -> {}", out.display()),
            }
        }
        Command::Query {
            db,
            model,
            q,
            ivfpq,
            cfg,
        } => {
            let fp = fingerprinter(&model, pipeline_config(&cfg, Some(&resolve(&model)))?)?;
            let (fdb, ix) = read_db(&resolve(&db))?;
            let backend = match (ivfpq, ix.as_ref()) {
                (true, Some(index)) => Backend::IvfPq {
                    index,
                    n_probe: None,
                },
                (true, None) => return Err(Error::Config("database has no IVFPQ index".into())),
                _ => Backend::Exact,
            };
            let clip = query_clip(&q, fp.config.spectrogram.sample_rate)?;
            let hop_secs = fp.config.segments.hop_secs;
            let results = best_per_track(&fp.query(&fdb, backend, &clip)?);
            for (i, m) in results.iter().take(q.top).enumerate() {
                println!(
                    "{}\t{}\t{:.3}\t{:.1}s",
                    i + 1,
                    m.track_id,
                    m.score,
                    m.db_offset as f64 * hop_secs
                );
            }
        }
        Command::Evaluate { config, output } => evaluate(&config, &output, false)?,
        Command::Quadfp { command } => match command {
            QuadCommand::Build {
                audio,
                tracks,
                output,
                cfg,
            } => {
                let cfg = pipeline_config(&cfg, None)?;
                let refs = reference_audio(audio.as_deref(), &corpus_of(tracks), &cfg)?;
                let qdb = build_quad_db(&cfg, &refs)?;
                qdb.write(&output)?;
                println!(
                    "{} tracks, {} quads -> {}",
                    qdb.tracks.len(),
                    qdb.entries.len(),
                    output.display()
                );
            }
            QuadCommand::Query { db, q, cfg } => {
                let cfg = pipeline_config(&cfg, None)?;
                let qdb = QuadDB::read(&resolve(&db))?;
                let clip = query_clip(&q, cfg.spectrogram.sample_rate)?;
                let quads = clip_quads(&cfg.analyzer()?, &cfg, &clip, QuadMode::Query)?;
                let matches = qdb.match_query(&quads, &cfg.quad_match);
                if matches.is_empty() {
                    println!("no match");
                }
                for m in matches.iter().take(q.top) {
                    println!(
                        "{}\t{}\t{} votes\tscale {:.3}",
                        m.rank, m.track_id, m.votes, m.scale
                    );
                }
            }
            QuadCommand::Evaluate { config, output } => evaluate(&config, &output, true)?,
        },
        Command::Synth {
            output,
            tracks,
            seed,
        } => {
            std::fs::create_dir_all(&output).map_err(|e| Error::Io {
                path: output.clone(),
                source: e,
            })?;
            let corpus = CorpusConfig {
                n_tracks: tracks,
                seed,
                ..CorpusConfig::default()
            };
            for (id, clip) in synth_corpus(&corpus) {
                write_wav(output.join(format!("{id}.wav")), &clip)?;
            }
            println!("{tracks} tracks -> {}", output.display());
        }
        Command::Selftest { seed } => {
            let results = peaknetfp::selftest::run(seed);
            let failed = results.iter().filter(|r| r.outcome.is_err()).count();
            for r in &results {
                match &r.outcome {
                    Ok(()) => println!("ok    {}", r.name),
                    Err(e) => println!("FAIL  {}: {e}", r.name),
                }
            }
            if failed > 0 {
                return Err(Error::Contract(format!(
                    "{failed} self-test check(s) failed"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
