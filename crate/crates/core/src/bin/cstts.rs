use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use cstts::pipeline::{Pipeline, PipelineConfig, TrainTtsArgs};
use cstts::tts::TtsArch;
use cstts::vocoder::{render, VocoderMode};
use cstts::{Error, Result};

/// Bilingual and code-switched TTS pipeline.
#[derive(Parser)]
#[command(name = "cstts", version)]
struct Cli {
    /// Pipeline configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-utterance stages; 0 uses all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Workspace directory for every stage's inputs and outputs.
    #[arg(long, global = true, default_value = "cstts-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded two-speaker synthetic corpus into OUT/corpus.
    MakeSyntheticCorpus,
    /// Extract MFCC, log-F0 and LPCNet features plus per-speaker F0 stats.
    Prepare {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the PPG extractor on frame senone labels.
    TrainPpg {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// `utterance_id<TAB>labels` file; defaults to senones.txt beside the manifest.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train the voice conversion model of each speaker (or one).
    TrainVc {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        speaker: Option<String>,
    },
    /// Convert one recording into another speaker's voice.
    Convert {
        #[arg(long)]
        input: PathBuf,
        /// Speaker whose F0 statistics normalize the input.
        #[arg(long)]
        source_speaker: String,
        #[arg(long)]
        target_speaker: String,
        /// LPCNet feature file to write.
        #[arg(long)]
        output: PathBuf,
        /// Also render the converted features to this WAV file.
        #[arg(long)]
        wav: Option<PathBuf>,
    },
    /// Expand each speaker's corpus with the others' utterances in its voice.
    BuildBilingual {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train a TTS model on a manifest.
    TrainTts {
        #[arg(long)]
        arch: TtsArch,
        #[arg(long)]
        manifest: PathBuf,
        /// Phoneme durations, required by FastSpeech.
        #[arg(long)]
        durations: Option<PathBuf>,
        /// Continue training this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Checkpoint name under OUT/models.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Phoneme durations from a Transformer model's attention.
    ExtractDurations {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Add synthesized code-switched utterances to a manifest.
    Augment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// One sentence per line; generated from the manifest's English
        /// transcripts when omitted.
        #[arg(long)]
        sentences: Option<PathBuf>,
    },
    /// Synthesize sentences to 16 kHz WAV files.
    Synthesize {
        #[arg(long)]
        model: PathBuf,
        /// Sentence to speak; repeatable.
        #[arg(long)]
        text: Vec<String>,
        /// File with one sentence per line.
        #[arg(long)]
        text_file: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// External vocoder command with {input} and {output} placeholders.
        #[arg(long)]
        vocoder_cmd: Option<String>,
    },
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = load_config(&cli)?;
    if let Command::Synthesize { vocoder_cmd: Some(cmd), .. } = &cli.command {
        cfg.vocoder.mode = VocoderMode::External;
        cfg.vocoder.command = Some(cmd.clone());
    }
    let p = Pipeline::new(&cli.out, cfg)?;
    let corpus = |m: Option<PathBuf>| m.unwrap_or_else(|| p.ws.corpus_manifest());
    match cli.command {
        Command::MakeSyntheticCorpus => print(&p.make_synthetic_corpus()?)?,
        Command::Prepare { manifest } => {
            let report = p.prepare(&corpus(manifest))?;
            print(&report)?;
            if let Err(e) = report.ensure_ok() {
                log::error!("{e}");
                return Ok(false);
            }
        }
        Command::TrainPpg { manifest, labels } => print(&p.train_ppg(&corpus(manifest), labels.as_deref())?)?,
        Command::TrainVc { manifest, speaker } => {
            let m = corpus(manifest);
            let speakers = match speaker {
                Some(s) => vec![s],
                None => cstts::pipeline::CorpusManifest::read(&m)?.speakers(),
            };
            for s in speakers {
                print(&p.train_vc(&m, &s)?)?;
            }
        }
        Command::Convert { input, source_speaker, target_speaker, output, wav } => {
            let features = p.convert_file(&input, &source_speaker, &target_speaker, &output)?;
            if let Some(w) = wav {
                render(&features, &p.config.vocoder)?.write_wav(&w)?;
            }
            println!("{}", output.display());
        }
        Command::BuildBilingual { manifest } => print(&p.build_bilingual(&corpus(manifest))?)?,
        Command::TrainTts { arch, manifest, durations, resume, name, epochs } => {
            let args = TrainTtsArgs { arch, manifest, durations, resume, name, epochs };
            print(&p.train_tts(&args)?)?;
        }
        Command::ExtractDurations { model, manifest } => print(&p.extract_durations(&model, &manifest)?)?,
        Command::Augment { model, manifest, sentences } => print(&p.augment(&model, &manifest, sentences.as_deref())?)?,
        Command::Synthesize { model, mut text, text_file, out_dir, .. } => {
            if let Some(f) = text_file {
                text.extend(read_lines(&f)?);
            }
            if text.is_empty() {
                return Err(Error::Argument("nothing to synthesize; pass --text or --text-file".into()));
            }
            print(&p.synthesize(&model, &text, out_dir.as_deref())?)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                if !msg.contains(&s.to_string()) {
                    msg.push_str(&format!(": {s}"));
                }
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
