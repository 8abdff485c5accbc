use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crnn_core::config::ExperimentConfig;
use crnn_core::ctc::BeamOptions;
use crnn_core::dataset::{generate_synthetic, split_dataset, write_corpus};
use crnn_core::experiments::{
    cfv_wer_correlation, correlate_pairs, correlation_csv, evaluate, read_results_pairs, transcribe_clip,
    write_report, Decoder, Harness, SweepResult,
};
use crnn_core::frontend::read_wav;
use crnn_core::model::{load_checkpoint, save_checkpoint};
use crnn_core::train::{run_training_with, Corpus};
use crnn_core::{Alphabet, CharNGramLm, CrnnConfig, CrnnModel, Error};

#[derive(Parser)]
#[command(name = "crnn", version, about = "CEL + biGRU + CTC speech recognizer and experiment harness")]
struct Cli {
    /// Log progress to stderr (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file (TOML); omitted sections use the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Beam width; greedy decoding when omitted.
    #[arg(long)]
    beam_width: Option<usize>,
    /// Character LM written by `train` (only used with --beam-width).
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    lm_weight: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes checkpoints, history and a character LM.
    Train(Common),
    /// Transcribe a WAV file with a trained checkpoint.
    Transcribe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// WER and CER of a checkpoint on the config's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// CFV and WER across numbers of filters.
    SweepFilters(Common),
    /// CFV across kernel sizes at a fixed number of filters.
    CompareKernels(Common),
    /// Valid versus same padding.
    ComparePadding(Common),
    /// CEL model against the same model without a CEL.
    AblateCel(Common),
    /// Dropout rates on the overfit-prone corpus.
    CompareDropout(Common),
    /// Spearman correlation between CFV and WER.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Results CSV from an earlier sweep; runs the filter sweep and
        /// ablation when omitted.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Itemized parameter count of the configured model.
    CountParams {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Count the full-size default architecture instead.
        #[arg(long)]
        full_size: bool,
    },
    /// Write the synthetic corpus as WAV files plus a manifest.
    SynthData(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => 2,
        Error::Divergence { .. } | Error::NonFiniteGradient => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(common: &Common) -> crnn_core::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = common.epochs {
        cfg.schedule.epochs = e;
        cfg.dropout.schedule.epochs = e;
        cfg.snapshot_epoch = cfg.snapshot_epoch.min(e.max(1));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn harness<'a>(cfg: &ExperimentConfig, corpus: &'a Corpus) -> Harness<'a> {
    let mut h = Harness::new(corpus, cfg.schedule.clone(), cfg.seed);
    h.replicas = cfg.replicas;
    h.snapshot_epoch = cfg.snapshot_epoch;
    h
}

fn write(path: &Path, text: &str) -> crnn_core::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> crnn_core::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn print_rows(rows: &[SweepResult]) {
    println!("{:<14} {:>8} {:>10} {:>8} {:>8}", "config", "params", "cfv", "wer", "cer");
    for r in rows {
        println!(
            "{:<14} {:>8} {:>10.4} {:>8.4} {:>8.4}",
            r.label, r.params, r.cfv_snapshot, r.wer, r.cer
        );
    }
}

fn report(common: &Common, stem: &str, rows: &[SweepResult]) -> crnn_core::Result<()> {
    print_rows(rows);
    for p in write_report(&common.out, stem, rows)? {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn decoder(args: &DecodeArgs) -> crnn_core::Result<Decoder> {
    let Some(width) = args.beam_width else {
        return Ok(Decoder::Greedy);
    };
    let lm = args
        .lm
        .as_ref()
        .map(|p| CharNGramLm::load(p, Alphabet::english()))
        .transpose()?;
    let opts = BeamOptions {
        beam_width: width,
        lm_weight: if lm.is_some() { args.lm_weight } else { 0.0 },
        ..BeamOptions::default()
    };
    Ok(Decoder::Beam { opts, lm })
}

fn run(command: Command) -> crnn_core::Result<()> {
    match command {
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            let corpus = cfg.corpus()?;
            create_dir(&common.out)?;
            let outcome = run_training_with(&cfg.model, &corpus, &cfg.schedule, cfg.seed, |rec| {
                println!(
                    "epoch {:>3}  train {:.4}  cfv {:.4}  ({:.1}s)",
                    rec.epoch, rec.train_loss, rec.cfv, rec.wall_secs
                );
            })?;
            save_checkpoint(&outcome.last, common.out.join("last.ckpt"))?;
            save_checkpoint(&outcome.best, common.out.join("best.ckpt"))?;
            write(&common.out.join("history.csv"), &outcome.history.to_csv())?;
            let d = cfg.decode;
            let lm = CharNGramLm::train(
                corpus.train.iter().map(|e| e.transcript.as_str()),
                d.lm_order,
                d.lm_add_k,
                corpus.alphabet.clone(),
            )?;
            lm.save(common.out.join("lm.txt"))?;
            if !corpus.test.is_empty() {
                let rep = evaluate(&outcome.best.model, &corpus.test, &corpus.alphabet, &Decoder::Greedy)?;
                println!("test (best checkpoint, greedy): wer {:.4}  cer {:.4}", rep.wer(), rep.cer());
            }
            Ok(())
        }
        Command::Transcribe { checkpoint, wav, decode } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let clip = read_wav(&wav)?;
            let text = transcribe_clip(&ckpt, &clip, &Alphabet::english(), &decoder(&decode)?)?;
            println!("{text}");
            Ok(())
        }
        Command::Evaluate {
            common,
            checkpoint,
            decode,
        } => {
            let cfg = load_config(&common)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let (_, _, test) = split_dataset(&cfg.utterances()?, &cfg.split)?;
            let alphabet = Alphabet::english();
            let dec = decoder(&decode)?;
            let mut words = crnn_core::metrics::EditStats::default();
            let mut chars = crnn_core::metrics::EditStats::default();
            for u in &test {
                let hyp = transcribe_clip(&ckpt, &u.load_audio()?, &alphabet, &dec)?;
                words.merge(&crnn_core::metrics::word_edit_stats(&u.transcript, &hyp)?);
                chars.merge(&crnn_core::metrics::char_edit_stats(&u.transcript, &hyp)?);
            }
            println!(
                "utterances {}  wer {:.4}  cer {:.4}",
                test.len(),
                words.error_rate(),
                chars.error_rate()
            );
            Ok(())
        }
        Command::SweepFilters(common) => {
            let cfg = load_config(&common)?;
            let corpus = cfg.corpus()?;
            let sweep = harness(&cfg, &corpus).filter_sweep(&cfg.model, &cfg.sweep.filters)?;
            report(&common, "filters", &sweep.rows)?;
            match sweep.spearman {
                Some(r) => println!("spearman(N, CFV@{}) = {r:.4}", cfg.snapshot_epoch),
                None => println!("spearman(N, CFV) undefined"),
            }
            Ok(())
        }
        Command::CompareKernels(common) => {
            let cfg = load_config(&common)?;
            let corpus = cfg.corpus()?;
            let h = harness(&cfg, &corpus);
            let cmp = h.kernel_compare(&cfg.model, &cfg.sweep.kernels, cfg.sweep.fixed_filters)?;
            report(&common, "kernels", &cmp.rows)?;
            println!("kernel spread {:.4}", cmp.spread);
            let [a, b] = cfg.sweep.reference_filters;
            let refs = h.filter_sweep(&cfg.model, &[a, b])?;
            if let Some(s) = refs.spread_between(a, b) {
                println!(
                    "filter spread N={a} vs N={b}: {s:.4}  bound {:.4}",
                    cfg.thresholds.spread_ratio * s
                );
            }
            Ok(())
        }
        Command::ComparePadding(common) => {
            let cfg = load_config(&common)?;
            let corpus = cfg.corpus()?;
            let base = CrnnConfig {
                filters: cfg.sweep.fixed_filters,
                ..cfg.model.clone()
            };
            let cmp = harness(&cfg, &corpus).padding_compare(&base, &cfg.sweep.padding_modes)?;
            report(&common, "padding", &cmp.rows)?;
            if let Some(g) = cmp.max_gap {
                println!("max per-epoch CFV gap {g:.4}");
            }
            Ok(())
        }
        Command::AblateCel(common) => {
            let cfg = load_config(&common)?;
            let corpus = cfg.corpus()?;
            let h = harness(&cfg, &corpus);
            let strong = h.cel_ablation(&cfg.model, cfg.sweep.fixed_filters)?;
            let weak = h.cel_ablation(&cfg.model, cfg.sweep.weak_filters)?;
            report(&common, "ablation", &[strong.cel, weak.cel, strong.baseline])
        }
        Command::CompareDropout(common) => {
            let cfg = load_config(&common)?;
            let corpus = cfg.dropout_corpus()?;
            let mut h = harness(&cfg, &corpus);
            h.schedule = cfg.dropout.schedule.clone();
            h.snapshot_epoch = cfg.dropout.schedule.epochs;
            let rows = h.dropout_compare(&cfg.dropout.model, &cfg.dropout.rates)?;
            report(&common, "dropout", &rows)
        }
        Command::Correlate { common, results } => {
            let corr = match results {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
                    correlate_pairs(read_results_pairs(&text)?)?
                }
                None => {
                    let cfg = load_config(&common)?;
                    let corpus = cfg.corpus()?;
                    let h = harness(&cfg, &corpus);
                    h.filter_sweep(&cfg.model, &cfg.sweep.filters)?;
                    h.cel_ablation(&cfg.model, cfg.sweep.fixed_filters)?;
                    let rows = h.trained();
                    report(&common, "correlate", &rows)?;
                    cfv_wer_correlation(&rows)?
                }
            };
            create_dir(&common.out)?;
            write(&common.out.join("correlation.csv"), &correlation_csv(&corr))?;
            match corr.spearman {
                Some(r) => println!("spearman(CFV, WER) = {r:.4} over {} configs", corr.pairs.len()),
                None => println!("spearman(CFV, WER) undefined: a column is constant"),
            }
            Ok(())
        }
        Command::CountParams { config, full_size } => {
            let model_cfg = if full_size {
                CrnnConfig::default()
            } else {
                match config {
                    Some(p) => ExperimentConfig::load(p)?.model,
                    None => ExperimentConfig::default().model,
                }
            };
            let model = CrnnModel::build(&model_cfg, 0)?;
            println!("{}", model_cfg.fingerprint());
            for (name, n) in &model.count_params().items {
                println!("{name:<12} {n:>10}");
            }
            println!("{:<12} {:>10}", "total", model.count_params().total());
            Ok(())
        }
        Command::SynthData(common) => {
            let cfg = load_config(&common)?;
            let utts = generate_synthetic(&cfg.synth)?;
            let manifest = write_corpus(&common.out, &utts)?;
            println!("{} utterances, manifest {}", utts.len(), manifest.display());
            Ok(())
        }
    }
}
