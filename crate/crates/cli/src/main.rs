use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Rule matching, training-data construction, encoder training and
/// few-shot relation classification.
#[derive(Debug, Parser)]
#[command(name = "softrules", version)]
struct Cli {
    /// Seed for every randomized step. Overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a JSONL file of sentences, instances or episodes.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = InputKind::Auto)]
        kind: InputKind,
    },
    /// Write a synthetic annotated corpus.
    GenCorpus {
        #[arg(long, default_value_t = 1000)]
        sentences: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write a synthetic few-shot benchmark.
    GenBench {
        #[arg(long, value_enum, default_value_t = Preset::Mini)]
        preset: Preset,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate one rule per relation instance.
    GenRules {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Syntactic)]
        kind: Kind,
        #[arg(long)]
        lexicalize_identical: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Match rules against relation instances.
    Match {
        /// Rule TSV, or one rule per line.
        #[arg(long)]
        rules: PathBuf,
        /// Relation instances (JSONL).
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        case_sensitive: bool,
        /// Treat entity types from the same synonym row as equal.
        #[arg(long)]
        synonyms: bool,
        /// Also emit non-matching pairs.
        #[arg(long)]
        all: bool,
    },
    /// Build (rule, sentence) training pairs from an annotated corpus.
    BuildData(BuildData),
    /// Train the hashed two-tower encoder.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config (JSON); defaults to the desk settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Pairs to report retrieval accuracy on after training.
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Similarity of a rule and an entity-marked sentence.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        rule: String,
        /// Marked sentence, e.g. `# * per * Bill Gates # founded # * org * Microsoft #`.
        #[arg(long)]
        sentence: String,
    },
    /// Evaluate on few-shot episodes.
    Eval {
        #[arg(long)]
        episodes: PathBuf,
        #[command(flatten)]
        sieve: SieveArgs,
        #[arg(long, value_enum, default_value_t = EvalMode::Hybrid)]
        mode: EvalMode,
        #[arg(long = "t", default_value_t = 0.5, value_parser = unit_interval)]
        threshold: f64,
        /// Per-relation threshold, `relation=t`. Repeatable.
        #[arg(long = "override", value_parser = parse_override)]
        overrides: Vec<(String, f64)>,
        /// Write the full report, predictions included.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Pick the threshold maximizing F1 on development episodes.
    Tune {
        #[arg(long)]
        dev: PathBuf,
        #[command(flatten)]
        sieve: SieveArgs,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, value_enum, default_value_t = TuneMode::Hybrid)]
        mode: TuneMode,
    },
    /// Run the workbench HTTP service.
    Serve {
        /// Episodes to serve; defaults to the bundled mini benchmark.
        #[arg(long)]
        episodes: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, value_enum, default_value_t = TuneMode::Hybrid)]
        mode: TuneMode,
        #[arg(long = "t", default_value_t = 0.5, value_parser = unit_interval)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t = Kind::Syntactic)]
        kind: Kind,
        /// Directory for session files.
        #[arg(long)]
        sessions: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct BuildData {
    /// Annotated sentences (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Pipeline config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_paraphrase: bool,
    #[arg(long)]
    no_preprocess: bool,
    #[arg(long)]
    no_augment: bool,
    /// Paraphrase through an OpenAI-style chat endpoint instead of the
    /// template fixture. Output is then not reproducible.
    #[arg(long)]
    paraphrase_endpoint: Option<String>,
    #[arg(long, default_value = "gpt-3.5-turbo")]
    paraphrase_model: String,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SieveArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// `generated`, or a rule TSV applied to every episode.
    #[arg(long, default_value = "generated")]
    rules: String,
    /// Rule kind for generated rules.
    #[arg(long, value_enum, default_value_t = Kind::Syntactic)]
    kind: Kind,
    #[arg(long)]
    lexicalize_identical: bool,
    #[arg(long, value_enum, default_value_t = TieBreak::SoftScore)]
    tiebreak: TieBreak,
    #[arg(long)]
    case_sensitive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputKind {
    Auto,
    Sentences,
    Instances,
    Episodes,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Mini,
    Dev,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Syntactic,
    Surface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Hard,
    Soft,
    Hybrid,
    Baseline,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TuneMode {
    Soft,
    Hybrid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TieBreak {
    SoftScore,
    MatchCount,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let t: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(format!("{t} is outside [0, 1]"))
    }
}

fn parse_override(s: &str) -> Result<(String, f64), String> {
    let (rel, t) = s.rsplit_once('=').ok_or_else(|| format!("expected relation=t, got {s:?}"))?;
    if rel.is_empty() {
        return Err("empty relation".into());
    }
    Ok((rel.to_string(), unit_interval(t)?))
}

/// Bad invocation detected after argument parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
