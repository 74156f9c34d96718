use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use canary_audit::attack::{continuous_baseline_attack, run_attack, AttackConfig, AttackTarget, LogitInit};
use canary_audit::data::{
    canary_tags, generate_canary_with, inject_canary, load_corpus, save_corpus, synth_corpus, Corpus,
    DigitFormat, Grammar, Pattern, ReducedVocabulary, COLORS,
};
use canary_audit::eval::{hamming_distance_per_token, random_baseline};
use canary_audit::experiment::{run_experiment, ExperimentConfig};
use canary_audit::model::ModelConfig;
use canary_audit::training::{
    evaluate_model, init_model, inspect_checkpoint, load_checkpoint, save_checkpoint, train_model, TrainConfig,
};

#[derive(Parser)]
#[command(name = "canary-audit", version, about = "Train intent/NER models on canary-seeded data and try to extract the canaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus as JSON lines
    Synth {
        #[arg(long, default_value_t = 2000)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model, optionally injecting a canary first
    Train(TrainArgs),
    /// Attack a checkpoint and print the reconstruction as JSON
    Attack(AttackArgs),
    /// Model accuracy on a corpus, HDT of a guess, or the random baseline
    Eval(EvalArgs),
    /// Run a full experiment grid from a JSON config
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `workers` from the config
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print config, vocabulary size, parameter shapes and hash of a checkpoint
    InspectCheckpoint { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Call,
    Pin,
    Color,
}

impl From<PatternArg> for Pattern {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::Call => Pattern::Call,
            PatternArg::Pin => Pattern::Pin,
            PatternArg::Color => Pattern::Color,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DigitsArg {
    Words,
    Numerals,
}

impl From<DigitsArg> for DigitFormat {
    fn from(d: DigitsArg) -> Self {
        match d {
            DigitsArg::Words => DigitFormat::Words,
            DigitsArg::Numerals => DigitFormat::Numerals,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Separate validation file; otherwise the tail of --corpus is used
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long)]
    out: PathBuf,
    /// Model config JSON; flags below override it
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long)]
    dropout: bool,
    #[arg(long)]
    early_stopping: bool,
    #[arg(long)]
    char_embeddings: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inject a canary of this pattern before training
    #[arg(long, value_enum)]
    pattern: Option<PatternArg>,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    canary_seed: u64,
    #[arg(long, value_enum, default_value = "words")]
    digits: DigitsArg,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pattern: PatternArg,
    #[arg(long)]
    n: usize,
    /// Known prefix; defaults to the pattern's prefix
    #[arg(long)]
    prefix: Option<String>,
    /// `digits`, `colors`, or a comma-separated token list
    #[arg(long)]
    v0: Option<String>,
    #[arg(long, value_enum, default_value = "words")]
    digits: DigitsArg,
    /// Assumed intent; defaults to the pattern's intent
    #[arg(long)]
    intent: Option<String>,
    /// Assumed tags, space separated; defaults to the canary tag sequence
    #[arg(long)]
    tags: Option<String>,
    #[arg(long, default_value_t = 250)]
    epochs: usize,
    #[arg(long, default_value_t = 6.5e-3)]
    lr0: f64,
    #[arg(long, default_value_t = 0.995)]
    lr_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    t0: f64,
    #[arg(long, default_value_t = 0.997)]
    t_decay: f64,
    #[arg(long, default_value = "zeros")]
    init: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    full_vocab: bool,
    /// Use the continuous-embedding baseline instead
    #[arg(long)]
    continuous: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, requires = "corpus")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// True tokens, space separated
    #[arg(long, requires = "guess")]
    truth: Option<String>,
    #[arg(long)]
    guess: Option<String>,
    /// Print the random-guess baseline for `N V0_SIZE`
    #[arg(long, num_args = 2, value_names = ["N", "V0_SIZE"])]
    baseline: Option<Vec<usize>>,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (examples, _) = load_corpus(&a.corpus).with_context(|| format!("reading {}", a.corpus.display()))?;
    let mut corpus = match &a.val {
        Some(v) => Corpus {
            train: examples,
            val: load_corpus(v).with_context(|| format!("reading {}", v.display()))?.0,
        },
        None => Corpus::split(examples, a.val_fraction),
    };
    let canary = match a.pattern {
        Some(p) => {
            let spec = generate_canary_with(p.into(), a.n, a.canary_seed, a.digits.into())?.with_repetitions(a.repetitions);
            corpus = inject_canary(&corpus, &spec)?;
            Some(spec)
        }
        None => None,
    };
    let mut mc: ModelConfig = match &a.model_config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => ModelConfig::default(),
    };
    if let Some(d) = a.embedding_dim {
        mc.embedding_dim = d;
    }
    if let Some(h) = a.hidden_dim {
        mc.hidden_dim = h;
    }
    mc.char_embeddings_enabled |= a.char_embeddings;
    let tc = TrainConfig {
        max_epochs: a.epochs,
        learning_rate: a.lr,
        early_stopping_enabled: a.early_stopping,
        patience: a.patience,
        dropout_enabled: a.dropout,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let mut model = init_model(&corpus, &mc, a.seed)?;
    if let Some(p) = &a.pretrained {
        let stats = model.apply_pretrained(p)?;
        log::info!("pretrained vectors: {} matched, {} skipped, {} missing", stats.matched, stats.skipped, stats.missing.len());
    }
    let (model, report) = train_model(model, &corpus, &tc)?;
    save_checkpoint(&a.out, &model, &serde_json::json!({ "train_report": report, "canary": canary }))?;
    print_json(&report)
}

fn cmd_attack(a: AttackArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?.model;
    let pattern: Pattern = a.pattern.into();
    let format: DigitFormat = a.digits.into();
    let prefix = match &a.prefix {
        Some(p) => words(p),
        None => pattern.prefix().iter().map(|s| s.to_string()).collect(),
    };
    let v0_tokens: Vec<String> = match a.v0.as_deref() {
        None => pattern.secret_tokens(format).iter().map(|s| s.to_string()).collect(),
        Some("digits") => Pattern::Pin.secret_tokens(format).iter().map(|s| s.to_string()).collect(),
        Some("colors") => COLORS.iter().map(|s| s.to_string()).collect(),
        Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
    };
    let v0 = ReducedVocabulary::from_tokens(&model.vocab, &v0_tokens)?;
    let target = AttackTarget {
        tags: canary_tags(prefix.len(), a.n),
        prefix,
        n: a.n,
        intent: pattern.intent().to_string(),
    };
    let config = AttackConfig {
        attack_epochs: a.epochs,
        lr0: a.lr0,
        lr_decay: a.lr_decay,
        t0: a.t0,
        t_decay: a.t_decay,
        init: a.init.parse::<LogitInit>()?,
        seed: a.seed,
        full_vocab: a.full_vocab,
        intent_override: a.intent,
        tags_override: a.tags.as_deref().map(words),
    };
    let result = if a.continuous {
        continuous_baseline_attack(&model, &target, &v0, &config)?
    } else {
        run_attack(&model, &target, &v0, &config)?
    };
    print_json(&result)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut out = serde_json::Map::new();
    if let (Some(ck), Some(corpus)) = (&a.checkpoint, &a.corpus) {
        let model = load_checkpoint(ck)?.model;
        let (examples, _) = load_corpus(corpus)?;
        let acc = evaluate_model(&model, &examples)?;
        out.insert("intent_accuracy".into(), acc.intent.into());
        out.insert("tag_accuracy".into(), acc.tags.into());
    }
    if let (Some(t), Some(g)) = (&a.truth, &a.guess) {
        let hdt = hamming_distance_per_token(&words(t), &words(g))?;
        out.insert("hdt".into(), hdt.into());
        out.insert("exact_match".into(), (hdt == 0.0).into());
    }
    if let Some(b) = &a.baseline {
        let (acc, hdt) = random_baseline(b[0], b[1])?;
        out.insert("baseline_accuracy".into(), acc.into());
        out.insert("baseline_hdt".into(), hdt.into());
    }
    if out.is_empty() {
        bail!("nothing to evaluate: pass --checkpoint/--corpus, --truth/--guess or --baseline");
    }
    print_json(&out)
}

fn cmd_sweep(config: PathBuf, output_dir: Option<PathBuf>, workers: Option<usize>) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let outcome = run_experiment(&cfg)?;
    for s in &outcome.summaries {
        println!(
            "{:<8} n={:<2} R={:<5} {:<10} {:<10} acc {:.2} hdt {:.3} (baseline {:.2e} / {:.3})",
            s.cell.pattern, s.cell.n, s.cell.repetitions, s.cell.defenses, s.cell.method, s.accuracy, s.hdt,
            s.baseline_accuracy, s.baseline_hdt
        );
    }
    for f in &outcome.failures {
        eprintln!("failed: {} trial {}: {}", f.cell, f.trial, f.error);
    }
    Ok(ExitCode::from(outcome.exit_code() as u8))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { size, seed, out } => {
            let examples = synth_corpus(&Grammar::default(), size, seed)?;
            save_corpus(&out, &examples)?;
        }
        Command::Train(a) => cmd_train(a)?,
        Command::Attack(a) => cmd_attack(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Sweep {
            config,
            output_dir,
            workers,
        } => return cmd_sweep(config, output_dir, workers),
        Command::InspectCheckpoint { path } => print_json(&inspect_checkpoint(&path)?)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
