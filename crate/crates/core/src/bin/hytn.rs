use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hytn::corpus::{
    load_corpus, save_corpus, CorpusDistribution, CorpusGenerator, GenerationOptions,
    TemplateRegistry,
};
use hytn::error::{Error, Result};
use hytn::eval::{ablation_table, evaluate_golden, run_ablation, AblationGrid};
use hytn::pipeline::{write_traces, RoutingStats};
use hytn::rule_engine::compile_rules;
use hytn::{
    extract_nsw, Classifier, ClassifierConfig, FormatRegistry, HybridSystem, PriorityList, RuleSet,
    Taxonomy,
};

/// Text normalization for Mandarin TTS front-ends.
#[derive(Parser)]
#[command(name = "hytn", version)]
struct Cli {
    /// Label registry (TOML). Defaults to the built-in registry.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled corpus.
    GenCorpus {
        /// Label proportions (TOML). Defaults to the built-in distribution.
        #[arg(long)]
        dist: Option<PathBuf>,
        /// Sentence templates (TOML). Defaults to the built-in templates.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Maximum NSW clauses per sentence.
        #[arg(long, default_value_t = 1)]
        max_spans: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier and write a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Classifier settings (TOML). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed of the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the label and probabilities of every NSW.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        text: Option<String>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Normalize text, one output line per input line.
    Normalize {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write one JSON record per NSW here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Pattern metrics and sentence accuracy on a labelled golden set,
    /// hybrid next to rules-only.
    Evaluate {
        #[arg(long)]
        golden: PathBuf,
        #[command(flatten)]
        system: SystemArgs,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train and score every setup of an ablation grid.
    Ablate {
        /// Grid file (TOML). Defaults to the built-in grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Also write one JSON record per row here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SystemArgs {
    /// Classifier checkpoint. Required unless --rules-only.
    #[arg(long, required_unless_present = "rules_only")]
    model: Option<PathBuf>,
    /// Rule file (TOML). Defaults to the built-in rules.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Priority list. Defaults to the built-in list.
    #[arg(long)]
    priority: Option<PathBuf>,
    /// Skip the classifier entirely.
    #[arg(long)]
    rules_only: bool,
}

fn taxonomy(path: &Option<PathBuf>) -> Result<Taxonomy> {
    path.as_ref()
        .map_or_else(|| Ok(Taxonomy::builtin()), Taxonomy::load)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn build_system(args: &SystemArgs, tax: Taxonomy) -> Result<HybridSystem> {
    let rules = match &args.rules {
        Some(p) => compile_rules(p, &tax)?,
        None => RuleSet::builtin(&tax),
    };
    let priority = match &args.priority {
        Some(p) => PriorityList::load(p)?,
        None => PriorityList::builtin(),
    };
    let classifier = match (&args.model, args.rules_only) {
        (Some(p), false) => Some(Classifier::load(p)?),
        _ => None,
    };
    HybridSystem::new(tax, rules, priority, classifier)
}

fn run(cli: Cli) -> Result<()> {
    let tax = taxonomy(&cli.registry)?;
    match cli.command {
        Command::GenCorpus {
            dist,
            templates,
            n,
            seed,
            max_spans,
            out,
        } => {
            let dist = match dist {
                Some(p) => CorpusDistribution::load(p, &tax)?,
                None => CorpusDistribution::builtin(&tax),
            };
            let templates = match templates {
                Some(p) => TemplateRegistry::load(p, &tax)?,
                None => TemplateRegistry::builtin(&tax),
            };
            let formats = FormatRegistry::new(&tax)?;
            let generator = CorpusGenerator {
                taxonomy: &tax,
                templates: &templates,
                formats: &formats,
            };
            let opts = GenerationOptions {
                spans_per_sentence: (1, max_spans),
            };
            let corpus = generator.generate(&dist, n, seed, &opts)?;
            save_corpus(&out, &corpus, &tax)?;
            eprintln!("wrote {} sentences to {}", corpus.len(), out.display());
        }
        Command::Train {
            corpus,
            config,
            seed,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => ClassifierConfig::load(p)?,
                None => ClassifierConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let corpus = load_corpus(&corpus, &tax)?;
            let formats = FormatRegistry::new(&tax)?;
            let (clf, _) = Classifier::fit(&corpus, &cfg, &tax, &formats, |e| {
                println!(
                    "epoch {:>3}  loss {:.6}  accuracy {:.4}",
                    e.epoch, e.loss, e.accuracy
                );
            })?;
            clf.save(&out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Classify { model, text, input } => {
            let clf = Classifier::load(&model)?;
            if clf.label_names != tax.names() {
                return Err(Error::Config(
                    "the model was trained on a different label registry".into(),
                ));
            }
            let formats = FormatRegistry::new(&tax)?;
            let lines: Vec<String> = match (text, input) {
                (Some(t), _) => vec![t],
                (None, Some(p)) => open(&p)?
                    .lines()
                    .collect::<std::io::Result<_>>()
                    .map_err(io_err(&p))?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for (i, line) in lines.iter().enumerate() {
                let chars: Vec<char> = line.chars().collect();
                for span in extract_nsw(line) {
                    let surface: String = chars[span.start..span.end].iter().collect();
                    let legal = formats.legal_labels(&surface);
                    let record = match clf.classify_span(&chars, &span, &legal) {
                        Ok(c) => serde_json::json!({
                            "line": i + 1,
                            "start": span.start,
                            "end": span.end,
                            "surface": surface,
                            "label": tax.name(c.label),
                            "probabilities": tax.names().into_iter().zip(c.probabilities.into_iter().map(serde_json::Value::from)).collect::<serde_json::Map<_, _>>(),
                        }),
                        Err(e) => serde_json::json!({
                            "line": i + 1,
                            "start": span.start,
                            "end": span.end,
                            "surface": surface,
                            "error": e.to_string(),
                        }),
                    };
                    writeln!(w, "{record}").map_err(io_err(Path::new("<stdout>")))?;
                }
            }
        }
        Command::Normalize {
            system,
            input,
            out,
            trace,
        } => {
            let sys = build_system(&system, tax)?;
            let lines: Vec<String> = open(&input)?
                .lines()
                .collect::<std::io::Result<_>>()
                .map_err(io_err(&input))?;
            let mut w = create(&out)?;
            let mut tw = trace.as_deref().map(create).transpose()?;
            let mut sentence = 0;
            let mut stats = RoutingStats::default();
            for line in &lines {
                let mut normalized = String::with_capacity(line.len());
                for (text, traces) in sys.normalize_document(line, system.rules_only) {
                    normalized.push_str(&text);
                    if let (Some(tw), Some(path)) = (tw.as_mut(), trace.as_deref()) {
                        write_traces(tw, sentence, &traces, &sys.taxonomy).map_err(io_err(path))?;
                    }
                    let s = RoutingStats::from_traces(&traces);
                    stats.spans += s.spans;
                    stats.priority += s.priority;
                    stats.neural += s.neural;
                    stats.fallback += s.fallback;
                    stats.unmatched += s.unmatched;
                    sentence += 1;
                }
                writeln!(w, "{normalized}").map_err(io_err(&out))?;
            }
            w.flush().map_err(io_err(&out))?;
            if let (Some(mut tw), Some(path)) = (tw, trace.as_deref()) {
                tw.flush().map_err(io_err(path))?;
            }
            if !system.rules_only {
                eprintln!(
                    "{} NSW: priority {:.4}, neural {:.4}, fallback {} (unmatched {})",
                    stats.spans,
                    stats.priority_fraction(),
                    stats.neural_fraction(),
                    stats
                        .fallback_fraction()
                        .map_or_else(|| "n/a".to_string(), |f| format!("{f:.4}")),
                    stats.unmatched
                );
            }
        }
        Command::Evaluate {
            golden,
            system,
            json,
        } => {
            let golden = load_corpus(&golden, &tax)?;
            let sys = build_system(&system, tax)?;
            let report = evaluate_golden(&sys, &golden)?;
            let label = if system.rules_only {
                "rules-only"
            } else {
                "hybrid"
            };
            println!("{label} pattern metrics");
            print!("{}", report.hybrid_patterns.table(&sys.taxonomy));
            println!();
            println!("rules-only pattern metrics");
            print!("{}", report.rules_patterns.table(&sys.taxonomy));
            println!();
            println!("sentence accuracy over {} sentences", report.sentences);
            println!("  {label:<10}  {:.4}", report.hybrid_accuracy);
            println!("  {:<10}  {:.4}", "rules-only", report.rules_accuracy);
            if let Some(p) = json {
                let s =
                    serde_json::to_string(&report).map_err(|e| Error::Validation(e.to_string()))?;
                std::fs::write(&p, s + "\n").map_err(io_err(&p))?;
            }
        }
        Command::Ablate {
            grid,
            corpus,
            seed,
            json,
        } => {
            let grid = match grid {
                Some(p) => AblationGrid::load(p)?,
                None => AblationGrid::builtin(),
            };
            let corpus = load_corpus(&corpus, &tax)?;
            let rows = run_ablation(&grid, &corpus, &tax, seed, |row| {
                eprintln!("finished `{}`", row.name)
            })?;
            print!("{}", ablation_table(&rows));
            if let Some(p) = json {
                let mut w = create(&p)?;
                for row in &rows {
                    let line =
                        serde_json::to_string(row).map_err(|e| Error::Validation(e.to_string()))?;
                    writeln!(w, "{line}").map_err(io_err(&p))?;
                }
                w.flush().map_err(io_err(&p))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
