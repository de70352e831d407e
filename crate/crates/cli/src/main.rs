use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use toml_edit::{value, Array, DocumentMut, Item, Table};

use ioforge::pipeline::{
    estimate_source_set, is_up_to_date, run_all, run_stage, PipelineConfig, SourceSpec, Stage, StageOutcome,
};
use ioforge::synth::{synth_corpus, SynthCorpusSpec};

/// Config written next to a generated synthetic corpus. The narrative topic
/// is left for the analyst to choose after `ioforge topics`.
const SYNTH_CONFIG: &str = r#"run_dir = "run"
seed = SEED

[ingest]
tweets = "tweets.jsonl"
accounts = "accounts.jsonl"
known_io = "known_io.txt"
known_benign = "known_benign.txt"

[topics]
languages = ["en"]
k = 3
alpha = 0.1
iterations = 200

[narrative]
language = "en"
topics = []

[label]
news = "news.txt"

[train]
n_trees = 50
cv_rounds = 5
"#;

#[derive(Parser)]
#[command(name = "ioforge", version, about = "Detect coordinated accounts and estimate their causal impact on a narrative")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, short, global = true, default_value = "config.toml")]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config override `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct NarrativeArgs {
    /// Topic indices that make up the narrative, e.g. `0,2`.
    #[arg(long, value_delimiter = ',')]
    topics: Vec<usize>,
    /// Define the narrative by a hashtag instead of topics.
    #[arg(long, conflicts_with = "topics")]
    hashtag: Option<String>,
    /// Language whose topic model the indices refer to.
    #[arg(long)]
    language: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter and normalize the raw tweet and account files.
    Ingest,
    /// Fit per-language topic models.
    Topics,
    /// Choose the narrative from topic indices or a hashtag.
    SelectNarrative(NarrativeArgs),
    /// Weak labels from the labeling functions.
    Label,
    /// Account feature matrix and selected schema.
    Featurize,
    /// Cross-validate and fit the account classifier.
    Train,
    /// Score every account.
    Classify,
    /// Narrative retweet network and PageRank.
    Network {
        /// Keep only the n most active accounts.
        #[arg(long)]
        most_active: Option<usize>,
    },
    /// Block-model communities of the narrative network.
    Communities,
    /// Fit the outcome model and estimate per-account impact.
    Impact,
    /// Tables and histograms for the run.
    Report,
    /// Run every stage that is not up to date.
    All {
        /// Recompute stages even when up to date.
        #[arg(long)]
        force: bool,
    },
    /// Show which stages are up to date.
    Status,
    /// Joint impact of a source set: comma-separated ids, an id file, or a
    /// narrative JSON whose original posters become the sources.
    Estimand {
        #[arg(long)]
        sources: String,
    },
    /// Write a synthetic corpus and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Ingest => Stage::Ingest,
            Command::Topics => Stage::Topics,
            Command::SelectNarrative(_) => Stage::SelectNarrative,
            Command::Label => Stage::Label,
            Command::Featurize => Stage::Featurize,
            Command::Train => Stage::Train,
            Command::Classify => Stage::Classify,
            Command::Network { .. } => Stage::Network,
            Command::Communities => Stage::Communities,
            Command::Impact => Stage::Impact,
            Command::Report => Stage::Report,
            _ => return None,
        })
    }

    /// Subcommand flags expressed as config overrides.
    fn overrides(&self) -> Vec<String> {
        match self {
            Command::Network { most_active: Some(k) } => vec![format!("network.most_active={k}")],
            _ => Vec::new(),
        }
    }
}

/// Write the analyst's narrative choice into the config file so that later
/// commands, and `all`, see the same selection.
fn record_selection(config: &Path, n: &NarrativeArgs) -> Result<bool> {
    if n.topics.is_empty() && n.hashtag.is_none() && n.language.is_none() {
        return Ok(false);
    }
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut doc: DocumentMut = text.parse().with_context(|| format!("parsing {}", config.display()))?;
    let section = doc
        .entry("narrative")
        .or_insert_with(|| Item::Table(Table::new()))
        .as_table_mut()
        .context("`narrative` in the config is not a table")?;
    if let Some(l) = &n.language {
        section["language"] = value(l.as_str());
    }
    if let Some(h) = &n.hashtag {
        section["hashtag"] = value(h.as_str());
        section["topics"] = value(Array::new());
    } else if !n.topics.is_empty() {
        section.remove("hashtag");
        section["topics"] = value(n.topics.iter().map(|&t| t as i64).collect::<Array>());
    }
    std::fs::write(config, doc.to_string()).with_context(|| format!("writing {}", config.display()))?;
    Ok(true)
}

fn print_outcome(o: &StageOutcome) {
    if o.skipped {
        println!("{:<17} up to date", o.stage.name());
    } else {
        println!("{:<17} {}", o.stage.name(), o.summary);
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut overrides = cli.overrides.clone();
    overrides.extend(cli.command.overrides());
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    PipelineConfig::load(&cli.config, &overrides).with_context(|| format!("loading {}", cli.config.display()))
}

fn synth(out: &Path, seed: u64) -> Result<()> {
    let s = synth_corpus(&SynthCorpusSpec::default(), seed)?;
    s.write_to(out).with_context(|| format!("writing {}", out.display()))?;
    let config = out.join("config.toml");
    std::fs::write(&config, SYNTH_CONFIG.replace("SEED", &seed.to_string()))
        .with_context(|| format!("writing {}", config.display()))?;
    println!(
        "wrote {} accounts and {} tweets to {}",
        s.corpus.accounts.len(),
        s.corpus.tweets.len(),
        out.display()
    );
    println!("next: ioforge --config {} ingest", config.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Synth { out } = &cli.command {
        return synth(out, cli.seed.unwrap_or(0));
    }
    if let Command::SelectNarrative(n) = &cli.command {
        if record_selection(&cli.config, n)? {
            println!("narrative selection recorded in {}", cli.config.display());
        }
    }
    let cfg = load_config(cli)?;
    if let Some(stage) = cli.command.stage() {
        print_outcome(&run_stage(&cfg, stage)?);
        return Ok(());
    }
    match &cli.command {
        Command::All { force } => {
            for o in run_all(&cfg, *force)? {
                print_outcome(&o);
            }
        }
        Command::Status => {
            for stage in Stage::ALL {
                let state = if is_up_to_date(&cfg, stage)? { "up to date" } else { "pending" };
                println!("{:<17} {state}", stage.name());
            }
        }
        Command::Estimand { sources } => {
            let report = estimate_source_set(&cfg, &SourceSpec::parse(sources))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        _ => unreachable!("stage commands handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
