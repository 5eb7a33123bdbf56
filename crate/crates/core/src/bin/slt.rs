use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use slt_core::chart::Engine;
use slt_core::corpus::{group_by_tagsequence, lexicon_tagger, split_utterances, Edit, SplitConfig};
use slt_core::ebl::{specialize, CutCriteria, SpecializedGrammar};
use slt_core::grammar::load_grammar;
use slt_core::lattice::{conflate_nbest, linear_lattice, parse_nbest, Lattice};
use slt_core::pipeline::{bench, treebank_derivations, treebank_id, ResourcePaths, Resources};
use slt_core::pruner::train;
use slt_core::service::{serve, ServiceConfig};
use slt_core::treebanker::read_treebank;

#[derive(Parser)]
#[command(name = "slt", version, about = "Staged robust parsing and anytime translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a sentence or lattice and print the stage outputs as JSON.
    Parse(ParseArgs),
    /// Translate anytime-style and print every emitted iteration.
    Translate(TranslateArgs),
    /// Merge an N-best list into a lattice.
    Conflate {
        nbest: PathBuf,
        #[arg(long, default_value_t = 10)]
        n_max: usize,
    },
    /// Build the representative subcorpus report.
    Subcorpus {
        #[arg(long, default_value = "grammar.slt")]
        grammar: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// JSON list of class edits applied before reporting.
        #[arg(long)]
        edits: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
    /// Train the constituent pruning model from a treebank.
    TrainPrune {
        #[arg(long, default_value = "grammar.slt")]
        grammar: PathBuf,
        #[arg(long)]
        treebank: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Corpus name recorded in the model header.
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a specialized grammar from treebank derivations.
    Specialize {
        #[arg(long, default_value = "grammar.slt")]
        grammar: PathBuf,
        #[arg(long)]
        treebank: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "NP")]
        cuts: Vec<String>,
        #[arg(long, default_value_t = 1)]
        min_freq: u32,
        #[arg(long)]
        lexical_frontier: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the LR table of a specialized grammar.
    CompileLr {
        specialized: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time original chart parsing against specialized GLR parsing.
    Bench {
        #[arg(long, default_value = "grammar.slt")]
        grammar: PathBuf,
        #[arg(long)]
        specialized: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
    },
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Chart,
    Lr,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long, conflicts_with_all = ["lattice", "nbest"])]
    text: Option<String>,
    /// Lattice JSON file.
    #[arg(long, conflicts_with = "nbest")]
    lattice: Option<PathBuf>,
    /// N-best file, conflated into a lattice first.
    #[arg(long)]
    nbest: Option<PathBuf>,
}

impl InputArgs {
    fn lattice(&self) -> anyhow::Result<Lattice> {
        match (&self.text, &self.lattice, &self.nbest) {
            (Some(t), _, _) => Ok(linear_lattice(t, 0.0)?),
            (_, Some(p), _) => Ok(serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?),
            (_, _, Some(p)) => Ok(conflate_nbest(&parse_nbest(&read(p)?)?, usize::MAX)?),
            _ => bail!("give one of --text, --lattice or --nbest"),
        }
    }
}

#[derive(Args)]
struct ResourceArgs {
    #[arg(long, default_value = "grammar.slt")]
    grammar: PathBuf,
    #[arg(long)]
    specialized: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    prefs: Option<PathBuf>,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Pruning threshold for both own and pair scores.
    #[arg(long)]
    theta: Option<f64>,
}

impl ResourceArgs {
    fn paths(&self) -> ResourcePaths {
        ResourcePaths {
            grammar: self.grammar.clone(),
            specialized: self.specialized.clone(),
            lexicon: self.lexicon.clone(),
            prefs: self.prefs.clone(),
            model: self.model.clone(),
        }
    }

    fn load(&self) -> anyhow::Result<Resources> {
        let mut res = Resources::load(&self.paths())?;
        res.parse.engine = match (self.engine, &res.specialized) {
            (Some(EngineArg::Chart), _) | (None, None) => Engine::Chart,
            (Some(EngineArg::Lr), _) | (None, Some(_)) => Engine::Lr,
        };
        if let Some(t) = self.theta {
            res.parse.prune.theta_own = t;
            res.parse.prune.theta_pair = t;
            res.parse.prune.validate().map_err(anyhow::Error::msg)?;
        }
        Ok(res)
    }
}

#[derive(Args)]
struct ParseArgs {
    #[command(flatten)]
    res: ResourceArgs,
    #[command(flatten)]
    input: InputArgs,
    /// Print every stage snapshot rather than the final analyses only.
    #[arg(long)]
    stages: bool,
}

#[derive(Args)]
struct TranslateArgs {
    #[command(flatten)]
    res: ResourceArgs,
    #[command(flatten)]
    input: InputArgs,
    /// Milliseconds.
    #[arg(long, default_value_t = 2000)]
    time_limit: u64,
    /// Surface translation only.
    #[arg(long)]
    surface_only: bool,
    #[arg(long)]
    deep_bonus: Option<f64>,
}

#[derive(Args)]
struct ServeArgs {
    /// JSON service configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    grammar: Option<PathBuf>,
    #[arg(long)]
    specialized: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    prefs: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    time_limit_ms: Option<u64>,
    #[arg(long)]
    snapshot_every: Option<u64>,
    /// Leave out the synthetic 154-analysis sentence.
    #[arg(long)]
    no_fixture: bool,
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => emit(text),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Parse(a) => {
            let res = a.res.load()?;
            let out = res.parse(&a.input.lattice()?)?;
            let v = if a.stages {
                serde_json::to_value(&out)?
            } else {
                let last = out.stages.last().context("no stages")?;
                json!({"analyses": out.analyses, "fragments": last.fragments, "truncated": out.truncated})
            };
            emit(&format!("{}\n", serde_json::to_string_pretty(&v)?))?;
        }
        Command::Translate(a) => {
            let mut res = a.res.load()?;
            res.translate.deep = !a.surface_only;
            if let Some(b) = a.deep_bonus {
                res.translate.deep_bonus = b;
            }
            let it = res.translate(&a.input.lattice()?, Duration::from_millis(a.time_limit))?;
            emit(&format!("{}\n", serde_json::to_string_pretty(&json!({"iterations": it}))?))?;
        }
        Command::Conflate { nbest, n_max } => {
            let lattice = conflate_nbest(&parse_nbest(&read(&nbest)?)?, n_max)?;
            emit(&format!("{}\n", lattice.to_json()))?;
        }
        Command::Subcorpus {
            grammar,
            corpus,
            edits,
            format,
        } => {
            let g = load_grammar(&read(&grammar)?)?;
            let lines: Vec<String> = read(&corpus)?.lines().map(String::from).collect();
            let tagger = lexicon_tagger(&g);
            let mut store = group_by_tagsequence(split_utterances(&lines, &SplitConfig::default(), &tagger));
            if let Some(p) = edits {
                let edits: Vec<Edit> = serde_json::from_str(&read(&p)?)?;
                store.regroup(&edits)?;
            }
            let report = store.report();
            match format {
                Format::Tsv => emit(&report.to_tsv())?,
                Format::Json => emit(&format!("{}\n", serde_json::to_string_pretty(&report)?))?,
            }
        }
        Command::TrainPrune {
            grammar,
            treebank,
            alpha,
            corpus,
            out,
        } => {
            anyhow::ensure!(alpha > 0.0, "--alpha must be positive");
            let g = load_grammar(&read(&grammar)?)?;
            let entries = read_treebank(&read(&treebank)?).map_err(anyhow::Error::msg)?;
            let name = corpus.unwrap_or_else(|| treebank_id(&entries));
            let (model, report) = train(&entries, &g, &name, alpha);
            std::fs::write(&out, model.to_jsonl()).with_context(|| format!("writing {}", out.display()))?;
            eprintln!(
                "trained on {}/{} sentences, {} discriminants",
                report.used,
                report.sentences,
                model.stats.len()
            );
            for (id, why) in &report.flagged {
                eprintln!("flagged {id}: {why}");
            }
        }
        Command::Specialize {
            grammar,
            treebank,
            cuts,
            min_freq,
            lexical_frontier,
            out,
        } => {
            let g = load_grammar(&read(&grammar)?)?;
            let entries = read_treebank(&read(&treebank)?).map_err(anyhow::Error::msg)?;
            let (derivs, skipped) = treebank_derivations(&entries, &g, "UNK");
            for (id, why) in &skipped {
                eprintln!("skipped {id}: {why}");
            }
            anyhow::ensure!(!derivs.is_empty(), "treebank has no usable derivations");
            let crit = CutCriteria {
                cut_categories: cuts.into_iter().collect(),
                include_lexical_frontier: lexical_frontier,
                min_freq,
            };
            let spec = specialize(&derivs, &g, &treebank_id(&entries), &crit)?;
            std::fs::write(&out, spec.serialize(&g)).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("{} macro-rules from {} derivations", spec.macros.len(), derivs.len());
        }
        Command::CompileLr { specialized, out } => {
            let (_, spec) = SpecializedGrammar::load(&read(&specialized)?)?;
            let mut text = spec.table().to_json();
            text.push('\n');
            write_or_print(out.as_deref(), &text)?;
        }
        Command::Bench {
            grammar,
            specialized,
            corpus,
            repeat,
        } => {
            let g = load_grammar(&read(&grammar)?)?;
            let (g2, spec) = SpecializedGrammar::load(&read(&specialized)?)?;
            if g2.id() != g.id() {
                bail!("{} was not specialized from {}", specialized.display(), grammar.display());
            }
            let sentences: Vec<String> = read(&corpus)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            emit(&bench(&g, &spec, &sentences, repeat).to_tsv())?;
        }
        Command::Serve(a) => {
            let mut cfg: ServiceConfig = match &a.config {
                Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => ServiceConfig::default(),
            };
            if let Some(v) = a.listen {
                cfg.listen = v;
            }
            if let Some(v) = a.data_dir {
                cfg.data_dir = v;
            }
            if let Some(v) = a.grammar {
                cfg.resources.grammar = v;
            }
            if a.specialized.is_some() {
                cfg.resources.specialized = a.specialized;
            }
            if a.lexicon.is_some() {
                cfg.resources.lexicon = a.lexicon;
            }
            if a.prefs.is_some() {
                cfg.resources.prefs = a.prefs;
            }
            if a.model.is_some() {
                cfg.resources.model = a.model;
            }
            if a.corpus.is_some() {
                cfg.corpus = a.corpus;
            }
            if let Some(v) = a.time_limit_ms {
                cfg.time_limit_ms = v;
            }
            if let Some(v) = a.snapshot_every {
                cfg.snapshot_every = v;
            }
            if a.no_fixture {
                cfg.fixture = false;
            }
            if cfg.resources.grammar.as_os_str().is_empty() {
                cfg.resources.grammar = PathBuf::from("grammar.slt");
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(cfg))?;
        }
    }
    Ok(())
}

/// Writes to stdout, treating a closed pipe as the reader being done.
fn emit(s: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(s.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
