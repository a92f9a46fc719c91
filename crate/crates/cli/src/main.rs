//! `wmtom`: generate stories, inspect world models, run evaluation matrices
//! and k sweeps, and analyze reasoning trajectories.
//!
//! Exit codes: 0 on success, 1 on operational errors, 2 on usage errors.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand};
use serde_json::json;
use wmtom::analyzer::{self, WordScoreReport};
use wmtom::gen::{self, GenSpec};
use wmtom::harness::{self, Condition, MatrixEnv, MatrixOutput, Profile};
use wmtom::orchestrator::WmMode;
use wmtom::prompt::PromptTemplate;
use wmtom::provider::{set_network_denied, ProviderHandle};
use wmtom::story::{parse_story, Item, StorySource, TemplateGrammar};
use wmtom::trigger::{LexiconName, TriggerLexicon};
use wmtom::world::{self, StateScope, WorldModelSnapshot};

use crate::config::AppConfig;

#[derive(Debug, Parser)]
#[command(
    name = "wmtom",
    version,
    about = "World-state injection for theory-of-mind reasoning traces"
)]
struct Cli {
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded story corpus as item JSONL plus gold traces.
    Gen(GenArgs),
    /// Answer items under a single condition.
    Solve(SolveArgs),
    /// Print the world-state block of a story at a timestep.
    Wm(WmArgs),
    /// Run a condition matrix over items.
    Eval(EvalArgs),
    /// Run one condition at several maximum intervention counts.
    Sweep(SweepArgs),
    /// Score candidate trigger words over trajectories.
    Analyze(AnalyzeArgs),
    /// Inspect trigger lexicons.
    Lexicon {
        #[command(subcommand)]
        command: LexiconCommand,
    },
}

#[derive(Debug, Subcommand)]
enum LexiconCommand {
    /// Print a lexicon's entries, one per line.
    Dump {
        /// `ours`, `pv`, `be`, or a name from the config's `[lexicons]`.
        name: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of stories, with seeds `seed..seed+n`.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Emit exactly this many items instead of `n` whole stories.
    #[arg(long)]
    items: Option<usize>,
    /// Draw each story's shape from its seed.
    #[arg(long)]
    sampled: bool,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    rooms: Option<usize>,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    moves: Option<usize>,
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long)]
    tell_rate: Option<f64>,
    #[arg(long)]
    distract_rate: Option<f64>,
    #[arg(long)]
    exit_rate: Option<f64>,
    /// Do not force an exit-then-move pattern.
    #[arg(long)]
    no_pivot: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct ConditionArgs {
    /// Trigger lexicon (`ours`, `pv`, `be`, or a configured name).
    #[arg(long, default_value = "ours")]
    lexicon: String,
    #[arg(long)]
    min_gap: Option<u64>,
    #[arg(long)]
    wm_mode: Option<String>,
    #[arg(long, default_value = "cot")]
    template: String,
    /// Provider profile name.
    #[arg(long, default_value = "default")]
    provider: String,
}

#[derive(Debug, clap::Args)]
struct SolveArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use a built-in scripted model (`guidable[:n]`, `stubborn[:n]`)
    /// instead of a configured provider.
    #[arg(long)]
    script: Option<String>,
    #[command(flatten)]
    condition: ConditionArgs,
    /// Disable interventions.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct WmArgs {
    /// Story file, one event per line.
    #[arg(long)]
    story: PathBuf,
    /// Timestep (number of events applied); defaults to the last.
    #[arg(long)]
    at: Option<usize>,
    /// `strict` or `lenient`.
    #[arg(long, default_value = "lenient")]
    grammar: String,
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    #[arg(long)]
    items: PathBuf,
    /// Conditions as JSON (array) or TOML (`[[condition]]` tables).
    #[arg(long)]
    conditions: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct SweepArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// `1..5`, `1..=5` or `1,2,3`.
    #[arg(long, default_value = "1..5")]
    k: String,
    #[command(flatten)]
    condition: ConditionArgs,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct AnalyzeArgs {
    /// Trajectory JSONL or a harness `records.jsonl`.
    #[arg(long)]
    trajectories: PathBuf,
    /// Candidate words, one per line; defaults to every word in the corpus.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Words to drop before ranking, one per line.
    #[arg(long)]
    exclusions: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A problem with the invocation rather than with the work.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // Help and version exit 0; parse errors exit 2 with the synopsis.
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}\n\n{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Gen(a) => cmd_gen(a, json),
        Command::Solve(a) => cmd_solve(a, json),
        Command::Wm(a) => cmd_wm(a, json),
        Command::Eval(a) => cmd_eval(a, json),
        Command::Sweep(a) => cmd_sweep(a, json),
        Command::Analyze(a) => cmd_analyze(a, json),
        Command::Lexicon {
            command: LexiconCommand::Dump { name, config },
        } => cmd_lexicon_dump(&name, config, json),
    }
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    let cfg = match path {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if cfg.offline() {
        set_network_denied(true);
    }
    Ok(cfg)
}

fn out_dir(flag: Option<PathBuf>, cfg: &AppConfig) -> PathBuf {
    flag.unwrap_or_else(|| cfg.paths.out_dir.clone())
}

fn print_json(v: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("json serializes")
    );
}

fn cmd_gen(a: GenArgs, json: bool) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let base = GenSpec {
        n_agents: a.agents.unwrap_or(GenSpec::default().n_agents),
        n_rooms: a.rooms.unwrap_or(GenSpec::default().n_rooms),
        n_objects: a.objects.unwrap_or(GenSpec::default().n_objects),
        n_moves: a.moves.unwrap_or(GenSpec::default().n_moves),
        tell_rate: a.tell_rate.unwrap_or(GenSpec::default().tell_rate),
        distract_rate: a.distract_rate.unwrap_or(GenSpec::default().distract_rate),
        exit_rate: a.exit_rate.unwrap_or(GenSpec::default().exit_rate),
        max_question_order: a.max_order.unwrap_or(GenSpec::default().max_question_order),
        false_belief_pivot: !a.no_pivot,
        seed: a.seed,
    };
    base.validate().map_err(|e| usage(e.to_string()))?;

    let mut items: Vec<Item> = Vec::new();
    let mut traces = Vec::new();
    let mut seed = a.seed;
    loop {
        let done = match a.items {
            Some(n) => items.len() >= n,
            None => seed - a.seed >= a.n as u64,
        };
        if done {
            break;
        }
        let spec = if a.sampled {
            GenSpec::sampled(seed)
        } else {
            GenSpec {
                seed,
                ..base.clone()
            }
        };
        let (story, qs) = gen::generate(&spec);
        let mut new = gen::to_items(&story, &qs);
        if let Some(n) = a.items {
            new.truncate(n - items.len());
        }
        items.extend(new);
        traces.push(gen::gold_trace(&story));
        seed += 1;
    }

    let dir = out_dir(a.out, &cfg);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_items(&dir.join("items.jsonl"), &items)?;
    fs::write(
        dir.join("gold_traces.json"),
        serde_json::to_string_pretty(&traces)? + "\n",
    )?;
    if json {
        print_json(&json!({"items": items.len(), "stories": traces.len(), "out": dir}));
    } else {
        println!(
            "wrote {} items from {} stories to {}",
            items.len(),
            traces.len(),
            dir.display()
        );
    }
    Ok(())
}

fn write_items(path: &Path, items: &[Item]) -> Result<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn read_items(path: &Path) -> Result<Vec<Item>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

fn build_env(cfg: &AppConfig) -> Result<MatrixEnv> {
    let cache = cfg.paths.cache_dir();
    let mut profiles = BTreeMap::new();
    for (name, handle) in &cfg.providers {
        let provider = handle
            .connect(&cache)
            .with_context(|| format!("provider profile `{name}`"))?;
        profiles.insert(
            name.clone(),
            Profile {
                handle: handle.clone(),
                provider,
            },
        );
    }
    let mut lexicons = BTreeMap::new();
    for (name, path) in &cfg.lexicons {
        lexicons.insert(
            name.clone(),
            TriggerLexicon::load(LexiconName::Custom, path)?,
        );
    }
    Ok(MatrixEnv {
        profiles,
        lexicons,
        seeds: Vec::new(),
        backoff: Duration::from_millis(500),
    })
}

fn condition_from(args: &ConditionArgs, cfg: &AppConfig, id: &str, k: usize) -> Result<Condition> {
    let wm_mode = match args.wm_mode.as_deref() {
        None => cfg.wm_mode,
        Some("deterministic") => WmMode::Deterministic,
        Some("llm") => WmMode::Llm,
        Some(other) => return Err(usage(format!("unknown wm mode `{other}`"))),
    };
    Ok(Condition {
        id: id.into(),
        lexicon: Some(args.lexicon.clone()),
        k,
        min_gap: args.min_gap.unwrap_or(cfg.policy.min_gap),
        wm_mode,
        prompt_template: PromptTemplate::from_str(&args.template).map_err(usage)?,
        provider: args.provider.clone(),
    })
}

fn finish_matrix(out: &MatrixOutput, dir: &Path, json: bool) -> Result<()> {
    out.write(dir)
        .with_context(|| format!("writing results to {}", dir.display()))?;
    if json {
        print_json(&serde_json::to_value(&out.report)?);
    } else {
        print!("{}", out.report.to_markdown());
        if !out.manifest.exclusions.is_empty() {
            eprintln!(
                "{} runs excluded after transport failures (see manifest.json)",
                out.manifest.exclusions.len()
            );
        }
    }
    Ok(())
}

fn cmd_solve(a: SolveArgs, json: bool) -> Result<()> {
    let mut cfg = match (&a.config, &a.script) {
        (None, None) => return Err(usage("solve needs --config or --script")),
        (Some(p), _) => load_config(Some(p))?,
        (None, Some(_)) => AppConfig::default(),
    };
    if let Some(script) = &a.script {
        cfg.providers.insert(
            a.condition.provider.clone(),
            ProviderHandle::scripted("scripted", script),
        );
        if cfg.offline() {
            set_network_denied(true);
        }
    }
    let mut items = read_items(&a.items)?;
    if let Some(n) = a.limit {
        items.truncate(n);
    }
    let k = if a.baseline {
        0
    } else {
        a.k.unwrap_or(cfg.policy.k)
    };
    let mut cond = condition_from(
        &a.condition,
        &cfg,
        if a.baseline { "baseline" } else { "solve" },
        k,
    )?;
    if a.baseline {
        cond.lexicon = None;
    }
    let env = build_env(&cfg)?;
    let out = harness::run_matrix(&items, &[cond], &env, cfg.workers)?;
    let dir = out_dir(a.out, &cfg);
    out.write(&dir)?;
    if json {
        let rows: Vec<_> = out
            .records
            .iter()
            .map(|r| json!({"item_id": r.item_id, "answer": r.answer, "gold": r.gold, "correct": r.correct,
                             "interventions": r.interventions.len(), "tokens": r.tokens.total}))
            .collect();
        print_json(&json!(rows));
    } else {
        for r in &out.records {
            let mark = if r.correct { "ok " } else { "err" };
            println!(
                "{mark} {}  answer={}  gold={}  interventions={}  tokens={}",
                r.item_id,
                r.answer,
                r.gold,
                r.interventions.len(),
                r.tokens.total
            );
        }
        print!("{}", out.report.to_markdown());
    }
    Ok(())
}

fn cmd_wm(a: WmArgs, json: bool) -> Result<()> {
    let grammar = TemplateGrammar::from_id(&a.grammar).map_err(|e| usage(e.to_string()))?;
    let text =
        fs::read_to_string(&a.story).with_context(|| format!("reading {}", a.story.display()))?;
    let lines: Vec<&str> = text.lines().collect();
    let id = a
        .story
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("story");
    let story = parse_story(id, &lines, grammar, StorySource::Custom)?;
    let t = a.at.unwrap_or(story.events.len());
    if t > story.events.len() {
        return Err(usage(format!(
            "--at {t} is past the story's {} events",
            story.events.len()
        )));
    }
    let snap = if t == 0 {
        WorldModelSnapshot::empty(world::DEFAULT_MAX_ORDER)
    } else {
        world::replay(&story)?.swap_remove(t - 1)
    };
    if json {
        println!("{}", snap.to_json());
    } else {
        println!("{}", world::render_information(&snap, &StateScope::Full));
    }
    Ok(())
}

fn read_conditions(path: &Path) -> Result<Vec<Condition>> {
    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct File {
        condition: Vec<Condition>,
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let conds = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str::<File>(&text)?.condition
    } else {
        serde_json::from_str(&text)?
    };
    if conds.is_empty() {
        bail!("{} defines no conditions", path.display());
    }
    Ok(conds)
}

fn cmd_eval(a: EvalArgs, json: bool) -> Result<()> {
    if !a.config.exists() {
        return Err(usage(format!(
            "config file {} does not exist",
            a.config.display()
        )));
    }
    let cfg = load_config(Some(&a.config))?;
    let items = read_items(&a.items)?;
    let conditions = read_conditions(&a.conditions)?;
    let env = build_env(&cfg)?;
    let workers = a.workers.unwrap_or(cfg.workers);
    if workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    let out = harness::run_matrix(&items, &conditions, &env, workers)?;
    finish_matrix(&out, &out_dir(a.out, &cfg), json)
}

/// Parses `1..5` (inclusive), `1..=5` or `1,2,3`.
fn parse_k_values(s: &str) -> Result<Vec<usize>> {
    let bad = || usage(format!("bad --k `{s}`; expected 1..5 or 1,2,3"));
    if let Some((lo, hi)) = s.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        let (lo, hi): (usize, usize) = (
            lo.trim().parse().map_err(|_| bad())?,
            hi.trim().parse().map_err(|_| bad())?,
        );
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    let ks: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    if ks.is_empty() {
        return Err(bad());
    }
    Ok(ks)
}

fn cmd_sweep(a: SweepArgs, json: bool) -> Result<()> {
    let ks = parse_k_values(&a.k)?;
    if !a.config.exists() {
        return Err(usage(format!(
            "config file {} does not exist",
            a.config.display()
        )));
    }
    let cfg = load_config(Some(&a.config))?;
    let items = read_items(&a.items)?;
    let base = condition_from(&a.condition, &cfg, "sweep", cfg.policy.k)?;
    let env = build_env(&cfg)?;
    let out = harness::k_sweep(&items, &base, &ks, &env, a.workers.unwrap_or(cfg.workers))?;
    finish_matrix(&out, &out_dir(a.out, &cfg), json)
}

fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}

fn corpus_vocabulary(trajectories: &[analyzer::Trajectory]) -> Vec<String> {
    let words: BTreeSet<String> = trajectories
        .iter()
        .flat_map(|t| {
            t.text
                .split(|c: char| !c.is_alphabetic())
                .map(str::to_lowercase)
                .collect::<Vec<_>>()
        })
        .filter(|w| w.chars().count() >= 3)
        .collect();
    words.into_iter().collect()
}

fn cmd_analyze(a: AnalyzeArgs, json: bool) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let window = a.window.unwrap_or(cfg.analysis.window);
    if window == 0 {
        return Err(usage("--window must be positive"));
    }
    let trajectories = analyzer::load_trajectories(&a.trajectories)?;
    let vocab = match &a.vocab {
        Some(p) => read_word_list(p)?,
        None => corpus_vocabulary(&trajectories),
    };
    let exclusions = match &a.exclusions {
        Some(p) => read_word_list(p)?,
        None => Vec::new(),
    };
    let embedder = cfg.analysis.embedding.connect(&cfg.paths.cache_dir())?;
    let ours = TriggerLexicon::ours();
    let mut lexicons = vec![
        ours.clone(),
        TriggerLexicon::builtin(LexiconName::PauseValidation)?,
        TriggerLexicon::builtin(LexiconName::BranchExtension)?,
    ];
    for path in cfg.lexicons.values() {
        lexicons.push(TriggerLexicon::load(LexiconName::Custom, path)?);
    }
    let report = WordScoreReport {
        window,
        confusion: analyzer::confusion_stats(&trajectories, &ours),
        candidates: analyzer::rank_candidates(
            &trajectories,
            &vocab,
            window,
            embedder.as_ref(),
            &exclusions,
        )?,
        lexicons: analyzer::compare_lexicons(&trajectories, &lexicons, window, embedder.as_ref())?,
    };
    let dir = out_dir(a.out, &cfg);
    report.write(&dir)?;
    if json {
        print_json(&serde_json::to_value(&report)?);
    } else {
        println!(
            "{:<20} {:>6} {:>10} {:>10}",
            "word", "count", "similarity", "perplexity"
        );
        for s in &report.candidates {
            let ppl = s
                .mean_perplexity
                .map(|p| format!("{p:.4}"))
                .unwrap_or_else(|| "-".into());
            println!(
                "{:<20} {:>6} {:>10.4} {:>10}",
                s.word, s.occurrences, s.mean_context_similarity, ppl
            );
        }
        println!(
            "wrote wordscores.json and wordscores.csv to {}",
            dir.display()
        );
    }
    Ok(())
}

fn cmd_lexicon_dump(name: &str, config: Option<PathBuf>, json: bool) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    let lex = match cfg.lexicons.get(name) {
        Some(path) => TriggerLexicon::load(LexiconName::Custom, path)?,
        None => {
            let n = LexiconName::from_str(name).map_err(|e| usage(e.to_string()))?;
            TriggerLexicon::builtin(n).map_err(|e| usage(e.to_string()))?
        }
    };
    if json {
        print_json(&json!({"name": name, "entries": lex.entries()}));
    } else {
        print!("{}", lex.dump());
    }
    Ok(())
}
