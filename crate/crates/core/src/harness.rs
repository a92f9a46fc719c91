//! Condition matrices: run every item under every condition, then reduce
//! the run records into per-dataset accuracy and token tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::orchestrator::{ItemRunner, RunError, RunRecord, WmMode, WmSource};
use crate::prompt::PromptTemplate;
use crate::provider::{cache_key, ChatProvider, ProviderHandle};
use crate::story::{Item, Question, Story, StoryError};
use crate::trigger::{InterventionPolicy, LexiconError, LexiconName, TriggerLexicon};

/// Extra attempts for an item whose run failed in transport.
pub const TRANSPORT_REQUEUES: usize = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("item {id}: {source}")]
    BadItem { id: String, source: StoryError },
    #[error("condition `{condition}` uses unknown provider profile `{profile}`")]
    UnknownProfile { condition: String, profile: String },
    #[error("condition `{condition}`: {source}")]
    Lexicon {
        condition: String,
        source: LexiconError,
    },
    #[error("duplicate condition id `{0}`")]
    DuplicateCondition(String),
    #[error("no conditions given")]
    NoConditions,
    #[error("k sweep needs at least one k value")]
    EmptySweep,
    #[error("workers must be at least 1")]
    NoWorkers,
    #[error("item {item} under `{condition}`")]
    Run {
        item: String,
        condition: String,
        source: RunError,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn default_k() -> usize {
    InterventionPolicy::default().k
}
fn default_min_gap() -> u64 {
    InterventionPolicy::default().min_gap
}
fn default_profile() -> String {
    "default".into()
}

/// One column of the evaluation matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub id: String,
    /// Built-in (`ours`, `pv`, `be`) or configured lexicon name; `None`
    /// disables interventions.
    #[serde(default)]
    pub lexicon: Option<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_min_gap")]
    pub min_gap: u64,
    #[serde(default)]
    pub wm_mode: WmMode,
    #[serde(default)]
    pub prompt_template: PromptTemplate,
    /// Provider profile name.
    #[serde(default = "default_profile")]
    pub provider: String,
}

impl Condition {
    pub fn baseline(id: &str) -> Self {
        Self {
            id: id.into(),
            lexicon: None,
            k: 0,
            min_gap: default_min_gap(),
            wm_mode: WmMode::Deterministic,
            prompt_template: PromptTemplate::default(),
            provider: default_profile(),
        }
    }

    pub fn intervention(id: &str, lexicon: &str, k: usize) -> Self {
        Self {
            lexicon: Some(lexicon.into()),
            k,
            ..Self::baseline(id)
        }
    }

    /// No interventions can happen under this condition.
    pub fn is_baseline(&self) -> bool {
        self.lexicon.is_none() || self.k == 0
    }

    fn policy(&self) -> InterventionPolicy {
        InterventionPolicy {
            k: self.k,
            min_gap: self.min_gap,
        }
    }
}

/// A resolved provider profile.
#[derive(Clone)]
pub struct Profile {
    pub handle: ProviderHandle,
    pub provider: Arc<dyn ChatProvider>,
}

/// Everything a matrix run needs besides items and conditions.
#[derive(Clone, Default)]
pub struct MatrixEnv {
    pub profiles: BTreeMap<String, Profile>,
    /// Named lexicons from configuration; built-ins need no entry.
    pub lexicons: BTreeMap<String, TriggerLexicon>,
    /// Generator seeds behind the items, recorded in the manifest.
    pub seeds: Vec<u64>,
    /// Base delay between retries of a failed stream.
    pub backoff: Duration,
}

impl MatrixEnv {
    fn lexicon(&self, cond: &Condition) -> Result<Option<TriggerLexicon>, HarnessError> {
        let Some(name) = &cond.lexicon else {
            return Ok(None);
        };
        if let Some(l) = self.lexicons.get(name) {
            return Ok(Some(l.clone()));
        }
        LexiconName::from_str(name)
            .and_then(TriggerLexicon::builtin)
            .map(Some)
            .map_err(|source| HarnessError::Lexicon {
                condition: cond.id.clone(),
                source,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub condition_id: String,
    pub n: usize,
    pub correct: usize,
    /// Percent, rounded half-up to two decimals.
    pub accuracy: f64,
    /// Mean total tokens, rounded half-up.
    pub mean_tokens: u64,
    /// Against the same dataset's baseline row; `None` without one.
    pub delta_acc: Option<f64>,
    pub delta_tokens: Option<i64>,
    #[serde(skip)]
    accuracy_hundredths: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

/// `round(num / den)` with halves rounded up; `den > 0`.
pub fn div_round_half_up(num: u64, den: u64) -> u64 {
    (2 * num + den) / (2 * den)
}

/// Accuracy in hundredths of a percent.
pub fn accuracy_hundredths(correct: usize, n: usize) -> u64 {
    if n == 0 {
        0
    } else {
        div_round_half_up(10_000 * correct as u64, n as u64)
    }
}

impl Report {
    /// Aggregates records per (dataset, condition). Row order follows the
    /// first appearance of each dataset, then `conditions` order.
    pub fn from_records(records: &[RunRecord], conditions: &[Condition]) -> Self {
        let mut datasets: Vec<&str> = Vec::new();
        for r in records {
            if !datasets.contains(&r.dataset.as_str()) {
                datasets.push(&r.dataset);
            }
        }
        let baseline = conditions
            .iter()
            .find(|c| c.is_baseline())
            .map(|c| c.id.as_str());
        let mut rows = Vec::new();
        for ds in datasets {
            let mut ds_rows: Vec<ReportRow> = Vec::new();
            for c in conditions {
                let rs: Vec<&RunRecord> = records
                    .iter()
                    .filter(|r| r.dataset == ds && r.condition_id == c.id)
                    .collect();
                if rs.is_empty() {
                    continue;
                }
                let n = rs.len();
                let correct = rs.iter().filter(|r| r.correct).count();
                let hundredths = accuracy_hundredths(correct, n);
                let total: u64 = rs.iter().map(|r| r.tokens.total).sum();
                ds_rows.push(ReportRow {
                    dataset: ds.to_string(),
                    condition_id: c.id.clone(),
                    n,
                    correct,
                    accuracy: hundredths as f64 / 100.0,
                    mean_tokens: div_round_half_up(total, n as u64),
                    delta_acc: None,
                    delta_tokens: None,
                    accuracy_hundredths: hundredths,
                });
            }
            if let Some(base) = baseline
                .and_then(|b| ds_rows.iter().find(|r| r.condition_id == b))
                .cloned()
            {
                for r in &mut ds_rows {
                    r.delta_acc = Some(
                        (r.accuracy_hundredths as i64 - base.accuracy_hundredths as i64) as f64
                            / 100.0,
                    );
                    r.delta_tokens = Some(r.mean_tokens as i64 - base.mean_tokens as i64);
                }
            }
            rows.extend(ds_rows);
        }
        Self { rows }
    }

    /// Markdown table with arrows on non-zero deltas.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from(
            "| dataset | condition | n | accuracy | Δacc | mean tokens | Δtokens |\n|---|---|---:|---:|---:|---:|---:|\n",
        );
        for r in &self.rows {
            let dacc = match r.delta_acc {
                Some(d) if d > 0.0 => format!("↑{d:.2}"),
                Some(d) if d < 0.0 => format!("↓{:.2}", -d),
                Some(_) => "0.00".into(),
                None => "—".into(),
            };
            let dtok = match r.delta_tokens {
                Some(d) if d > 0 => format!("↑{d}"),
                Some(d) if d < 0 => format!("↓{}", -d),
                Some(_) => "0".into(),
                None => "—".into(),
            };
            s.push_str(&format!(
                "| {} | {} | {} | {:.2} | {dacc} | {} | {dtok} |\n",
                r.dataset, r.condition_id, r.n, r.accuracy, r.mean_tokens
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub item_id: String,
    pub condition_id: String,
    pub attempts: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    /// Hash of conditions, provider profiles and lexicon contents.
    pub config_hash: String,
    /// Hash of the item list.
    pub items_hash: String,
    pub n_items: usize,
    pub seeds: Vec<u64>,
    pub conditions: Vec<Condition>,
    pub providers: BTreeMap<String, ProviderHandle>,
    pub lexicons: BTreeMap<String, Vec<String>>,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Debug, Clone)]
pub struct MatrixOutput {
    pub report: Report,
    /// Ordered by condition, then item.
    pub records: Vec<RunRecord>,
    pub manifest: Manifest,
}

impl MatrixOutput {
    /// Writes `report.json`, `report.md`, `records.jsonl` and
    /// `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), pretty(&self.report))?;
        fs::write(dir.join("report.md"), self.report.to_markdown())?;
        fs::write(dir.join("manifest.json"), pretty(&self.manifest))?;
        let mut lines = String::new();
        for r in &self.records {
            lines.push_str(&serde_json::to_string(r).expect("record serializes"));
            lines.push('\n');
        }
        fs::write(dir.join("records.jsonl"), lines)?;
        Ok(())
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes") + "\n"
}

struct Job<'a> {
    item: &'a Item,
    story: &'a Story,
    question: &'a Question,
    condition: usize,
}

fn run_job(
    job: &Job<'_>,
    cond: &Condition,
    profile: &Profile,
    lexicon: Option<&TriggerLexicon>,
    backoff: Duration,
) -> Result<RunRecord, RunError> {
    let mut runner = ItemRunner::new(profile.provider.as_ref(), &profile.handle.model);
    runner.params = profile.handle.params.clone();
    runner.policy = cond.policy();
    runner.lexicon = lexicon;
    runner.template = cond.prompt_template;
    runner.condition_id = cond.id.clone();
    runner.backoff = backoff;
    runner.wm = match cond.wm_mode {
        WmMode::Deterministic => WmSource::Deterministic,
        WmMode::Llm => WmSource::Llm {
            provider: profile.provider.as_ref(),
            model: &profile.handle.model,
            params: &profile.handle.params,
        },
    };
    runner.run_item(&job.item.id, &job.item.dataset, job.story, job.question)
}

/// One job's outcome; failures carry the attempt count.
type Slot = Mutex<Option<Result<RunRecord, (usize, RunError)>>>;

/// Evaluates every item under every condition on a pool of `workers`
/// threads. Transport failures are retried up to [`TRANSPORT_REQUEUES`]
/// times and then excluded; any other failure aborts the run.
pub fn run_matrix(
    items: &[Item],
    conditions: &[Condition],
    env: &MatrixEnv,
    workers: usize,
) -> Result<MatrixOutput, HarnessError> {
    if conditions.is_empty() {
        return Err(HarnessError::NoConditions);
    }
    if workers == 0 {
        return Err(HarnessError::NoWorkers);
    }
    for (i, c) in conditions.iter().enumerate() {
        if conditions[..i].iter().any(|o| o.id == c.id) {
            return Err(HarnessError::DuplicateCondition(c.id.clone()));
        }
        if !env.profiles.contains_key(&c.provider) {
            return Err(HarnessError::UnknownProfile {
                condition: c.id.clone(),
                profile: c.provider.clone(),
            });
        }
    }
    let lexicons: Vec<Option<TriggerLexicon>> = conditions
        .iter()
        .map(|c| env.lexicon(c))
        .collect::<Result<_, _>>()?;
    let parsed: Vec<(Story, Question)> = items
        .iter()
        .map(|it| {
            it.to_story_question()
                .map_err(|source| HarnessError::BadItem {
                    id: it.id.clone(),
                    source,
                })
        })
        .collect::<Result<_, _>>()?;

    let jobs: Vec<Job<'_>> = (0..conditions.len())
        .flat_map(|c| {
            items
                .iter()
                .zip(&parsed)
                .map(move |(item, (story, question))| Job {
                    item,
                    story,
                    question,
                    condition: c,
                })
        })
        .collect();
    let results: Vec<Slot> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let abort = std::sync::atomic::AtomicBool::new(false);

    std::thread::scope(|s| {
        for _ in 0..workers.min(jobs.len()).max(1) {
            s.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let cond = &conditions[job.condition];
                let profile = &env.profiles[&cond.provider];
                let lexicon = lexicons[job.condition].as_ref();
                let mut attempts = 0;
                let outcome = loop {
                    attempts += 1;
                    match run_job(job, cond, profile, lexicon, env.backoff) {
                        Err(e) if e.is_transport() && attempts <= TRANSPORT_REQUEUES => continue,
                        Ok(r) => break Ok(r),
                        Err(e) => break Err((attempts, e)),
                    }
                };
                if matches!(&outcome, Err((_, e)) if !e.is_transport()) {
                    abort.store(true, Ordering::Relaxed);
                }
                *results[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(outcome);
            });
        }
    });

    let mut records = Vec::with_capacity(jobs.len());
    let mut exclusions = Vec::new();
    for (job, slot) in jobs.iter().zip(results) {
        let cond = &conditions[job.condition];
        match slot.into_inner().unwrap_or_else(|e| e.into_inner()) {
            Some(Ok(r)) => records.push(r),
            Some(Err((attempts, e))) if e.is_transport() => exclusions.push(Exclusion {
                item_id: job.item.id.clone(),
                condition_id: cond.id.clone(),
                attempts,
                error: e.to_string(),
            }),
            Some(Err((_, source))) => {
                return Err(HarnessError::Run {
                    item: job.item.id.clone(),
                    condition: cond.id.clone(),
                    source,
                })
            }
            // Skipped after another job aborted the run.
            None => {}
        }
    }

    let report = Report::from_records(&records, conditions);
    let manifest = manifest(items, conditions, env, &lexicons, exclusions);
    Ok(MatrixOutput {
        report,
        records,
        manifest,
    })
}

fn manifest(
    items: &[Item],
    conditions: &[Condition],
    env: &MatrixEnv,
    lexicons: &[Option<TriggerLexicon>],
    exclusions: Vec<Exclusion>,
) -> Manifest {
    let used: BTreeMap<String, Vec<String>> = conditions
        .iter()
        .zip(lexicons)
        .filter_map(|(c, l)| Some((c.lexicon.clone()?, l.as_ref()?.entries().to_vec())))
        .collect();
    let providers: BTreeMap<String, ProviderHandle> = conditions
        .iter()
        .map(|c| (c.provider.clone(), env.profiles[&c.provider].handle.clone()))
        .collect();
    let config_hash = cache_key(&json!({
        "conditions": conditions,
        "providers": providers,
        "lexicons": used,
    }));
    let items_hash = cache_key(&serde_json::to_value(items).expect("items serialize"));
    Manifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash,
        items_hash,
        n_items: items.len(),
        seeds: env.seeds.clone(),
        conditions: conditions.to_vec(),
        providers,
        lexicons: used,
        exclusions,
    }
}

/// The conditions of a k sweep: a baseline, then `base` once per k in the
/// given order.
pub fn sweep_conditions(base: &Condition, k_values: &[usize]) -> Vec<Condition> {
    let mut out = vec![Condition {
        id: "baseline".into(),
        lexicon: None,
        k: 0,
        ..base.clone()
    }];
    out.extend(k_values.iter().map(|&k| Condition {
        id: format!("k={k}"),
        k,
        ..base.clone()
    }));
    out
}

pub fn k_sweep(
    items: &[Item],
    base: &Condition,
    k_values: &[usize],
    env: &MatrixEnv,
    workers: usize,
) -> Result<MatrixOutput, HarnessError> {
    if k_values.is_empty() {
        return Err(HarnessError::EmptySweep);
    }
    run_matrix(items, &sweep_conditions(base, k_values), env, workers)
}
