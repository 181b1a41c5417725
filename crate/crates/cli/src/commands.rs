use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use reclaim::answer::AnswerRecord;
use reclaim::dataset::{
    build_training_samples, dataset_stats, filter_citations, split_for_claim_model, FilterReport, RawRecord, RawSample,
    Removal, RemovalReason, TrainingRecord, TrainingSample,
};
use reclaim::eval::{evaluate_run, render_table, AlceRecord, EvalExample, EvalOptions, MetricsReport};
use reclaim::genpipe::{generate_batch, tokenizer_for, GenError, GenInput, ManifestRecord};
use reclaim::trie::build_prefix_tree;
use reclaim::{Exact, GenMode, Scalar};
use serde::Serialize;

use crate::config::{config_digest, file_digest, AppConfig, ConfigError};
use crate::io::{append_jsonl, ids_in, read_jsonl, read_jsonl_if_exists, sibling, write_json, write_jsonl};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_UNAVAILABLE: i32 = 4;
pub const EXIT_MALFORMED: i32 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn from_config(e: ConfigError) -> Self {
        let code = if e.is_validation() { EXIT_VALIDATION } else { EXIT_USAGE };
        Self::new(code, e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: EXIT_OTHER, error }
    }
}

type CmdResult = Result<(), Failure>;

fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure::new(EXIT_VALIDATION, e)
}

fn pending_failure(stage: &str, pending: usize, cause: Option<reclaim::backends::BackendError>) -> Failure {
    let cause = cause.map_or_else(String::new, |e| format!(": {e}"));
    Failure::new(
        EXIT_UNAVAILABLE,
        anyhow!("{stage}: {pending} sample(s) left pending; rerun the same command to resume{cause}"),
    )
}

pub fn build_dataset(config: &AppConfig, input: &Path, output: &Path, dropped: Option<PathBuf>) -> CmdResult {
    let dropped = dropped.unwrap_or_else(|| sibling(output, ".dropped.jsonl"));
    let segmenter = config.segmenter()?;
    let records: Vec<RawRecord> = read_jsonl(input).map_err(validation)?;
    let mut done = ids_in(output)?;
    done.extend(ids_in(&dropped)?);
    let mut raws = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let raw = RawSample::from_record(r, i, &segmenter).map_err(validation)?;
        if !done.contains(&raw.id) {
            raws.push(raw);
        }
    }
    let backend = config.segmenter_backend()?;
    let outcome = build_training_samples(&raws, &*backend);
    let lines: Vec<TrainingRecord> = outcome.done.iter().map(TrainingSample::to_record).collect();
    append_jsonl(output, &lines)?;
    append_jsonl(&dropped, &outcome.dropped)?;
    log::info!(
        "built {} sample(s), dropped {}, skipped {} already done",
        outcome.done.len(),
        outcome.dropped.len(),
        records.len() - raws.len()
    );
    if !outcome.pending.is_empty() {
        return Err(pending_failure("build-dataset", outcome.pending.len(), outcome.interrupted));
    }
    Ok(())
}

fn load_samples(config: &AppConfig, input: &Path) -> Result<Vec<TrainingSample>, Failure> {
    let segmenter = config.segmenter()?;
    let records: Vec<TrainingRecord> = read_jsonl(input).map_err(validation)?;
    records
        .iter()
        .map(|r| TrainingSample::from_record(r, &segmenter).map_err(validation))
        .collect()
}

#[derive(Serialize)]
struct FilterSummary {
    input_count: usize,
    kept_count: usize,
    removed_string_mismatch: usize,
    removed_nli_fail: usize,
    pending: usize,
}

pub fn filter(
    config: &AppConfig,
    input: &Path,
    output: &Path,
    report: Option<PathBuf>,
    removals: Option<PathBuf>,
) -> CmdResult {
    let report_path = report.unwrap_or_else(|| sibling(output, ".report.json"));
    let removals_path = removals.unwrap_or_else(|| sibling(output, ".removed.jsonl"));
    let samples = load_samples(config, input)?;
    let mut done = ids_in(output)?;
    done.extend(ids_in(&removals_path)?);
    let todo: Vec<TrainingSample> = samples.into_iter().filter(|s| !done.contains(&s.id)).collect();
    let nli = config.nli_backend()?;
    let (outcome, run_report) = filter_citations(&todo, &*nli);
    debug_assert!(run_report.is_consistent());
    let kept: Vec<TrainingRecord> = outcome.done.iter().map(TrainingSample::to_record).collect();
    append_jsonl(output, &kept)?;
    append_jsonl(&removals_path, &run_report.removals)?;

    // the report covers every run so far, not just this one
    let kept_total = ids_in(output)?.len();
    let all_removals: Vec<Removal> = read_jsonl_if_exists(&removals_path)?;
    let full = FilterReport {
        input_count: kept_total + all_removals.len(),
        kept_count: kept_total,
        removed_string_mismatch: all_removals
            .iter()
            .filter(|r| r.reason == RemovalReason::StringMismatch)
            .count(),
        removed_nli_fail: all_removals.iter().filter(|r| r.reason == RemovalReason::NliFail).count(),
        removals: all_removals,
    };
    write_json(
        &report_path,
        &FilterSummary {
            input_count: full.input_count,
            kept_count: full.kept_count,
            removed_string_mismatch: full.removed_string_mismatch,
            removed_nli_fail: full.removed_nli_fail,
            pending: outcome.pending.len(),
        },
    )?;
    if !outcome.pending.is_empty() {
        return Err(pending_failure("filter", outcome.pending.len(), outcome.interrupted));
    }
    Ok(())
}

pub fn claim_split(config: &AppConfig, input: &Path, output: &Path, full_history: bool) -> CmdResult {
    let samples = load_samples(config, input)?;
    write_jsonl(output, &split_for_claim_model(&samples, full_history))?;
    Ok(())
}

pub fn stats(config: &AppConfig, input: &Path, exact: bool) -> CmdResult {
    let samples = load_samples(config, input)?;
    let json = if exact {
        let s = dataset_stats::<Exact>(&samples);
        serde_json::json!({
            "samples": s.samples,
            "avg_answer_words": s.avg_answer_words.to_string(),
            "avg_citation_words": s.avg_citation_words.to_string(),
            "avg_passage_words": s.avg_passage_words.to_string(),
        })
    } else {
        serde_json::to_value(dataset_stats::<f64>(&samples)).context("serializing stats")?
    };
    println!("{}", serde_json::to_string_pretty(&json).context("serializing stats")?);
    Ok(())
}

fn load_examples(config: &AppConfig, path: &Path) -> Result<Vec<EvalExample>, Failure> {
    let segmenter = config.segmenter()?;
    let records: Vec<AlceRecord> = read_jsonl(path).map_err(validation)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| EvalExample::from_alce(r, i, &segmenter).map_err(validation))
        .collect()
}

#[derive(Serialize)]
struct RunInfo<'a> {
    tool_version: &'a str,
    config_file: Option<String>,
    config_digest: &'a str,
    input: String,
    input_sha256: String,
    seed: u64,
    effective_config: &'a AppConfig,
}

pub fn generate(
    config: &AppConfig,
    config_file: Option<&Path>,
    input: &Path,
    output: &Path,
    manifest: Option<PathBuf>,
) -> CmdResult {
    let manifest = manifest.unwrap_or_else(|| sibling(output, ".manifest.jsonl"));
    let examples = load_examples(config, input)?;
    let inputs: Vec<GenInput> = examples
        .into_iter()
        .map(|e| GenInput {
            id: e.id,
            question: e.question,
            passages: e.docs,
        })
        .collect();
    let g = &config.generation;
    let template = config.prompt_template()?;
    let (refer, claim) = match g.mode {
        GenMode::Interleave => (config.generation_backend("refer")?, config.generation_backend("claim")?),
        _ => (config.generation_backend("unified")?, config.generation_backend("unified")?),
    };
    let digest = config_digest(config);
    let results = generate_batch(&inputs, &*refer, &*claim, g, &template);

    let mut answers = Vec::new();
    let mut records = Vec::new();
    let mut worst = 0;
    for (input, result) in inputs.iter().zip(results) {
        let mut rec = ManifestRecord {
            id: input.id.clone(),
            question: input.question.clone(),
            mode: g.mode,
            config_digest: digest.clone(),
            raw_text: String::new(),
            pairs: Vec::new(),
            trace: None,
            error: None,
        };
        match result {
            Ok((answer, trace)) => {
                let a = AnswerRecord::new(&input.id, &answer, Some(trace));
                rec.raw_text = a.raw_text.clone();
                rec.pairs = a.pairs.clone();
                rec.trace = a.trace.clone();
                answers.push(a);
            }
            Err(e) => {
                let code = match &e {
                    GenError::Backend { source, .. } if source.is_unavailable() => EXIT_UNAVAILABLE,
                    GenError::Backend { .. } => EXIT_OTHER,
                    GenError::Malformed { .. } => EXIT_MALFORMED,
                    _ => EXIT_VALIDATION,
                };
                log::error!("{}: {e}", input.id);
                if let Some((partial, trace)) = e.partial() {
                    rec.raw_text = partial.to_owned();
                    rec.trace = Some(trace.clone());
                }
                rec.error = Some(e.to_string());
                worst = worst.max(code);
            }
        }
        records.push(rec);
    }
    write_jsonl(output, &answers)?;
    write_jsonl(&manifest, &records)?;
    write_json(
        &sibling(output, ".run.json"),
        &RunInfo {
            tool_version: env!("CARGO_PKG_VERSION"),
            config_file: config_file.map(|p| p.display().to_string()),
            config_digest: &digest,
            input: input.display().to_string(),
            input_sha256: file_digest(input)?,
            seed: g.seed,
            effective_config: config,
        },
    )?;
    if worst != 0 {
        let failed = records.iter().filter(|r| r.error.is_some()).count();
        return Err(Failure::new(worst, anyhow!("{failed} of {} example(s) failed; see {}", records.len(), manifest.display())));
    }
    Ok(())
}

pub struct EvalPaths {
    pub examples: PathBuf,
    pub answers: PathBuf,
    pub summary: Option<PathBuf>,
    pub per_example: Option<PathBuf>,
    pub table: Option<PathBuf>,
}

fn report_outputs<S: Scalar + Serialize>(report: &MetricsReport<S>, paths: &EvalPaths) -> CmdResult {
    if let Some(p) = &paths.summary {
        write_json(p, &report.summary)?;
    }
    if let Some(p) = &paths.per_example {
        write_jsonl(p, &report.examples)?;
    }
    let table = render_table(&report.summary);
    if let Some(p) = &paths.table {
        std::fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?;
    }
    print!("{table}");
    Ok(())
}

pub fn evaluate(config: &AppConfig, paths: &EvalPaths, exact: bool, resolve_brackets: bool) -> CmdResult {
    let examples = load_examples(config, &paths.examples)?;
    let answers: Vec<AnswerRecord> = read_jsonl(&paths.answers).map_err(validation)?;
    let nli = config.nli_backend()?;
    let options = EvalOptions { resolve_brackets };
    let to_failure = |e: reclaim::eval::EvalError| match &e {
        reclaim::eval::EvalError::IdMismatch { .. } => Failure::new(EXIT_USAGE, e),
        reclaim::eval::EvalError::Backend(b) if b.is_unavailable() => Failure::new(EXIT_UNAVAILABLE, e),
        _ => Failure::new(EXIT_OTHER, e),
    };
    if exact {
        let report = evaluate_run::<Exact>(&examples, &answers, &*nli, options).map_err(to_failure)?;
        report_outputs(&report, paths)
    } else {
        let report = evaluate_run::<f64>(&examples, &answers, &*nli, options).map_err(to_failure)?;
        report_outputs(&report, paths)
    }
}

pub fn trie_dump(config: &AppConfig, input: &Path, id: Option<&str>) -> CmdResult {
    let examples = load_examples(config, input)?;
    let mut any = false;
    for e in examples.iter().filter(|e| id.is_none_or(|want| want == e.id)) {
        any = true;
        let tok = tokenizer_for(&config.generation.tokenizer, &e.docs).map_err(validation)?;
        let tree = build_prefix_tree(e.docs.inventory(), &*tok).map_err(validation)?;
        println!("# {}", e.id);
        print!("{}", tree.dump());
    }
    if !any {
        return Err(Failure::new(EXIT_USAGE, anyhow!("no example with id {:?}", id.unwrap_or(""))));
    }
    Ok(())
}
