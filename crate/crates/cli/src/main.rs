//! Command-line front end: dataset building, rollout collection, toy
//! training, gradient checking, reward auditing, and evaluation.

mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use reljudge::dataset::{
    annotator_agreement, apply_human_labels, assemble_dataset, export_training_files,
    label_by_citation, parse_annotation_csv, CorpusDoc, ExportMode, ExportRecord,
    GenerationLogEntry, LabeledPair,
};
use reljudge::eval::{metric_report, render_table, requery_change, ScoredPrediction};
use reljudge::grpo::finite_diff_check;
use reljudge::grpo::train::{
    gradient_check_setup, synthetic_dataset, train, train_log_csv, InitMode, TrainRecord,
};
use reljudge::io::{read_jsonl, write_atomic, write_json_atomic, write_jsonl_atomic};
use reljudge::policy::{CompletionBackend, HttpBackend, ScriptedBackend};
use reljudge::rollout::{
    recompute_reward, run_group, seed_range, QueryDocPair, RolloutOptions, Trajectory,
};
use settings::Settings;

#[derive(Parser)]
#[command(name = "reljudge", version, about = "Relevance-judging pipeline tools")]
struct Cli {
    /// TOML config file with run settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named settings preset (paper-appendix-b, toy-default).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override one setting, e.g. --set lambda=0.2 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build labeled train/eval splits from a generation log.
    BuildDataset(BuildDatasetArgs),
    /// Collect two-round rollout trajectories for labeled pairs.
    Rollout(RolloutArgs),
    /// Train the toy policy and write its log and parameters.
    TrainToy(TrainToyArgs),
    /// Verify the analytic gradient against central finite differences.
    CheckGradients(CheckGradientsArgs),
    /// Recompute rewards for persisted trajectories and flag mismatches.
    RewardAudit(RewardAuditArgs),
    /// Score a predictions file and print the metric report.
    Evaluate(EvaluateArgs),
    /// Convert a training log to a plot-ready CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct BuildDatasetArgs {
    /// Generation-log JSONL: {query, doc_id, doc_text, forwards, citation_count}.
    #[arg(long)]
    log: PathBuf,
    /// Generator passes every entry must have. Deliberately has no
    /// default; pass it explicitly.
    #[arg(long)]
    forwards_required: u32,
    /// Citations required for a positive. Deliberately has no default.
    #[arg(long)]
    citation_threshold: u32,
    /// Corpus JSONL ({doc_id, doc_text}) for random negatives.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    random_negatives: usize,
    #[arg(long, default_value_t = 5000)]
    train_size: usize,
    /// Enforce per-class balance (counts differ by at most 1).
    #[arg(long)]
    balance: bool,
    /// Annotation CSV (pair_id,annotator_id,label) applied as human labels.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Raw-agreement exclusion gate; required with --annotations.
    #[arg(long)]
    agreement_threshold: Option<f64>,
    /// Teacher responses JSONL ({id, response}) to emit coldstart.jsonl.
    #[arg(long)]
    teacher_responses: Option<PathBuf>,
    /// Score distributions JSONL ({id, score_probs}) to emit distill.jsonl.
    #[arg(long)]
    score_probs: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RolloutArgs {
    /// Pairs JSONL: {id, query, aux_docs, candidate, gold?}.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
    backend: BackendKind,
    /// Script file for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides settings.group_size when given.
    #[arg(long)]
    group_size: Option<usize>,
    /// Overrides settings.seed when given.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Scripted,
    Http,
}

#[derive(Args)]
struct TrainToyArgs {
    /// Labeled pairs JSONL; mutually exclusive with --synthetic.
    #[arg(long, conflicts_with = "synthetic")]
    pairs: Option<PathBuf>,
    /// Generate a synthetic labeled task with this many pairs.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, value_enum, default_value_t = InitArg::Zero)]
    init: InitArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Zero,
    ColdStart,
}

#[derive(Args)]
struct CheckGradientsArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random instances to check.
    #[arg(long, default_value_t = 8)]
    instances: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct RewardAuditArgs {
    #[arg(long)]
    trajectories: PathBuf,
    /// The pairs the trajectories were rolled out from (provides candidate
    /// documents and gold labels).
    #[arg(long)]
    pairs: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions JSONL: {pair_id, gold, pred, class_scores?}.
    #[arg(long)]
    preds: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json_out: Option<PathBuf>,
    /// Optional before/after re-query rates to summarize, e.g. 0.30,0.2897.
    #[arg(long, value_name = "BEFORE,AFTER")]
    requery: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Training-log JSONL produced by train-toy.
    #[arg(long)]
    log: PathBuf,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let settings = match Settings::resolve(cli.preset.as_deref(), cli.config.as_deref(), &cli.sets)
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let outcome = match cli.command {
        Command::BuildDataset(args) => build_dataset(&args, &settings),
        Command::Rollout(args) => rollout(&args, &settings).await,
        Command::TrainToy(args) => train_toy(&args, &settings),
        Command::CheckGradients(args) => check_gradients(&args, &settings),
        Command::RewardAudit(args) => reward_audit(&args, &settings),
        Command::Evaluate(args) => evaluate(&args),
        Command::Report(args) => report(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn build_dataset(args: &BuildDatasetArgs, settings: &Settings) -> Result<ExitCode> {
    let entries: Vec<GenerationLogEntry> =
        read_jsonl(&args.log).with_context(|| format!("reading {}", args.log.display()))?;
    let partition = label_by_citation(&entries, args.forwards_required, args.citation_threshold)?;
    println!(
        "citation labeling: {} positives, {} hard negatives, {} rejected",
        partition.positives.len(),
        partition.hard_negatives.len(),
        partition.rejected.len()
    );

    let mut positives = partition.positives;
    let mut hard_negatives = partition.hard_negatives;
    std::fs::create_dir_all(&args.out_dir)?;
    if let Some(annotations_path) = &args.annotations {
        let threshold = args
            .agreement_threshold
            .ok_or_else(|| anyhow!("--agreement-threshold is required with --annotations"))?;
        let raw = std::fs::read_to_string(annotations_path)?;
        let records = parse_annotation_csv(&raw).map_err(|e| anyhow!(e))?;
        let agreement = annotator_agreement(&records, threshold)?;
        println!(
            "annotation agreement: raw {:.4}, kappa {:.4}, {} pairs flagged for exclusion",
            agreement.raw_agreement,
            agreement.kappa,
            agreement.flagged.len()
        );
        write_json_atomic(&args.out_dir.join("agreement.json"), &agreement)?;
        let flagged: std::collections::HashSet<&str> =
            agreement.flagged.iter().map(String::as_str).collect();
        positives.retain(|p| !flagged.contains(p.pair.id.as_str()));
        hard_negatives.retain(|p| !flagged.contains(p.pair.id.as_str()));
        apply_human_labels(&mut positives, &records);
        apply_human_labels(&mut hard_negatives, &records);
    }

    let corpus: Vec<CorpusDoc> = match &args.corpus {
        Some(path) => read_jsonl(path)?,
        None if args.random_negatives == 0 => Vec::new(),
        None => bail!("--corpus is required when --random-negatives > 0"),
    };
    let (train, eval) = assemble_dataset(
        &positives,
        &hard_negatives,
        &corpus,
        args.random_negatives,
        args.balance,
        args.train_size,
        settings.seed,
    )?;

    write_jsonl_atomic(&args.out_dir.join("train.jsonl"), &train)?;
    write_jsonl_atomic(&args.out_dir.join("eval.jsonl"), &eval)?;
    println!(
        "wrote {} train / {} eval records to {}",
        train.len(),
        eval.len(),
        args.out_dir.display()
    );

    if let Some(path) = &args.teacher_responses {
        let records = export_join(&train, path, "response", |pair, value| ExportRecord {
            pair,
            teacher_response: value.as_str().map(str::to_string),
            score_probs: None,
        })?;
        let summary = export_training_files(
            &records,
            ExportMode::ColdStart,
            &args.out_dir.join("coldstart.jsonl"),
        )?;
        println!(
            "coldstart export: {} written, {} skipped",
            summary.written, summary.skipped
        );
    }
    if let Some(path) = &args.score_probs {
        let records = export_join(&train, path, "score_probs", |pair, value| ExportRecord {
            pair,
            teacher_response: None,
            score_probs: serde_json::from_value::<[f64; 3]>(value.clone()).ok(),
        })?;
        let summary = export_training_files(
            &records,
            ExportMode::Distill,
            &args.out_dir.join("distill.jsonl"),
        )?;
        println!(
            "distill export: {} written, {} skipped",
            summary.written, summary.skipped
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// Join auxiliary per-pair values (keyed by id) onto the train split.
fn export_join(
    train: &[LabeledPair],
    path: &Path,
    field: &str,
    make: impl Fn(QueryDocPair, &serde_json::Value) -> ExportRecord,
) -> Result<Vec<ExportRecord>> {
    let rows: Vec<serde_json::Value> = read_jsonl(path)?;
    let mut by_id = std::collections::HashMap::new();
    for row in &rows {
        let id = row
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| anyhow!("{}: every row needs an \"id\"", path.display()))?;
        by_id.insert(id.to_string(), row);
    }
    Ok(train
        .iter()
        .map(
            |p| match by_id.get(&p.pair.id).and_then(|row| row.get(field)) {
                Some(value) => make(p.pair.clone(), value),
                None => ExportRecord {
                    pair: p.pair.clone(),
                    teacher_response: None,
                    score_probs: None,
                },
            },
        )
        .collect())
}

async fn rollout(args: &RolloutArgs, settings: &Settings) -> Result<ExitCode> {
    let pairs: Vec<QueryDocPair> = read_jsonl(&args.pairs)?;
    if pairs.is_empty() {
        bail!("{}: no pairs", args.pairs.display());
    }
    let backend: Arc<dyn CompletionBackend> = match args.backend {
        BackendKind::Scripted => {
            let script = args
                .script
                .as_ref()
                .ok_or_else(|| anyhow!("--script is required with the scripted backend"))?;
            Arc::new(ScriptedBackend::load(script)?)
        }
        BackendKind::Http => Arc::new(HttpBackend::new(settings.http_config())?),
    };
    let options = RolloutOptions {
        variant: settings.variant,
        drop_aux_docs: settings.no_retrieval,
        reward: settings.reward_config(),
    };
    let group_size = args.group_size.unwrap_or(settings.group_size);
    let base_seed = args.seed.unwrap_or(settings.seed);

    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut unusable = 0usize;
    for (i, pair) in pairs.iter().enumerate() {
        let seeds = seed_range(base_seed.wrapping_add((i as u64) << 32), group_size);
        let group = run_group(pair, backend.as_ref(), group_size, &seeds, &options).await?;
        if !group.usable {
            unusable += 1;
        }
        trajectories.extend(group.trajectories);
    }
    write_jsonl_atomic(&args.out, &trajectories)?;
    let rewarded: Vec<f64> = trajectories
        .iter()
        .filter_map(|t| t.reward.as_ref().map(|r| r.total))
        .collect();
    let mean_reward = if rewarded.is_empty() {
        f64::NAN
    } else {
        rewarded.iter().sum::<f64>() / rewarded.len() as f64
    };
    println!(
        "wrote {} trajectories ({} groups, {} unusable) to {}; mean reward {:.4}",
        trajectories.len(),
        pairs.len(),
        unusable,
        args.out.display(),
        mean_reward
    );
    Ok(ExitCode::SUCCESS)
}

fn train_toy(args: &TrainToyArgs, settings: &Settings) -> Result<ExitCode> {
    let dataset: Vec<QueryDocPair> = match (&args.pairs, args.synthetic) {
        (Some(path), None) => read_jsonl(path)?,
        (None, Some(n)) => synthetic_dataset(n, settings.buckets, settings.seed),
        (None, None) => bail!("one of --pairs or --synthetic is required"),
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };
    let init = match args.init {
        InitArg::Zero => InitMode::Zero,
        InitArg::ColdStart => InitMode::ColdStart,
    };
    let outcome = train(
        &dataset,
        &settings.grpo_config(),
        &settings.reward_config(),
        init,
        settings.seed,
    )?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_jsonl_atomic(&args.out_dir.join("train_log.jsonl"), &outcome.log)?;
    outcome.params.save(&args.out_dir.join("params.json"))?;
    let last = outcome.log.last().expect("steps >= 1");
    println!(
        "trained {} steps on {} pairs; final mean reward {:.4} (objective {:.6})",
        last.step,
        dataset.len(),
        last.mean_reward,
        last.objective
    );
    if let Some(step) = outcome.first_step_reaching(0.8) {
        println!("mean reward crossed 0.8 at step {step}");
    }
    Ok(ExitCode::SUCCESS)
}

fn check_gradients(args: &CheckGradientsArgs, settings: &Settings) -> Result<ExitCode> {
    let group_size = settings.group_size.clamp(2, 6);
    let mut worst: f64 = 0.0;
    for i in 0..args.instances {
        let (params, groups) =
            gradient_check_setup(args.seed.wrapping_add(i as u64), 2, group_size)?;
        for beta in [0.0, settings.beta.max(1.0)] {
            let config = reljudge::grpo::GrpoConfig {
                beta,
                group_size,
                ..settings.grpo_config()
            };
            let err = finite_diff_check(&params, &groups, &config, args.step)?;
            worst = worst.max(err);
        }
    }
    println!(
        "max relative error over {} instances: {worst:.3e}",
        args.instances
    );
    if worst > args.tolerance {
        eprintln!(
            "gradient check FAILED: {worst:.3e} > {:.1e}",
            args.tolerance
        );
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn reward_audit(args: &RewardAuditArgs, settings: &Settings) -> Result<ExitCode> {
    let trajectories: Vec<Trajectory> = read_jsonl(&args.trajectories)?;
    let pairs: Vec<QueryDocPair> = read_jsonl(&args.pairs)?;
    let by_id: std::collections::HashMap<&str, &QueryDocPair> =
        pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    let options = RolloutOptions {
        variant: settings.variant,
        drop_aux_docs: settings.no_retrieval,
        reward: settings.reward_config(),
    };
    let mut audited = 0usize;
    let mut mismatches = 0usize;
    for (idx, trajectory) in trajectories.iter().enumerate() {
        let Some(pair) = by_id.get(trajectory.pair_id.as_str()) else {
            eprintln!(
                "line {}: pair {} not found in {}",
                idx + 1,
                trajectory.pair_id,
                args.pairs.display()
            );
            mismatches += 1;
            continue;
        };
        let recomputed = recompute_reward(trajectory, pair, &options);
        if trajectory.reward.is_none() && recomputed.is_none() {
            continue;
        }
        audited += 1;
        if recomputed != trajectory.reward {
            mismatches += 1;
            eprintln!(
                "line {}: pair {} seed {}: stored {:?}, recomputed {:?}",
                idx + 1,
                trajectory.pair_id,
                trajectory.seed,
                trajectory.reward,
                recomputed
            );
        }
    }
    println!("audited {audited} rewarded trajectories; {mismatches} mismatches");
    Ok(if mismatches == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn evaluate(args: &EvaluateArgs) -> Result<ExitCode> {
    let preds: Vec<ScoredPrediction> = read_jsonl(&args.preds)?;
    let report = metric_report(&preds)?;
    print!("{}", render_table(&report));
    if let Some(path) = &args.json_out {
        write_json_atomic(path, &report)?;
        println!("report written to {}", path.display());
    }
    if let Some(spec) = &args.requery {
        let (before, after) = spec
            .split_once(',')
            .ok_or_else(|| anyhow!("--requery expects BEFORE,AFTER"))?;
        let change = requery_change(before.trim().parse()?, after.trim().parse()?);
        println!(
            "re-query rate {} -> {}: {:.4} percentage points absolute, {:.4}% relative",
            change.before, change.after, change.absolute_points, change.relative_percent
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn report(args: &ReportArgs) -> Result<ExitCode> {
    let records: Vec<TrainRecord> = read_jsonl(&args.log)?;
    if records.is_empty() {
        bail!("{}: empty training log", args.log.display());
    }
    write_atomic(&args.out, train_log_csv(&records).as_bytes())?;
    println!("wrote {} rows to {}", records.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}
