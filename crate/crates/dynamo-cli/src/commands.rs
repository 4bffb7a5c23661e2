//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use dynamo_core::allocator::{uniform_allocate, water_level_allocate, AllocationConfig};
use dynamo_core::sim::{
    run_experiment, run_experiment_with_bank, write_trace_csv, ProblemBank, SimConfig, SimError,
    SimOutput,
};
use dynamo_core::stats::{load_history_jsonl, snapshot_priorities_with_min, PrioritySnapshot};
use dynamo_core::verify::{run_suite, Suite, SuiteReport};

use crate::manifest::{checked_write, checked_write_json, RunManifest};
use crate::{AllocateArgs, ReportArgs, SimulateArgs, VerifyArgs};
use crate::{EXIT_NUMERIC, EXIT_PROPERTY, EXIT_VALIDATION};

/// Error type carrying the process exit code.
#[derive(Debug)]
pub struct CliFailure {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliFailure {}

fn validation(err: anyhow::Error) -> CliFailure {
    CliFailure {
        code: EXIT_VALIDATION,
        message: format!("{err:#}"),
    }
}

// ---------------------------------------------------------------------------
// allocate

pub fn cmd_allocate(args: &AllocateArgs) -> Result<(), CliFailure> {
    allocate_inner(args).map_err(validation)
}

fn allocate_inner(args: &AllocateArgs) -> Result<()> {
    let snapshot = match (&args.history, &args.snapshot) {
        (Some(history_path), None) => {
            let file = File::open(history_path)
                .with_context(|| format!("opening history file {}", history_path.display()))?;
            let report = load_history_jsonl(BufReader::new(file), args.permissive)
                .map_err(|e| anyhow!("{e}"))?;
            for (line, reason) in &report.skipped {
                eprintln!("skipped line {line}: {reason}");
            }
            if report.records.is_empty() {
                bail!("history file contains no valid records");
            }
            snapshot_priorities_with_min(&report.records, args.min_history)
        }
        (None, Some(snapshot_path)) => {
            let file = File::open(snapshot_path)
                .with_context(|| format!("opening snapshot file {}", snapshot_path.display()))?;
            let snapshot: PrioritySnapshot =
                serde_json::from_reader(BufReader::new(file)).context("parsing snapshot JSON")?;
            if snapshot.is_empty() {
                bail!("snapshot contains no problems");
            }
            snapshot
        }
        _ => bail!("exactly one of --history or --snapshot is required"),
    };

    let n = snapshot.len() as u64;
    let budget = args.budget.unwrap_or(16 * n);
    let config = AllocationConfig::new(budget, args.min, args.max)
        .map_err(|e| anyhow!("infeasible bounds: {e}"))?;

    let plan = if args.uniform {
        let ids: Vec<dynamo_core::ProblemId> = snapshot
            .priorities
            .keys()
            .chain(snapshot.insufficient.iter())
            .cloned()
            .collect();
        uniform_allocate(&ids, &config).map_err(|e| anyhow!("{e}"))?
    } else {
        water_level_allocate(&snapshot, &config).map_err(|e| anyhow!("{e}"))?
    };

    let mut text = serde_json::to_string_pretty(&plan)?;
    text.push('\n');
    match &args.output {
        Some(path) => checked_write(path, text.as_bytes(), args.force)?,
        None => print!("{text}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliFailure> {
    let config = load_sim_config(args).map_err(validation)?;
    let bank = load_bank(&config, &args.config).map_err(validation)?;
    let seeds = if args.seeds.is_empty() {
        vec![config.seed]
    } else {
        args.seeds.clone()
    };

    let manifest = RunManifest::new("simulate", Some(&args.config), &args.out, seeds.clone());
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))
        .map_err(validation)?;
    checked_write_json(&args.out.join("manifest.json"), &manifest, args.force)
        .map_err(validation)?;

    let mut final_means = Vec::new();
    for seed in &seeds {
        let run_config = SimConfig {
            seed: *seed,
            ..config.clone()
        };
        let output = match &bank {
            Some(b) => run_experiment_with_bank(&run_config, b.clone()),
            None => run_experiment(&run_config),
        };
        let output = match output {
            Ok(out) => out,
            Err(SimError::NumericAbort { step, context }) => {
                return Err(CliFailure {
                    code: EXIT_NUMERIC,
                    message: format!("seed {seed}: numeric abort at step {step}: {context}"),
                })
            }
            Err(other) => {
                return Err(CliFailure {
                    code: EXIT_VALIDATION,
                    message: format!("seed {seed}: {other}"),
                })
            }
        };
        write_run_artifacts(&args.out, *seed, &output, args.save_policy, args.force)
            .map_err(validation)?;
        final_means.push((*seed, output.summary.final_mean_policy_success));
        println!(
            "seed {seed}: {} steps, mean policy success {:.6} -> {:.6}",
            output.summary.steps_completed,
            output.summary.initial_mean_policy_success,
            output.summary.final_mean_policy_success,
        );
    }

    if seeds.len() > 1 {
        let aggregate = AggregateSummary::new(&final_means);
        checked_write_json(&args.out.join("aggregate.json"), &aggregate, args.force)
            .map_err(validation)?;
    }
    Ok(())
}

#[derive(Debug, serde::Serialize)]
struct AggregateSummary {
    seeds: Vec<u64>,
    final_mean_policy_success: BTreeMap<u64, f64>,
    mean_of_final: f64,
}

impl AggregateSummary {
    fn new(final_means: &[(u64, f64)]) -> Self {
        AggregateSummary {
            seeds: final_means.iter().map(|(s, _)| *s).collect(),
            final_mean_policy_success: final_means.iter().copied().collect(),
            mean_of_final: final_means.iter().map(|(_, v)| v).sum::<f64>()
                / final_means.len() as f64,
        }
    }
}

fn load_sim_config(args: &SimulateArgs) -> Result<SimConfig> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let mut config: SimConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    for arm in &args.ablate {
        match arm.as_str() {
            "dra" => config.ablation.dra = false,
            "gc" => config.ablation.gc = false,
            "ums" => config.ablation.ums = false,
            "all" => {
                config.ablation.dra = false;
                config.ablation.gc = false;
                config.ablation.ums = false;
            }
            other => bail!("unknown ablation arm {other:?} (expected dra, gc, ums, or all)"),
        }
    }
    if args.trace {
        config.collect_trace = true;
    }
    config.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(config)
}

fn load_bank(config: &SimConfig, config_path: &Path) -> Result<Option<ProblemBank>> {
    let Some(bank_rel) = &config.problem_bank else {
        return Ok(None);
    };
    // Bank paths resolve relative to the config file's directory.
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let bank_path = base.join(bank_rel);
    let file = File::open(&bank_path)
        .with_context(|| format!("opening problem bank {}", bank_path.display()))?;
    let bank = ProblemBank::from_reader(BufReader::new(file)).map_err(|e| anyhow!("{e}"))?;
    Ok(Some(bank))
}

fn write_run_artifacts(
    out: &Path,
    seed: u64,
    output: &SimOutput,
    save_policy: bool,
    force: bool,
) -> Result<()> {
    let metrics_path = out.join(format!("metrics_seed{seed}.csv"));
    let mut buf = Vec::new();
    output
        .metrics
        .write_csv(&mut buf)
        .map_err(|e| anyhow!("{e}"))?;
    checked_write(&metrics_path, &buf, force)?;

    checked_write_json(
        &out.join(format!("summary_seed{seed}.json")),
        &output.summary,
        force,
    )?;

    if !output.trace.is_empty() {
        let mut buf = Vec::new();
        write_trace_csv(&output.trace, &mut buf).map_err(|e| anyhow!("{e}"))?;
        checked_write(&out.join(format!("trace_seed{seed}.csv")), &buf, force)?;
    }
    if save_policy {
        checked_write_json(
            &out.join(format!("policy_seed{seed}.json")),
            &output.policy,
            force,
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), CliFailure> {
    let suites: Vec<Suite> = if args.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        match Suite::from_name(&args.suite) {
            Some(suite) => vec![suite],
            None => {
                return Err(CliFailure {
                    code: EXIT_VALIDATION,
                    message: format!(
                        "unknown suite {:?}; expected one of stats, allocator, policy, grpo, \
                         modulation, convergence, all",
                        args.suite
                    ),
                })
            }
        }
    };

    let mut reports: Vec<SuiteReport> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for suite in suites {
        let report = run_suite(suite, args.seed);
        println!("suite {} (seed {}):", report.suite, report.seed);
        for check in &report.checks {
            println!(
                "  [{}] {} — {}",
                if check.passed { "PASS" } else { "FAIL" },
                check.name,
                check.detail
            );
            if !check.passed {
                failures.push(format!(
                    "{}::{} ({})",
                    report.suite, check.name, check.detail
                ));
            }
        }
        reports.push(report);
    }

    if let Some(path) = &args.json {
        checked_write_json(path, &reports, args.force).map_err(validation)?;
    }

    if failures.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliFailure {
            code: EXIT_PROPERTY,
            message: format!("violated invariants: {}", failures.join("; ")),
        })
    }
}

// ---------------------------------------------------------------------------
// report

pub fn cmd_report(args: &ReportArgs) -> Result<(), CliFailure> {
    report_inner(args).map_err(validation)
}

#[derive(Debug)]
struct RunDigest {
    name: String,
    steps: usize,
    final_policy_success: f64,
    final_empirical_success: f64,
    final_entropy: f64,
    mean_grad_norm: f64,
    final_allocation_entropy: f64,
    clipped_total: u64,
    stabilized_total: u64,
}

fn report_inner(args: &ReportArgs) -> Result<()> {
    if args.inputs.is_empty() {
        bail!("no metric CSV files given");
    }
    let mut digests = Vec::new();
    for path in &args.inputs {
        digests.push(digest_csv(path)?);
    }

    let header = format!(
        "{:<28} {:>6} {:>14} {:>14} {:>10} {:>10} {:>12} {:>9} {:>11}",
        "run",
        "steps",
        "final_succ",
        "final_emp",
        "entropy",
        "grad_norm",
        "alloc_entropy",
        "clipped",
        "stabilized"
    );
    let mut lines = vec![header, "-".repeat(124)];
    for d in &digests {
        lines.push(format!(
            "{:<28} {:>6} {:>14.6} {:>14.6} {:>10.4} {:>10.4} {:>12.4} {:>9} {:>11}",
            d.name,
            d.steps,
            d.final_policy_success,
            d.final_empirical_success,
            d.final_entropy,
            d.mean_grad_norm,
            d.final_allocation_entropy,
            d.clipped_total,
            d.stabilized_total
        ));
    }
    let table = lines.join("\n");
    println!("{table}");

    if let Some(path) = &args.output {
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record([
            "run",
            "steps",
            "final_policy_success",
            "final_empirical_success",
            "final_entropy",
            "mean_grad_norm",
            "final_allocation_entropy",
            "clipped_total",
            "stabilized_total",
        ])?;
        for d in &digests {
            out.write_record([
                d.name.clone(),
                d.steps.to_string(),
                d.final_policy_success.to_string(),
                d.final_empirical_success.to_string(),
                d.final_entropy.to_string(),
                d.mean_grad_norm.to_string(),
                d.final_allocation_entropy.to_string(),
                d.clipped_total.to_string(),
                d.stabilized_total.to_string(),
            ])?;
        }
        let data = out.into_inner().context("flushing csv")?;
        checked_write(path, &data, args.force)?;
    }
    Ok(())
}

fn digest_csv(path: &PathBuf) -> Result<RunDigest> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening metrics csv {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{} lacks column {name}", path.display()))
    };
    let c_policy = col("mean_policy_success")?;
    let c_emp = col("mean_empirical_success")?;
    let c_entropy = col("mean_entropy")?;
    let c_grad = col("grad_norm")?;
    let c_alloc = col("allocation_entropy")?;
    let c_clipped = col("clipped_tokens")?;
    let c_stab = col("stabilized_tokens")?;

    let mut steps = 0usize;
    let mut grad_sum = 0.0;
    let mut clipped = 0u64;
    let mut stabilized = 0u64;
    let mut last: Option<csv::StringRecord> = None;
    for record in reader.records() {
        let record = record?;
        steps += 1;
        grad_sum += record[c_grad].parse::<f64>()?;
        clipped += record[c_clipped].parse::<u64>()?;
        stabilized += record[c_stab].parse::<u64>()?;
        last = Some(record);
    }
    let last = last.ok_or_else(|| anyhow!("{} has no data rows", path.display()))?;
    Ok(RunDigest {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string()),
        steps,
        final_policy_success: last[c_policy].parse()?,
        final_empirical_success: last[c_emp].parse()?,
        final_entropy: last[c_entropy].parse()?,
        mean_grad_norm: grad_sum / steps as f64,
        final_allocation_entropy: last[c_alloc].parse()?,
        clipped_total: clipped,
        stabilized_total: stabilized,
    })
}

// Used by main for consistent stderr formatting.
pub fn fail_to_stderr(failure: &CliFailure) {
    let mut stderr = std::io::stderr();
    let _ = writeln!(stderr, "error: {}", failure.message);
}
