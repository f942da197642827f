//! Command-line front end.
//!
//! Every failure is reported on the error stream as `error[<code>]: <message>`
//! and exits with the status tied to that code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::archgraph::{apply_channel_config, parse_model, ModelGraph};
use crate::costmodel::{human, total_cost};
use crate::error::{Error, ErrorCode, Result};
use crate::grouping::{couple_channels, partition_groups, CouplingClass, Group};
use crate::importance::{load_stats, Criterion, ImportanceReport};
use crate::reallocate::{build_backbone, plan, AllocationPlan, PlanRequest, Policy, StaticReport, DEFAULT_LAMBDA};

#[derive(Debug, Parser)]
#[command(name = "chanplan", version, about = "FLOPs-budgeted channel pruning planner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count FLOPs (multiply-accumulates) and parameters of a model.
    Flops {
        model: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Show coupling classes and layer groups.
    Groups { model: PathBuf },
    /// Compute a pruned channel configuration for a FLOPs budget.
    Plan {
        #[command(flatten)]
        common: PlanArgs,
        /// Allocation policy: importance_guided, winner_take_all, uniform, random.
        #[arg(long, default_value = "importance_guided")]
        policy: String,
        /// Write the plan here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan with all four allocation policies on identical inputs.
    ComparePolicies {
        #[command(flatten)]
        common: PlanArgs,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    pub model: PathBuf,
    /// Importance statistics document.
    #[arg(long)]
    pub stats: PathBuf,
    /// Budget in FLOPs; accepts suffixes K, M, G (e.g. 1.04G, 300M, 1.04e9).
    #[arg(long)]
    pub target_flops: String,
    /// Share of the budget spent on the uniform backbone, in (0, 1].
    #[arg(long, default_value_t = DEFAULT_LAMBDA, allow_negative_numbers = true)]
    pub lambda: f64,
    /// Number of reallocation rounds. With a static stats file every round
    /// reuses the same statistics.
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Expected criterion of the stats file.
    #[arg(long)]
    pub criterion: Option<String>,
}

/// Parses `1.04e9`, `1.04G`, `300M`, `87m`, `512k` into a FLOPs count.
pub fn parse_flops(s: &str) -> Result<u64> {
    let t = s.trim();
    let (num, scale) = match t.chars().last() {
        Some('G' | 'g') => (&t[..t.len() - 1], 1e9),
        Some('M' | 'm') => (&t[..t.len() - 1], 1e6),
        Some('K' | 'k') => (&t[..t.len() - 1], 1e3),
        _ => (t, 1.0),
    };
    let v: f64 = num
        .parse()
        .map_err(|_| Error::Domain(format!("cannot parse flops value `{s}`")))?;
    let flops = (v * scale).round();
    if !(flops.is_finite() && flops >= 1.0 && flops < u64::MAX as f64) {
        return Err(Error::Domain(format!("flops value `{s}` out of range")));
    }
    Ok(flops as u64)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn load_model(path: &Path) -> Result<ModelGraph> {
    parse_model(&read(path)?)
}

struct Prepared {
    graph: ModelGraph,
    report: ImportanceReport,
    request: PlanRequest,
}

fn prepare(args: &PlanArgs, policy: Policy) -> Result<Prepared> {
    let request = PlanRequest {
        target_flops: parse_flops(&args.target_flops)?,
        lambda: args.lambda,
        policy,
        rounds: args.rounds,
        seed: args.seed,
    };
    request.validate()?;
    let graph = load_model(&args.model)?;
    let text = read(&args.stats)?;
    // stats may be measured on the unpruned model or on the backbone
    let report = match load_stats(&text, &graph) {
        Err(Error::Shape { .. }) => {
            let backbone = build_backbone(&graph, request.target_flops, request.lambda)?;
            let pruned = apply_channel_config(&graph, &backbone.config)?;
            load_stats(&text, &pruned)?
        }
        other => other?,
    };
    if let Some(c) = &args.criterion {
        let want: Criterion = c.parse()?;
        if want != report.criterion() {
            return Err(Error::Domain(format!(
                "stats criterion is {}, expected {want}",
                report.criterion()
            )));
        }
    }
    Ok(Prepared { graph, report, request })
}

#[derive(Serialize)]
struct GroupsDoc<'a> {
    num_groups: usize,
    groups: Vec<IndexedGroup<'a>>,
    coupling: &'a [CouplingClass],
}

#[derive(Serialize)]
struct IndexedGroup<'a> {
    index: usize,
    #[serde(flatten)]
    group: &'a Group,
}

#[derive(Serialize)]
struct PolicyRow {
    policy: Policy,
    achieved_flops: u64,
    surplus_flops: u64,
    group_channels: Vec<usize>,
}

fn policy_row(graph: &ModelGraph, plan: &AllocationPlan) -> Result<PolicyRow> {
    let pruned = apply_channel_config(graph, &plan.final_config)?;
    let partition = partition_groups(&pruned, &couple_channels(&pruned))?;
    Ok(PolicyRow {
        policy: plan.request.policy,
        achieved_flops: plan.achieved_flops,
        surplus_flops: plan.surplus_flops,
        group_channels: partition.channel_totals(),
    })
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let io_err = |source| Error::Io {
        path: "<stdout>".into(),
        source,
    };
    match cli.command {
        Command::Flops { model, json } => {
            let cost = total_cost(&load_model(&model)?);
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&cost).unwrap()).map_err(io_err)?;
            } else {
                writeln!(out, "flops: {} ({})", cost.flops, human(cost.flops)).map_err(io_err)?;
                writeln!(out, "params: {} ({})", cost.params, human(cost.params)).map_err(io_err)?;
            }
        }
        Command::Groups { model } => {
            let graph = load_model(&model)?;
            let coupling = couple_channels(&graph);
            let partition = partition_groups(&graph, &coupling)?;
            let doc = GroupsDoc {
                num_groups: partition.len(),
                groups: partition
                    .groups()
                    .iter()
                    .enumerate()
                    .map(|(index, group)| IndexedGroup { index, group })
                    .collect(),
                coupling: coupling.classes(),
            };
            writeln!(out, "{}", serde_json::to_string_pretty(&doc).unwrap()).map_err(io_err)?;
        }
        Command::Plan {
            common,
            policy,
            out: path,
        } => {
            let p = prepare(&common, policy.parse()?)?;
            let result = plan(&p.graph, &mut StaticReport(p.report), &p.request)?;
            let text = result.to_json();
            match path {
                Some(path) => fs::write(&path, text).map_err(|source| Error::Io {
                    path: path.display().to_string(),
                    source,
                })?,
                None => out.write_all(text.as_bytes()).map_err(io_err)?,
            }
        }
        Command::ComparePolicies { common, json } => {
            let p = prepare(&common, Policy::ImportanceGuided)?;
            let rows: Vec<Result<PolicyRow>> = std::thread::scope(|scope| {
                let handles: Vec<_> = Policy::ALL
                    .into_iter()
                    .map(|policy| {
                        let (graph, report) = (&p.graph, &p.report);
                        let request = PlanRequest {
                            policy,
                            ..p.request.clone()
                        };
                        scope.spawn(move || {
                            let result = plan(graph, &mut StaticReport(report.clone()), &request)?;
                            policy_row(graph, &result)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("planner thread panicked"))
                    .collect()
            });
            let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&rows).unwrap()).map_err(io_err)?;
            } else {
                writeln!(
                    out,
                    "{:<18} {:>14} {:>9} {:>12}  group_channels",
                    "policy", "achieved_flops", "achieved", "surplus"
                )
                .map_err(io_err)?;
                for r in &rows {
                    let groups: Vec<String> = r.group_channels.iter().map(usize::to_string).collect();
                    writeln!(
                        out,
                        "{:<18} {:>14} {:>9} {:>12}  [{}]",
                        r.policy.as_str(),
                        r.achieved_flops,
                        human(r.achieved_flops),
                        r.surplus_flops,
                        groups.join(", ")
                    )
                    .map_err(io_err)?;
                }
            }
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            let _ = writeln!(err, "error[{}]: {first}", ErrorCode::Usage);
            return ErrorCode::Usage.exit_status();
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.code();
            let _ = writeln!(err, "error[{code}]: {e}");
            code.exit_status()
        }
    }
}
