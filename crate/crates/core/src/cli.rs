//! Command-line front end. `run` parses arguments, executes one subcommand
//! and maps the outcome to an exit code: 0 success, 1 error, 2 infeasible.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::catalog::{load_catalog_file, Availability, CatalogBundle};
use crate::configspace::{enumerate_configs, parse_config_id, ConfigRecord, Configuration, PrunedFamily};
use crate::costmodel::{build_table, load_profile_table_file, ProfileRecord, ThroughputTable};
use crate::error::{Error, Result};
use crate::pipeline::PlanningInputs;
use crate::simulator::{self, baseline, completions_csv, simulate_events, BaselineKind};
use crate::solver::{self, DeltaReport, FeasibilityMode, Granularity, Mode, Plan};
use crate::workload::{
    default_classes, ingest_trace, parse_trace, synth_trace, validate_classes, DemandDocument, DemandMatrix, RatioSpec,
    RequestRecord, WorkloadType,
};

#[derive(Debug, Parser)]
#[command(name = "hetserve", version, about = "Plan LLM serving over heterogeneous cloud GPUs")]
pub struct Cli {
    /// Catalog document: GPU types, availability, budget and models.
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Suppress the human-readable summary.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a serving plan.
    Plan(PlanArgs),
    /// Replay a trace against a plan with a queueing simulation.
    Simulate(SimulateArgs),
    /// List the feasible configurations.
    Enumerate(EnumerateArgs),
    /// Estimate the throughput table analytically.
    Profile(ProfileArgs),
    /// Compare the optimized plan with ablation baselines.
    Compare(CompareArgs),
    /// Re-solve after availability or demand changes.
    Replan(ReplanArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    BinarySearch,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FeasibilityArg {
    ExactLp,
    KnapsackGreedy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GranularityArg {
    WholeRequests,
    Fluid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DispatchArg {
    Weighted,
    Quota,
}

#[derive(Debug, Args)]
pub struct DemandArgs {
    /// Request trace (one JSON record per line) or a ratio-spec document.
    #[arg(long, conflicts_with = "demand")]
    pub trace: Option<PathBuf>,
    /// Demand document with class counts.
    #[arg(long)]
    pub demand: Option<PathBuf>,
    /// Workload classes (JSON list); defaults to the nine standard classes.
    #[arg(long)]
    pub classes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Measured rates (JSON list of profile records) laid over the estimates.
    #[arg(long)]
    pub profile_table: Option<PathBuf>,
    /// Use only configurations and rates from the profile table.
    #[arg(long, requires = "profile_table")]
    pub profile_only: bool,
    #[arg(long, default_value_t = 8)]
    pub max_gpus_per_replica: u32,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Budget in $/h; overrides the catalog's.
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    /// Binary-search stopping width, seconds.
    #[arg(long, default_value_t = 1.0)]
    pub tolerance: f64,
    #[arg(long, value_enum, default_value = "exact-lp")]
    pub feasibility: FeasibilityArg,
    #[arg(long, value_enum, default_value = "whole-requests")]
    pub granularity: GranularityArg,
    /// Wall-clock limit in seconds; the best plan so far is returned.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub no_pruning: bool,
    #[arg(long)]
    pub no_warm_start: bool,
    #[arg(long)]
    pub no_lower_bound_stop: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub demand: DemandArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Plan document produced by `plan`.
    #[arg(long)]
    pub plan: PathBuf,
    #[command(flatten)]
    pub demand: DemandArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[arg(long, value_enum, default_value = "weighted")]
    pub dispatch: DispatchArg,
    /// Per-request log (CSV).
    #[arg(long)]
    pub completions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    /// Model name; all catalog models when omitted.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub max_gpus_per_replica: u32,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub max_gpus_per_replica: u32,
    #[arg(long)]
    pub classes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub demand: DemandArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Comma-separated: uniform_composition, uniform_deployment,
    /// round_robin_assignment, homogeneous:<type>.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "uniform_composition,uniform_deployment,round_robin_assignment"
    )]
    pub baselines: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReplanArgs {
    /// The plan currently deployed.
    #[arg(long)]
    pub plan: PathBuf,
    #[command(flatten)]
    pub demand: DemandArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// New availability (JSON map type -> count); the catalog's otherwise.
    #[arg(long)]
    pub availability: Option<PathBuf>,
    /// Remove units of a type, as TYPE:N. Repeatable.
    #[arg(long, value_name = "TYPE:N")]
    pub drop: Vec<String>,
}

/// Provenance embedded in every output document.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub options: serde_json::Value,
    pub version: String,
    pub seed: u64,
    pub wall_s: f64,
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    #[serde(flatten)]
    body: &'a T,
    manifest: RunManifest,
}

struct Output {
    json: String,
    summary: String,
}

struct Context<'a> {
    cli: &'a Cli,
    inputs: BTreeMap<String, String>,
}

impl Context<'_> {
    fn path(&mut self, key: &str, p: &Path) -> PathBuf {
        self.inputs.insert(key.to_string(), p.display().to_string());
        p.to_path_buf()
    }

    fn catalog(&mut self) -> Result<CatalogBundle> {
        let p = self
            .cli
            .catalog
            .clone()
            .ok_or_else(|| Error::Input("--catalog is required".into()))?;
        let p = self.path("catalog", &p);
        load_catalog_file(&p)
    }

    fn document<T: Serialize>(&self, command: &str, body: &T, options: serde_json::Value, start: Instant) -> String {
        let doc = Document {
            body,
            manifest: RunManifest {
                command: command.to_string(),
                inputs: self.inputs.clone(),
                options,
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: self.cli.seed,
                wall_s: start.elapsed().as_secs_f64(),
            },
        };
        serde_json::to_string_pretty(&doc).expect("documents serialize")
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn load_classes(ctx: &mut Context<'_>, path: Option<&PathBuf>) -> Result<Vec<WorkloadType>> {
    match path {
        Some(p) => {
            let p = ctx.path("classes", p);
            let classes: Vec<WorkloadType> =
                serde_json::from_str(&read(&p)?).map_err(|e| Error::parse(&p.display().to_string(), &e))?;
            validate_classes(&classes)?;
            Ok(classes)
        }
        None => Ok(default_classes()),
    }
}

/// A trace file, or a ratio-spec document expanded into a trace.
fn load_trace(text: &str, classes: &[WorkloadType], seed: u64) -> Result<(Vec<RequestRecord>, Vec<WorkloadType>)> {
    if let Ok(spec) = RatioSpec::parse(text) {
        let classes = spec.classes.clone().unwrap_or_else(|| classes.to_vec());
        validate_classes(&classes)?;
        let trace = synth_trace(&spec.ratios, &classes, spec.total, spec.seed ^ seed, &spec.model)?;
        return Ok((trace, classes));
    }
    Ok((parse_trace(text)?, classes.to_vec()))
}

/// Demand, classes and (when a trace was given) the trace itself.
fn load_demand(
    ctx: &mut Context<'_>,
    args: &DemandArgs,
    bundle: &CatalogBundle,
) -> Result<(DemandMatrix, Vec<WorkloadType>, Option<Vec<RequestRecord>>)> {
    let classes = load_classes(ctx, args.classes.as_ref())?;
    if let Some(p) = &args.demand {
        let p = ctx.path("demand", p);
        let doc = DemandDocument::parse(&read(&p)?)?;
        let (doc_classes, demand) = match (&doc.classes, &args.classes) {
            (None, Some(_)) => DemandDocument {
                classes: Some(classes),
                demand: doc.demand.clone(),
            }
            .resolve()?,
            _ => doc.resolve()?,
        };
        return Ok((demand, doc_classes, None));
    }
    if let Some(p) = &args.trace {
        let p = ctx.path("trace", p);
        let (trace, classes) = load_trace(&read(&p)?, &classes, ctx.cli.seed)?;
        let names: Vec<&str> = bundle.models.iter().map(|m| m.name.as_str()).collect();
        let demand = ingest_trace(&trace, &classes, &names)?;
        return Ok((demand, classes, Some(trace)));
    }
    Err(Error::Input("one of --trace or --demand is required".into()))
}

fn solver_options(args: &SolveArgs, base: &solver::SolverOptions) -> solver::SolverOptions {
    solver::SolverOptions {
        mode: match args.mode {
            ModeArg::Exact => Mode::Exact,
            ModeArg::BinarySearch => Mode::BinarySearch,
        },
        tolerance: args.tolerance,
        wall_clock_limit: args.time_limit,
        enable_pruning: !args.no_pruning,
        enable_warm_start: !args.no_warm_start,
        enable_lower_bound_stop: !args.no_lower_bound_stop,
        feasibility_mode: match args.feasibility {
            FeasibilityArg::ExactLp => FeasibilityMode::ExactLp,
            FeasibilityArg::KnapsackGreedy => FeasibilityMode::KnapsackGreedy,
        },
        granularity: match args.granularity {
            GranularityArg::WholeRequests => Granularity::WholeRequests,
            GranularityArg::Fluid => Granularity::Fluid,
        },
        model_memory: base.model_memory.clone(),
    }
}

fn load_profile(
    ctx: &mut Context<'_>,
    args: &TableArgs,
    bundle: &CatalogBundle,
    classes: &[WorkloadType],
) -> Result<Option<ThroughputTable>> {
    args.profile_table
        .as_ref()
        .map(|p| {
            let p = ctx.path("profile_table", p);
            load_profile_table_file(&p, &bundle.catalog, &bundle.models, classes)
        })
        .transpose()
}

fn planning_inputs(
    ctx: &mut Context<'_>,
    demand_args: &DemandArgs,
    table: &TableArgs,
    solve: &SolveArgs,
) -> Result<(PlanningInputs, Option<Vec<RequestRecord>>)> {
    let bundle = ctx.catalog()?;
    let (demand, classes, trace) = load_demand(ctx, demand_args, &bundle)?;
    let mut inputs = PlanningInputs::new(&bundle, classes, demand)?;
    if let Some(b) = solve.budget {
        inputs.budget = crate::catalog::Budget::new(b)?.limit();
    }
    inputs.max_gpus_per_replica = table.max_gpus_per_replica;
    inputs.profile = load_profile(ctx, table, &bundle, &inputs.classes)?;
    inputs.profile_only = table.profile_only;
    inputs.options = solver_options(solve, &inputs.options);
    Ok((inputs, trace))
}

fn options_value(inputs: &PlanningInputs) -> serde_json::Value {
    serde_json::json!({
        "budget": inputs.budget,
        "availability": inputs.availability,
        "max_gpus_per_replica": inputs.max_gpus_per_replica,
        "profile_only": inputs.profile_only,
        "solver": inputs.options,
    })
}

pub fn plan_summary(plan: &Plan) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "makespan      {:.2} s", plan.makespan);
    let _ = writeln!(s, "cost          {:.2} $/h", plan.total_cost);
    let _ = writeln!(
        s,
        "solver        {} (gap {:.4}, {} nodes, {:.3} s)",
        plan.solver.mode, plan.solver.gap, plan.solver.evaluated_nodes, plan.solver.wall_s
    );
    let usage: Vec<String> = plan.gpu_usage.iter().map(|(t, n)| format!("{t}:{n}")).collect();
    let _ = writeln!(s, "gpus          {}", usage.join(" "));
    let width = plan
        .assignment
        .iter()
        .map(|e| e.config_id.len())
        .chain(plan.activations.iter().map(|a| a.config_id.len()))
        .chain(std::iter::once(13))
        .max()
        .unwrap_or(13);
    let _ = writeln!(s, "\n{:<width$}  {:>6}", "configuration", "copies");
    for a in &plan.activations {
        let _ = writeln!(s, "{:<width$}  {:>6}", a.config_id, a.count);
    }
    let _ = writeln!(s, "\n{:<width$}  {:>12}  {:>8}  {:>8}", "configuration", "model", "class", "share");
    for e in &plan.assignment {
        let _ = writeln!(
            s,
            "{:<width$}  {:>12}  {:>8}  {:>8.4}",
            e.config_id, e.model, e.workload_id, e.fraction
        );
    }
    s
}

fn cmd_plan(ctx: &mut Context<'_>, args: &PlanArgs) -> Result<Output> {
    let start = Instant::now();
    let (inputs, _) = planning_inputs(ctx, &args.demand, &args.table, &args.solve)?;
    let (plan, _) = inputs.plan()?;
    Ok(Output {
        json: ctx.document("plan", &plan, options_value(&inputs), start),
        summary: plan_summary(&plan),
    })
}

/// Configurations named by a plan, rebuilt from their ids.
fn plan_configs(plan: &Plan, bundle: &CatalogBundle) -> Result<Vec<Configuration>> {
    plan.activations
        .iter()
        .map(|a| {
            let (model, placements) = parse_config_id(&a.config_id)?;
            Configuration::build(bundle.model(&model)?, &bundle.catalog, &placements)
        })
        .collect()
}

fn plan_table(
    ctx: &mut Context<'_>,
    args: &TableArgs,
    bundle: &CatalogBundle,
    configs: &[Configuration],
    classes: &[WorkloadType],
) -> Result<ThroughputTable> {
    let profile = load_profile(ctx, args, bundle, classes)?;
    match (profile, args.profile_only) {
        (Some(p), true) => Ok(p),
        (profile, _) => {
            let mut table = build_table(
                configs,
                classes,
                &bundle.models,
                &bundle.catalog,
                &Default::default(),
                &Default::default(),
            )?;
            if let Some(p) = profile {
                table.overlay(&p);
            }
            Ok(table)
        }
    }
}

/// Every request of a demand document, arriving at t = 0.
fn demand_trace(demand: &DemandMatrix, classes: &[WorkloadType]) -> Result<Vec<RequestRecord>> {
    let mut out = Vec::new();
    for (key, f) in demand.positive() {
        if (f - f.round()).abs() > 1e-9 {
            return Err(Error::NonIntegralDemand {
                model: key.model.clone(),
                workload: key.workload,
                count: f,
            });
        }
        let class = classes
            .iter()
            .find(|c| c.id == key.workload)
            .ok_or_else(|| Error::unknown("workload class", key.workload.to_string()))?;
        for _ in 0..f.round() as u64 {
            out.push(RequestRecord {
                input_len: class.rep_input_len,
                output_len: class.rep_output_len,
                model: key.model.clone(),
                arrival_time: None,
            });
        }
    }
    Ok(out)
}

fn cmd_simulate(ctx: &mut Context<'_>, args: &SimulateArgs) -> Result<Output> {
    let start = Instant::now();
    let bundle = ctx.catalog()?;
    let plan_path = ctx.path("plan", &args.plan);
    let plan = Plan::from_json(&read(&plan_path)?)?;
    let (demand, classes, trace) = load_demand(ctx, &args.demand, &bundle)?;
    let trace = match trace {
        Some(t) => t,
        None => demand_trace(&demand, &classes)?,
    };
    let configs = plan_configs(&plan, &bundle)?;
    let table = plan_table(ctx, &args.table, &bundle, &configs, &classes)?;
    let dispatch = match args.dispatch {
        DispatchArg::Weighted => simulator::Dispatch::Weighted,
        DispatchArg::Quota => simulator::Dispatch::Quota,
    };
    let (report, log) = simulate_events(&plan, &trace, &classes, &table, ctx.cli.seed, dispatch)?;
    if let Some(p) = &args.completions {
        std::fs::write(p, completions_csv(&log))?;
    }
    let options = serde_json::json!({ "dispatch": dispatch });
    Ok(Output {
        json: ctx.document("simulate", &report, options, start),
        summary: report.to_table(),
    })
}

#[derive(Serialize)]
struct EnumerationDoc {
    configs: Vec<ConfigRecord>,
    pruned: Vec<PrunedFamily>,
}

fn selected_models<'b>(bundle: &'b CatalogBundle, model: Option<&String>) -> Result<Vec<&'b crate::catalog::ModelSpec>> {
    match model {
        Some(m) => Ok(vec![bundle.model(m)?]),
        None if bundle.models.is_empty() => Err(Error::Input("the catalog defines no models".into())),
        None => Ok(bundle.models.iter().collect()),
    }
}

fn cmd_enumerate(ctx: &mut Context<'_>, args: &EnumerateArgs) -> Result<Output> {
    let start = Instant::now();
    let bundle = ctx.catalog()?;
    let mut doc = EnumerationDoc {
        configs: Vec::new(),
        pruned: Vec::new(),
    };
    for m in selected_models(&bundle, args.model.as_ref())? {
        let e = enumerate_configs(&bundle.catalog, &bundle.availability, m, args.max_gpus_per_replica)?;
        doc.configs.extend(e.configs.iter().map(ConfigRecord::from));
        doc.pruned.extend(e.pruned);
    }
    let mut summary = format!("{} configurations\n", doc.configs.len());
    for c in &doc.configs {
        let _ = writeln!(summary, "{:<48} {:>8.2} $/h", c.id, c.cost);
    }
    for p in &doc.pruned {
        let _ = writeln!(summary, "pruned {} x{}: {}", p.family, p.count, p.reason);
    }
    let options = serde_json::json!({ "max_gpus_per_replica": args.max_gpus_per_replica, "model": args.model });
    Ok(Output {
        json: ctx.document("enumerate", &doc, options, start),
        summary,
    })
}

#[derive(Serialize)]
struct ProfileDoc {
    records: Vec<ProfileRecord>,
}

fn cmd_profile(ctx: &mut Context<'_>, args: &ProfileArgs) -> Result<Output> {
    let start = Instant::now();
    let bundle = ctx.catalog()?;
    let classes = load_classes(ctx, args.classes.as_ref())?;
    let mut configs = Vec::new();
    for m in selected_models(&bundle, args.model.as_ref())? {
        configs.extend(enumerate_configs(&bundle.catalog, &bundle.availability, m, args.max_gpus_per_replica)?.configs);
    }
    let table = build_table(
        &configs,
        &classes,
        &bundle.models,
        &bundle.catalog,
        &Default::default(),
        &Default::default(),
    )?;
    let doc = ProfileDoc {
        records: table.to_records(),
    };
    let mut summary = format!("{} entries\n", doc.records.len());
    for r in &doc.records {
        let _ = writeln!(summary, "{:<48} w{:<2} {:>10.4} req/s", r.config_id, r.workload_id, r.rate_rps);
    }
    let options = serde_json::json!({ "max_gpus_per_replica": args.max_gpus_per_replica, "model": args.model });
    Ok(Output {
        json: ctx.document("profile", &doc, options, start),
        summary,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub variant: String,
    pub makespan: Option<f64>,
    pub throughput: Option<f64>,
    pub cost: Option<f64>,
    /// Baseline makespan relative to the optimized one, percent.
    pub delta_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct CompareDoc {
    rows: Vec<CompareRow>,
}

fn row(variant: String, plan: &Plan, demand: &DemandMatrix, reference: f64) -> CompareRow {
    CompareRow {
        variant,
        makespan: Some(plan.makespan),
        throughput: Some(plan.throughput(demand)),
        cost: Some(plan.total_cost),
        delta_pct: Some(100.0 * (plan.makespan - reference) / reference),
        error: None,
    }
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let width = rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
    let mut s = format!(
        "{:<width$}  {:>12}  {:>12}  {:>10}  {:>9}\n",
        "variant", "makespan_s", "throughput", "cost_$/h", "delta_%"
    );
    let f = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
    for r in rows {
        let _ = write!(
            s,
            "{:<width$}  {:>12}  {:>12}  {:>10}  {:>9}",
            r.variant,
            f(r.makespan, 3),
            f(r.throughput, 4),
            f(r.cost, 2),
            f(r.delta_pct, 2)
        );
        if let Some(e) = &r.error {
            let _ = write!(s, "  ({e})");
        }
        s.push('\n');
    }
    s
}

fn cmd_compare(ctx: &mut Context<'_>, args: &CompareArgs) -> Result<Output> {
    let start = Instant::now();
    let kinds = args
        .baselines
        .iter()
        .map(|b| b.trim().parse::<BaselineKind>())
        .collect::<Result<Vec<_>>>()?;
    let (inputs, _) = planning_inputs(ctx, &args.demand, &args.table, &args.solve)?;
    let (opt, cands) = inputs.plan()?;
    let mut rows = vec![row("optimized".into(), &opt, &inputs.demand, opt.makespan)];
    for kind in &kinds {
        match baseline(&inputs, kind, Some((&opt, &cands))) {
            Ok(p) => rows.push(row(kind.to_string(), &p, &inputs.demand, opt.makespan)),
            Err(e) => rows.push(CompareRow {
                variant: kind.to_string(),
                makespan: None,
                throughput: None,
                cost: None,
                delta_pct: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let summary = compare_table(&rows);
    Ok(Output {
        json: ctx.document("compare", &CompareDoc { rows }, options_value(&inputs), start),
        summary,
    })
}

#[derive(Serialize)]
struct ReplanDoc<'a> {
    plan: &'a Plan,
    delta: &'a DeltaReport,
}

fn parse_drop(s: &str) -> Result<(String, u32)> {
    let (t, n) = s
        .rsplit_once(':')
        .ok_or_else(|| Error::Input(format!("--drop expects TYPE:N, got `{s}`")))?;
    let n = n
        .parse()
        .map_err(|_| Error::Input(format!("--drop expects TYPE:N, got `{s}`")))?;
    Ok((t.to_string(), n))
}

fn cmd_replan(ctx: &mut Context<'_>, args: &ReplanArgs) -> Result<Output> {
    let start = Instant::now();
    let plan_path = ctx.path("plan", &args.plan);
    let previous = Plan::from_json(&read(&plan_path)?)?;
    let (mut inputs, _) = planning_inputs(ctx, &args.demand, &args.table, &args.solve)?;
    if let Some(p) = &args.availability {
        let p = ctx.path("availability", p);
        let a: Availability =
            serde_json::from_str(&read(&p)?).map_err(|e| Error::parse(&p.display().to_string(), &e))?;
        a.validate(&inputs.catalog)?;
        inputs.availability = a;
    }
    for d in &args.drop {
        let (t, n) = parse_drop(d)?;
        inputs.catalog.require(&t)?;
        let left = inputs.availability.get(&t).saturating_sub(n);
        inputs.availability.set(&t, left);
    }
    let cands = inputs.candidates()?;
    let (plan, delta) = solver::replan(
        &previous,
        &cands.configs,
        &cands.table,
        &inputs.demand,
        inputs.budget,
        &inputs.availability,
        &inputs.options,
    )?;
    let mut summary = plan_summary(&plan);
    let _ = writeln!(summary, "\nthroughput    {:.4} -> {:.4} req/s", delta.throughput_before, delta.throughput_after);
    for a in &delta.added {
        let _ = writeln!(summary, "added         {} x{}", a.config_id, a.count);
    }
    for a in &delta.removed {
        let _ = writeln!(summary, "removed       {} x{}", a.config_id, a.count);
    }
    let doc = ReplanDoc {
        plan: &plan,
        delta: &delta,
    };
    Ok(Output {
        json: ctx.document("replan", &doc, options_value(&inputs), start),
        summary,
    })
}

fn execute(cli: &Cli) -> Result<Output> {
    let mut ctx = Context {
        cli,
        inputs: BTreeMap::new(),
    };
    match &cli.command {
        Command::Plan(a) => cmd_plan(&mut ctx, a),
        Command::Simulate(a) => cmd_simulate(&mut ctx, a),
        Command::Enumerate(a) => cmd_enumerate(&mut ctx, a),
        Command::Profile(a) => cmd_profile(&mut ctx, a),
        Command::Compare(a) => cmd_compare(&mut ctx, a),
        Command::Replan(a) => cmd_replan(&mut ctx, a),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_infeasible() {
        2
    } else {
        1
    }
}

/// Runs one invocation, writing to the given streams; returns the exit code.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{e}")
            } else {
                write!(stderr, "{e}")
            };
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            let written = match &cli.out {
                Some(p) => std::fs::write(p, format!("{}\n", out.json)).map_err(|e| format!("{}: {e}", p.display())),
                None => writeln!(stdout, "{}", out.json).map_err(|e| e.to_string()),
            };
            if let Err(e) = written {
                let _ = writeln!(stderr, "error: {e}");
                return 1;
            }
            if !cli.quiet {
                let sink: &mut dyn Write = if cli.out.is_some() { stdout } else { stderr };
                let _ = write!(sink, "{}", out.summary);
            }
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn drop_syntax() {
        assert_eq!(parse_drop("H100:4").unwrap(), ("H100".to_string(), 4));
        assert!(parse_drop("H100").is_err());
        assert!(parse_drop("H100:x").is_err());
    }

    #[test]
    fn missing_catalog_is_an_error() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(["hetserve", "enumerate"], &mut out, &mut err);
        assert_eq!(code, 1);
        assert!(String::from_utf8(err).unwrap().contains("--catalog"));
    }

    #[test]
    fn help_exits_zero() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(run_with(["hetserve", "--help"], &mut out, &mut err), 0);
        assert!(String::from_utf8(out).unwrap().contains("replan"));
    }
}
