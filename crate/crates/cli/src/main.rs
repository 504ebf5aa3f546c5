mod artifacts;
mod config;

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rayon::prelude::*;

use outreach::apportion::{
    group_min_budget, local_vs_global_report, plan_table_csv, plan_with_minimums, prepare_groups,
};
use outreach::buckets::{bucket_table_csv, buckets_with};
use outreach::colgen::ProportionalOptions;
use outreach::greedy::{greedy_equal_with, GreedyOptions};
use outreach::layout::dependent_round_with;
use outreach::report::{self, metrics, metrics_csv};
use outreach::roster::{load_roster, write_roster_csv};
use outreach::{
    fixtures, optimize_proportional, rng_from_seed, solve_kappa, DeviationScope, Layout,
    LetterDistribution, MinBudgetMode, Mode, PlanInputs, ProblemInstance, TargetProfile,
};

use artifacts::{manifest, DistributionFile, OutputDir};
use config::{Method, RunConfig};

#[derive(Parser)]
#[command(
    name = "outreach",
    version,
    about = "Plan fair letter outreach across municipalities"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Source {
    /// Roster CSV with columns id,name,state,population[,cap].
    #[arg(long, conflicts_with = "fixture")]
    roster: Option<PathBuf>,
    /// Built-in roster: example1, fig5, fig6, np-hard or national.
    #[arg(long)]
    fixture: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
struct Overrides {
    /// Total letters to send.
    #[arg(long)]
    letters: Option<u64>,
    /// Number of municipalities that may receive letters.
    #[arg(short = 't', long)]
    budget: Option<usize>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Target function: sqrt, constant or proportional.
    #[arg(long)]
    targets: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Deviation counted over selected cities only or over all cities.
    #[arg(long, value_parser = ["selected-only", "all-cities"])]
    deviation_scope: Option<String>,
    /// Run greedy equal even when oversized cities have small caps.
    #[arg(long)]
    allow_oversized: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Read a roster, apply the cap rule and report the instance.
    Ingest {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: Overrides,
        /// Write roster.csv and instance.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one instance and write the distribution and reports.
    Solve {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Draw integral allocations from a distribution file.
    Sample {
        #[arg(long)]
        distribution: PathBuf,
        /// Number of draws.
        #[arg(short, long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics and figures for a distribution against its roster.
    Report {
        #[arg(long)]
        distribution: PathBuf,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Stratify, split letters and budget across groups, optionally solve
    /// every group.
    Apportion {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: Overrides,
        /// Rule for per-group minimum budgets (defaults to the method's).
        #[arg(long, value_parser = ["lower-bound", "greedy-equal", "buckets", "column-generation"])]
        min_budget: Option<String>,
        /// Run the chosen method in every group.
        #[arg(long)]
        solve: bool,
        /// Worker threads for per-group work.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "apportion")]
        out: PathBuf,
    },
}

// ------------------------------------------------------------------ errors

#[derive(Debug, Clone, Copy)]
enum Kind {
    Usage = 1,
    Solver = 2,
    Io = 3,
}

struct Failure {
    kind: Kind,
    error: anyhow::Error,
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

trait Classify<T> {
    fn kind(self, kind: Kind) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn kind(self, kind: Kind) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            kind,
            error: e.into(),
        })
    }
}

fn fail<T>(kind: Kind, msg: String) -> Result<T, Failure> {
    Err(Failure {
        kind,
        error: anyhow!(msg),
    })
}

// -------------------------------------------------------------- main flow

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.kind as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let base = RunConfig::load(cli.config.as_deref()).kind(Kind::Usage)?;
    match cli.command {
        Command::Ingest {
            source,
            overrides,
            out,
        } => ingest(&base, &source, &overrides, out.as_deref()),
        Command::Solve {
            source,
            overrides,
            out,
        } => solve(&base, &source, &overrides, &out),
        Command::Sample {
            distribution,
            k,
            seed,
            out,
        } => sample(&distribution, k, seed, out.as_deref()),
        Command::Report {
            distribution,
            source,
            overrides,
            out,
        } => report_cmd(&base, &distribution, &source, &overrides, &out),
        Command::Apportion {
            source,
            overrides,
            min_budget,
            solve,
            jobs,
            out,
        } => apportion(
            &base,
            &source,
            &overrides,
            min_budget.as_deref(),
            solve,
            jobs,
            &out,
        ),
    }
}

fn effective_config(base: &RunConfig, o: &Overrides) -> Result<RunConfig, Failure> {
    let mut cfg = base.clone();
    if o.letters.is_some() {
        cfg.letters = o.letters;
    }
    if o.budget.is_some() {
        cfg.budget = o.budget;
    }
    if let Some(m) = o.method {
        cfg.method = m;
    }
    if let Some(t) = &o.targets {
        cfg.targets = t.clone();
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(s) = &o.deviation_scope {
        cfg.deviation_scope = if s == "all-cities" {
            DeviationScope::AllCities
        } else {
            DeviationScope::SelectedOnly
        };
    }
    cfg.allow_oversized |= o.allow_oversized;
    cfg.validate().kind(Kind::Usage)?;
    Ok(cfg)
}

struct Loaded {
    instance: ProblemInstance,
    roster_digest: Option<String>,
}

/// Builds the instance from a roster file or a named fixture. Missing letter
/// or budget values fall back to the fixture's own, then to `default_budget`.
fn load_instance(
    cfg: &RunConfig,
    source: &Source,
    default_budget: Option<usize>,
) -> Result<Loaded, Failure> {
    match (&source.roster, &source.fixture) {
        (Some(path), _) => {
            let roster = load_roster(path, &cfg.cap_rule, &cfg.thresholds).map_err(|e| {
                let kind = Kind::Io;
                Failure {
                    kind,
                    error: anyhow::Error::new(e)
                        .context(format!("reading roster {}", path.display())),
                }
            })?;
            let letters = cfg
                .letters
                .ok_or_else(|| anyhow!("--letters is required with a roster file"))
                .kind(Kind::Usage)?;
            let budget = cfg
                .budget
                .or(default_budget)
                .ok_or_else(|| anyhow!("--budget is required with a roster file"))
                .kind(Kind::Usage)?;
            let instance =
                ProblemInstance::validate(roster.cities, letters, budget).kind(Kind::Usage)?;
            Ok(Loaded {
                instance,
                roster_digest: Some(roster.source_digest),
            })
        }
        (None, Some(name)) => {
            let fixture = fixtures::by_name(name).ok_or_else(|| Failure {
                kind: Kind::Usage,
                error: anyhow!(
                    "unknown fixture `{name}` (known: {})",
                    fixtures::NAMES.join(", ")
                ),
            })?;
            let letters = cfg.letters.unwrap_or(fixture.letters());
            let budget = cfg.budget.or(default_budget).unwrap_or(fixture.budget());
            let instance = if letters == fixture.letters() {
                fixture.with_budget(budget)
            } else {
                ProblemInstance::validate(fixture.raw_cities(), letters, budget)
                    .kind(Kind::Usage)?
            };
            Ok(Loaded {
                instance,
                roster_digest: None,
            })
        }
        (None, None) => fail(Kind::Usage, "pass --roster FILE or --fixture NAME".into()),
    }
}

fn ingest(
    base: &RunConfig,
    source: &Source,
    o: &Overrides,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = effective_config(base, o)?;
    let loaded = load_instance(&cfg, source, Some(1))?;
    let inst = &loaded.instance;
    let groups = outreach::group(inst, &cfg.thresholds).kind(Kind::Usage)?;
    let wp = inst.width_profile();
    let summary = serde_json::json!({
        "instance_digest": inst.digest(),
        "roster_digest": loaded.roster_digest,
        "cities": inst.n(),
        "letters": inst.letters(),
        "budget": inst.budget(),
        "total_width": wp.total,
        "lower_bound_t": inst.lower_bound_t(),
        "oversized": inst.oversized(inst.budget()).iter().map(|&i| &inst.city(i).id).collect::<Vec<_>>(),
        "assumption_violations": inst.assumption_violations(inst.budget()).iter().map(|&i| &inst.city(i).id).collect::<Vec<_>>(),
        "warnings": inst.warnings(),
        "groups": groups.iter().map(|g| serde_json::json!({
            "group": g.key.to_string(),
            "cities": g.n(),
            "population": g.population,
            "share": g.share,
        })).collect::<Vec<_>>(),
    });
    println!(
        "{} cities, {} letters, budget {}; total width {:.6}, lower bound {}; {} groups; digest {}",
        inst.n(),
        inst.letters(),
        inst.budget(),
        wp.total,
        inst.lower_bound_t(),
        groups.len(),
        inst.digest()
    );
    if let Some(dir) = out {
        let mut od = OutputDir::create(dir).kind(Kind::Io)?;
        od.write("roster.csv", &write_roster_csv(&inst.raw_cities()))
            .kind(Kind::Io)?;
        od.write_json("instance.json", &summary).kind(Kind::Io)?;
        od.finish(manifest("ingest", &cfg, inst, loaded.roster_digest))
            .kind(Kind::Io)?;
    }
    Ok(())
}

// ----------------------------------------------------------------- solving

struct Solved {
    distribution: LetterDistribution,
    layout: Option<Layout>,
    targets: Option<TargetProfile>,
    /// Extra (file name, content) pairs specific to the method.
    extras: Vec<(String, String)>,
    /// False when column generation stopped before proving optimality.
    proven: bool,
}

struct SolveFailure {
    message: String,
    trace: Option<serde_json::Value>,
}

impl<E: fmt::Display> From<E> for SolveFailure {
    fn from(e: E) -> Self {
        SolveFailure {
            message: e.to_string(),
            trace: None,
        }
    }
}

fn run_method(inst: &ProblemInstance, cfg: &RunConfig) -> Result<Solved, SolveFailure> {
    let t = inst.budget();
    let f = cfg.target_function()?;
    match cfg.method {
        Method::GreedyEqual => {
            let opts = GreedyOptions {
                allow_oversized_caps: cfg.allow_oversized,
            };
            let r = greedy_equal_with(inst, t, opts).map_err(|e| SolveFailure {
                message: e.to_string(),
                trace: e
                    .trace()
                    .map(|tr| serde_json::to_value(tr).expect("trace serializes")),
            })?;
            let distribution = r.layout.extract_distribution()?;
            let trace = serde_json::to_string_pretty(&r.trace).expect("trace serializes") + "\n";
            Ok(Solved {
                distribution,
                targets: solve_kappa(inst, &f, t).ok(),
                layout: Some(r.layout),
                extras: vec![("trace.json".into(), trace)],
                proven: true,
            })
        }
        Method::Buckets => {
            let targets = solve_kappa(inst, &f, t)?;
            let r = buckets_with(inst, t, &targets, cfg.bucket_rule)?;
            let distribution = r.layout.extract_distribution()?;
            Ok(Solved {
                distribution,
                extras: vec![("buckets.csv".into(), bucket_table_csv(&r, inst))],
                layout: Some(r.layout),
                targets: Some(targets),
                proven: true,
            })
        }
        Method::ColumnGeneration => {
            let targets = solve_kappa(inst, &f, t)?;
            let r = optimize_proportional(
                inst,
                t,
                &targets,
                ProportionalOptions {
                    scope: cfg.deviation_scope,
                    max_iterations: (cfg.colgen_max_iterations > 0)
                        .then_some(cfg.colgen_max_iterations),
                    node_budget: cfg.colgen_pricing_nodes,
                },
            )?;
            if !r.optimal {
                log::warn!(
                    "column generation not proven optimal: objective {:.6}, lower bound {:.6}",
                    r.objective,
                    r.lower_bound
                );
            }
            Ok(Solved {
                distribution: r.distribution,
                layout: None,
                targets: Some(targets),
                extras: vec![("colgen_log.csv".into(), r.log.to_csv())],
                proven: r.optimal,
            })
        }
    }
}

fn write_solution(
    od: &mut OutputDir,
    prefix: &str,
    inst: &ProblemInstance,
    cfg: &RunConfig,
    s: &Solved,
) -> anyhow::Result<()> {
    let file = DistributionFile::new(cfg.method.name(), inst, &s.distribution);
    od.write_json(&format!("{prefix}distribution.json"), &file)?;
    let tau = s.targets.as_ref().map(|p| p.tau.as_slice());
    let m = metrics(inst, &s.distribution, tau)?;
    od.write(
        &format!("{prefix}metrics.csv"),
        &metrics_csv(&m, &inst.digest()),
    )?;
    let ids: Vec<String> = inst.cities().iter().map(|c| c.id.clone()).collect();
    if let Some(layout) = &s.layout {
        od.write_json(&format!("{prefix}layout.json"), layout)?;
        od.write(
            &format!("{prefix}stacked.svg"),
            &report::render_stacked(layout, &ids),
        )?;
        od.write(
            &format!("{prefix}flat.svg"),
            &report::render_flat(layout, &ids),
        )?;
    }
    if let Some(tau) = tau {
        od.write(
            &format!("{prefix}proportionality.svg"),
            &report::render_proportionality(&s.distribution, tau),
        )?;
        od.write_json(
            &format!("{prefix}targets.json"),
            s.targets.as_ref().expect("targets present"),
        )?;
    }
    for (name, content) in &s.extras {
        od.write(&format!("{prefix}{name}"), content)?;
    }
    Ok(())
}

fn solve(base: &RunConfig, source: &Source, o: &Overrides, out: &Path) -> Result<(), Failure> {
    let cfg = effective_config(base, o)?;
    let loaded = load_instance(&cfg, source, None)?;
    let inst = &loaded.instance;
    let mut od = OutputDir::create(out).kind(Kind::Io)?;
    let outcome = run_method(inst, &cfg);
    match outcome {
        Ok(s) => {
            write_solution(&mut od, "", inst, &cfg, &s).kind(Kind::Io)?;
            od.finish(manifest("solve", &cfg, inst, loaded.roster_digest))
                .kind(Kind::Io)?;
            let a = outreach::audit(inst, &s.distribution).kind(Kind::Solver)?;
            println!(
                "{}: {} support entries, max support {}, fairness error {:.2e}; wrote {}",
                cfg.method.name(),
                s.distribution.entries().len(),
                a.max_support,
                a.max_abs_error,
                out.display()
            );
            Ok(())
        }
        Err(f) => {
            let record = serde_json::json!({
                "method": cfg.method.name(),
                "t": inst.budget(),
                "instance_digest": inst.digest(),
                "error": f.message,
                "trace": f.trace,
            });
            od.write_json("failure.json", &record).kind(Kind::Io)?;
            od.finish(manifest("solve", &cfg, inst, loaded.roster_digest))
                .kind(Kind::Io)?;
            fail(
                Kind::Solver,
                format!("{} failed: {}", cfg.method.name(), f.message),
            )
        }
    }
}

// ------------------------------------------------------- sample and report

fn sample(path: &Path, k: usize, seed: u64, out: Option<&Path>) -> Result<(), Failure> {
    let file = DistributionFile::read(path).kind(Kind::Io)?;
    let dist = file.distribution().kind(Kind::Usage)?;
    let mut rng = rng_from_seed(seed);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["draw", "city_id", "letters"])
        .kind(Kind::Io)?;
    for draw in 0..k {
        let rho: f64 = rng.random();
        let picked = dist.sample(rho);
        let rounded = match dist.mode() {
            Mode::Integral => picked.clone(),
            Mode::Fractional => {
                dependent_round_with(picked, file.letters, &mut rng).kind(Kind::Usage)?
            }
        };
        for (id, &a) in file.city_ids.iter().zip(&rounded.0) {
            if a > 0.0 {
                w.write_record([
                    draw.to_string(),
                    id.clone(),
                    format!("{}", a.round() as u64),
                ])
                .kind(Kind::Io)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| anyhow!("{e}")).kind(Kind::Io)?;
    match out {
        Some(p) => std::fs::write(p, bytes)
            .with_context(|| format!("writing {}", p.display()))
            .kind(Kind::Io),
        None => std::io::stdout().write_all(&bytes).kind(Kind::Io),
    }
}

fn report_cmd(
    base: &RunConfig,
    path: &Path,
    source: &Source,
    o: &Overrides,
    out: &Path,
) -> Result<(), Failure> {
    let file = DistributionFile::read(path).kind(Kind::Io)?;
    let mut cfg = effective_config(base, o)?;
    if cfg.letters.is_none() {
        cfg.letters = Some(file.letters);
    }
    let loaded = load_instance(&cfg, source, Some(file.t))?;
    let inst = &loaded.instance;
    if inst.digest() != file.instance_digest {
        return fail(
            Kind::Usage,
            format!(
                "refusing to mix artifacts: distribution belongs to instance {}, roster gives {}",
                file.instance_digest,
                inst.digest()
            ),
        );
    }
    let dist = file.distribution().kind(Kind::Usage)?;
    let targets = solve_kappa(
        inst,
        &cfg.target_function().kind(Kind::Usage)?,
        inst.budget(),
    )
    .ok();
    let tau = targets.as_ref().map(|p| p.tau.as_slice());
    let m = metrics(inst, &dist, tau).kind(Kind::Usage)?;
    let mut od = OutputDir::create(out).kind(Kind::Io)?;
    od.write("metrics.csv", &metrics_csv(&m, &inst.digest()))
        .kind(Kind::Io)?;
    if let Some(tau) = tau {
        od.write(
            "proportionality.svg",
            &report::render_proportionality(&dist, tau),
        )
        .kind(Kind::Io)?;
        od.write_json(
            "proportionality.json",
            &report::proportionality_rows(inst, &dist, tau),
        )
        .kind(Kind::Io)?;
    }
    od.finish(manifest("report", &cfg, inst, loaded.roster_digest))
        .kind(Kind::Io)?;
    println!(
        "fair: {}, max support {}, expected phi {}",
        m.fair,
        m.max_support,
        m.expected_phi.map_or("n/a".into(), |v| format!("{v:.6}"))
    );
    Ok(())
}

// -------------------------------------------------------------- apportion

fn parse_min_budget(s: &str) -> MinBudgetMode {
    match s {
        "greedy-equal" => MinBudgetMode::GreedyEqual,
        "buckets" => MinBudgetMode::Buckets,
        "column-generation" => MinBudgetMode::ColumnGeneration,
        _ => MinBudgetMode::LowerBound,
    }
}

fn apportion(
    base: &RunConfig,
    source: &Source,
    o: &Overrides,
    min_budget: Option<&str>,
    solve_groups: bool,
    jobs: usize,
    out: &Path,
) -> Result<(), Failure> {
    let mut cfg = effective_config(base, o)?;
    if let Some(m) = min_budget {
        cfg.min_budget_mode = Some(parse_min_budget(m));
    }
    let mode = cfg.min_budget_mode.unwrap_or(cfg.method.min_budget_mode());
    let loaded = load_instance(&cfg, source, None)?;
    let inst = &loaded.instance;
    let function = cfg.target_function().kind(Kind::Usage)?;
    let inputs = PlanInputs {
        thresholds: cfg.thresholds,
        function: function.clone(),
        mode,
        seed: cfg.seed,
        pivots_per_row: (cfg.colgen_pivots_per_row > 0).then_some(cfg.colgen_pivots_per_row),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .kind(Kind::Usage)?;

    let (groups, letters, subs) = prepare_groups(inst, &inputs).kind(Kind::Usage)?;
    let mins: Vec<_> = pool.install(|| {
        subs.par_iter()
            .map(|s| group_min_budget(s, &inputs))
            .collect()
    });
    let mins = mins
        .into_iter()
        .zip(&groups)
        .map(|(m, g)| match m {
            Ok(Some(m)) => {
                if !m.proven {
                    log::warn!(
                        "group {}: minimum budget {} is an upper bound (pivot limit reached)",
                        g.key,
                        m.budget
                    );
                }
                Ok(m)
            }
            Ok(None) => Err(anyhow!("group {}: no budget up to {} works", g.key, g.n())),
            Err(e) => Err(anyhow!(
                "group {}: minimum budget search failed: {e}",
                g.key
            )),
        })
        .collect::<Result<Vec<_>, _>>()
        .kind(Kind::Solver)?;
    let plan = plan_with_minimums(inst, &inputs, groups, letters, subs.clone(), mins)
        .kind(Kind::Solver)?;

    let mut od = OutputDir::create(out).kind(Kind::Io)?;
    od.write(
        "plan.csv",
        &plan_table_csv(&[(cfg.method.name(), &plan)]).kind(Kind::Usage)?,
    )
    .kind(Kind::Io)?;
    od.write_json("plan.json", &plan).kind(Kind::Io)?;
    let rows = local_vs_global_report(&plan);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "t_G", "max_ratio", "single_city"])
        .kind(Kind::Io)?;
    for r in &rows {
        w.write_record([
            r.key.to_string(),
            r.budget.to_string(),
            format!("{:.6}", r.max_ratio),
            r.single_city.to_string(),
        ])
        .kind(Kind::Io)?;
    }
    od.write(
        "local_vs_global.csv",
        &String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}")).kind(Kind::Io)?)
            .kind(Kind::Io)?,
    )
    .kind(Kind::Io)?;

    let mut solver_failures = 0;
    if solve_groups {
        let results: Vec<(ProblemInstance, Result<Solved, SolveFailure>)> = pool.install(|| {
            subs.par_iter()
                .zip(&plan.entries)
                .map(|(s, e)| {
                    let sub = s.with_budget(e.budget);
                    let started = Instant::now();
                    let r = run_method(&sub, &cfg);
                    log::debug!(
                        "group {} ({} cities, t = {}) solved in {:.2?}",
                        e.key,
                        sub.n(),
                        e.budget,
                        started.elapsed()
                    );
                    (sub, r)
                })
                .collect()
        });
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "group",
            "cities",
            "letters",
            "t_G",
            "status",
            "entries",
            "max_support",
            "expected_phi",
            "fair",
        ])
        .kind(Kind::Io)?;
        for (k, ((sub, r), e)) in results.iter().zip(&plan.entries).enumerate() {
            let prefix = format!("groups/{k:02}-");
            let mut rec = vec![
                e.key.to_string(),
                sub.n().to_string(),
                e.letters.to_string(),
                e.budget.to_string(),
            ];
            match r {
                Ok(s) => {
                    write_solution(&mut od, &prefix, sub, &cfg, s).kind(Kind::Io)?;
                    let tau = s.targets.as_ref().map(|p| p.tau.as_slice());
                    let m = metrics(sub, &s.distribution, tau).kind(Kind::Solver)?;
                    rec.extend([
                        if s.proven { "ok" } else { "not-proven-optimal" }.to_string(),
                        m.entries.to_string(),
                        m.max_support.to_string(),
                        m.expected_phi.map_or(String::new(), |v| format!("{v:.6}")),
                        m.fair.to_string(),
                    ]);
                }
                Err(f) => {
                    solver_failures += 1;
                    rec.extend([
                        format!("failed: {}", f.message),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                    ]);
                }
            }
            w.write_record(&rec).kind(Kind::Io)?;
        }
        od.write(
            "group_results.csv",
            &String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}")).kind(Kind::Io)?)
                .kind(Kind::Io)?,
        )
        .kind(Kind::Io)?;
    }
    od.finish(manifest("apportion", &cfg, inst, loaded.roster_digest))
        .kind(Kind::Io)?;
    println!(
        "{} groups, gamma {:.6}, budgets sum to {}; wrote {}",
        plan.entries.len(),
        plan.gamma,
        plan.entries.iter().map(|e| e.budget).sum::<usize>(),
        out.display()
    );
    if solver_failures > 0 {
        return fail(
            Kind::Solver,
            format!("{solver_failures} group solves failed"),
        );
    }
    Ok(())
}
