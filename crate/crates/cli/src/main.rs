//! `sitebt`: plan, compile, run and evaluate flag-synchronized machine trees.
//!
//! Exit codes: 0 success, 1 execution violation, 2 input or validation
//! error, 3 planner or transport error.

mod fail;
mod inspect;
mod model;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use sitebt::actionseq::{analyze_flags, parse, serialize, validate, ActionSequence};
use sitebt::btcompile::{compile, emit_xml, parse_xml, plan_stats, TaskParamDb};
use sitebt::eval::{evaluate, rules_attempt, PlanAttempt};
use sitebt::flagcore::{default_registry, GlobalBlackboard};
use sitebt::planner::{rule_planner, totals, Review};
use sitebt::scenario::{bundled_scenario, catalog, load_catalog_dir, Scenario};
use sitebt::sitesim::{registry_for, run, Mode, RunConfig, DEFAULT_BUDGET};

use fail::{Code, Fail, INPUT, OK, PLANNER, VIOLATION};
use model::{Hitl, ModelSource};

/// Bundled scenario whose site is used when an instruction comes alone.
const DEFAULT_SITE: u32 = 6;

#[derive(Parser)]
#[command(name = "sitebt", version, about = "Flag-synchronized behavior trees for earthwork machines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn an instruction or a catalog scenario into an action sequence.
    Plan(PlanArgs),
    /// Compile a sequence into one behavior tree XML per machine.
    Compile(CompileArgs),
    /// Execute a directory of machine trees on a simulated site.
    Run(RunArgs),
    /// Plan, compile and run every scenario of a catalog.
    Eval(EvalArgs),
    /// Pretty-print a sequence, tree XML or scenario file.
    Inspect { file: PathBuf },
    /// Print the task parameter database of a scenario's site.
    Params(SiteArgs),
}

#[derive(Args, Clone)]
struct SiteArgs {
    /// Bundled scenario id.
    #[arg(long, conflicts_with = "scenario_file")]
    scenario: Option<u32>,
    #[arg(long)]
    scenario_file: Option<PathBuf>,
}

impl SiteArgs {
    fn load(&self) -> Result<Option<Scenario>, Fail> {
        match (&self.scenario, &self.scenario_file) {
            (Some(id), _) => bundled_scenario(*id)
                .map(Some)
                .ok_or_else(|| Fail::input(format!("no bundled scenario {id}"))),
            (None, Some(p)) => Scenario::load(p).map(Some).code(INPUT),
            (None, None) => Ok(None),
        }
    }

    fn require(&self) -> Result<Scenario, Fail> {
        self.load()?
            .ok_or_else(|| Fail::input("a site is needed: pass --scenario or --scenario-file"))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlannerKind {
    Rules,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Deterministic,
    Concurrent,
}

#[derive(Args)]
struct ExecArgs {
    #[arg(long, value_enum, default_value = "deterministic")]
    mode: ModeArg,
    /// Tick budget before a run times out.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
}

impl ExecArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            budget: self.budget,
            mode: match self.mode {
                ModeArg::Deterministic => Mode::Deterministic,
                ModeArg::Concurrent => Mode::Concurrent,
            },
            deadlock_check: true,
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    /// Free-form instruction. Needs `--planner llm`.
    instruction: Option<String>,
    #[command(flatten)]
    site: SiteArgs,
    #[arg(long, value_enum, default_value = "rules")]
    planner: PlannerKind,
    /// interactive, off, or scripted:FILE with one feedback line per answer.
    #[arg(long, default_value = "interactive")]
    hitl: Hitl,
    /// Endpoint config JSON.
    #[arg(long)]
    llm_config: Option<PathBuf>,
    /// Answer from a replay file instead of the network.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Save the request/response transcripts here.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    /// Sequence file to write; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompileArgs {
    sequence: PathBuf,
    /// Task parameter database JSON.
    #[arg(long, conflicts_with_all = ["scenario", "scenario_file"])]
    params: Option<PathBuf>,
    #[command(flatten)]
    site: SiteArgs,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Directory of `<machine>.xml` files.
    xml_dir: PathBuf,
    #[command(flatten)]
    site: SiteArgs,
    #[command(flatten)]
    exec: ExecArgs,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Flag and location timeline as CSV.
    #[arg(long)]
    timeline: Option<PathBuf>,
    /// Event log as JSON lines.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of scenario JSON files; the bundled catalog when absent.
    catalog: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rules")]
    planner: PlannerKind,
    /// off, or scripted:DIR holding scenario_NN.txt feedback files.
    #[arg(long, default_value = "off")]
    hitl: Hitl,
    #[arg(long)]
    llm_config: Option<PathBuf>,
    /// Directory of scenario_NN.json replay files.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[command(flatten)]
    exec: ExecArgs,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Compile(a) => cmd_compile(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect { file } => cmd_inspect(&file),
        Command::Params(a) => cmd_params(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn read(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .code(INPUT)
}

fn write(path: &Path, contents: &str) -> Result<(), Fail> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .code(INPUT)
}

fn read_sequence(path: &Path) -> Result<ActionSequence, Fail> {
    parse(&read(path)?)
        .with_context(|| format!("{}", path.display()))
        .code(INPUT)
}

fn site_sets(db: &TaskParamDb) -> (BTreeMap<String, sitebt::MachineKind>, BTreeSet<String>) {
    (db.machine_kinds(), db.places().map(str::to_string).collect())
}

fn cmd_plan(a: PlanArgs) -> Result<u8, Fail> {
    let given = a.site.load()?;
    let (seq, text, usage, transcripts) = match a.planner {
        PlannerKind::Rules => {
            let Some(s) = &given else {
                return Err(Fail::input("the rules planner needs --scenario or --scenario-file"));
            };
            if a.instruction.is_some() {
                return Err(Fail::input("the rules planner plans catalog scenarios, not free text"));
            }
            let seq = rule_planner(s).code(PLANNER)?;
            let text = serialize(&seq);
            (seq, text, Vec::new(), Vec::new())
        }
        PlannerKind::Llm => {
            let site = match &given {
                Some(s) => s.clone(),
                None => bundled_scenario(DEFAULT_SITE).expect("bundled"),
            };
            let instruction = match (&a.instruction, &given) {
                (Some(i), _) => i.clone(),
                (None, Some(s)) => s.instruction.clone(),
                (None, None) => return Err(Fail::input("give an instruction or --scenario")),
            };
            let source = ModelSource::new(a.llm_config.as_deref(), a.replay.clone())?;
            let outcome = match &a.hitl {
                Hitl::Off => source.plan(&instruction, &site, None, &mut model::no_review),
                Hitl::Interactive => source.plan(&instruction, &site, None, &mut model::interactive),
                Hitl::Scripted(p) => source.plan(&instruction, &site, None, &mut model::scripted(p)?),
            }?;
            (outcome.sequence, outcome.text, outcome.usage, outcome.transcripts)
        }
    };
    if let Some(p) = &a.transcripts {
        write(p, &serde_json::to_string_pretty(&transcripts).expect("transcripts serialize"))?;
    }

    let site = given.unwrap_or_else(|| bundled_scenario(DEFAULT_SITE).expect("bundled"));
    let db = site.param_db();
    let (kinds, places) = site_sets(&db);
    let report = validate(&seq, &kinds, &places, &default_registry(places.iter().map(String::as_str)));

    let mut summary = String::new();
    if report.is_ok() {
        summary += &format!("validation: ok, {} warning(s)\n", report.warnings.len());
    } else {
        summary += &format!("validation: {} error(s)\n", report.errors.len());
    }
    for issue in report.errors.iter().chain(&report.warnings) {
        summary += &format!("  {issue}\n");
    }
    match analyze_flags(&seq) {
        Ok(an) => {
            summary += &format!(
                "flags: {} generated, nrf {}\n",
                seq.generated_flags.len(),
                an.nrf
            );
            for r in &an.redundant {
                summary += &format!("  redundant {} ({:?})\n", r.flag, r.reason);
            }
        }
        Err(e) => summary += &format!("flags: {e}\n"),
    }
    if !usage.is_empty() {
        let (tu, gt) = totals(&usage);
        summary += &format!("usage: {tu} tokens, {gt:.2} s over {} request(s)\n", usage.len());
    }

    let body = if text.ends_with('\n') { text } else { format!("{text}\n") };
    match &a.out {
        Some(p) => {
            write(p, &body)?;
            print!("{summary}");
            println!("wrote {}", p.display());
        }
        None => {
            eprint!("{summary}");
            print!("{body}");
        }
    }
    Ok(if report.is_ok() { OK } else { INPUT })
}

fn cmd_compile(a: CompileArgs) -> Result<u8, Fail> {
    let seq = read_sequence(&a.sequence)?;
    let db = match &a.params {
        Some(p) => TaskParamDb::from_json(&read(p)?)
            .with_context(|| format!("{}", p.display()))
            .code(INPUT)?,
        None => a.site.require()?.param_db(),
    };
    let plan = compile(&seq, &db)
        .with_context(|| format!("compiling {}", a.sequence.display()))
        .code(INPUT)?;
    let stats = plan_stats(&plan);

    let mut files: Vec<(String, String)> = emit_xml(&plan)
        .into_iter()
        .map(|(m, xml)| (format!("{m}.xml"), xml))
        .collect();
    files.push(("stats.json".into(), serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n"));
    write_all_or_nothing(&a.out, &files)
        .with_context(|| format!("writing {}", a.out.display()))
        .code(INPUT)?;

    for (m, nn) in &stats.nn_per_machine {
        println!("{m}: {nn} nodes");
    }
    println!("total {} nodes, {} generated flags -> {}", stats.nn_total, stats.flag_count, a.out.display());
    Ok(OK)
}

/// Stages every file in a sibling temp dir, then moves them into `out`.
fn write_all_or_nothing(out: &Path, files: &[(String, String)]) -> io::Result<()> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let staging = tempfile::Builder::new().prefix(".sitebt-").tempdir_in(&parent)?;
    for (name, contents) in files {
        fs::write(staging.path().join(name), contents)?;
    }
    if out.exists() {
        for (name, _) in files {
            fs::rename(staging.path().join(name), out.join(name))?;
        }
        Ok(())
    } else {
        fs::rename(staging.keep(), out)
    }
}

fn load_trees(dir: &Path) -> Result<BTreeMap<String, sitebt::btree::BtNode>, Fail> {
    let entries = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))
        .code(INPUT)?;
    let mut trees = BTreeMap::new();
    for entry in entries {
        let path = entry.code(INPUT)?.path();
        if path.extension().is_none_or(|e| e != "xml") {
            continue;
        }
        let machine = path.file_stem().expect("has a stem").to_string_lossy().into_owned();
        let root = parse_xml(&read(&path)?)
            .with_context(|| format!("{}", path.display()))
            .code(INPUT)?;
        trees.insert(machine, root);
    }
    if trees.is_empty() {
        return Err(Fail::input(format!("no .xml trees in {}", dir.display())));
    }
    Ok(trees)
}

fn cmd_run(a: RunArgs) -> Result<u8, Fail> {
    let scenario = a.site.require()?;
    let trees = load_trees(&a.xml_dir)?;
    let bb = GlobalBlackboard::new(registry_for(&trees, &scenario)).code(INPUT)?;
    let report = run(&trees, &scenario, &bb, &a.exec.config()).code(INPUT)?;

    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &a.report {
        Some(p) => write(p, &json)?,
        None => print!("{json}"),
    }
    if let Some(p) = &a.timeline {
        let mut buf = Vec::new();
        report.write_timeline_csv(&mut buf).code(INPUT)?;
        write(p, &String::from_utf8(buf).expect("csv is utf-8"))?;
    }
    if let Some(p) = &a.events {
        let mut buf = Vec::new();
        report.write_event_log(&mut buf).code(INPUT)?;
        write(p, &String::from_utf8(buf).expect("log is utf-8"))?;
    }

    eprintln!(
        "scenario {}: {} after {} ticks",
        report.scenario,
        if report.success { "success" } else { "failure" },
        report.ticks_used
    );
    for v in &report.violations {
        eprintln!("  {:?} at tick {} {:?}: {}", v.kind, v.tick, v.machines, v.detail);
    }
    for g in &report.unmet_goals {
        eprintln!("  unmet goal {}", serde_json::to_string(g).unwrap_or_default());
    }
    Ok(if report.success { OK } else { VIOLATION })
}

fn cmd_eval(a: EvalArgs) -> Result<u8, Fail> {
    let scenarios = match &a.catalog {
        Some(dir) => load_catalog_dir(dir).code(INPUT)?,
        None => catalog(),
    };
    let config = a.exec.config();
    let report = match a.planner {
        PlannerKind::Rules => evaluate("rules", &scenarios, &rules_attempt, &config, a.workers),
        PlannerKind::Llm => {
            let feedback_dir = match &a.hitl {
                Hitl::Interactive => return Err(Fail::input("eval cannot ask a human; use off or scripted:DIR")),
                Hitl::Scripted(d) => Some(d.clone()),
                Hitl::Off => None,
            };
            let source = ModelSource::new(a.llm_config.as_deref(), a.replay.clone())?;
            let replay_dir = a.replay.clone();
            let planner = move |s: &Scenario| -> Result<PlanAttempt, String> {
                let stem = format!("scenario_{:02}", s.id);
                let replay = replay_dir.as_ref().map(|d| d.join(format!("{stem}.json")));
                let script = feedback_dir.as_ref().map(|d| d.join(format!("{stem}.txt")));
                let outcome = match script.filter(|p| p.exists()) {
                    Some(p) => {
                        let mut review = model::scripted(&p).map_err(|f| format!("{:#}", f.error))?;
                        source.plan(&s.instruction, s, replay.as_deref(), &mut review)
                    }
                    None => source.plan(&s.instruction, s, replay.as_deref(), &mut |_: &Review| None),
                };
                outcome
                    .map(|o| PlanAttempt {
                        sequence: o.sequence,
                        usage: o.usage,
                    })
                    .map_err(|f| format!("{:#}", f.error))
            };
            evaluate("llm", &scenarios, &planner, &config, a.workers)
        }
    };

    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &a.report {
        Some(p) => {
            write(p, &json)?;
            print!("{}", report.table());
        }
        None => {
            eprint!("{}", report.table());
            print!("{json}");
        }
    }
    io::stdout().flush().code(INPUT)?;
    Ok(OK)
}

fn cmd_inspect(file: &Path) -> Result<u8, Fail> {
    let text = read(file)?;
    let ext = file.extension().and_then(|e| e.to_str()).unwrap_or("");
    let shown = match ext {
        "aseq" | "txt" => inspect::sequence(&parse(&text).with_context(|| file.display().to_string()).code(INPUT)?),
        "xml" => inspect::tree(&parse_xml(&text).with_context(|| file.display().to_string()).code(INPUT)?),
        "json" => match Scenario::from_json(&text) {
            Ok(s) => inspect::scenario(&s),
            Err(e) => match TaskParamDb::from_json(&text) {
                Ok(db) => db.to_json() + "\n",
                Err(_) => return Err(Fail::input(format!("{}: {e}", file.display()))),
            },
        },
        _ => return Err(Fail::input(format!("{}: expected .aseq, .xml or .json", file.display()))),
    };
    print!("{shown}");
    Ok(OK)
}

fn cmd_params(a: SiteArgs) -> Result<u8, Fail> {
    println!("{}", a.require()?.param_db().to_json());
    Ok(OK)
}
