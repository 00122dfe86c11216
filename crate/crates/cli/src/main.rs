use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use scenediff::eval::{resolve_seed, run_scenario, write_ply, RunOptions, RunOutput, Scenario};
use scenediff::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "scenediff", version, about = "Object-level scene change detection on synthetic scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write its report.
    Run(RunArgs),
    /// Run several scenarios and seeds concurrently.
    RunBatch(BatchArgs),
    /// Print a bundled scenario as JSON.
    ExportScenario {
        /// Bundled scenario name.
        name: String,
    },
    /// List bundled scenarios.
    ListScenarios,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Baseline {
    Nn,
    None,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Seed override; takes precedence over the file and SCENE_DIFF_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Verdict stream path (JSON lines).
    #[arg(long)]
    verdicts: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Baseline::Nn)]
    baseline: Baseline,
    /// Directory for per-frame partial clouds as ASCII PLY.
    #[arg(long)]
    dump_clouds: Option<PathBuf>,
    /// Path for a JSON dump of both object trees.
    #[arg(long)]
    tree_dump: Option<PathBuf>,
    /// Omit the timing section so reports are byte-identical across runs.
    #[arg(long)]
    no_timing: bool,
    #[arg(long, short)]
    verbose: bool,
    #[arg(long, env = "SCENE_DIFF_SEED", hide_env_values = true)]
    env_seed: Option<u64>,
}

#[derive(clap::Args, Debug)]
struct BatchArgs {
    /// Scenario JSON files.
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    /// Seeds to run each scenario with; defaults to each file's seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Directory for one report per run.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Baseline::Nn)]
    baseline: Baseline,
    #[arg(long)]
    no_timing: bool,
    #[arg(long, short)]
    verbose: bool,
    #[arg(long, env = "SCENE_DIFF_SEED", hide_env_values = true)]
    env_seed: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Capacity(_) | Error::Placement(_) => Failure::Config(e.into()),
            other => Failure::Internal(other.into()),
        }
    }
}

fn config_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_err)?;
    Scenario::from_json(&text)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(config_err)
}

fn init_logging(verbose: bool) {
    let level = if verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn check_invariants(out: &RunOutput) -> Result<(), Failure> {
    let det = &out.detector;
    for (name, tree) in [("source", det.source_tree()), ("target", det.target_tree())] {
        tree.check_invariants()
            .map_err(|e| Failure::Internal(anyhow::anyhow!("{name} tree invariant violated: {e}")))?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(config_err)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display())).map_err(config_err)
}

fn dump_clouds(dir: &Path, out: &RunOutput) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(config_err)?;
    let sessions = [("source", &out.source_clouds), ("target", &out.target_clouds)];
    for (session, clouds) in sessions {
        for c in clouds.iter().flatten().flatten() {
            let path = dir.join(format!("{session}_f{:04}_obj{:03}.ply", c.frame_index, c.gt_id));
            let file = fs::File::create(&path)
                .with_context(|| format!("creating {}", path.display()))
                .map_err(config_err)?;
            write_ply(std::io::BufWriter::new(file), &c.cloud)
                .with_context(|| format!("writing {}", path.display()))
                .map_err(config_err)?;
        }
    }
    Ok(())
}

fn verdict_lines(out: &RunOutput) -> String {
    let mut s = String::new();
    for v in &out.verdicts {
        s.push_str(&serde_json::to_string(v).expect("verdict serializes"));
        s.push('\n');
    }
    s
}

fn summary(out: &RunOutput) -> String {
    let r = &out.report;
    let nn = r
        .nn
        .map(|m| format!(" nn tp={} fp={} fn={} p={:.3} r={:.3}", m.tp, m.fp, m.fn_, m.precision, m.recall))
        .unwrap_or_default();
    format!(
        "{} seed={} {} ours tp={} fp={} fn={} p={:.3} r={:.3}{}",
        r.scenario, r.seed, r.registration.status, r.ours.tp, r.ours.fp, r.ours.fn_, r.ours.precision, r.ours.recall, nn
    )
}

fn run(args: RunArgs) -> Result<(), Failure> {
    init_logging(args.verbose);
    let scenario = load_scenario(&args.scenario)?;
    let seed = resolve_seed(args.seed, scenario.seed, args.env_seed);
    let opts = RunOptions {
        baseline: args.baseline == Baseline::Nn,
        keep_clouds: args.dump_clouds.is_some(),
    };
    let out = run_scenario(&scenario, seed, &opts)?;
    check_invariants(&out)?;
    log::info!("{}", summary(&out));

    let report = out.report.to_json(!args.no_timing);
    match &args.out {
        Some(path) => write_file(path, &report)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(report.as_bytes()).map_err(|e| Failure::Internal(e.into()))?;
        }
    }
    if let Some(path) = &args.verdicts {
        write_file(path, &verdict_lines(&out))?;
    }
    if let Some(path) = &args.tree_dump {
        let dump = serde_json::json!({
            "source": out.detector.source_tree(),
            "target": out.detector.target_tree(),
        });
        write_file(path, &serde_json::to_string_pretty(&dump).expect("trees serialize"))?;
    }
    if let Some(dir) = &args.dump_clouds {
        dump_clouds(dir, &out)?;
    }
    if args.out.is_some() {
        eprintln!("{}", summary(&out));
    }
    Ok(())
}

fn run_batch(args: BatchArgs) -> Result<(), Failure> {
    init_logging(args.verbose);
    let scenarios = args
        .scenarios
        .iter()
        .map(|p| load_scenario(p).map(|s| (p.clone(), s)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut jobs = Vec::new();
    for (path, s) in &scenarios {
        if args.seeds.is_empty() {
            jobs.push((path, s, resolve_seed(None, s.seed, args.env_seed)));
        } else {
            jobs.extend(args.seeds.iter().map(|seed| (path, s, *seed)));
        }
    }
    let opts = RunOptions {
        baseline: args.baseline == Baseline::Nn,
        keep_clouds: false,
    };
    let results: Vec<Result<RunOutput, Failure>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(_, s, seed)| {
                scope.spawn(move || {
                    let out = run_scenario(s, *seed, &opts)?;
                    check_invariants(&out)?;
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Failure::Internal(anyhow::anyhow!("worker panicked")))))
            .collect()
    });
    for ((path, _, seed), res) in jobs.iter().zip(results) {
        let out = res?;
        println!("{}", summary(&out));
        if let Some(dir) = &args.out_dir {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
            write_file(&dir.join(format!("{stem}-{seed}.json")), &out.report.to_json(!args.no_timing))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::RunBatch(args) => run_batch(args),
        Command::ExportScenario { name } => match scenediff::eval::bundled_scenario(&name) {
            Some(text) => {
                print!("{text}");
                Ok(())
            }
            None => Err(config_err(anyhow::anyhow!("no bundled scenario named {name:?}"))),
        },
        Command::ListScenarios => {
            for (name, _) in scenediff::eval::BUNDLED_SCENARIOS {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
