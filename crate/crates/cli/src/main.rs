use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use handover_core::config::{PipelineConfig, ReasonerKind};
use handover_core::dataset::synthetic::{write_suite, SYNTHETIC_CLASSES};
use handover_core::dataset::{find_reference, load_dataset, taxonomy, Conventionality, DatasetEntry, TaskSpec};
use handover_core::eval::{compare, run_benchmark, BenchmarkReport};
use handover_core::partseg::BackendSpec;
use handover_core::grasp::{read_grasps, HeuristicTie};
use handover_core::pipeline::{entry_context, run_pipeline, segment_entry, Method};
use handover_core::reasoner::{Reasoner, RemoteConfig, RemoteReasoner, RuleReasoner};

/// Task-aware robot-to-human handover: part segmentation, grasp selection and benchmarks.
#[derive(Parser)]
#[command(name = "handover", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the object classes and their parts.
    Taxonomy {
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic fixture dataset.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated classes; defaults to every class with a generator.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Segment one entry into parts.
    Segment {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        entry: String,
        /// Output directory for masks, part clouds and segmentation.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline for one entry and task and emit the decision trace.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        entry: String,
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "ours", value_parser = parse_method)]
        method: Method,
        /// Leave geometry (nG) or the human grasp part (nH) out of grasp selection.
        #[arg(long, value_enum, conflicts_with = "method")]
        ablate: Option<Ablation>,
        /// JSON grasp set to use instead of the built-in sampler.
        #[arg(long)]
        grasps_file: Option<PathBuf>,
        /// Break heuristic ties at random (seeded) instead of by distance.
        #[arg(long)]
        random_tie: bool,
        /// Trace destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the benchmark over a dataset and write the report.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated grasp methods; empty for segmentation only.
        #[arg(long, default_value = "ours,heuristic,planner-first")]
        methods: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write report.csv.
        #[arg(long)]
        csv: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare two benchmark reports.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Compare even when the configurations differ.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Dataset root containing dataset.json.
    #[arg(long)]
    dataset: PathBuf,
    /// JSON pipeline configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured reasoner.
    #[arg(long, value_enum)]
    reasoner: Option<ReasonerArg>,
    /// Fixture backend directory, relative to the dataset root unless absolute.
    #[arg(long)]
    backend: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Append remote reasoner exchanges to this JSON-lines file.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReasonerArg {
    Rule,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    #[value(name = "nG")]
    NoGeometry,
    #[value(name = "nH")]
    NoHuman,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl ToString) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    fn reasoner(message: impl ToString) -> Self {
        Self {
            code: 4,
            message: message.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Taxonomy { json } => {
            cmd_taxonomy(json);
            Ok(())
        }
        Command::Fixtures {
            out,
            classes,
            instances,
            seed,
        } => cmd_fixtures(&out, &classes, instances, seed),
        Command::Segment { run, entry, out } => cmd_segment(&run, &entry, &out),
        Command::Pipeline {
            run,
            entry,
            task,
            method,
            ablate,
            grasps_file,
            random_tie,
            out,
        } => {
            let method = match ablate {
                Some(Ablation::NoGeometry) => Method::NoGeometry,
                Some(Ablation::NoHuman) => Method::NoHuman,
                None => method,
            };
            cmd_pipeline(&run, &entry, &task, method, grasps_file.as_deref(), random_tie, out.as_deref())
        }
        Command::Eval {
            run,
            methods,
            out,
            csv,
            jobs,
        } => {
            let methods = methods
                .split(',')
                .map(str::trim)
                .filter(|m| !m.is_empty())
                .map(parse_method)
                .collect::<Result<Vec<_>, _>>()
                .map_err(Failure::input)?;
            cmd_eval(&run, &methods, &out, csv, jobs)
        }
        Command::Compare { a, b, force } => {
            let ra = BenchmarkReport::load(&a).map_err(Failure::input)?;
            let rb = BenchmarkReport::load(&b).map_err(Failure::input)?;
            print!("{}", compare(&ra, &rb, force).map_err(Failure::input)?);
            Ok(())
        }
    }
}

fn cmd_taxonomy(json: bool) {
    if json {
        let map: serde_json::Map<String, serde_json::Value> = taxonomy()
            .iter()
            .map(|(c, parts)| (c.to_string(), serde_json::json!(parts)))
            .collect();
        println!("{}", serde_json::to_string_pretty(&map).expect("taxonomy serializes"));
    } else {
        for (class, parts) in taxonomy().iter() {
            println!("{class}: {}", parts.join(", "));
        }
    }
}

fn cmd_fixtures(out: &Path, classes: &[String], instances: usize, seed: u64) -> Result<(), Failure> {
    let classes: Vec<&str> = if classes.is_empty() {
        SYNTHETIC_CLASSES.to_vec()
    } else {
        classes.iter().map(String::as_str).collect()
    };
    let manifest = write_suite(out, &classes, instances, seed).map_err(Failure::input)?;
    println!("wrote {} entries to {}", manifest.entries.len(), out.display());
    Ok(())
}

fn load_config(run: &RunArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &run.config {
        Some(p) => PipelineConfig::load(p).map_err(Failure::input)?,
        None => PipelineConfig::default(),
    };
    if let Some(r) = run.reasoner {
        cfg.reasoner = match r {
            ReasonerArg::Rule => ReasonerKind::Rule,
            ReasonerArg::Remote => ReasonerKind::Remote,
        };
    }
    if let Some(dir) = &run.backend {
        cfg.backend = BackendSpec::Fixture { dir: dir.clone() };
    }
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn build_reasoner(cfg: &PipelineConfig, run: &RunArgs) -> Result<Box<dyn Reasoner>, Failure> {
    Ok(match cfg.reasoner {
        ReasonerKind::Rule => Box::new(RuleReasoner),
        ReasonerKind::Remote => {
            let mut r = RemoteReasoner::new(RemoteConfig::from_env().map_err(Failure::reasoner)?);
            if let Some(p) = &run.transcript {
                r = r.with_log(p.clone());
            }
            Box::new(r)
        }
    })
}

fn find_entry(root: &Path, id: &str) -> Result<DatasetEntry, Failure> {
    let entries = load_dataset(root).map_err(Failure::input)?;
    entries
        .into_iter()
        .find(|e| e.id() == id)
        .ok_or_else(|| Failure::input(format!("no entry '{id}' in {}", root.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write_run_config(dir: &Path, cfg: &PipelineConfig) -> Result<(), Failure> {
    let doc = serde_json::json!({ "config_fingerprint": cfg.fingerprint(), "config": cfg });
    write_file(
        &dir.join("config.json"),
        &(serde_json::to_string_pretty(&doc).expect("config serializes") + "\n"),
    )
}

fn cmd_segment(run: &RunArgs, id: &str, out: &Path) -> Result<(), Failure> {
    let cfg = load_config(run)?;
    cfg.validate().map_err(Failure::input)?;
    let entry = find_entry(&run.dataset, id)?;
    let reasoner = build_reasoner(&cfg, run)?;
    let backend = cfg.backend_for(&run.dataset).build();
    let expected: Vec<String> = taxonomy()
        .parts(&entry.object_class)
        .map(|p| p.to_vec())
        .unwrap_or_default();
    let seg = entry_context(&entry, None, &cfg)
        .and_then(|ctx| segment_entry(&ctx, &entry, &expected, backend.as_ref(), reasoner.as_ref()))
        .map_err(|e| Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        })?;
    seg.result
        .write(out)
        .map_err(|e| Failure::input(format!("{}: {e}", out.display())))?;
    write_run_config(out, &cfg)?;
    for label in seg.result.labels() {
        println!("{label}: {} points", seg.result.parts[&label].members.len());
    }
    Ok(())
}

fn cmd_pipeline(
    run: &RunArgs,
    id: &str,
    task_text: &str,
    method: Method,
    grasps_file: Option<&Path>,
    random_tie: bool,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let mut cfg = load_config(run)?;
    if random_tie {
        cfg.heuristic_tie = HeuristicTie::Random(cfg.seed);
    }
    let entry = find_entry(&run.dataset, id)?;
    let supplied = grasps_file
        .map(|p| read_grasps(p).map_err(Failure::input))
        .transpose()?;
    let task = find_reference(&entry.object_class, task_text)
        .map(|r| r.spec)
        .unwrap_or_else(|| TaskSpec {
            object_class: entry.object_class.clone(),
            task_text: task_text.to_string(),
            conventionality: Conventionality::ConventionalEasy,
        });
    let reasoner = build_reasoner(&cfg, run)?;
    let backend = cfg.backend_for(&run.dataset).build();
    let result = run_pipeline(
        &entry,
        &task,
        &cfg,
        backend.as_ref(),
        reasoner.as_ref(),
        method,
        supplied.as_deref(),
    );
    let text = serde_json::to_string_pretty(&result.trace).expect("trace serializes") + "\n";
    match out {
        Some(p) => write_file(p, &text)?,
        None => print!("{text}"),
    }
    match result.outcome {
        Ok(()) => Ok(()),
        Err(e) => Err(Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }),
    }
}

fn cmd_eval(run: &RunArgs, methods: &[Method], out: &Path, csv: bool, jobs: usize) -> Result<(), Failure> {
    let cfg = load_config(run)?;
    cfg.validate().map_err(Failure::input)?;
    let entries = load_dataset(&run.dataset).map_err(Failure::input)?;
    let reasoner = build_reasoner(&cfg, run)?;
    let backend = cfg.backend_for(&run.dataset).build();
    let report = run_benchmark(&entries, &cfg, backend.as_ref(), reasoner.as_ref(), methods, jobs)
        .map_err(Failure::input)?;
    report.write(out, csv).map_err(Failure::input)?;
    print!("{}", report.to_text());
    Ok(())
}
