use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use bench_core::gate::{checks_for, EligibilityReport, MAX_PROBE_CASES};
use bench_core::harness::{run_model, RunSpec};
use bench_core::leaderboard::{Grade, ViewFilter};
use bench_core::reference::{self, Behavior, Fault, ModelOptions};
use bench_core::registry::{read_archive_dir, PublicArchive};
use bench_core::service::api::run_server;
use bench_core::service::client::{ApiError, Client};
use bench_core::service::config::Config;
use bench_core::service::SubmitRequest;
use bench_core::{synthetic, Fraction};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Self-hostable benchmarking platform for classification models.
#[derive(Parser)]
#[command(name = "bench", version)]
struct Cli {
    #[command(flatten)]
    remote: Remote,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Remote {
    /// Platform base URL.
    #[arg(
        long,
        global = true,
        env = "BENCH_SERVER",
        default_value = "http://127.0.0.1:8080"
    )]
    server: String,
    /// Bearer token.
    #[arg(long, global = true, env = "BENCH_TOKEN", hide_env_values = true)]
    token: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the API server and evaluation workers.
    Serve {
        /// TOML configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Submit a model package for evaluation.
    Submit {
        task_id: String,
        package: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        version: String,
        /// Evaluate as a baseline (admin token).
        #[arg(long)]
        baseline: bool,
        /// Wait up to this many seconds for the report.
        #[arg(long)]
        wait: Option<u64>,
    },
    /// Fetch an evaluation report.
    Report {
        submission_id: String,
        /// Wait up to this many seconds for it to be issued.
        #[arg(long)]
        wait: Option<u64>,
    },
    /// Show a task leaderboard.
    Leaderboard {
        task_id: String,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        participant: Option<String>,
        #[arg(long, value_enum)]
        grade: Option<GradeArg>,
        #[arg(long)]
        baseline: Option<bool>,
    },
    /// Local pre-flight: run the eligibility checks against public data.
    Validate {
        package: PathBuf,
        /// Unpacked public archive directory.
        #[arg(long)]
        archive: PathBuf,
    },
    /// Build a built-in baseline package from a public archive.
    Baseline {
        /// Unpacked public archive directory.
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a built-in reference model on stdin/stdout.
    #[command(hide = true)]
    Model(ModelArgs),
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Register a dataset directory (task.json, cases.jsonl, optional files/).
    Add { dir: PathBuf },
    /// Create the evaluation split of a dataset.
    Split {
        dataset_id: String,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "3/10")]
        fraction: Fraction,
    },
    /// Download a task's public archive.
    Export {
        task_id: String,
        /// Tar file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory to unpack into.
        #[arg(long)]
        unpack: Option<PathBuf>,
    },
    /// Write a synthetic triage dataset directory.
    Generate {
        out: PathBuf,
        #[arg(long, default_value = "triage-synth")]
        task_id: String,
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 3)]
        labels: usize,
        #[arg(long, default_value_t = synthetic::DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GradeArg {
    Fail,
    DecisionSupport,
    Autonomous,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Majority,
    Abstain,
    Sleep,
    Hog,
    Noisy,
    Faulty,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(value_enum)]
    kind: ModelKind,
    /// Package directory holding model.json (majority).
    #[arg(long)]
    package: Option<PathBuf>,
    #[arg(long, default_value = "reference")]
    name: String,
    /// Delay before every answer.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// Sleep per case (sleep).
    #[arg(long, default_value_t = 1000)]
    ms: u64,
    /// Bytes to touch (hog).
    #[arg(long, default_value_t = 64 << 20)]
    bytes: u64,
    /// Fault to exhibit (faulty).
    #[arg(long)]
    fault: Option<String>,
}

/// Errors reach `main` as display strings.
type CliResult<T = ()> = Result<T, String>;

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn print_json(v: &impl serde::Serialize) -> CliResult {
    println!("{}", serde_json::to_string_pretty(v).map_err(fail)?);
    Ok(())
}

fn api(e: ApiError) -> String {
    match &e.body {
        Some(body) if body.get("outcome").is_some() => {
            format!(
                "{e}\n{}",
                serde_json::to_string_pretty(&body["outcome"]).unwrap_or_default()
            )
        }
        _ => e.to_string(),
    }
}

fn client(remote: &Remote) -> CliResult<Client> {
    Client::new(remote.server.clone(), remote.token.clone()).map_err(api)
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::fs::canonicalize(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Serve { config } => {
            let config = Config::load(config.as_deref()).map_err(fail)?;
            run_server(&config).map_err(fail)?;
        }
        Command::Dataset(cmd) => dataset(&cli.remote, cmd)?,
        Command::Submit {
            task_id,
            package,
            name,
            version,
            baseline,
            wait,
        } => {
            let c = client(&cli.remote)?;
            let req = SubmitRequest {
                model_ref: absolute(&package)?,
                name,
                version,
                baseline,
            };
            let outcome = c.submit(&task_id, &req).map_err(api)?;
            match wait {
                Some(secs) => {
                    let report = c
                        .wait_report(&outcome.submission_id, Duration::from_secs(secs))
                        .map_err(api)?;
                    print_json(&report)?;
                }
                None => print_json(&outcome)?,
            }
        }
        Command::Report {
            submission_id,
            wait,
        } => {
            let c = client(&cli.remote)?;
            let report = match wait {
                Some(secs) => c.wait_report(&submission_id, Duration::from_secs(secs)),
                None => c.report(&submission_id),
            }
            .map_err(api)?;
            print_json(&report)?;
        }
        Command::Leaderboard {
            task_id,
            json,
            participant,
            grade,
            baseline,
        } => {
            let grade = grade.map(|g| match g {
                GradeArg::Fail => Grade::Fail,
                GradeArg::DecisionSupport => Grade::DecisionSupport,
                GradeArg::Autonomous => Grade::Autonomous,
            });
            let filter = ViewFilter {
                participant,
                grade,
                baseline,
            };
            let c = client(&cli.remote)?;
            if json {
                print_json(&c.leaderboard(&task_id, &filter).map_err(api)?)?;
            } else {
                print!("{}", c.leaderboard_text(&task_id, &filter).map_err(api)?);
            }
        }
        Command::Validate { package, archive } => return validate(&package, &archive),
        Command::Baseline { archive, out } => {
            let contents = read_archive_dir(&archive).map_err(fail)?;
            let exe = std::env::current_exe().map_err(fail)?;
            let dir =
                reference::write_majority_package(&out, &exe, &contents.cases).map_err(fail)?;
            let params = reference::read_majority_params(&dir).map_err(fail)?;
            println!(
                "majority baseline: {} ({}) -> {}",
                params.code,
                params.confidence,
                dir.display()
            );
        }
        Command::Model(args) => return model(args),
    }
    Ok(ExitCode::SUCCESS)
}

fn dataset(remote: &Remote, cmd: DatasetCmd) -> CliResult {
    match cmd {
        DatasetCmd::Add { dir } => {
            let contents = read_archive_dir(&dir).map_err(fail)?;
            let files = dir.join("files");
            let files = if files.is_dir() {
                Some(absolute(&files)?)
            } else {
                None
            };
            let rec = client(remote)?
                .register_dataset(contents.task, contents.cases, files)
                .map_err(api)?;
            print_json(&rec)
        }
        DatasetCmd::Split {
            dataset_id,
            seed,
            fraction,
        } => print_json(
            &client(remote)?
                .create_split(&dataset_id, seed, fraction)
                .map_err(api)?,
        ),
        DatasetCmd::Export {
            task_id,
            out,
            unpack,
        } => {
            if out.is_none() && unpack.is_none() {
                return Err("give --out and/or --unpack".into());
            }
            let bytes = client(remote)?.export_public(&task_id).map_err(api)?;
            if let Some(out) = out {
                std::fs::write(&out, &bytes).map_err(fail)?;
            }
            if let Some(dir) = unpack {
                PublicArchive { bytes }.unpack(&dir).map_err(fail)?;
            }
            Ok(())
        }
        DatasetCmd::Generate {
            out,
            task_id,
            cases,
            labels,
            seed,
        } => {
            let (task, cases) = synthetic::generate(&task_id, cases, labels, seed);
            synthetic::write_dataset_dir(&out, &task, &cases).map_err(fail)?;
            println!(
                "wrote {} cases for task {} to {}",
                cases.len(),
                task.task_id,
                out.display()
            );
            Ok(())
        }
    }
}

fn validate(package: &Path, archive: &Path) -> CliResult<ExitCode> {
    let contents = read_archive_dir(archive).map_err(fail)?;
    let mut probes: Vec<_> = contents.cases.iter().map(|c| c.case.clone()).collect();
    probes.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    probes.truncate(MAX_PROBE_CASES);
    if probes.is_empty() {
        return Err("archive has no cases".into());
    }
    let package = absolute(package)?;
    let spec = RunSpec {
        submission_id: "local",
        model_ref: &package,
        task: &contents.task,
        limits: contents.task.limits,
        run_seed: 0,
    };
    let run = run_model(&spec, &probes).map_err(fail)?;
    let report = EligibilityReport::from_checks("local", checks_for(&run, &contents.task));
    for c in &report.checks {
        println!(
            "{} {:?}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.check,
            c.detail
        );
    }
    println!("eligible: {}", report.eligible);
    Ok(if report.eligible {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn model(args: ModelArgs) -> CliResult<ExitCode> {
    let behavior = match args.kind {
        ModelKind::Majority => {
            let dir = args.package.ok_or("majority needs --package")?;
            Behavior::Majority(reference::read_majority_params(&dir).map_err(fail)?)
        }
        ModelKind::Abstain => Behavior::Abstain,
        ModelKind::Sleep => Behavior::Sleep { ms: args.ms },
        ModelKind::Hog => Behavior::Hog { bytes: args.bytes },
        ModelKind::Noisy => Behavior::Noisy,
        ModelKind::Faulty => Behavior::Faulty(
            Fault::parse(args.fault.as_deref().ok_or("faulty needs --fault")?).map_err(fail)?,
        ),
    };
    let opts = ModelOptions {
        behavior,
        name: args.name,
        delay_ms: args.delay_ms,
    };
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    let code = reference::serve(&opts, stdin, stdout).map_err(fail)?;
    Ok(ExitCode::from(code.clamp(0, 255) as u8))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if !matches!(cli.command, Command::Model(_)) {
        tracing_subscriber::fmt()
            .with_env_filter(
                tracing_subscriber::EnvFilter::try_from_env("BENCH_LOG")
                    .unwrap_or_else(|_| "info".into()),
            )
            .with_writer(io::stderr)
            .init();
    }
    if !matches!(cli.command, Command::Serve { .. }) {
        // Die quietly when piped into `head`. The server keeps ignoring
        // SIGPIPE so a dead model's stdin cannot take it down.
        // SAFETY: installs the default disposition before any other thread exists.
        unsafe {
            libc::signal(libc::SIGPIPE, libc::SIG_DFL);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
