use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use covergap::config::{BackendKind, Config, LlmMode};
use covergap::change::PrMeta;
use covergap::pipeline::{self, Inputs, PipelineError, Session};

#[derive(Parser)]
#[command(name = "covergap", version, about = "Generate regression tests for the uncovered lines of a pull request")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage for one PR.
    Augment {
        #[command(flatten)]
        inputs: InputArgs,
        /// Per-test call trace of the suite; collected through the backend when omitted
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Filter the PR, compute patch coverage and find focal functions.
    Coverage {
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Summarize the PR and find test contexts for the focal functions.
    Context {
        #[command(flatten)]
        pr: PrArgs,
        /// Per-test call trace of the suite; collected through the backend when omitted
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate and refine candidate tests.
    Generate {
        #[command(flatten)]
        pr: PrArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Select, merge and report the accepted tests.
    Report {
        #[command(flatten)]
        pr: PrArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
struct InputArgs {
    /// Unified diff of the PR.
    #[arg(long)]
    diff: PathBuf,
    /// PR metadata JSON.
    #[arg(long)]
    pr_meta: PathBuf,
    /// Normalized coverage report of the suite; collected through the backend when omitted.
    #[arg(long)]
    coverage: Option<PathBuf>,
    /// Structure index of the source files.
    #[arg(long)]
    structure: PathBuf,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct PrArgs {
    /// PR metadata JSON (only the id is used).
    #[arg(long)]
    pr_meta: Option<PathBuf>,
    #[arg(long)]
    pr_id: Option<String>,
}

impl PrArgs {
    fn id(&self) -> Result<String, PipelineError> {
        match (&self.pr_id, &self.pr_meta) {
            (Some(id), _) => Ok(id.clone()),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| PipelineError::Input(format!("cannot read {}: {e}", path.display())))?;
                Ok(PrMeta::from_json(&text).map_err(|e| PipelineError::Input(e.to_string()))?.id)
            }
            (None, None) => unreachable!("clap requires one of the two"),
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// How model calls are served
    #[arg(long, value_enum)]
    mode: Option<LlmMode>,
    /// Output directory; artifacts go to <out>/<pr_id>/.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkout of the project under test.
    #[arg(long)]
    workspace: Option<PathBuf>,
    /// Recorded model responses for record and replay modes
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Test-suite index JSON; built by scanning the workspace when omitted.
    #[arg(long)]
    test_index: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Script for the fake backend.
    #[arg(long)]
    backend_script: Option<PathBuf>,
    /// Model name sent to the chat endpoint
    #[arg(long)]
    model: Option<String>,
    /// Number of candidate tests to generate
    #[arg(long)]
    tests_per_pr: Option<usize>,
    /// Refinement rounds allowed per candidate
    #[arg(long)]
    max_feedback_rounds: Option<u32>,
}

impl CommonArgs {
    fn session(&self) -> Result<Session, PipelineError> {
        let input = |e: covergap::config::ConfigError| PipelineError::Input(e.to_string());
        let mut cfg = match &self.config {
            Some(path) => Config::load(path).map_err(input)?,
            None => Config::default(),
        };
        cfg.apply_env(std::env::vars()).map_err(input)?;
        if let Some(m) = self.mode {
            cfg.llm.mode = m;
        }
        if let Some(m) = &self.model {
            cfg.llm.model = m.clone();
        }
        if let Some(n) = self.tests_per_pr {
            cfg.generation.tests_per_pr = n;
        }
        if let Some(n) = self.max_feedback_rounds {
            cfg.generation.max_feedback_rounds = n;
        }
        if let Some(b) = self.backend {
            cfg.backend.kind = b;
        }
        let p = &mut cfg.paths;
        for (flag, slot) in [
            (&self.out, &mut p.out_dir),
            (&self.workspace, &mut p.workspace),
            (&self.cassette, &mut p.cassette),
            (&self.test_index, &mut p.test_index),
            (&self.backend_script, &mut cfg.backend.script),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        cfg.validate().map_err(input)?;
        Ok(Session::new(cfg))
    }
}

fn inputs(a: &InputArgs, trace: Option<PathBuf>) -> Inputs {
    Inputs {
        diff: a.diff.clone(),
        pr_meta: a.pr_meta.clone(),
        coverage: a.coverage.clone(),
        structure: a.structure.clone(),
        trace,
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Augment { inputs: i, trace, common } => {
            let sess = common.session()?;
            let out = pipeline::augment(&sess, &inputs(&i, trace))?;
            match &out.report {
                Some(path) => println!(
                    "{}: patch coverage {:.1}% -> {:.1}%; report {}",
                    out.pr_id,
                    out.pc_before * 100.0,
                    out.pc_after * 100.0,
                    path.display()
                ),
                None => println!("{}: {:?}; no report", out.pr_id, out.status),
            }
        }
        Command::Coverage { inputs: i, common } => {
            let sess = common.session()?;
            let art = pipeline::stage_coverage(&sess, &inputs(&i, None))?;
            println!(
                "{}: {:?}, patch coverage {:.1}%, {} focal function(s)",
                art.pr.id,
                art.status,
                art.pc * 100.0,
                art.focals.len()
            );
        }
        Command::Context { pr, trace, common } => {
            let sess = common.session()?;
            let id = pr.id()?;
            if let Some(art) = pipeline::stage_context(&sess, &id, trace.as_deref())? {
                println!("{id}: test contexts for {} focal function(s)", art.test_contexts.entries.len());
            }
        }
        Command::Generate { pr, common } => {
            let sess = common.session()?;
            let id = pr.id()?;
            if let Some(art) = pipeline::stage_generate(&sess, &id)? {
                let ok = art.candidates.iter().filter(|c| c.is_accepted()).count();
                println!("{id}: {ok} of {} candidate(s) accepted", art.candidates.len());
            }
        }
        Command::Report { pr, common } => {
            let sess = common.session()?;
            let id = pr.id()?;
            if let Some(path) = pipeline::stage_report(&sess, &id)? {
                println!("{id}: report {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
