//! Command-line front end: argument parsing, configuration and the staged pipeline.

pub mod cache;
pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use topictree::Mode;

pub use commands::{cmd_ablate, cmd_build, cmd_eval, cmd_query};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "topictree", version, about = "Build topic taxonomies from a text corpus")]
pub struct Cli {
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine terms, train embeddings and build the taxonomy.
    Build(RunArgs),
    /// DB index and annotation packets for an existing taxonomy.
    Eval(EvalArgs),
    /// Nearest terms by cosine similarity.
    Query(QueryArgs),
    /// Build in every mode and compare DB indices.
    Ablate(RunArgs),
    /// Print the effective configuration as TOML.
    PrintConfig(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Corpus file, one document per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Term list, one term per line. Terms are mined when omitted.
    #[arg(long)]
    pub terms: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "TOPICTREE_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Ignore and do not write the stage cache.
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub l_max: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for one per physical core.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub log_level: Option<String>,
    #[arg(long)]
    pub dump_splits: bool,
    #[arg(long)]
    pub dump_docs: bool,
    /// Override any config value, e.g. `--set build.global_embedding.dim=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Taxonomy JSON to evaluate.
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Embedding file (text or binary) defining the shared space.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Embedding file, text or binary.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Query term; spaces are joined with underscores.
    pub term: String,
    #[arg(long, short, default_value_t = 10)]
    pub k: usize,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "full" => Ok(Mode::Full),
        "no_ac" | "no-ac" => Ok(Mode::NoAc),
        "no_le" | "no-le" => Ok(Mode::NoLe),
        _ => Err(format!("unknown mode {s:?}; expected full, no_ac or no_le")),
    }
}

impl RunArgs {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        config.apply_overrides(&self.overrides)?;
        let paths = &mut config.paths;
        if let Some(p) = &self.corpus {
            paths.corpus = Some(p.clone());
        }
        if let Some(p) = &self.terms {
            paths.terms = Some(p.clone());
        }
        if let Some(p) = &self.out {
            paths.output = p.clone();
        }
        if let Some(p) = &self.cache_dir {
            paths.cache = Some(p.clone());
        }
        let build = &mut config.build;
        if let Some(k) = self.k {
            build.k = k;
        }
        if let Some(d) = self.delta {
            build.delta = d;
        }
        if let Some(l) = self.l_max {
            build.l_max = l;
        }
        if let Some(m) = self.mode {
            build.mode = m;
        }
        if let Some(s) = self.seed {
            build.seed = s;
        }
        if let Some(t) = self.threads {
            config.threads = t;
        }
        if let Some(n) = self.top_n {
            config.top_n = n;
        }
        if let Some(level) = &self.log_level {
            config.log_level = level.clone();
        }
        config.use_cache &= !self.no_cache;
        config.dump_splits |= self.dump_splits;
        config.dump_docs |= self.dump_docs;
        Ok(config)
    }
}

fn init_logging(level: &str) {
    let env = env_logger::Env::default().default_filter_or(level);
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Run a parsed command line, printing results and errors.
pub fn run(cli: Cli) -> ExitCode {
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let run_args = match &cli.command {
        Some(Command::Build(a) | Command::Ablate(a) | Command::PrintConfig(a)) => a.clone(),
        Some(Command::Eval(a)) => a.run.clone(),
        Some(Command::Query(_)) | None => RunArgs::default(),
    };
    let config = run_args.resolve()?;
    if cli.print_config || matches!(cli.command, None | Some(Command::PrintConfig(_))) {
        print!("{}", config.to_toml());
        return Ok(());
    }
    init_logging(&config.log_level);
    match cli.command.expect("handled above") {
        Command::Build(_) => {
            let summary = cmd_build(&config)?;
            println!(
                "wrote {} ({} nodes, depth {}; cached stages: {})",
                summary.taxonomy.display(),
                summary.nodes,
                summary.depth,
                if summary.cache_hits.is_empty() {
                    "none".to_string()
                } else {
                    summary.cache_hits.join(", ")
                }
            );
        }
        Command::Ablate(_) => {
            let summary = cmd_ablate(&config)?;
            for (mode, mean) in summary.means {
                match mean {
                    Some(db) => println!("{mode:<6} mean DB {db:.4}"),
                    None => println!("{mode:<6} mean DB n/a"),
                }
            }
        }
        Command::Eval(args) => {
            let report = cmd_eval(&config, &args.taxonomy, args.embeddings.as_deref())?;
            match report.mean {
                Some(db) => println!("mean DB {db:.4} over {} nodes", report.nodes.len()),
                None => println!("no node has two or more children"),
            }
        }
        Command::Query(args) => print!("{}", cmd_query(&args.embeddings, &args.term, args.k)?),
        Command::PrintConfig(_) => unreachable!(),
    }
    Ok(())
}
