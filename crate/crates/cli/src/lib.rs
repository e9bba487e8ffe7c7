//! `scenecov` command-line pipelines.
//!
//! Every subcommand reads the artifacts of earlier steps from the output
//! directory and writes its own next to them:
//!
//! ```text
//! synth -> build-graphs -> match -> compare
//!                       \-> train -> embed -> nn | pca | density
//! ```
//!
//! On success a one-line JSON summary goes to stdout. On failure a JSON error
//! goes to stderr and the process exits with 1 (user error) or 2 (internal).

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;

use std::ffi::OsString;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use scenecov::embedding_analytics::Metric;
use scenecov::scene::DatasetRole;

use crate::commands::NnArgs;
use crate::config::{FlagOverrides, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "scenecov",
    version,
    about = "Scene-graph coverage analysis for driving datasets"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every stream not seeded in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Role {
    Ref,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Roles {
    Ref,
    Test,
    All,
}

impl From<Role> for DatasetRole {
    fn from(r: Role) -> Self {
        match r {
            Role::Ref => DatasetRole::Ref,
            Role::Test => DatasetRole::Test,
        }
    }
}

impl Roles {
    fn list(self) -> Vec<DatasetRole> {
        match self {
            Roles::Ref => vec![DatasetRole::Ref],
            Roles::Test => vec![DatasetRole::Test],
            Roles::All => commands::ROLES.to_vec(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corridor map and REF/TEST scenes with planted archetypes.
    Synth {
        #[arg(long, value_enum, default_value = "all")]
        role: Roles,
    },
    /// Build actor graphs for every scene.
    BuildGraphs {
        #[arg(long, value_enum, default_value = "all")]
        role: Roles,
    },
    /// Match the archetype catalog against every graph.
    Match {
        #[arg(long, value_enum, default_value = "all")]
        role: Roles,
    },
    /// Structural, parametric and co-occurrence comparison of REF and TEST.
    Compare,
    /// Train the contrastive graph encoder.
    Train {
        #[arg(long, value_enum, default_value = "ref")]
        role: Role,
    },
    /// Embed graphs with the trained encoder.
    Embed {
        #[arg(long, value_enum, default_value = "all")]
        role: Roles,
    },
    /// Nearest neighbors of one scene in embedding space.
    Nn {
        #[arg(long, value_enum, default_value = "ref")]
        role: Role,
        /// Search this set instead of the query's own.
        #[arg(long, value_enum)]
        against: Option<Role>,
        /// Query scene id; give this or --row
        #[arg(long)]
        scene: Option<String>,
        /// Query row index; give this or --scene
        #[arg(long)]
        row: Option<usize>,
        /// Number of neighbors (default from config)
        #[arg(long)]
        k: Option<usize>,
        /// euclidean or cosine
        #[arg(long)]
        metric: Option<String>,
    },
    /// Principal components of the embeddings.
    Pca {
        #[arg(long)]
        dims: Option<usize>,
    },
    /// Density-based coverage of REF by TEST in embedding space.
    Density,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::BuildGraphs { .. } => "build-graphs",
            Command::Match { .. } => "match",
            Command::Compare => "compare",
            Command::Train { .. } => "train",
            Command::Embed { .. } => "embed",
            Command::Nn { .. } => "nn",
            Command::Pca { .. } => "pca",
            Command::Density => "density",
        }
    }
}

fn dispatch(cfg: &RunConfig, command: &Command) -> CliResult<serde_json::Value> {
    match command {
        Command::Synth { role } => commands::synth(cfg, &role.list()),
        Command::BuildGraphs { role } => commands::build_graphs(cfg, &role.list()),
        Command::Match { role } => commands::match_archetypes(cfg, &role.list()),
        Command::Compare => commands::compare(cfg),
        Command::Train { role } => commands::train_encoder(cfg, (*role).into()),
        Command::Embed { role } => commands::embed(cfg, &role.list()),
        Command::Nn {
            role,
            against,
            scene,
            row,
            k,
            metric,
        } => {
            let metric = metric
                .as_deref()
                .map(str::parse::<Metric>)
                .transpose()
                .map_err(|e| CliError::field("--metric", e.to_string()))?;
            let args = NnArgs {
                role: (*role).into(),
                against: against.map(Into::into),
                scene: scene.clone(),
                row: *row,
                k: *k,
                metric,
            };
            commands::nn(cfg, &args)
        }
        Command::Pca { dims } => commands::pca_report(cfg, *dims),
        Command::Density => commands::density(cfg),
    }
}

/// Parses `args`, runs the command and returns the outcome as JSON.
pub fn execute<I, T>(
    args: I,
    env: impl IntoIterator<Item = (String, String)>,
) -> (String, CliResult<serde_json::Value>)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return (
                "scenecov".into(),
                Err(CliError::usage(e.to_string().trim_end().to_string())),
            )
        }
    };
    let name = cli.command.name().to_string();
    let flags = FlagOverrides {
        seed: cli.seed,
        out: cli.out.clone(),
        jobs: cli.jobs,
    };
    let result = RunConfig::load(cli.config.as_deref(), env, &flags).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| CliError::Internal(e.to_string()))?;
        pool.install(|| dispatch(&cfg, &cli.command))
    });
    (name, result)
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I, env: impl IntoIterator<Item = (String, String)>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let Err(e) = Cli::try_parse_from(&args) {
        use clap::error::ErrorKind;
        if matches!(
            e.kind(),
            ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
        ) {
            print!("{e}");
            return 0;
        }
    }
    let outcome = catch_unwind(AssertUnwindSafe(|| execute(args, env)));
    let (name, result) = match outcome {
        Ok(v) => v,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            ("scenecov".into(), Err(CliError::Internal(msg)))
        }
    };
    match result {
        Ok(mut summary) => {
            summary["status"] = json!("ok");
            summary["command"] = json!(name);
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json(&name));
            e.exit_code()
        }
    }
}
