//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_assignment, parse_entries, parse_list, read_config_source, DataSource, ExperimentConfig};
use crate::error::{Error, Result};
use crate::graph::{edge_homophily, save_bundle, GraphBundle};
use crate::model::save_checkpoint;
use crate::training::{
    ablation_suite, baseline_comparison, depth_sweep, run_multi_seed, summary_table, write_reports, Architecture,
    RunResult,
};

#[derive(Parser, Debug)]
#[command(name = "gnnformer", version, about = "Graph transformer node classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a stochastic block model bundle from the data.sbm.* keys.
    Generate(CommonArgs),
    /// Train over every seed and write results, curves and checkpoints.
    Train(CommonArgs),
    /// Run the six-row ablation table.
    Ablate(CommonArgs),
    /// Sweep the block count against a residual-free GCN control.
    Depth {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated block counts, overriding depth.depths.
        #[arg(long)]
        depths: Option<String>,
    },
    /// Compare dense-attention and neighborhood-attention Transformers with GNNFormer.
    BaselineGt(CommonArgs),
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// Config file path, or preset:<name>.
    #[arg(long)]
    pub config: String,
    /// Output directory, overriding out.dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Comma-separated seeds, overriding train.seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Extra key=value assignments applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

const DEFAULT_OUT: &str = "out";

struct Prepared {
    config: ExperimentConfig,
    out: PathBuf,
    jobs: usize,
}

fn prepare(args: &CommonArgs) -> Result<Prepared> {
    let (text, origin) = read_config_source(&args.config)?;
    let mut entries = parse_entries(&text, &origin)?;
    for assignment in &args.set {
        entries.push(parse_assignment(assignment, "--set")?);
    }
    let mut config = ExperimentConfig::from_entries(&entries)?;
    if let Some(seeds) = &args.seeds {
        config.train.seeds = parse_list(seeds, "seed")?;
    }
    config.validate()?;
    if args.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok(Prepared {
        config,
        out,
        jobs: args.jobs,
    })
}

fn finish(out: &Path, runs: &[RunResult], stdout: &mut dyn Write) -> Result<()> {
    write_reports(out, runs)?;
    write!(stdout, "{}", summary_table(runs)).map_err(|e| Error::io("<stdout>", e))
}

/// Runs a parsed command line, printing tables and bundle stats to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let p = prepare(&args)?;
            if !matches!(p.config.data, DataSource::Sbm { .. }) {
                return Err(Error::Config("generate needs data.sbm.* keys".into()));
            }
            let bundle = p.config.data.load(&p.config.train.seeds)?;
            save_bundle(&bundle, &p.out)?;
            report_bundle(&bundle, stdout)
        }
        Command::Train(args) => {
            let p = prepare(&args)?;
            let bundle = p.config.data.load(&p.config.train.seeds)?;
            let arch = Architecture::GnnFormer(p.config.model.clone());
            let run = run_multi_seed(&bundle, &arch, &p.config.train, p.jobs, "GNNFormer")?;
            finish(&p.out, std::slice::from_ref(&run), stdout)?;
            for s in &run.seeds {
                save_checkpoint(&p.out.join("checkpoints").join(format!("seed_{}", s.seed)), s.model.as_ref())?;
            }
            if run.seeds.is_empty() {
                return Err(Error::Divergence("every seed failed".into()));
            }
            Ok(())
        }
        Command::Ablate(args) => {
            let p = prepare(&args)?;
            let bundle = p.config.data.load(&p.config.train.seeds)?;
            let runs = ablation_suite(&bundle, &p.config.model, &p.config.train, p.jobs)?;
            finish(&p.out, &runs, stdout)
        }
        Command::Depth { common, depths } => {
            let mut p = prepare(&common)?;
            if let Some(d) = depths {
                p.config.depths = parse_list(&d, "depth")?;
                if p.config.depths.contains(&0) {
                    return Err(Error::Config("--depths must be positive".into()));
                }
            }
            let bundle = p.config.data.load(&p.config.train.seeds)?;
            let runs = depth_sweep(&bundle, &p.config.model, &p.config.depths, &p.config.train, p.jobs)?;
            finish(&p.out, &runs, stdout)
        }
        Command::BaselineGt(args) => {
            let p = prepare(&args)?;
            let bundle = p.config.data.load(&p.config.train.seeds)?;
            let runs = baseline_comparison(&bundle, &p.config.model, p.config.baseline_layers, &p.config.train, p.jobs)?;
            finish(&p.out, &runs, stdout)
        }
    }
}

fn report_bundle(bundle: &GraphBundle, stdout: &mut dyn Write) -> Result<()> {
    let homophily = edge_homophily(bundle).map_or_else(|_| "n/a".to_string(), |h| format!("{h:.2}"));
    writeln!(
        stdout,
        "nodes {} edges {} homophily {homophily}",
        bundle.num_nodes(),
        bundle.graph.undirected_edge_count()
    )
    .map_err(|e| Error::io("<stdout>", e))
}

fn init_logging() {
    let level = match std::env::var("PTFORMER_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") | Err(_) => log::LevelFilter::Info,
        Ok(other) => {
            eprintln!("PTFORMER_LOG={other:?} not one of quiet, info, debug; using info");
            log::LevelFilter::Info
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
}

/// Process entry point: 0 on success, 1 for runtime failures, 2 for
/// config and parse errors.
pub fn main_exit() -> i32 {
    let cli = Cli::parse();
    init_logging();
    match run(cli, &mut std::io::stdout().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}
