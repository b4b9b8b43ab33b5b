use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use piasim::feasibility::{check_corollary1, find_violation, AlignmentSet, EnumerationCap, Pair};
use piasim::harness::{figure_preset, run_experiment, write_outputs, ExperimentConfig, Figure};
use piasim::{ClusterDims, Error, Result, UserId};

#[derive(Parser)]
#[command(name = "piasim", version, about = "Partial interference alignment cluster simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `base_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decide alignment feasibility for a cluster.
    Feascheck {
        /// G,K,M,N
        #[arg(long)]
        dims: String,
        /// File with one 1-based `bs cell user` triple per line.
        #[arg(long, conflicts_with = "q")]
        pairs: Option<PathBuf>,
        /// Check the antenna-count condition for nulling `q` BSs per user.
        #[arg(long)]
        q: Option<usize>,
    },
    /// Run a preset sweep matching one of the published figures.
    SweepFigure {
        figure: String,
        #[arg(long)]
        drops: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_dims(text: &str) -> Result<ClusterDims> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad --dims entry '{p}'"))))
        .collect::<Result<_>>()?;
    let [g, k, m, n] = parts[..] else {
        return Err(Error::Config("--dims expects G,K,M,N".into()));
    };
    ClusterDims::uniform(g, k, m, n)
}

fn parse_pairs(dims: &ClusterDims, text: &str) -> Result<AlignmentSet> {
    let mut set = AlignmentSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<usize> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("line {}: expected three integers", lineno + 1)))?;
        let [bs, cell, user] = nums[..] else {
            return Err(Error::Config(format!("line {}: expected `bs cell user`", lineno + 1)));
        };
        if bs == 0 || cell == 0 || user == 0 {
            return Err(Error::Config(format!("line {}: indices are 1-based", lineno + 1)));
        }
        set.insert(dims, Pair::new(bs - 1, UserId::new(cell - 1, user - 1)))?;
    }
    Ok(set)
}

fn feascheck(dims: &str, pairs: Option<PathBuf>, q: Option<usize>) -> Result<()> {
    let dims = parse_dims(dims)?;
    if let Some(q) = q {
        let ok = check_corollary1(&dims, q)?;
        println!("{}", if ok { "FEASIBLE" } else { "INFEASIBLE" });
        return Ok(());
    }
    let set = match pairs {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_pairs(&dims, &text)?
        }
        None => AlignmentSet::all(&dims),
    };
    match find_violation(&dims, &set, EnumerationCap::default())? {
        None => println!("FEASIBLE"),
        Some(v) => {
            println!("INFEASIBLE");
            println!("violated by {v}");
        }
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let output = run_experiment(&cfg)?;
            write_outputs(&out, &cfg, &output)
        }
        Command::Feascheck { dims, pairs, q } => feascheck(&dims, pairs, q),
        Command::SweepFigure { figure, drops, out, seed } => {
            let fig: Figure = figure.parse()?;
            let cfg = figure_preset(fig, drops, seed.unwrap_or(1));
            cfg.validate()?;
            let output = run_experiment(&cfg)?;
            write_outputs(&out, &cfg, &output)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_config() => {
            eprintln!("error[config]: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error[numerical]: {e}");
            ExitCode::from(2)
        }
    }
}
