use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hpsde::envs::Environment;
use hpsde::harness::{
    aggregate, run_baseline_monolithic, run_hpsde, write_aggregate, HpsdeConfig, PolicyBundle,
    RunResult,
};
use hpsde::Error;

#[derive(Parser, Debug)]
#[command(name = "hpsde", version, about = "Hierarchical episodic policy search")]
struct Cli {
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunOpts {
    /// TOML configuration; omitted keys take the environment's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment preset, replacing the one named in the config.
    #[arg(long)]
    env: Option<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// Single option with greedy gating instead of the full hierarchy.
    #[arg(long)]
    baseline: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One learning run: writes trace.csv, trace.jsonl and policies.json.
    Run {
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One run per seed plus aggregate.csv with mean and std per iteration.
    Sweep {
        #[command(flatten)]
        opts: RunOpts,
        /// `a..b` (end exclusive), `a..=b` or a comma list.
        #[arg(long, default_value = "0..20")]
        seeds: String,
    },
    /// Expected best return over contexts, by enumeration or search.
    Oracle {
        #[arg(long, default_value = "toy2")]
        env: String,
        #[arg(long, default_value_t = 50)]
        contexts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replays a saved policies.json on fresh contexts with greedy gating.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Execute option means instead of samples.
        #[arg(long)]
        mean: bool,
    },
}

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { opts, seed } => {
            let mut cfg = load_config(&opts)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let result = execute(&cfg, &opts)?;
            write_run(&opts.out_dir, &cfg, &result)?;
            if let Some(last) = result.trace.last() {
                println!(
                    "iterations {} final mean return {} options {}",
                    last.iter, last.mean_return, last.n_options
                );
            }
            match result.failure {
                Some(f) => Err(Failure::Runtime(format!(
                    "iteration {}: {}",
                    f.iteration, f.message
                ))),
                None => Ok(()),
            }
        }
        Command::Sweep { opts, seeds } => {
            let cfg = load_config(&opts)?;
            let seeds = parse_seeds(&seeds)?;
            let mut rows = Vec::new();
            let mut failed = Vec::new();
            for &seed in &seeds {
                let mut c = cfg.clone();
                c.seed = seed;
                let result = execute(&c, &opts)?;
                write_run(&opts.out_dir.join(format!("seed-{seed}")), &c, &result)?;
                if let Some(f) = &result.failure {
                    failed.push(format!(
                        "seed {seed} iteration {}: {}",
                        f.iteration, f.message
                    ));
                }
                rows.push(result.trace.rows());
            }
            let agg = aggregate(&rows);
            fs::create_dir_all(&opts.out_dir).map_err(io_err)?;
            let file = fs::File::create(opts.out_dir.join("aggregate.csv")).map_err(io_err)?;
            write_aggregate(&agg, file)?;
            if let Some(last) = agg.last() {
                println!(
                    "{} seeds, final mean return {} ± {}",
                    seeds.len(),
                    last.mean_return,
                    last.std_return
                );
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Runtime(failed.join("; ")))
            }
        }
        Command::Oracle {
            env,
            contexts,
            seed,
        } => {
            let env = Environment::preset(&env)?;
            let r = env.oracle(contexts, seed)?;
            println!("{}", r.expected);
            Ok(())
        }
        Command::Eval {
            bundle,
            episodes,
            seed,
            mean,
        } => {
            let text = fs::read_to_string(&bundle)
                .map_err(|e| Failure::Config(format!("{}: {e}", bundle.display())))?;
            let b = PolicyBundle::from_json(&text).map_err(|e| Failure::Config(e.to_string()))?;
            let summary = b.evaluate(episodes, seed, mean)?;
            println!(
                "{}",
                serde_json::to_string(&summary).map_err(|e| Failure::Runtime(e.to_string()))?
            );
            Ok(())
        }
    }
}

fn io_err(e: std::io::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(opts: &RunOpts) -> Result<HpsdeConfig, Failure> {
    let mut table = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    if let Some(env) = &opts.env {
        let section = table
            .entry("environment")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match section {
            toml::Value::Table(t) => {
                t.insert("name".into(), toml::Value::String(env.clone()));
            }
            _ => return Err(Failure::Config("[environment] must be a table".into())),
        }
    }
    if let Some(n) = opts.threads {
        table.insert("threads".into(), toml::Value::Integer(n as i64));
    }
    Ok(HpsdeConfig::from_toml_str(&table.to_string())?)
}

fn execute(cfg: &HpsdeConfig, opts: &RunOpts) -> Result<RunResult, Failure> {
    let r = if opts.baseline {
        run_baseline_monolithic(cfg)?
    } else {
        run_hpsde(cfg)?
    };
    Ok(r)
}

fn write_run(dir: &Path, cfg: &HpsdeConfig, r: &RunResult) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(io_err)?;
    r.trace
        .write_csv(fs::File::create(dir.join("trace.csv")).map_err(io_err)?)?;
    r.trace.write_jsonl(
        fs::File::create(dir.join("trace.jsonl")).map_err(io_err)?,
        r.failure.as_ref(),
    )?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?).map_err(io_err)?;
    if let Some(b) = &r.bundle {
        fs::write(dir.join("policies.json"), b.to_json()?).map_err(io_err)?;
    }
    Ok(())
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Config(format!("cannot parse seed range '{spec}'"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = spec.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}
