use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ensemble_rl::aggregation::{evaluate, EvalMode};
use ensemble_rl::checkpoint;
use ensemble_rl::config::{apply_override, parse_config, parse_grid, RunConfig, TandemConfig};
use ensemble_rl::report;
use ensemble_rl::rng::{stream, Stream};
use ensemble_rl::runner::{seed_csv_path, write_log, write_meta, Trainer};

#[derive(Parser)]
#[command(name = "ensemble-rl", version, about = "Train and evaluate ensemble exploration agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seeds to run; overrides `seeds` in the config.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory; defaults to `output_dir` or `runs/<task>/<method>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write `seed_<S>.ckpt` files here.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Steps between checkpoints; defaults to the evaluation period.
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from the checkpoints in `--checkpoint-dir` when present.
    #[arg(long, requires = "checkpoint_dir")]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Agg,
    Indiv,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more seeds.
    Train(RunArgs),
    /// Train an active/passive pair with a given share of passive-driven episodes.
    Tandem {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        passive_pct: f64,
    },
    /// Evaluate a checkpoint without changing it.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, value_enum, default_value = "agg")]
        mode: ModeArg,
        /// Evaluate one member instead of `--mode`.
        #[arg(long)]
        member: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarise every run below a directory.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the cartesian product of `--grid KEY=V1,V2` overrides.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required = true)]
        grid: Vec<String>,
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn seeds_for(config: &RunConfig, cli: &[u64]) -> Vec<u64> {
    if !cli.is_empty() {
        cli.to_vec()
    } else if !config.seeds.is_empty() {
        config.seeds.clone()
    } else {
        vec![0]
    }
}

fn run_seeds(config: &RunConfig, args: &RunArgs) -> Result<()> {
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| Path::new("runs").join(config.env.task_name()).join(config.method_name()));
    write_meta(&out, config)?;
    let every = args.checkpoint_every.unwrap_or(config.eval.period).max(1);
    for seed in seeds_for(config, &args.seeds) {
        let ckpt = args.checkpoint_dir.as_ref().map(|d| d.join(format!("seed_{seed}.ckpt")));
        let mut trainer = match &ckpt {
            Some(path) if args.resume && path.exists() => {
                let t = checkpoint::load(path, Some(config)).with_context(|| format!("resuming from {}", path.display()))?;
                log::info!("seed {seed}: resumed at step {}", t.step());
                t
            }
            _ => Trainer::new(config.clone(), seed)?,
        };
        if let Some(dir) = &args.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
        }
        while !trainer.is_done() {
            let next = (trainer.step() / every + 1) * every;
            trainer.run_until(next)?;
            if let Some(path) = &ckpt {
                checkpoint::save(path, &trainer)?;
            }
        }
        write_log(&out, seed, trainer.log())?;
        if trainer.log().diverged() {
            log::warn!("seed {seed} diverged; see {}", seed_csv_path(&out, seed).display());
        }
        let last = trainer.log().series("eval_agg").last().copied().unwrap_or(f64::NAN);
        println!("{} {} seed {seed}: final eval_agg {last}", config.env.task_name(), config.method_name());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Train(args) => {
            let config = parse_config(&args.config)?;
            run_seeds(&config, &args)?;
        }
        Command::Tandem { run, passive_pct } => {
            let mut config = parse_config(&run.config)?;
            config.tandem = Some(TandemConfig { passive_pct });
            config.validate()?;
            run_seeds(&config, &run)?;
        }
        Command::Eval { checkpoint: path, episodes, mode, member, seed } => {
            let trainer = checkpoint::load(&path, None)?;
            let mode = match (member, mode) {
                (Some(m), _) => EvalMode::Member(m),
                (None, ModeArg::Agg) => EvalMode::Aggregated,
                (None, ModeArg::Indiv) => EvalMode::Individual,
            };
            let out = evaluate(trainer.agent().policy(), &trainer.config().env, mode, episodes, &mut stream(seed, Stream::Eval))?;
            println!("mean return {} over {episodes} episodes", out.mean_return());
            if let Some(h) = out.vote_entropy {
                println!("vote entropy {h}");
            }
        }
        Command::Report { dirs, out } => {
            let rows = match &out {
                Some(path) => report::write_report(&dirs, path)?,
                None => report::summarize_all(&dirs)?,
            };
            print!("{}", report::summary_csv(&rows));
        }
        Command::Sweep { config, grid, seeds, out } => {
            let base = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let axes = grid.iter().map(|g| parse_grid(g)).collect::<Result<Vec<_>, _>>()?;
            let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
            for (key, values) in &axes {
                combos = combos
                    .into_iter()
                    .flat_map(|c| values.iter().map(move |v| [c.clone(), vec![(key.clone(), v.clone())]].concat()))
                    .collect();
            }
            for combo in combos {
                let mut text = base.clone();
                for (k, v) in &combo {
                    text = apply_override(&text, k, v)?;
                }
                let cfg = RunConfig::from_toml_str(&text).with_context(|| format!("sweep point {combo:?}"))?;
                let name: Vec<String> = combo.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let args = RunArgs {
                    config: config.clone(),
                    seeds: seeds.clone(),
                    out: Some(out.join(name.join(","))),
                    checkpoint_dir: None,
                    checkpoint_every: None,
                    resume: false,
                };
                run_seeds(&cfg, &args)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_precedence() {
        let mut c = RunConfig::new(ensemble_rl::Algorithm::BootDqn, ensemble_rl::envs::EnvConfig::chain(4), 10);
        assert_eq!(seeds_for(&c, &[]), vec![0]);
        c.seeds = vec![3, 4];
        assert_eq!(seeds_for(&c, &[]), vec![3, 4]);
        assert_eq!(seeds_for(&c, &[9]), vec![9]);
    }
}
