use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use dccl::datahub::{filter_min_interactions, parse_movielens, save_dataset, Dataset, Manifest};
use dccl::evalmetrics::{evaluate, metrics_rows, METRICS_HEADER};
use dccl::metapatch::{generate_patches, ParamBasis};
use dccl::orchestrator::{
    export_metapatch_table, load_device_codes, load_source, prepare, run_experiment, run_lifecycle_with, score_cases,
    Recipe, RunConfig, RunOptions, Source, CHECKPOINT_DIR,
};
use dccl::recmodel::{BackboneParams, Scorer};
use dccl::Error;

/// Device-cloud collaborative learning for recommendation.
#[derive(Parser)]
#[command(name = "dccl", version)]
struct Cli {
    /// Run configuration in `key = value` form.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set device.lr=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Output directory (same as `--set output=...`).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and filter MovieLens-1M into a dataset directory.
    Ingest {
        /// Directory holding ratings.dat, movies.dat and users.dat.
        movielens: PathBuf,
        #[arg(long, default_value_t = 20)]
        min_interactions: usize,
        /// Destination dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic dataset described by the `synth.*` keys.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain backbone and basis and evaluate the cloud model.
    Pretrain,
    /// Run the full lifecycle.
    Run {
        /// Continue from the saved state in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this stage, e.g. `r1-device`.
        #[arg(long)]
        stop_after: Option<String>,
    },
    /// Run an experiment recipe: rq1, rq2, rq3, junction-ablation, one-round-ablation.
    Experiment { recipe: String },
    /// Evaluate the checkpoints of a finished round.
    Eval {
        #[arg(long, default_value_t = 0)]
        round: usize,
        /// Also evaluate the current device codes against the round's basis.
        #[arg(long)]
        with_codes: bool,
    },
    /// Write the per-device code table with dominant categories.
    ExportPatches {
        /// Defaults to `<output>/metapatch_table.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &cli.sets {
        let Some((k, v)) = s.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {s:?}");
        };
        c.set(k.trim(), v)?;
    }
    if let Some(o) = &cli.output {
        c.output = o.clone();
    }
    c.validate()?;
    Ok(c)
}

fn ingest(dir: &Path, threshold: usize, out: &Path, seed: u64, config: &RunConfig) -> anyhow::Result<()> {
    let ml = parse_movielens(dir)?;
    let (log, profiles, report) = filter_min_interactions(&ml.log, &ml.profiles, threshold)?;
    let data = Dataset::new(log, profiles)?;
    let manifest = Manifest::describe(&data, format!("movielens:{}", dir.display()), seed, Some(threshold), config.split.clone());
    save_dataset(out, &data, &manifest)?;
    println!(
        "{} users, {} items, {} interactions ({} filter passes removed {} users, {} items)",
        data.log.n_users,
        data.log.n_items,
        data.log.len(),
        report.passes,
        report.removed_users,
        report.removed_items
    );
    Ok(())
}

fn eval_round(config: &RunConfig, round: usize, with_codes: bool) -> anyhow::Result<()> {
    let p = prepare(config)?;
    let ck = config.output.join(CHECKPOINT_DIR);
    let backbone = BackboneParams::load(&ck.join(format!("backbone_r{round}.ckpt")))?;
    let scorer = Scorer::new(&backbone)?;
    let gate = config.device.gate;
    let cases = score_cases(&p.data, &p.splits.cases, &scorer, gate, |_| Ok(None))?;
    let mut out = String::from(METRICS_HEADER);
    out.push_str(&metrics_rows(
        &format!("r{round}/cloud"),
        &evaluate(&cases, Some(&p.partition), config.ndcg)?,
    ));
    if with_codes {
        let basis = ParamBasis::load(&ck.join(format!("basis_r{round}.ckpt")))?;
        let codes: std::collections::BTreeMap<_, _> =
            load_device_codes(&config.output)?.into_iter().map(|c| (c.device, c)).collect();
        let cases = score_cases(&p.data, &p.splits.cases, &scorer, gate, |u| {
            codes.get(&u).map(|c| generate_patches(&basis, c)).transpose()
        })?;
        out.push_str(&metrics_rows(
            &format!("r{round}/codes"),
            &evaluate(&cases, Some(&p.partition), config.ndcg)?,
        ));
    }
    print!("{out}");
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Ingest {
            movielens,
            min_interactions,
            out,
        } => ingest(&movielens, min_interactions, &out, config.seed, &config)?,
        Command::Synth { out } => {
            let Source::Synthetic(spec) = &config.source else {
                bail!("synth needs a synthetic source");
            };
            let data = load_source(&config.source)?;
            let manifest = Manifest::describe(&data, "synthetic", spec.seed, None, config.split.clone());
            save_dataset(&out, &data, &manifest)?;
            println!("{} users, {} items, {} interactions", data.log.n_users, data.log.n_items, data.log.len());
        }
        Command::Pretrain => {
            let mut c = config;
            c.round_limit = Some(0);
            run_lifecycle_with(&c, &RunOptions::default())?;
            print!("{}", fs::read_to_string(c.output.join("metrics.csv"))?);
        }
        Command::Run { resume, stop_after } => {
            let out = run_lifecycle_with(&config, &RunOptions { resume, stop_after })?;
            if out.finished {
                println!("finished {} rounds; outputs in {}", out.reports.len().saturating_sub(1), out.output.display());
            } else {
                println!("stopped early; resume with --resume");
            }
        }
        Command::Experiment { recipe } => {
            let recipe: Recipe = recipe.parse()?;
            let report = run_experiment(recipe, &config)?;
            print!("{}", report.summary_csv());
        }
        Command::Eval { round, with_codes } => eval_round(&config, round, with_codes)?,
        Command::ExportPatches { out } => {
            let p = prepare(&config)?;
            let codes = load_device_codes(&config.output).context("no device codes; run at least one round first")?;
            if codes.is_empty() {
                bail!("no device codes; run at least one round first");
            }
            let path = out.unwrap_or_else(|| config.output.join("metapatch_table.csv"));
            fs::write(&path, export_metapatch_table(&p.data, &p.splits, &codes, config.code_dim))?;
            println!("{} rows written to {}", codes.len(), path.display());
        }
    }
    Ok(())
}

/// Exit status: 2 configuration, 3 input data, 4 I/O, 1 anything else; a
/// failed lifecycle stage exits with 10 plus its position in
/// pretrain-backbone, pretrain-basis, eval-pretrain, device, incremental,
/// distill-backbone, distill-basis, eval.
fn exit_code(e: &anyhow::Error) -> u8 {
    let Some(err) = e.downcast_ref::<Error>() else {
        return 1;
    };
    if let Some(stage) = err.stage() {
        let kinds = [
            "pretrain-backbone",
            "pretrain-basis",
            "eval-pretrain",
            "device",
            "incremental",
            "distill-backbone",
            "distill-basis",
            "eval",
        ];
        let kind = stage.split_once('-').filter(|(r, _)| r.starts_with('r') && r[1..].parse::<usize>().is_ok());
        let kind = kind.map_or(stage, |(_, k)| k);
        return kinds.iter().position(|k| *k == kind).map_or(1, |i| 10 + i as u8);
    }
    match err {
        Error::Config(_) => 2,
        Error::Parse { .. } | Error::Data(_) => 3,
        Error::Io { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
