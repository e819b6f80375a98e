use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eslm::compare::compare_variants;
use eslm::config::ExperimentConfig;
use eslm::error::{Error, Result, StageContext};
use eslm::pipeline::{self, read_manifest};
use eslm::rank::{rank_catalog, read_candidates, write_ranking, RankModels};
use eslm::snapshot::Snapshot;

/// Entire-space conversion-rate experiments on a simulated funnel.
#[derive(Debug, Parser)]
#[command(name = "eslm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the world and write `events.csv` into the run directory `--out`.
    Simulate(Common),
    /// Turn `events.csv` into `samples_pv.csv` and `samples_ps.csv`.
    BuildData(Common),
    /// Train every configured variant, writing `models/` and `train_log.csv`.
    Train(Common),
    /// Score the held-out samples, writing `metrics.csv`, `ssb.csv` and `table.csv`.
    Evaluate(Common),
    /// Run every stage for each seed under `<out>/<hash>-s<seed>`, then compare the seeds.
    Run(Common),
    /// Compare completed runs of one config; writes the comparison tables into `--out`.
    Compare {
        /// Run directories to compare (at least two).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// When given, every run must have been produced from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Accepted for uniformity; comparisons span the seeds of their runs.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank candidates by the blended GMV score and write `ranking.csv`.
    Rank {
        #[command(flatten)]
        common: Common,
        /// Model trained on impressions (ESMM or Pv2Pay_g).
        #[arg(long)]
        pv_model: PathBuf,
        /// Model trained on the entire space (ESLM or PS2Pay_g).
        #[arg(long)]
        ps_model: PathBuf,
        /// CSV with header `user_id,item_id,seq`.
        #[arg(long)]
        candidates: PathBuf,
        /// Overrides `loss.alpha` of the config.
        #[arg(long)]
        alpha: Option<f64>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, u64)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seeds[0]);
    Ok((cfg, seed))
}

type Stage = fn(&ExperimentConfig, u64, &Path) -> Result<()>;

fn stage(common: &Common, name: &'static str, f: Stage) -> Result<()> {
    let (cfg, seed) = load(common).stage("config")?;
    f(&cfg, seed, &common.out).stage(name)?;
    println!("{name}: wrote {}", common.out.display());
    Ok(())
}

fn run(common: &Common) -> Result<()> {
    let cfg = ExperimentConfig::load(&common.config).stage("config")?;
    let seeds = common.seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    let mut dirs = Vec::new();
    for seed in seeds {
        let dir = pipeline::run_experiment(&cfg, seed, &common.out)?;
        println!("run: seed {seed} -> {}", dir.display());
        dirs.push(dir);
    }
    if dirs.len() >= 2 {
        let out = common.out.join(format!("{}-compare", cfg.hash()));
        let table = compare_variants(&dirs, &out).stage("compare")?;
        print!("{}", table.to_text());
        println!("compare: wrote {}", out.display());
    }
    Ok(())
}

fn compare(runs: &[PathBuf], config: Option<&Path>, out: &Path) -> Result<()> {
    if let Some(path) = config {
        let hash = ExperimentConfig::load(path).stage("config")?.hash();
        for dir in runs {
            let (h, _) = read_manifest(dir).stage("compare")?;
            if h != hash {
                return Err(Error::Comparability(format!(
                    "{} was produced by config {h}, not {hash}",
                    dir.display()
                )))
                .stage("compare");
            }
        }
    }
    let table = compare_variants(runs, out).stage("compare")?;
    print!("{}", table.to_text());
    Ok(())
}

fn rank(
    common: &Common,
    pv_model: &Path,
    ps_model: &Path,
    candidates: &Path,
    alpha: Option<f64>,
) -> Result<()> {
    let (cfg, seed) = load(common).stage("config")?;
    let inner = || -> Result<()> {
        let world = pipeline::world(&cfg, seed)?;
        let pv = Snapshot::load(pv_model)?;
        let ps = Snapshot::load(ps_model)?;
        let candidates = read_candidates(candidates)?;
        let mut gmv = cfg.gmv();
        if let Some(a) = alpha {
            gmv.alpha = a;
        }
        let ranked = rank_catalog(
            RankModels { pv: &pv, ps: &ps },
            &world,
            &candidates,
            &gmv,
            cfg.dataset.negative_rate,
        )?;
        std::fs::create_dir_all(&common.out).map_err(Error::io(&common.out))?;
        let path = common.out.join("ranking.csv");
        write_ranking(&path, &ranked)?;
        println!("rank: {} candidates -> {}", ranked.len(), path.display());
        Ok(())
    };
    inner().stage("rank")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => stage(c, "simulate", pipeline::simulate_stage),
        Command::BuildData(c) => stage(c, "build-data", pipeline::build_stage),
        Command::Train(c) => stage(c, "train", pipeline::train_stage),
        Command::Evaluate(c) => stage(c, "evaluate", pipeline::evaluate_stage),
        Command::Run(c) => run(c),
        Command::Compare {
            runs, config, out, ..
        } => compare(runs, config.as_deref(), out),
        Command::Rank {
            common,
            pv_model,
            ps_model,
            candidates,
            alpha,
        } => rank(common, pv_model, ps_model, candidates, *alpha),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
