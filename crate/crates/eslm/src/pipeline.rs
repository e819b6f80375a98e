//! Experiment stages, in memory and on disk.
//!
//! Every stage is a pure function of the config, the seed and the artifacts of
//! the stage before it. The file-based wrappers read and write a single run
//! directory:
//!
//! ```text
//! events.csv  samples_pv.csv  samples_ps.csv  models/<variant>.snap
//! train_log.csv  metrics.csv  ssb.csv  table.csv  manifest.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use eslm_core::dataset::{Dataset, DatasetBuilder, FeatureLayout, Space, Split};
use eslm_core::eval::{
    evaluate_spaces, purchase_propensity, ssb_divergence, EvalData, MetricsReport,
};
use eslm_core::funnel::{generate_world, run_simulation, FunnelEvent, World};
use eslm_core::model::ModelParams;
use eslm_core::objectives::Variant;
use eslm_core::train::{prepare_training_data, train_variant};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::compare::{comparison_table, RunMetrics};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result, StageContext};
use crate::formats::{self, MetricsRow, SsbRow, TrainLogRow};
use crate::snapshot::Snapshot;

pub const EVENTS_FILE: &str = "events.csv";
pub const SAMPLES_PV_FILE: &str = "samples_pv.csv";
pub const SAMPLES_PS_FILE: &str = "samples_ps.csv";
pub const MODELS_DIR: &str = "models";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SSB_FILE: &str = "ssb.csv";
pub const TABLE_FILE: &str = "table.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// The world of a run; regenerated from the config rather than stored.
pub fn world(cfg: &ExperimentConfig, seed: u64) -> Result<World> {
    Ok(generate_world(&cfg.world.to_core(), seed)?)
}

pub fn simulate(cfg: &ExperimentConfig, world: &World) -> Result<Vec<FunnelEvent>> {
    Ok(run_simulation(world, &cfg.funnel.to_core(), cfg.funnel.episodes)?.events)
}

/// Train and test sets of both spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    pub pv_train: Dataset,
    pub pv_test: Dataset,
    pub ps_train: Dataset,
    pub ps_test: Dataset,
}

impl Datasets {
    fn train(&self, space: Space) -> &Dataset {
        match space {
            Space::Pv => &self.pv_train,
            Space::Ps => &self.ps_train,
        }
    }
}

pub fn build_datasets(
    cfg: &ExperimentConfig,
    world: &World,
    events: &[FunnelEvent],
) -> Result<Datasets> {
    let b = DatasetBuilder::new(world, events, cfg.funnel.test_start)?;
    Ok(Datasets {
        pv_train: b.pv(Split::Train),
        pv_test: b.pv(Split::Test),
        ps_train: b.ps(Split::Train),
        ps_test: b.ps(Split::Test),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedVariant {
    pub variant: Variant,
    pub params: ModelParams,
    pub log: Vec<TrainLogRow>,
}

/// Trains one variant from the shared initialisation of `seed`.
pub fn train_one(
    cfg: &ExperimentConfig,
    world: &World,
    data: &Datasets,
    variant: Variant,
    seed: u64,
) -> Result<TrainedVariant> {
    let vocab = FeatureLayout::for_world(world).vocab_size();
    let train = cfg.train_config();
    let prepared = prepare_training_data(
        variant,
        &data.pv_train,
        &data.ps_train,
        train.negative_rate,
        seed,
    )?;
    let mut params = ModelParams::init(cfg.model.shape(vocab), seed)?;
    let log = train_variant(&mut params, &prepared, &train, seed)?;
    Ok(TrainedVariant {
        variant,
        params,
        log: log.iter().map(TrainLogRow::from).collect(),
    })
}

pub fn train_all(
    cfg: &ExperimentConfig,
    world: &World,
    data: &Datasets,
    seed: u64,
) -> Result<Vec<TrainedVariant>> {
    cfg.variants()?
        .into_iter()
        .map(|v| train_one(cfg, world, data, v, seed))
        .collect()
}

/// Scores the held-out sets of both spaces with one model.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    world: &World,
    data: &Datasets,
    variant: Variant,
    params: &ModelParams,
    seed: u64,
) -> Result<Vec<MetricsReport>> {
    let specs = cfg.eval_specs(variant)?;
    let eval = EvalData {
        pv: Some(&data.pv_test),
        ps: Some(&data.ps_test),
    };
    Ok(evaluate_spaces(
        params,
        variant,
        &specs,
        eval,
        world,
        cfg.dataset.negative_rate,
        seed,
    )?)
}

/// Selection-bias diagnostic of a variant: its training space against the
/// held-out previous-stage space, both scored by the oracle purchase propensity.
pub fn ssb_row(world: &World, data: &Datasets, variant: Variant, seed: u64) -> Result<SsbRow> {
    let space = variant.train_space();
    let train = purchase_propensity(world, &data.train(space).samples)?;
    let inference = purchase_propensity(world, &data.ps_test.samples)?;
    let r = ssb_divergence(&train, &inference)?;
    Ok(SsbRow {
        variant: variant.as_str().to_string(),
        train_space: space.as_str().to_string(),
        mean_gap: r.mean_gap,
        decile_distance: r.decile_distance,
        ssb_divergence: r.divergence(),
        seed,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

fn snapshot_path(dir: &Path, variant: Variant) -> PathBuf {
    dir.join(MODELS_DIR)
        .join(format!("{}.snap", variant.as_str()))
}

/// Writes `events.csv`.
pub fn simulate_stage(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let world = world(cfg, seed)?;
    let events = simulate(cfg, &world)?;
    formats::write_events(&dir.join(EVENTS_FILE), &events)
}

/// Reads `events.csv`, writes both sample files.
pub fn build_stage(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let world = world(cfg, seed)?;
    let events = formats::read_events(&dir.join(EVENTS_FILE))?;
    let data = build_datasets(cfg, &world, &events)?;
    let join = |a: &Dataset, b: &Dataset| {
        a.samples
            .iter()
            .chain(&b.samples)
            .cloned()
            .collect::<Vec<_>>()
    };
    formats::write_samples(
        &dir.join(SAMPLES_PV_FILE),
        &join(&data.pv_train, &data.pv_test),
    )?;
    formats::write_samples(
        &dir.join(SAMPLES_PS_FILE),
        &join(&data.ps_train, &data.ps_test),
    )
}

pub fn load_datasets(world: &World, dir: &Path) -> Result<Datasets> {
    let (pv_train, pv_test) = formats::read_samples(&dir.join(SAMPLES_PV_FILE), Space::Pv, world)?;
    let (ps_train, ps_test) = formats::read_samples(&dir.join(SAMPLES_PS_FILE), Space::Ps, world)?;
    Ok(Datasets {
        pv_train,
        pv_test,
        ps_train,
        ps_test,
    })
}

/// Reads the sample files, writes one snapshot per variant and `train_log.csv`.
pub fn train_stage(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let world = world(cfg, seed)?;
    let data = load_datasets(&world, dir)?;
    create_dir(&dir.join(MODELS_DIR))?;
    let mut log = Vec::new();
    for variant in cfg.variants()? {
        let t = train_one(cfg, &world, &data, variant, seed)?;
        Snapshot {
            variant,
            params: t.params,
        }
        .save(&snapshot_path(dir, variant))?;
        log.extend(t.log);
    }
    formats::write_train_log(&dir.join(TRAIN_LOG_FILE), &log)
}

/// Reads the sample files and snapshots, writes `metrics.csv`, `ssb.csv` and
/// the single-run `table.csv`.
pub fn evaluate_stage(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let world = world(cfg, seed)?;
    let data = load_datasets(&world, dir)?;
    let vocab = FeatureLayout::for_world(&world).vocab_size();
    let mut metrics = Vec::new();
    let mut ssb = Vec::new();
    for variant in cfg.variants()? {
        let path = snapshot_path(dir, variant);
        let snap = Snapshot::load(&path)?;
        if snap.variant != variant {
            return Err(Error::Snapshot {
                path,
                reason: format!("holds a {} model", snap.variant),
            });
        }
        if snap.params.shape != cfg.model.shape(vocab) {
            return Err(Error::Snapshot {
                path,
                reason: "model shape does not match the config".into(),
            });
        }
        let reports = evaluate_model(cfg, &world, &data, variant, &snap.params, seed)?;
        metrics.extend(reports.iter().map(MetricsRow::from));
        ssb.push(ssb_row(&world, &data, variant, seed)?);
    }
    formats::write_metrics(&dir.join(METRICS_FILE), &metrics)?;
    formats::write_ssb(&dir.join(SSB_FILE), &ssb)?;
    let table = comparison_table(&[RunMetrics { metrics, ssb }]);
    table.write_csv(&dir.join(TABLE_FILE))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    seed: u64,
    config: &'a ExperimentConfig,
    provenance: BTreeMap<String, &'static str>,
    /// SHA-256 of every artifact, keyed by path relative to the run directory.
    artifacts: BTreeMap<String, String>,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `<out>/<config hash>-s<seed>`
pub fn run_dir(out: &Path, cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    out.join(format!("{}-s{seed}", cfg.hash()))
}

/// Runs every stage for one seed and writes the manifest. Returns the run
/// directory. On failure the artifacts written so far are left in place.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<PathBuf> {
    let dir = run_dir(out, cfg, seed);
    simulate_stage(cfg, seed, &dir).stage("simulate")?;
    build_stage(cfg, seed, &dir).stage("build-data")?;
    train_stage(cfg, seed, &dir).stage("train")?;
    evaluate_stage(cfg, seed, &dir).stage("evaluate")?;
    write_manifest(cfg, seed, &dir).stage("report")?;
    Ok(dir)
}

pub fn write_manifest(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let mut names: Vec<String> = [
        EVENTS_FILE,
        SAMPLES_PV_FILE,
        SAMPLES_PS_FILE,
        TRAIN_LOG_FILE,
        METRICS_FILE,
        SSB_FILE,
        TABLE_FILE,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend(
        cfg.variants()?
            .iter()
            .map(|v| format!("{MODELS_DIR}/{}.snap", v.as_str())),
    );
    let mut artifacts = BTreeMap::new();
    for name in names {
        artifacts.insert(name.clone(), file_digest(&dir.join(&name))?);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        seed,
        config: cfg,
        provenance: cfg.provenance(),
        artifacts,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    text.push('\n');
    formats::write_text(&dir.join(MANIFEST_FILE), &text)
}

/// Hash and seed recorded in a run directory's manifest.
pub fn read_manifest(dir: &Path) -> Result<(String, u64)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|source| Error::ConfigParse {
            path: path.clone(),
            source,
        })?;
    let hash = value["config_hash"].as_str();
    let seed = value["seed"].as_u64();
    match (hash, seed) {
        (Some(h), Some(s)) => Ok((h.to_string(), s)),
        _ => Err(Error::Format {
            path,
            record: 0,
            reason: "manifest lacks config_hash or seed".into(),
        }),
    }
}
