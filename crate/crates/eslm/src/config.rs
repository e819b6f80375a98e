//! Declarative experiment description, read from a single JSON document.
//!
//! Unknown keys are rejected at every level. Omitted keys take the defaults
//! below.

use std::collections::BTreeMap;
use std::path::Path;

use eslm_core::dataset::{Label, Space};
use eslm_core::eval::{EvalSpec, Scorer};
use eslm_core::funnel::{EpisodeConfig, WorldConfig};
use eslm_core::model::ModelShape;
use eslm_core::objectives::{
    GmvScorerConfig, Variant, DEFAULT_ALPHA, DEFAULT_EPSILON, DEFAULT_LEARNING_RATE,
};
use eslm_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub users: usize,
    pub items: usize,
    pub scenes: usize,
    pub latent_dim: usize,
    pub categories: usize,
    pub segments: usize,
    pub max_seq_len: usize,
    pub warmup_history: usize,
    pub own_scene_pay_scale: f64,
    pub click_bias: f64,
    pub pay_bias: f64,
    pub other_scene_bias: f64,
    pub affinity_scale: f64,
    pub pay_click_correlation: f64,
    pub price_log_mean: f64,
    pub price_log_std: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            users: w.users,
            items: w.items,
            scenes: w.scenes,
            latent_dim: w.latent_dim,
            categories: w.categories,
            segments: w.segments,
            max_seq_len: w.max_seq_len,
            warmup_history: w.warmup_history,
            own_scene_pay_scale: w.own_scene_pay_scale,
            click_bias: w.click_bias,
            pay_bias: w.pay_bias,
            other_scene_bias: w.other_scene_bias,
            affinity_scale: w.affinity_scale,
            pay_click_correlation: w.pay_click_correlation,
            price_log_mean: w.price_log_mean,
            price_log_std: w.price_log_std,
        }
    }
}

impl WorldSection {
    pub fn to_core(&self) -> WorldConfig {
        WorldConfig {
            users: self.users,
            items: self.items,
            scenes: self.scenes,
            latent_dim: self.latent_dim,
            categories: self.categories,
            segments: self.segments,
            max_seq_len: self.max_seq_len,
            warmup_history: self.warmup_history,
            own_scene_pay_scale: self.own_scene_pay_scale,
            click_bias: self.click_bias,
            pay_bias: self.pay_bias,
            other_scene_bias: self.other_scene_bias,
            affinity_scale: self.affinity_scale,
            pay_click_correlation: self.pay_click_correlation,
            price_log_mean: self.price_log_mean,
            price_log_std: self.price_log_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunnelSection {
    pub pool_size: usize,
    pub ps_size: usize,
    pub impressions: usize,
    pub match_noise: f64,
    pub rank_noise: f64,
    /// Funnel passes per user.
    pub episodes: usize,
    /// First episode of the test split.
    pub test_start: u32,
}

impl Default for FunnelSection {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        Self {
            pool_size: e.pool_size,
            ps_size: e.ps_size,
            impressions: e.impressions,
            match_noise: e.match_noise,
            rank_noise: e.rank_noise,
            episodes: 5,
            test_start: 4,
        }
    }
}

impl FunnelSection {
    pub fn to_core(&self) -> EpisodeConfig {
        EpisodeConfig {
            pool_size: self.pool_size,
            ps_size: self.ps_size,
            impressions: self.impressions,
            match_noise: self.match_noise,
            rank_noise: self.rank_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Keep rate of negatives in training sets.
    pub negative_rate: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { negative_rate: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub hidden: [usize; 2],
    pub seq_cap: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let s = ModelShape::new(0);
        Self {
            dim: s.dim,
            heads: s.heads,
            head_dim: s.head_dim,
            hidden: s.hidden,
            seq_cap: s.seq_cap,
        }
    }
}

impl ModelSection {
    pub fn shape(&self, vocab: usize) -> ModelShape {
        ModelShape {
            vocab,
            dim: self.dim,
            heads: self.heads,
            head_dim: self.head_dim,
            hidden: self.hidden,
            seq_cap: self.seq_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
    pub alpha: f64,
    pub traffic: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha: DEFAULT_ALPHA,
            traffic: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
        }
    }
}

/// One requested metric. Without `scorer` each variant uses its designated one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalEntry {
    pub space: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<String>,
}

fn default_evaluation() -> Vec<EvalEntry> {
    [("pv", "pay_g"), ("ps", "pay_g"), ("ps", "pay_a")]
        .into_iter()
        .map(|(space, label)| EvalEntry {
            space: space.into(),
            label: label.into(),
            scorer: None,
        })
        .collect()
}

fn default_variants() -> Vec<String> {
    Variant::ALL
        .iter()
        .map(|v| v.as_str().to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSection,
    pub funnel: FunnelSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    pub loss: LossSection,
    pub training: TrainingSection,
    pub variants: Vec<String>,
    pub evaluation: Vec<EvalEntry>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldSection::default(),
            funnel: FunnelSection::default(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            optimizer: OptimizerSection::default(),
            loss: LossSection::default(),
            training: TrainingSection::default(),
            variants: default_variants(),
            evaluation: default_evaluation(),
            seeds: vec![1],
        }
    }
}

fn parse_space(name: &str) -> Result<Space> {
    match name {
        "pv" => Ok(Space::Pv),
        "ps" => Ok(Space::Ps),
        _ => Err(Error::InvalidConfig(format!(
            "unknown space `{name}` (expected pv or ps)"
        ))),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| Error::ConfigParse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let world = self.world.to_core();
        world.validate()?;
        self.funnel.to_core().validate(world.items)?;
        if self.funnel.test_start == 0 || self.funnel.test_start as usize >= self.funnel.episodes {
            return Err(Error::InvalidConfig(
                "funnel.test_start must leave at least one train and one test episode".into(),
            ));
        }
        self.model.shape(1).validate()?;
        self.train_config().validate()?;
        self.gmv().validate()?;
        self.variants()?;
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("variants must not be empty".into()));
        }
        for v in self.variants()? {
            self.eval_specs(v)?;
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        self.variants
            .iter()
            .map(|name| {
                Variant::parse(name)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{name}`")))
            })
            .collect()
    }

    pub fn eval_specs(&self, variant: Variant) -> Result<Vec<EvalSpec>> {
        self.evaluation
            .iter()
            .map(|e| {
                let space = parse_space(&e.space)?;
                let label = Label::parse(&e.label)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown label `{}`", e.label)))?;
                let scorer = match &e.scorer {
                    None => Scorer::designated(variant, label),
                    Some(name) => Scorer::parse(name)
                        .ok_or_else(|| Error::InvalidConfig(format!("unknown scorer `{name}`")))?,
                };
                Ok(EvalSpec {
                    space,
                    label,
                    scorer,
                })
            })
            .collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.training.steps,
            batch_size: self.training.batch_size,
            learning_rate: self.optimizer.learning_rate,
            epsilon: self.optimizer.epsilon,
            lambda: self.loss.lambda,
            negative_rate: self.dataset.negative_rate,
        }
    }

    pub fn gmv(&self) -> GmvScorerConfig {
        GmvScorerConfig {
            alpha: self.loss.alpha,
            traffic: self.loss.traffic,
        }
    }

    /// SHA-256 over everything except the seed list: runs with equal hashes
    /// describe the same experiment.
    pub fn hash(&self) -> String {
        let mut unseeded = self.clone();
        unseeded.seeds.clear();
        let bytes = serde_json::to_vec(&unseeded).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }

    /// Where each setting's value comes from: `paper` for values fixed by the
    /// method's original description, `unspecified-by-paper` for the rest.
    pub fn provenance(&self) -> BTreeMap<String, &'static str> {
        let value = serde_json::to_value(self).expect("config serialises");
        let mut out = BTreeMap::new();
        flatten(&value, String::new(), &mut out);
        for key in ["optimizer.learning_rate", "loss.alpha"] {
            out.insert(key.to_string(), "paper");
        }
        out
    }
}

fn flatten(value: &serde_json::Value, prefix: String, out: &mut BTreeMap<String, &'static str>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(v, key, out);
            }
        }
        _ => {
            out.insert(prefix, "unspecified-by-paper");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(text, Path::new("test.json"))
    }

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.optimizer.learning_rate, 0.01);
        assert_eq!(cfg.loss.alpha, 0.1);
        assert_eq!(cfg.variants().unwrap(), Variant::ALL);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse(r#"{"world": {"users": 10, "colour": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let err = parse(r#"{"sedes": [1]}"#).unwrap_err();
        assert!(err.to_string().contains("sedes"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(parse(r#"{"variants": ["ESM2"]}"#).is_err());
        assert!(parse(r#"{"funnel": {"episodes": 3, "test_start": 3}}"#).is_err());
        assert!(parse(r#"{"dataset": {"negative_rate": 0}}"#).is_err());
        assert!(parse(r#"{"evaluation": [{"space": "click", "label": "pay_g"}]}"#).is_err());
        assert!(parse(r#"{"loss": {"alpha": -1}}"#).is_err());
        assert!(parse(r#"{"seeds": []}"#).is_err());
    }

    #[test]
    fn hash_ignores_seeds_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            seeds: vec![4, 5],
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.world.users = 7;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn provenance_marks_every_setting() {
        let p = ExperimentConfig::default().provenance();
        assert_eq!(p["optimizer.learning_rate"], "paper");
        assert_eq!(p["loss.alpha"], "paper");
        assert_eq!(p["optimizer.epsilon"], "unspecified-by-paper");
        assert_eq!(p["world.users"], "unspecified-by-paper");
    }

    #[test]
    fn designated_and_overridden_scorers() {
        let cfg = parse(r#"{"evaluation": [{"space": "ps", "label": "pay_g"}, {"space": "ps", "label": "pay_g", "scorer": "head_g"}]}"#).unwrap();
        let specs = cfg.eval_specs(Variant::Eslm).unwrap();
        assert_eq!(specs[0].scorer, Scorer::EslmProduct);
        assert_eq!(specs[1].scorer, Scorer::HeadG);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        assert_eq!(parse(&cfg.to_json()).unwrap(), cfg);
    }
}
