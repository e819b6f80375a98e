//! Blended GMV ranking of candidate items.
//!
//! The impression-space term comes from a model trained on impressions and the
//! previous-stage term from a model trained on the entire space; each model
//! contributes its designated `pay_g` score.

use std::path::Path;

use eslm_core::dataset::{FeatureLayout, Label, Labels, Sample, Split};
use eslm_core::eval::{predict, Scorer};
use eslm_core::funnel::World;
use eslm_core::objectives::{gmv_breakdown, GmvScorerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snapshot::Snapshot;

pub const CANDIDATE_HEADER: &str = "user_id,item_id,seq";
pub const RANKING_HEADER: &str = "user_id,rank,item_id,score,pv_term,ps_term,price";

/// One item to be ranked for one user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub user_id: u32,
    pub item_id: u32,
    /// Behaviour item ids separated by `|`, oldest first.
    pub seq: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub user_id: u32,
    /// 1-based position within the user's list.
    pub rank: usize,
    pub item_id: u32,
    pub score: f64,
    pub pv_term: f64,
    pub ps_term: f64,
    pub price: f64,
}

/// Models feeding the two probability terms.
#[derive(Debug, Clone, Copy)]
pub struct RankModels<'a> {
    pub pv: &'a Snapshot,
    pub ps: &'a Snapshot,
}

pub fn read_candidates(path: &Path) -> Result<Vec<Candidate>> {
    let mut r = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    let found = r
        .headers()
        .map_err(Error::csv(path))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if found != CANDIDATE_HEADER {
        return Err(Error::Format {
            path: path.to_path_buf(),
            record: 0,
            reason: format!("header `{found}`, expected `{CANDIDATE_HEADER}`"),
        });
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<Candidate>, _>>()
        .map_err(Error::csv(path))
}

fn vocabulary_error(what: String) -> Error {
    Error::InvalidConfig(format!("vocabulary mismatch: {what}"))
}

fn to_sample(world: &World, layout: &FeatureLayout, c: &Candidate) -> Result<Sample> {
    world
        .check_ids(c.user_id, c.item_id)
        .map_err(|e| vocabulary_error(format!("candidate ({}, {}): {e}", c.user_id, c.item_id)))?;
    let sequence = c
        .seq
        .split('|')
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<u32>() {
            Ok(id) if (id as usize) < layout.items => Ok(id),
            _ => Err(vocabulary_error(format!(
                "sequence entry `{t}` of user {} is not an item",
                c.user_id
            ))),
        })
        .collect::<Result<Vec<u32>>>()?;
    Ok(Sample {
        user_id: c.user_id,
        item_id: c.item_id,
        timestamp: 0,
        pv: false,
        features: layout.features(world, c.user_id, c.item_id, 0, sequence.len()),
        sequence,
        labels: Labels::default(),
        split: Split::Test,
    })
}

fn pay_scores(snap: &Snapshot, samples: &[Sample], negative_rate: f64) -> Result<Vec<f64>> {
    let preds = predict(&snap.params, samples)?.corrected(negative_rate)?;
    Ok(preds.scores(Scorer::designated(snap.variant, Label::PayG)))
}

/// Scores every candidate with the GMV blend and orders each user's list by
/// descending score, ties broken by ascending item id.
pub fn rank_catalog(
    models: RankModels<'_>,
    world: &World,
    candidates: &[Candidate],
    gmv: &GmvScorerConfig,
    negative_rate: f64,
) -> Result<Vec<RankedItem>> {
    gmv.validate()?;
    let layout = FeatureLayout::for_world(world);
    for (role, snap) in [("impression", models.pv), ("previous-stage", models.ps)] {
        if snap.params.shape.vocab != layout.vocab_size() {
            return Err(vocabulary_error(format!(
                "{role} model has {} embedding rows, the world needs {}",
                snap.params.shape.vocab,
                layout.vocab_size()
            )));
        }
    }
    let samples = candidates
        .iter()
        .map(|c| to_sample(world, &layout, c))
        .collect::<Result<Vec<_>>>()?;
    let p_pv = pay_scores(models.pv, &samples, negative_rate)?;
    let p_ps = pay_scores(models.ps, &samples, negative_rate)?;
    let mut scored = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let price = world.items[s.item_id as usize].price;
        let b = gmv_breakdown(p_pv[i], p_ps[i], gmv, price)?;
        scored.push(RankedItem {
            user_id: s.user_id,
            rank: 0,
            item_id: s.item_id,
            score: b.score,
            pv_term: b.pv_term,
            ps_term: b.ps_term,
            price: b.price,
        });
    }
    scored.sort_by(|a, b| {
        a.user_id
            .cmp(&b.user_id)
            .then(b.score.total_cmp(&a.score))
            .then(a.item_id.cmp(&b.item_id))
    });
    let mut prev = None;
    let mut rank = 0;
    for r in &mut scored {
        if prev != Some(r.user_id) {
            prev = Some(r.user_id);
            rank = 0;
        }
        rank += 1;
        r.rank = rank;
    }
    Ok(scored)
}

pub fn write_ranking(path: &Path, rows: &[RankedItem]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(Error::csv(path))?;
    for r in rows {
        w.serialize(r).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}
