//! AUC, oracle calibration and selection-bias diagnostics.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::dataset::{Dataset, Label, Sample, Space};
use crate::error::{Error, Result};
use crate::funnel::{ProbKind, World};
use crate::model::{eslm_score, forward, Head, ModelParams};
use crate::objectives::Variant;

/// Samples pushed through the network at once by [`predict`].
pub const PREDICT_CHUNK: usize = 512;

/// Mann–Whitney statistic in integer form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AucCounts {
    /// Twice the number of correctly ordered positive/negative pairs, ties
    /// counting one.
    pub twice_u: u128,
    pub positives: usize,
    pub negatives: usize,
}

impl AucCounts {
    pub fn auc(&self) -> f64 {
        self.twice_u as f64 / (2.0 * self.positives as f64 * self.negatives as f64)
    }
}

/// Sort-and-rank AUC counts in `O(n log n)`.
pub fn auc_counts(scores: &[f64], labels: &[bool]) -> Result<AucCounts> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::invalid("scores", format!("score {i} is NaN")));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc {
            positives,
            negatives,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_g, mut neg_g) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos_g += 1;
            } else {
                neg_g += 1;
            }
            j += 1;
        }
        twice_u += 2 * pos_g * neg_below + pos_g * neg_g;
        neg_below += neg_g;
        i = j;
    }
    Ok(AucCounts {
        twice_u,
        positives,
        negatives,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// credited one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    auc_counts(scores, labels).map(|c| c.auc())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scorer {
    HeadA,
    HeadG,
    /// `p_a · p_g` with head g conditioned on an all-scene purchase.
    EslmProduct,
    /// `pCTR · pCVR`.
    EsmmProduct,
}

impl Scorer {
    pub fn as_str(self) -> &'static str {
        match self {
            Scorer::HeadA => "head_a",
            Scorer::HeadG => "head_g",
            Scorer::EslmProduct => "eslm_product",
            Scorer::EsmmProduct => "esmm_product",
        }
    }

    pub fn parse(name: &str) -> Option<Scorer> {
        [
            Scorer::HeadA,
            Scorer::HeadG,
            Scorer::EslmProduct,
            Scorer::EsmmProduct,
        ]
        .into_iter()
        .find(|s| s.as_str() == name)
    }

    pub fn score(self, p_a: f64, p_g: f64) -> f64 {
        match self {
            Scorer::HeadA => p_a,
            Scorer::HeadG => p_g,
            Scorer::EslmProduct => eslm_score(p_a, p_g),
            Scorer::EsmmProduct => p_a * p_g,
        }
    }

    /// Scorer a variant uses for a target label.
    pub fn designated(variant: Variant, label: Label) -> Scorer {
        match (variant, label) {
            (Variant::Eslm, Label::PayA) => Scorer::HeadA,
            (Variant::Eslm, _) => Scorer::EslmProduct,
            (Variant::Esmm | Variant::Baseline, Label::Click) => Scorer::HeadA,
            (Variant::Esmm | Variant::Baseline, _) => Scorer::EsmmProduct,
            (Variant::Pv2PayG | Variant::Ps2PayG, _) => Scorer::HeadA,
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EvalSpec {
    pub space: Space,
    pub label: Label,
    pub scorer: Scorer,
}

impl EvalSpec {
    /// `AUC(PvToPay_g)`, `AUC(PSToPay_g)` and `AUC(PSToPay_a)` with the
    /// variant's designated scorers.
    pub fn standard(variant: Variant) -> [EvalSpec; 3] {
        [
            (Space::Pv, Label::PayG),
            (Space::Ps, Label::PayG),
            (Space::Ps, Label::PayA),
        ]
        .map(|(space, label)| EvalSpec {
            space,
            label,
            scorer: Scorer::designated(variant, label),
        })
    }

    /// `PvToPay_g`-style metric name.
    pub fn metric_name(&self) -> alloc::string::String {
        let space = match self.space {
            Space::Pv => "Pv",
            Space::Ps => "PS",
        };
        let label = match self.label {
            Label::Click => "Click",
            Label::PayG => "Pay_g",
            Label::PayA => "Pay_a",
        };
        format!("{space}To{label}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub variant: Variant,
    pub space: Space,
    pub label: Label,
    pub scorer: Scorer,
    pub auc: f64,
    pub positives: usize,
    pub total: usize,
    /// Mean prediction over mean oracle probability of the label.
    pub calibration: f64,
    pub seed: u64,
}

/// Head outputs of a model over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub p_a: Vec<f64>,
    pub p_g: Vec<f64>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.p_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_a.is_empty()
    }

    /// Undoes negative sampling at `rate` on head a: `p / (p + (1 − p)/rate)`.
    pub fn corrected(mut self, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::config(
                "negative_sampling_rate",
                "must lie in (0, 1]",
            ));
        }
        if rate < 1.0 {
            for p in &mut self.p_a {
                *p = *p / (*p + (1.0 - *p) / rate);
            }
        }
        Ok(self)
    }

    pub fn scores(&self, scorer: Scorer) -> Vec<f64> {
        self.p_a
            .iter()
            .zip(&self.p_g)
            .map(|(&a, &g)| scorer.score(a, g))
            .collect()
    }
}

/// Forward pass over `samples` in chunks of [`PREDICT_CHUNK`].
pub fn predict(params: &ModelParams, samples: &[Sample]) -> Result<Predictions> {
    let mut out = Predictions {
        p_a: Vec::with_capacity(samples.len()),
        p_g: Vec::with_capacity(samples.len()),
    };
    for chunk in samples.chunks(PREDICT_CHUNK) {
        let trace = forward(params, chunk)?;
        for s in &trace.samples {
            out.p_a.push(s.prob(Head::A));
            out.p_g.push(s.prob(Head::G));
        }
    }
    Ok(out)
}

/// Probability under the simulator that `sample` carries `label`, given
/// whether it was exposed.
pub fn oracle_label_prob(world: &World, sample: &Sample, label: Label) -> Result<f64> {
    world.check_ids(sample.user_id, sample.item_id)?;
    let (u, i) = (sample.user_id as usize, sample.item_id as usize);
    let exposed = if sample.pv { 1.0 } else { 0.0 };
    Ok(match label {
        Label::Click => exposed * world.prob(u, i, ProbKind::Click, 0),
        Label::PayG => exposed * world.post_view_pay_prob(u, i),
        Label::PayA => {
            let own = exposed * world.post_view_pay_prob(u, i);
            1.0 - (1.0 - own) * (1.0 - world.other_scene_pay_prob(u, i))
        }
    })
}

/// Mean predicted probability over mean ground-truth probability.
pub fn calibration_ratio(predicted: &[f64], ground_truth: &[f64]) -> Result<f64> {
    if predicted.len() != ground_truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} oracle values",
            predicted.len(),
            ground_truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let truth: f64 = ground_truth.iter().sum();
    if truth <= 0.0 {
        return Err(Error::ZeroGroundTruth);
    }
    Ok(predicted.iter().sum::<f64>() / truth)
}

/// Test datasets of both spaces.
#[derive(Debug, Clone, Copy)]
pub struct EvalData<'a> {
    pub pv: Option<&'a Dataset>,
    pub ps: Option<&'a Dataset>,
}

impl<'a> EvalData<'a> {
    fn get(&self, space: Space) -> Result<&'a Dataset> {
        let data = match space {
            Space::Pv => self.pv,
            Space::Ps => self.ps,
        };
        let data = data.ok_or(Error::EmptyDataset(space.as_str()))?;
        if data.space != space {
            return Err(Error::SpaceMismatch {
                expected: space,
                found: data.space,
            });
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset(space.as_str()));
        }
        Ok(data)
    }
}

/// Scores every spec with `params`, after undoing negative sampling at
/// `sampling_rate` on head a. Parameters are only read.
pub fn evaluate_spaces(
    params: &ModelParams,
    variant: Variant,
    specs: &[EvalSpec],
    data: EvalData<'_>,
    world: &World,
    sampling_rate: f64,
    seed: u64,
) -> Result<Vec<MetricsReport>> {
    let mut cached: [Option<Predictions>; 2] = [None, None];
    let mut reports = Vec::with_capacity(specs.len());
    for spec in specs {
        let dataset = data.get(spec.space)?;
        let slot = match spec.space {
            Space::Pv => 0,
            Space::Ps => 1,
        };
        if cached[slot].is_none() {
            cached[slot] = Some(predict(params, &dataset.samples)?.corrected(sampling_rate)?);
        }
        let preds = cached[slot].as_ref().expect("filled above");
        let scores = preds.scores(spec.scorer);
        let labels: Vec<bool> = dataset
            .samples
            .iter()
            .map(|s| s.label(spec.label))
            .collect();
        let counts = auc_counts(&scores, &labels)?;
        let truth = dataset
            .samples
            .iter()
            .map(|s| oracle_label_prob(world, s, spec.label))
            .collect::<Result<Vec<_>>>()?;
        reports.push(MetricsReport {
            variant,
            space: spec.space,
            label: spec.label,
            scorer: spec.scorer,
            auc: counts.auc(),
            positives: counts.positives,
            total: dataset.len(),
            calibration: calibration_ratio(&scores, &truth)?,
            seed,
        });
    }
    Ok(reports)
}

/// How far the training population sits from the inference population in
/// ground-truth purchase propensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsbReport {
    /// `|mean_train − mean_inference|`
    pub mean_gap: f64,
    /// Total-variation distance between the two populations' histograms over
    /// the inference population's deciles.
    pub decile_distance: f64,
}

impl SsbReport {
    pub fn divergence(&self) -> f64 {
        self.mean_gap + self.decile_distance
    }
}

/// Selection-bias diagnostic over oracle scores of both populations.
pub fn ssb_divergence(train: &[f64], inference: &[f64]) -> Result<SsbReport> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("train"));
    }
    if inference.is_empty() {
        return Err(Error::EmptyDataset("inference"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut sorted = inference.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let edges: Vec<f64> = (1..10).map(|k| sorted[(k * n / 10).min(n - 1)]).collect();
    let histogram = |v: &[f64]| {
        let mut h = [0.0f64; 10];
        for x in v {
            h[edges.partition_point(|e| e <= x)] += 1.0;
        }
        h.map(|c| c / v.len() as f64)
    };
    let (ht, hi) = (histogram(train), histogram(inference));
    let decile_distance = 0.5 * ht.iter().zip(&hi).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(SsbReport {
        mean_gap: (mean(train) - mean(inference)).abs(),
        decile_distance,
    })
}

/// Ground-truth post-view purchase propensity of each sample.
pub fn purchase_propensity(world: &World, samples: &[Sample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            world.check_ids(s.user_id, s.item_id)?;
            Ok(world.post_view_pay_prob(s.user_id as usize, s.item_id as usize))
        })
        .collect()
}
