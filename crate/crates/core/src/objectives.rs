//! Losses of every model variant, the Adagrad optimizer and the GMV blend.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::dataset::{Batch, Label, Space};
use crate::error::{Error, Result};
use crate::math::{clamp_prob, ln, sqrt, PROB_EPS};
use crate::model::{ForwardTrace, Gradients, Head, LossGrads, ModelParams};

pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// CTR and CVR trained separately on impressions (CVR on clicked ones).
    Baseline,
    /// CTR and CTCVR on impressions.
    Esmm,
    /// Own-scene purchase on impressions.
    Pv2PayG,
    /// Own-scene purchase on previous-stage candidates.
    Ps2PayG,
    /// All-scene purchase on candidates, then own-scene given any purchase.
    Eslm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Esmm,
        Variant::Pv2PayG,
        Variant::Ps2PayG,
        Variant::Eslm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::Esmm => "ESMM",
            Variant::Pv2PayG => "Pv2Pay_g",
            Variant::Ps2PayG => "PS2Pay_g",
            Variant::Eslm => "ESLM",
        }
    }

    pub fn parse(name: &str) -> Option<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(name))
    }

    /// Space the primary training set is drawn from.
    pub fn train_space(self) -> Space {
        match self {
            Variant::Baseline | Variant::Esmm | Variant::Pv2PayG => Space::Pv,
            Variant::Ps2PayG | Variant::Eslm => Space::Ps,
        }
    }

    /// Label whose positives survive negative sampling of the primary set.
    pub fn sampling_label(self) -> Label {
        match self {
            Variant::Baseline | Variant::Esmm => Label::Click,
            Variant::Pv2PayG | Variant::Ps2PayG => Label::PayG,
            Variant::Eslm => Label::PayA,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub variant: Variant,
    /// Weight of the second-head term in the ESLM total.
    pub lambda: f64,
}

impl LossSpec {
    pub fn new(variant: Variant, lambda: f64) -> Result<Self> {
        let spec = Self { variant, lambda };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Loss of one batch with its per-head parts and upstream gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub head_a: f64,
    pub head_g: f64,
    pub grads: LossGrads,
}

impl LossValue {
    fn zero() -> Self {
        Self {
            total: 0.0,
            head_a: 0.0,
            head_g: 0.0,
            grads: LossGrads::default(),
        }
    }

    fn single(head: Head, loss: f64, grads: Vec<f64>) -> Self {
        let mut out = Self::zero();
        out.total = loss;
        match head {
            Head::A => {
                out.head_a = loss;
                out.grads.head_a = grads;
            }
            Head::G => {
                out.head_g = loss;
                out.grads.head_g = grads;
            }
        }
        out
    }

    /// Multiplies the loss and its gradients by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.total *= factor;
        self.head_a *= factor;
        self.head_g *= factor;
        self.grads.head_a.iter_mut().for_each(|g| *g *= factor);
        self.grads.head_g.iter_mut().for_each(|g| *g *= factor);
        self
    }
}

/// Mean binary cross-entropy and `∂L/∂p` per sample, with `p` clamped to
/// `[PROB_EPS, 1 − PROB_EPS]`.
pub fn bce_loss(probs: &[f64], labels: &[bool]) -> Result<(f64, Vec<f64>)> {
    if probs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let n = probs.len() as f64;
    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let p = clamp_prob(p, PROB_EPS);
        let y = if y { 1.0 } else { 0.0 };
        sum -= y * ln(p) + (1.0 - y) * ln(1.0 - p);
        grads.push((p - y) / (p * (1.0 - p)) / n);
    }
    Ok((sum / n, grads))
}

fn check_batch(trace: &ForwardTrace, batch: &Batch<'_>, expected: Space) -> Result<()> {
    if batch.space != expected {
        return Err(Error::SpaceMismatch {
            expected,
            found: batch.space,
        });
    }
    if trace.len() != batch.len() {
        return Err(Error::TraceMismatch(format!(
            "trace of {} samples for a batch of {}",
            trace.len(),
            batch.len()
        )));
    }
    Ok(())
}

/// All-scene purchase on previous-stage candidates, head a.
pub fn loss_ps_to_pay_a(trace: &ForwardTrace, batch: &Batch<'_>) -> Result<LossValue> {
    check_batch(trace, batch, Space::Ps)?;
    let (loss, grads) = bce_loss(&trace.p_a(), &batch.labels(Label::PayA))?;
    Ok(LossValue::single(Head::A, loss, grads))
}

/// Own-scene purchase among purchased candidates, head g. An empty batch
/// contributes nothing.
pub fn loss_pay_a_to_pay_g(trace: &ForwardTrace, batch: &Batch<'_>) -> Result<LossValue> {
    check_batch(trace, batch, Space::Ps)?;
    if batch.is_empty() {
        return Ok(LossValue::zero());
    }
    if let Some(s) = batch.samples.iter().find(|s| !s.labels.pay_a) {
        return Err(Error::DatasetContract(format!(
            "sample (user {}, item {}, t {}) has pay_a = 0",
            s.user_id, s.item_id, s.timestamp
        )));
    }
    let (loss, grads) = bce_loss(&trace.p_g(), &batch.labels(Label::PayG))?;
    Ok(LossValue::single(Head::G, loss, grads))
}

/// CTR on head a plus CTCVR `p_a · p_g` against own-scene purchase.
pub fn esmm_loss(trace: &ForwardTrace, batch: &Batch<'_>) -> Result<LossValue> {
    check_batch(trace, batch, Space::Pv)?;
    let p_a = trace.p_a();
    let p_g = trace.p_g();
    let ctcvr: Vec<f64> = p_a.iter().zip(&p_g).map(|(a, g)| a * g).collect();
    let (ctr_loss, ctr_grads) = bce_loss(&p_a, &batch.labels(Label::Click))?;
    let (ctcvr_loss, ctcvr_grads) = bce_loss(&ctcvr, &batch.labels(Label::PayG))?;

    let mut head_a = ctr_grads;
    let mut head_g = Vec::with_capacity(p_a.len());
    for i in 0..p_a.len() {
        // The clamp is flat outside its range.
        let g = if (PROB_EPS..=1.0 - PROB_EPS).contains(&ctcvr[i]) {
            ctcvr_grads[i]
        } else {
            0.0
        };
        head_a[i] += g * p_g[i];
        head_g.push(g * p_a[i]);
    }
    Ok(LossValue {
        total: ctr_loss + ctcvr_loss,
        head_a: ctr_loss,
        head_g: ctcvr_loss,
        grads: LossGrads { head_a, head_g },
    })
}

/// BCE of one head against the named label over the batch's own space.
pub fn single_head_loss(
    trace: &ForwardTrace,
    batch: &Batch<'_>,
    head: Head,
    label: &str,
) -> Result<LossValue> {
    let label = Label::parse(label)
        .ok_or_else(|| Error::config("label", format!("unknown label `{label}`")))?;
    check_batch(trace, batch, batch.space)?;
    let (loss, grads) = bce_loss(&trace.probs(head), &batch.labels(label))?;
    Ok(LossValue::single(head, loss, grads))
}

/// Squared-gradient accumulators with the layout of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub accum: ModelParams,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub steps: u64,
}

impl AdagradState {
    pub fn new(params: &ModelParams, learning_rate: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate",
                "must be finite and positive",
            ));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::config("epsilon", "must be finite and nonnegative"));
        }
        Ok(Self {
            accum: ModelParams::zeros(params.shape)?,
            learning_rate,
            epsilon,
            steps: 0,
        })
    }
}

#[inline]
fn adagrad_update(theta: &mut [f64], accum: &mut [f64], grad: &[f64], lr: f64, eps: f64) {
    for ((t, a), &g) in theta.iter_mut().zip(accum.iter_mut()).zip(grad) {
        *a += g * g;
        *t -= lr * g / (sqrt(*a) + eps);
    }
}

/// `accum += g²; θ −= lr·g / (√accum + ε)`. Embedding rows that no batch
/// looked up keep both their value and their accumulator.
pub fn adagrad_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdagradState,
) -> Result<()> {
    params.check_congruent(&grads.values)?;
    params.check_congruent(&state.accum)?;
    let (lr, eps) = (state.learning_rate, state.epsilon);

    for row in grads.touched_rows() {
        let r = row as usize;
        adagrad_update(
            params.embedding.row_mut(r),
            state.accum.embedding.row_mut(r),
            grads.values.embedding.row(r),
            lr,
            eps,
        );
    }
    let dense = params.tensors_mut().into_iter().skip(1);
    let accum = state.accum.tensors_mut().into_iter().skip(1);
    let g = grads.values.tensors().into_iter().skip(1);
    for ((t, a), g) in dense.zip(accum).zip(g) {
        adagrad_update(&mut t.data, &mut a.data, &g.data, lr, eps);
    }
    state.steps += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmvScorerConfig {
    pub alpha: f64,
    pub traffic: f64,
}

impl Default for GmvScorerConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            traffic: 1.0,
        }
    }
}

impl GmvScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be finite and nonnegative"));
        }
        if !(self.traffic > 0.0 && self.traffic.is_finite()) {
            return Err(Error::config("traffic", "must be finite and positive"));
        }
        Ok(())
    }
}

/// Parts of a blended GMV score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmvBreakdown {
    pub pv_term: f64,
    pub ps_term: f64,
    pub price: f64,
    pub score: f64,
}

/// `traffic · (p_pv + α·p_ps) · price`.
pub fn gmv_score(
    p_pv_to_pay: f64,
    p_ps_to_pay: f64,
    config: &GmvScorerConfig,
    price: f64,
) -> Result<f64> {
    gmv_breakdown(p_pv_to_pay, p_ps_to_pay, config, price).map(|b| b.score)
}

pub fn gmv_breakdown(
    p_pv_to_pay: f64,
    p_ps_to_pay: f64,
    config: &GmvScorerConfig,
    price: f64,
) -> Result<GmvBreakdown> {
    config.validate()?;
    if !(price > 0.0 && price.is_finite()) {
        return Err(Error::invalid(
            "price",
            format!("must be positive, got {price}"),
        ));
    }
    for (name, p) in [("p_pv_to_pay", p_pv_to_pay), ("p_ps_to_pay", p_ps_to_pay)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(name, String::from("must lie in [0, 1]")));
        }
    }
    let pv_term = p_pv_to_pay;
    let ps_term = config.alpha * p_ps_to_pay;
    Ok(GmvBreakdown {
        pv_term,
        ps_term,
        price,
        score: config.traffic * (pv_term + ps_term) * price,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Labels, Sample, SampleFeatures, Split};
    use crate::model::{forward, ModelShape};
    use alloc::vec;

    const LN2: f64 = core::f64::consts::LN_2;

    fn shape() -> ModelShape {
        ModelShape {
            vocab: 20,
            dim: 4,
            heads: 2,
            head_dim: 2,
            hidden: [6, 4],
            seq_cap: 3,
        }
    }

    fn sample(i: u32, click: bool, pay_g: bool, pay_a: bool) -> Sample {
        Sample {
            user_id: i,
            item_id: i % 5,
            timestamp: 0,
            pv: true,
            features: SampleFeatures {
                user: [10 + i % 3, 13],
                item: [i % 5, 14],
                context: [15, 16],
            },
            sequence: vec![1, 2, (i % 4) + 1],
            labels: Labels {
                click,
                pay_g,
                pay_a,
            },
            split: Split::Train,
        }
    }

    fn samples() -> Vec<Sample> {
        vec![
            sample(0, true, true, true),
            sample(1, true, false, true),
            sample(2, false, false, false),
            sample(3, true, false, false),
        ]
    }

    fn trained_params() -> ModelParams {
        let mut p = ModelParams::init(shape(), 3).unwrap();
        p.randomize_output_layers(4);
        p
    }

    #[test]
    fn bce_anchors() {
        let (l, g) = bce_loss(&[0.5], &[true]).unwrap();
        assert!((l - LN2).abs() < 1e-15);
        assert!((g[0] + 2.0).abs() < 1e-12);
        let (l, _) = bce_loss(&[0.8, 0.8], &[true, false]).unwrap();
        assert!((l - 0.916_290_731_874_155).abs() < 1e-12);
        let (l, _) = bce_loss(&[1.0, 0.0], &[true, false]).unwrap();
        assert!(l <= -ln(1.0 - PROB_EPS) + 1e-15);
        assert_eq!(bce_loss(&[], &[]), Err(Error::EmptyBatch));
        assert!(matches!(
            bce_loss(&[0.5], &[true, false]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn bce_gradient_matches_difference_quotient() {
        let probs = [0.3, 0.9, 0.05];
        let labels = [true, false, true];
        let (_, g) = bce_loss(&probs, &labels).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut up = probs;
            let mut dn = probs;
            up[k] += h;
            dn[k] -= h;
            let num =
                (bce_loss(&up, &labels).unwrap().0 - bce_loss(&dn, &labels).unwrap().0) / (2.0 * h);
            assert!((num - g[k]).abs() < 1e-6 * g[k].abs().max(1.0));
        }
    }

    #[test]
    fn untrained_model_gives_ln2_everywhere() {
        let params = ModelParams::init(shape(), 1).unwrap();
        let data = samples();
        let trace = forward(&params, &data).unwrap();
        let ps = Batch::new(Space::Ps, &data);
        assert!((loss_ps_to_pay_a(&trace, &ps).unwrap().total - LN2).abs() < 1e-9);
        let dp: Vec<Sample> = data.iter().filter(|s| s.labels.pay_a).cloned().collect();
        let dp_trace = forward(&params, &dp).unwrap();
        let l = loss_pay_a_to_pay_g(&dp_trace, &Batch::new(Space::Ps, &dp)).unwrap();
        assert!((l.total - LN2).abs() < 1e-9);
        for label in ["click", "pay_g", "pay_a"] {
            let l = single_head_loss(&trace, &ps, Head::A, label).unwrap();
            assert!((l.total - LN2).abs() < 1e-9);
        }
        // CTCVR starts at 0.25.
        let pv = Batch::new(Space::Pv, &data);
        let l = esmm_loss(&trace, &pv).unwrap();
        let expected = bce_loss(&[0.5; 4], &pv.labels(Label::Click)).unwrap().0
            + bce_loss(&[0.25; 4], &pv.labels(Label::PayG)).unwrap().0;
        assert!((l.total - expected).abs() < 1e-12);
    }

    #[test]
    fn losses_match_direct_recomputation() {
        let params = trained_params();
        let data = samples();
        let trace = forward(&params, &data).unwrap();
        let direct = |probs: &[f64], labels: &[bool]| -> f64 {
            let n = probs.len() as f64;
            -probs
                .iter()
                .zip(labels)
                .map(|(&p, &y)| if y { ln(p) } else { ln(1.0 - p) })
                .sum::<f64>()
                / n
        };
        let ps = Batch::new(Space::Ps, &data);
        let l = loss_ps_to_pay_a(&trace, &ps).unwrap();
        assert!((l.total - direct(&trace.p_a(), &[true, true, false, false])).abs() < 1e-12);
        assert!(l.grads.head_g.is_empty());

        let pv = Batch::new(Space::Pv, &data);
        let l = esmm_loss(&trace, &pv).unwrap();
        let ctcvr: Vec<f64> = trace
            .p_a()
            .iter()
            .zip(trace.p_g())
            .map(|(a, g)| a * g)
            .collect();
        let want = direct(&trace.p_a(), &[true, true, false, true])
            + direct(&ctcvr, &[true, false, false, false]);
        assert!((l.total - want).abs() < 1e-12);
        assert!(ctcvr.iter().zip(trace.p_a()).all(|(c, a)| *c <= a));

        let l = single_head_loss(&trace, &ps, Head::A, "pay_a").unwrap();
        assert_eq!(l, loss_ps_to_pay_a(&trace, &ps).unwrap());
    }

    #[test]
    fn esmm_gradients_follow_the_product_rule() {
        let params = trained_params();
        let data = samples();
        let trace = forward(&params, &data).unwrap();
        let l = esmm_loss(&trace, &Batch::new(Space::Pv, &data)).unwrap();
        let labels_c = [true, true, false, true];
        let labels_g = [true, false, false, false];
        let loss_at = |pa: &[f64], pg: &[f64]| {
            let prod: Vec<f64> = pa.iter().zip(pg).map(|(a, g)| a * g).collect();
            bce_loss(pa, &labels_c).unwrap().0 + bce_loss(&prod, &labels_g).unwrap().0
        };
        let (pa, pg) = (trace.p_a(), trace.p_g());
        let h = 1e-7;
        for k in 0..4 {
            let (mut up, mut dn) = (pa.clone(), pa.clone());
            up[k] += h;
            dn[k] -= h;
            let num = (loss_at(&up, &pg) - loss_at(&dn, &pg)) / (2.0 * h);
            assert!((num - l.grads.head_a[k]).abs() < 1e-6);
            let (mut up, mut dn) = (pg.clone(), pg.clone());
            up[k] += h;
            dn[k] -= h;
            let num = (loss_at(&pa, &up) - loss_at(&pa, &dn)) / (2.0 * h);
            assert!((num - l.grads.head_g[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn esmm_with_certain_click_reduces_to_cvr() {
        let data = samples();
        let mut params = ModelParams::init(shape(), 1).unwrap();
        // Head a saturates to the upper clamp.
        params.towers[0].layers[2].bias.data[0] = 40.0;
        let trace = forward(&params, &data).unwrap();
        let l = esmm_loss(&trace, &Batch::new(Space::Pv, &data)).unwrap();
        let cvr = bce_loss(&trace.p_g(), &[true, false, false, false])
            .unwrap()
            .0;
        assert!((l.head_g - cvr).abs() < 1e-6);
    }

    #[test]
    fn space_and_contract_errors() {
        let params = ModelParams::init(shape(), 1).unwrap();
        let data = samples();
        let trace = forward(&params, &data).unwrap();
        let pv = Batch::new(Space::Pv, &data);
        assert_eq!(
            loss_ps_to_pay_a(&trace, &pv),
            Err(Error::SpaceMismatch {
                expected: Space::Ps,
                found: Space::Pv
            })
        );
        assert!(matches!(
            esmm_loss(&trace, &Batch::new(Space::Ps, &data)),
            Err(Error::SpaceMismatch { .. })
        ));
        assert!(matches!(
            loss_pay_a_to_pay_g(&trace, &Batch::new(Space::Ps, &data)),
            Err(Error::DatasetContract(_))
        ));
        assert!(matches!(
            single_head_loss(&trace, &pv, Head::A, "purchase"),
            Err(Error::Config { field: "label", .. })
        ));
        let empty = forward(&params, &[]).unwrap();
        let l = loss_pay_a_to_pay_g(&empty, &Batch::new(Space::Ps, &[])).unwrap();
        assert_eq!(l.total, 0.0);
        assert!(l.grads.head_a.is_empty() && l.grads.head_g.is_empty());
    }

    #[test]
    fn scaled_loss_scales_everything() {
        let params = trained_params();
        let data = samples();
        let trace = forward(&params, &data).unwrap();
        let l = loss_ps_to_pay_a(&trace, &Batch::new(Space::Ps, &data)).unwrap();
        let s = l.clone().scaled(0.5);
        assert_eq!(s.total, l.total * 0.5);
        assert_eq!(s.grads.head_a[2], l.grads.head_a[2] * 0.5);
        assert!(LossSpec::new(Variant::Eslm, -1.0).is_err());
        assert!(LossSpec::new(Variant::Eslm, 0.0).is_ok());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.as_str()), Some(v));
        }
        assert_eq!(Variant::parse("esm2"), None);
    }

    fn tiny_params() -> ModelParams {
        ModelParams::zeros(ModelShape {
            vocab: 4,
            dim: 2,
            heads: 1,
            head_dim: 1,
            hidden: [2, 2],
            seq_cap: 1,
        })
        .unwrap()
    }

    #[test]
    fn first_adagrad_step_moves_by_the_learning_rate() {
        let mut params = tiny_params();
        let mut state = AdagradState::new(&params, DEFAULT_LEARNING_RATE, DEFAULT_EPSILON).unwrap();
        let mut grads = Gradients::zeros_like(&params);
        grads.values.output.data[0] = 1.0;
        adagrad_step(&mut params, &grads, &mut state).unwrap();
        assert!((params.output.data[0] + 0.01).abs() < 1e-9);
        assert_eq!(state.accum.output.data[0], 1.0);
        assert_eq!(params.output.data[1], 0.0);
        assert_eq!(state.accum.output.data[1], 0.0);
    }

    #[test]
    fn adagrad_updates_only_touched_embedding_rows() {
        let mut params = tiny_params();
        let mut state = AdagradState::new(&params, 0.1, DEFAULT_EPSILON).unwrap();
        let mut grads = Gradients::zeros_like(&params);
        grads.embedding_row_mut(2).copy_from_slice(&[0.5, 0.0]);
        // A stray value in an untouched row is ignored.
        grads.values.embedding.row_mut(3)[0] = 7.0;
        adagrad_step(&mut params, &grads, &mut state).unwrap();
        assert!(params.embedding.row(2)[0] < 0.0);
        assert_eq!(params.embedding.row(2)[1], 0.0);
        assert_eq!(params.embedding.row(3), &[0.0, 0.0]);
        assert_eq!(state.accum.embedding.row(3), &[0.0, 0.0]);
    }

    #[test]
    fn adagrad_constant_gradient_closed_form() {
        let mut params = tiny_params();
        let mut state = AdagradState::new(&params, 0.01, 1e-8).unwrap();
        let mut grads = Gradients::zeros_like(&params);
        let g = 0.3;
        grads.values.output.data[0] = g;
        let mut prev = params.output.data[0];
        for t in 1..=200u32 {
            adagrad_step(&mut params, &grads, &mut state).unwrap();
            let step = prev - params.output.data[0];
            let want = 0.01 * g / (sqrt(f64::from(t) * g * g) + 1e-8);
            assert!((step - want).abs() < 1e-12, "t={t}");
            prev = params.output.data[0];
        }
    }

    #[test]
    fn adagrad_rejects_incongruent_shapes() {
        let mut params = tiny_params();
        let other = ModelParams::zeros(shape()).unwrap();
        let mut state = AdagradState::new(&params, 0.01, 1e-8).unwrap();
        let grads = Gradients::zeros_like(&other);
        assert!(adagrad_step(&mut params, &grads, &mut state).is_err());
        assert!(AdagradState::new(&params, 0.0, 1e-8).is_err());
    }

    #[test]
    fn gmv_anchors() {
        let cfg = GmvScorerConfig {
            alpha: 0.1,
            traffic: 100.0,
        };
        assert!((gmv_score(0.01, 0.02, &cfg, 50.0).unwrap() - 60.0).abs() < 1e-12);
        let zero = GmvScorerConfig { alpha: 0.0, ..cfg };
        assert!((gmv_score(0.01, 0.9, &zero, 50.0).unwrap() - 50.0).abs() < 1e-12);
        assert!(gmv_score(0.01, 0.02, &cfg, 0.0).is_err());
        assert!(gmv_score(
            0.01,
            0.02,
            &GmvScorerConfig {
                traffic: -1.0,
                ..cfg
            },
            1.0
        )
        .is_err());
        assert!(gmv_score(1.5, 0.02, &cfg, 1.0).is_err());
        let b = gmv_breakdown(0.01, 0.02, &cfg, 50.0).unwrap();
        assert!((b.ps_term - 0.002).abs() < 1e-15);
    }
}
