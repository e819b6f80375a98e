//! Training loop shared by every variant.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    build_dp_dataset, negative_sample, Batch, Dataset, Label, Labels, Sample, SampleFeatures,
    Space, Split,
};
use crate::error::{Error, Result};
use crate::funnel::stream_rng;
use crate::model::{
    backward_into, forward, gradient_check, GradCheckReport, GradTolerance, Gradients, Head,
    ModelParams, ModelShape,
};
use crate::objectives::{
    adagrad_step, esmm_loss, loss_pay_a_to_pay_g, loss_ps_to_pay_a, single_head_loss, AdagradState,
    LossValue, Variant, DEFAULT_EPSILON, DEFAULT_LEARNING_RATE,
};

const DOMAIN_SAMPLING: u64 = 0x4e45_4753;
const DOMAIN_PRIMARY: u64 = 0x5052_494d;
const DOMAIN_AUX: u64 = 0x4155_5849;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    /// Weight of the second-head term of ESLM.
    pub lambda: f64,
    /// Keep rate of negatives in the primary training set.
    pub negative_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 256,
            learning_rate: DEFAULT_LEARNING_RATE,
            epsilon: DEFAULT_EPSILON,
            lambda: 1.0,
            negative_rate: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and nonnegative"));
        }
        if !(self.negative_rate > 0.0 && self.negative_rate <= 1.0) {
            return Err(Error::config("negative_rate", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Training sets of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantData {
    pub variant: Variant,
    /// Negatively sampled set fed to head a (and head g for ESMM).
    pub primary: Dataset,
    /// Second-head set: purchased candidates for ESLM, clicked impressions for
    /// the baseline CVR model.
    pub aux: Option<Dataset>,
}

/// Selects and samples the training sets `variant` learns from.
pub fn prepare_training_data(
    variant: Variant,
    pv_train: &Dataset,
    ps_train: &Dataset,
    negative_rate: f64,
    seed: u64,
) -> Result<VariantData> {
    for (d, space) in [(pv_train, Space::Pv), (ps_train, Space::Ps)] {
        if d.space != space {
            return Err(Error::SpaceMismatch {
                expected: space,
                found: d.space,
            });
        }
    }
    let source = match variant.train_space() {
        Space::Pv => pv_train,
        Space::Ps => ps_train,
    };
    let sampling_seed = stream_rng(seed, DOMAIN_SAMPLING, variant as u64).random();
    let primary = Dataset::new(
        source.space,
        negative_sample(
            &source.samples,
            negative_rate,
            variant.sampling_label(),
            sampling_seed,
        )?,
    );
    let aux = match variant {
        Variant::Eslm => Some(build_dp_dataset(ps_train)),
        Variant::Baseline => Some(Dataset::new(
            Space::Pv,
            pv_train
                .samples
                .iter()
                .filter(|s| s.labels.click)
                .cloned()
                .collect(),
        )),
        _ => None,
    };
    if primary.is_empty() {
        return Err(Error::EmptyDataset(source.space.as_str()));
    }
    Ok(VariantData {
        variant,
        primary,
        aux,
    })
}

/// Endless minibatches over a dataset, reshuffled at the start of each epoch.
#[derive(Debug, Clone)]
pub struct BatchCycler {
    space: Space,
    samples: Vec<Sample>,
    pos: usize,
    epoch: u64,
    rng: ChaCha8Rng,
}

impl BatchCycler {
    pub fn new(dataset: &Dataset, seed: u64, domain: u64) -> Self {
        Self {
            space: dataset.space,
            samples: dataset.samples.clone(),
            pos: 0,
            epoch: 0,
            rng: stream_rng(seed, domain, 0),
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Next run of at most `size` samples; the last batch of an epoch may be
    /// shorter. Empty only when the dataset is.
    pub fn next_batch(&mut self, size: usize) -> Batch<'_> {
        if self.pos == 0 || self.pos >= self.samples.len() {
            if self.pos > 0 {
                self.epoch += 1;
            }
            self.samples.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.samples.len());
        let start = self.pos;
        self.pos = end;
        Batch::new(self.space, &self.samples[start..end])
    }
}

/// Losses of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub head_a: f64,
    pub head_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub variant: Variant,
    pub loss: StepLoss,
}

fn primary_loss(
    variant: Variant,
    params: &ModelParams,
    batch: &Batch<'_>,
) -> Result<(LossValue, crate::model::ForwardTrace)> {
    let trace = forward(params, batch.samples)?;
    let loss = match variant {
        Variant::Eslm => loss_ps_to_pay_a(&trace, batch)?,
        Variant::Esmm => esmm_loss(&trace, batch)?,
        Variant::Baseline => single_head_loss(&trace, batch, Head::A, Label::Click.as_str())?,
        Variant::Pv2PayG | Variant::Ps2PayG => {
            single_head_loss(&trace, batch, Head::A, Label::PayG.as_str())?
        }
    };
    Ok((loss, trace))
}

fn aux_loss(
    variant: Variant,
    params: &ModelParams,
    batch: &Batch<'_>,
    lambda: f64,
) -> Result<Option<(LossValue, crate::model::ForwardTrace)>> {
    if batch.is_empty() || lambda == 0.0 {
        return Ok(None);
    }
    let trace = forward(params, batch.samples)?;
    let loss = match variant {
        Variant::Eslm => loss_pay_a_to_pay_g(&trace, batch)?,
        Variant::Baseline => single_head_loss(&trace, batch, Head::G, Label::PayG.as_str())?,
        _ => return Ok(None),
    };
    Ok(Some((loss.scaled(lambda), trace)))
}

/// Loss of one step: the primary batch plus, for two-set variants, the
/// second-head batch weighted by `lambda`. Gradients are accumulated into
/// `grads` when given.
pub fn step_objective(
    params: &ModelParams,
    variant: Variant,
    primary: &Batch<'_>,
    aux: Option<&Batch<'_>>,
    lambda: f64,
    mut grads: Option<&mut Gradients>,
) -> Result<StepLoss> {
    let (p, trace) = primary_loss(variant, params, primary)?;
    if let Some(g) = grads.as_deref_mut() {
        backward_into(params, &trace, &p.grads, g)?;
    }
    let mut out = StepLoss {
        total: p.total,
        head_a: p.head_a,
        head_g: p.head_g,
    };
    if let Some(batch) = aux {
        if let Some((a, trace)) = aux_loss(variant, params, batch, lambda)? {
            if let Some(g) = grads {
                backward_into(params, &trace, &a.grads, g)?;
            }
            out.total += a.total;
            out.head_a += a.head_a;
            out.head_g += a.head_g;
        }
    }
    Ok(out)
}

/// Second-set batch that keeps both sets on the same epoch clock:
/// `round(batch · aux / primary)`, at least 1 and at most `batch`.
pub fn aux_batch_size(batch: usize, primary: usize, aux: usize) -> usize {
    if primary == 0 {
        return batch;
    }
    let scaled = (batch as u128 * aux as u128 + primary as u128 / 2) / primary as u128;
    (scaled as usize).clamp(1, batch)
}

/// Runs `config.steps` Adagrad steps of `data.variant` on `params`.
pub fn train_variant(
    params: &mut ModelParams,
    data: &VariantData,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<StepLog>> {
    config.validate()?;
    let variant = data.variant;
    let mut state = AdagradState::new(params, config.learning_rate, config.epsilon)?;
    let mut grads = Gradients::zeros_like(params);
    let mut primary = BatchCycler::new(&data.primary, seed, DOMAIN_PRIMARY);
    let mut aux = data
        .aux
        .as_ref()
        .map(|d| BatchCycler::new(d, seed, DOMAIN_AUX));
    let aux_batch = data.aux.as_ref().map_or(0, |d| {
        aux_batch_size(config.batch_size, data.primary.len(), d.len())
    });
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        grads.clear();
        let p = primary.next_batch(config.batch_size);
        let a = aux.as_mut().map(|c| c.next_batch(aux_batch));
        let loss = step_objective(
            params,
            variant,
            &p,
            a.as_ref(),
            config.lambda,
            Some(&mut grads),
        )?;
        adagrad_step(params, &grads, &mut state)?;
        log.push(StepLog {
            step,
            variant,
            loss,
        });
    }
    if !params.is_finite() {
        return Err(Error::NumericOverflow { layer: 0 });
    }
    Ok(log)
}

/// Model used to verify the backward pass: `d = 8`, two heads of width 4,
/// towers 32 → 16 → 1, sequences of 5.
pub fn check_shape(vocab: usize) -> ModelShape {
    ModelShape {
        vocab,
        dim: 8,
        heads: 2,
        head_dim: 4,
        hidden: [32, 16],
        seq_cap: 5,
    }
}

fn synthetic_sample<R: Rng>(rng: &mut R, vocab: u32, pay_a: bool, seq_len: usize) -> Sample {
    let mut row = || rng.random_range(0..vocab);
    let features = SampleFeatures {
        user: [row(), row()],
        item: [row(), row()],
        context: [row(), row()],
    };
    let sequence = (0..seq_len).map(|_| rng.random_range(0..vocab)).collect();
    let pay_g = pay_a && rng.random_bool(0.5);
    Sample {
        user_id: 0,
        item_id: features.item[0],
        timestamp: 0,
        pv: pay_g,
        features,
        sequence,
        labels: Labels {
            click: pay_g,
            pay_g,
            pay_a,
        },
        split: Split::Train,
    }
}

/// Central-difference check of the full ESLM loss (one D batch of 4 plus one
/// purchased-subset batch of 4) on [`check_shape`] with random weights.
pub fn check_eslm_gradients(
    seed: u64,
    h: f64,
    tolerance: GradTolerance,
) -> Result<GradCheckReport> {
    let vocab = 40;
    let mut params = ModelParams::init(check_shape(vocab), seed)?;
    params.randomize_output_layers(seed ^ 0x5eed);
    let mut rng = stream_rng(seed, DOMAIN_SAMPLING, u64::MAX);
    let lens = [5, 3, 7, 1];
    let d: Vec<Sample> = lens
        .iter()
        .enumerate()
        .map(|(i, &len)| synthetic_sample(&mut rng, vocab as u32, i % 2 == 0, len))
        .collect();
    let dp: Vec<Sample> = lens
        .iter()
        .map(|&len| synthetic_sample(&mut rng, vocab as u32, true, len))
        .collect();
    let (d, dp) = (Batch::new(Space::Ps, &d), Batch::new(Space::Ps, &dp));

    let mut grads = Gradients::zeros_like(&params);
    step_objective(&params, Variant::Eslm, &d, Some(&dp), 1.0, Some(&mut grads))?;
    let loss = |p: &ModelParams| {
        step_objective(p, Variant::Eslm, &d, Some(&dp), 1.0, None).map(|l| l.total)
    };
    gradient_check(&params, &grads, loss, h, tolerance)
}

/// Both heads of an untrained model on a batch; convenient for sanity checks.
pub fn untrained_losses(params: &ModelParams, samples: &[Sample]) -> Result<Vec<f64>> {
    let trace = forward(params, samples)?;
    let ps = Batch::new(Space::Ps, samples);
    let pv = Batch::new(Space::Pv, samples);
    let mut out = vec![loss_ps_to_pay_a(&trace, &ps)?.total];
    for label in [Label::Click, Label::PayG, Label::PayA] {
        for head in [Head::A, Head::G] {
            out.push(single_head_loss(&trace, &pv, head, label.as_str())?.total);
        }
    }
    let dp: Vec<Sample> = samples.iter().filter(|s| s.labels.pay_a).cloned().collect();
    if !dp.is_empty() {
        let t = forward(params, &dp)?;
        out.push(loss_pay_a_to_pay_g(&t, &Batch::new(Space::Ps, &dp))?.total);
    }
    Ok(out)
}
