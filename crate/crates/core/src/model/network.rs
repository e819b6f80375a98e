use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{Gradients, Head, ModelParams, ModelShape, Tower};
use crate::dataset::{Sample, FEATURE_SLOTS};
use crate::error::{Error, Result};
use crate::math::{
    add_mat_vec, add_outer, add_vec_mat, clamp_prob, dot, exp, sigmoid, sqrt, PROB_EPS,
};

/// Embedding lookups of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub slot_rows: [u32; FEATURE_SLOTS],
    /// `FEATURE_SLOTS × d`
    pub slots: Vec<f64>,
    pub target_row: u32,
    /// `d`
    pub target: Vec<f64>,
    /// Valid where `mask` is set; `seq_cap` entries.
    pub seq_rows: Vec<u32>,
    /// `seq_cap × d`, zero rows where masked.
    pub sequence: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Looks up every feature of `sample`. Only the `seq_cap` most recent
/// behaviour items are kept; later positions are masked.
pub fn embed(params: &ModelParams, sample: &Sample) -> Result<Embedded> {
    let shape = &params.shape;
    let d = shape.dim;
    let check = |row: u32| {
        if (row as usize) < shape.vocab {
            Ok(())
        } else {
            Err(Error::OutOfVocabulary {
                id: row,
                vocab: shape.vocab,
            })
        }
    };

    let slot_rows = sample.features.slots();
    let mut slots = Vec::with_capacity(FEATURE_SLOTS * d);
    for &r in &slot_rows {
        check(r)?;
        slots.extend_from_slice(params.embedding.row(r as usize));
    }
    let target_row = sample.features.target_row();
    check(target_row)?;
    let target = params.embedding.row(target_row as usize).to_vec();

    let cap = shape.seq_cap;
    let recent = &sample.sequence[sample.sequence.len().saturating_sub(cap)..];
    let mut seq_rows = vec![0u32; cap];
    let mut sequence = vec![0.0; cap * d];
    let mut mask = vec![false; cap];
    for (j, &r) in recent.iter().enumerate() {
        check(r)?;
        seq_rows[j] = r;
        mask[j] = true;
        sequence[j * d..(j + 1) * d].copy_from_slice(params.embedding.row(r as usize));
    }
    Ok(Embedded {
        slot_rows,
        slots,
        target_row,
        target,
        seq_rows,
        sequence,
        mask,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    /// `d_k`
    pub query: Vec<f64>,
    /// `seq_cap × d_k`, zero rows where masked.
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
    /// Softmax weights; exactly zero at masked positions.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub heads: Vec<AttentionHead>,
    /// Head outputs side by side, `h · d_k`.
    pub concat: Vec<f64>,
    /// `concat · W^S`, `d`.
    pub summary: Vec<f64>,
}

/// In-place softmax over the positions where `mask` is set; masked positions
/// become exactly zero. All-masked input is left all zero.
pub fn masked_softmax(logits: &mut [f64], mask: &[bool]) {
    debug_assert_eq!(logits.len(), mask.len());
    let max_logit = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold(f64::NEG_INFINITY, |acc, (&z, _)| acc.max(z));
    let mut total = 0.0;
    for (z, &m) in logits.iter_mut().zip(mask) {
        *z = if m { exp(*z - max_logit) } else { 0.0 };
        total += *z;
    }
    if total > 0.0 {
        logits.iter_mut().for_each(|z| *z /= total);
    }
}

/// Multi-head target attention: the target embedding is the query and the
/// behaviour sequence provides keys and values.
///
/// Per head `i`: `softmax(q Kᵀ / √d_k)` over valid positions weights the rows
/// of `V`; head outputs are concatenated and projected by `W^S`. An empty
/// sequence yields the zero vector.
pub fn target_attention(
    params: &ModelParams,
    target: &[f64],
    sequence: &[f64],
    mask: &[bool],
) -> Result<AttentionOutput> {
    let shape = &params.shape;
    let d = shape.dim;
    let dk = shape.head_dim;
    if target.len() != d {
        return Err(Error::Shape(format!(
            "target has {} values, d = {d}",
            target.len()
        )));
    }
    if sequence.len() != mask.len() * d {
        return Err(Error::Shape(format!(
            "sequence has {} values for {} positions of width {d}",
            sequence.len(),
            mask.len()
        )));
    }
    let n = mask.len();
    let scale = 1.0 / sqrt(dk as f64);
    let any_valid = mask.iter().any(|&m| m);

    let mut heads = Vec::with_capacity(shape.heads);
    let mut concat = vec![0.0; shape.heads * dk];
    for h in 0..shape.heads {
        let mut query = vec![0.0; dk];
        add_vec_mat(target, &params.query[h].data, &mut query);
        let mut keys = vec![0.0; n * dk];
        let mut values = vec![0.0; n * dk];
        let mut weights = vec![0.0; n];
        if any_valid {
            for j in (0..n).filter(|&j| mask[j]) {
                let s = &sequence[j * d..(j + 1) * d];
                add_vec_mat(s, &params.key[h].data, &mut keys[j * dk..(j + 1) * dk]);
                add_vec_mat(s, &params.value[h].data, &mut values[j * dk..(j + 1) * dk]);
                weights[j] = dot(&query, &keys[j * dk..(j + 1) * dk]) * scale;
            }
            masked_softmax(&mut weights, mask);
            let out = &mut concat[h * dk..(h + 1) * dk];
            for j in (0..n).filter(|&j| mask[j]) {
                for (o, v) in out.iter_mut().zip(&values[j * dk..(j + 1) * dk]) {
                    *o += weights[j] * v;
                }
            }
        }
        heads.push(AttentionHead {
            query,
            keys,
            values,
            weights,
        });
    }
    let mut summary = vec![0.0; d];
    add_vec_mat(&concat, &params.output.data, &mut summary);
    Ok(AttentionOutput {
        heads,
        concat,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerTrace {
    /// Pre-activations of the two hidden layers.
    pub pre: [Vec<f64>; 2],
    /// Rectified hidden activations.
    pub act: [Vec<f64>; 2],
    pub logit: f64,
    /// `sigmoid(logit)` clamped to `[1e-7, 1 − 1e-7]`.
    pub prob: f64,
}

fn tower_forward(tower: &Tower, input: &[f64]) -> Result<TowerTrace> {
    let mut pre: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut act: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut x = input;
    for l in 0..2 {
        let layer = &tower.layers[l];
        let mut z = layer.bias.data.clone();
        add_vec_mat(x, &layer.weight.data, &mut z);
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow { layer: l });
        }
        act[l] = z.iter().map(|&v| v.max(0.0)).collect();
        pre[l] = z;
        x = &act[l];
    }
    let last = &tower.layers[2];
    let logit = last.bias.data[0] + dot(x, &last.weight.data);
    if !logit.is_finite() {
        return Err(Error::NumericOverflow { layer: 2 });
    }
    Ok(TowerTrace {
        pre,
        act,
        logit,
        prob: clamp_prob(sigmoid(logit), PROB_EPS),
    })
}

/// Runs one tower on the concatenated representation.
pub fn head_forward(params: &ModelParams, head: Head, input: &[f64]) -> Result<TowerTrace> {
    let width = params.shape.input_width();
    if input.len() != width {
        return Err(Error::Shape(format!(
            "tower input has {} values, expected {width}",
            input.len()
        )));
    }
    tower_forward(&params.towers[head.index()], input)
}

/// Estimate of `p(pay_g | PS)` as the product of the two heads.
#[inline]
pub fn eslm_score(p_a: f64, p_g_given_a: f64) -> f64 {
    p_a * p_g_given_a
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub embedded: Embedded,
    pub attention: AttentionOutput,
    /// Slot embeddings followed by the attention summary.
    pub input: Vec<f64>,
    /// Indexed by [`Head::index`].
    pub towers: [TowerTrace; 2],
}

impl SampleTrace {
    pub fn prob(&self, head: Head) -> f64 {
        self.towers[head.index()].prob
    }
}

/// Activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub shape: ModelShape,
    pub samples: Vec<SampleTrace>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn probs(&self, head: Head) -> Vec<f64> {
        self.samples.iter().map(|s| s.prob(head)).collect()
    }

    pub fn p_a(&self) -> Vec<f64> {
        self.probs(Head::A)
    }

    pub fn p_g(&self) -> Vec<f64> {
        self.probs(Head::G)
    }
}

fn forward_one(params: &ModelParams, sample: &Sample) -> Result<SampleTrace> {
    let embedded = embed(params, sample)?;
    let attention = target_attention(params, &embedded.target, &embedded.sequence, &embedded.mask)?;
    let mut input = Vec::with_capacity(params.shape.input_width());
    input.extend_from_slice(&embedded.slots);
    input.extend_from_slice(&attention.summary);
    let towers = [
        head_forward(params, Head::A, &input)?,
        head_forward(params, Head::G, &input)?,
    ];
    Ok(SampleTrace {
        embedded,
        attention,
        input,
        towers,
    })
}

/// embed → target attention → concatenation → both towers, per sample.
pub fn forward(params: &ModelParams, samples: &[Sample]) -> Result<ForwardTrace> {
    let samples = samples
        .iter()
        .map(|s| forward_one(params, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardTrace {
        shape: params.shape,
        samples,
    })
}

/// Upstream gradients `∂L/∂p` per sample for each head. An empty vector means
/// the head does not enter the loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossGrads {
    pub head_a: Vec<f64>,
    pub head_g: Vec<f64>,
}

impl LossGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            head_a: vec![0.0; n],
            head_g: vec![0.0; n],
        }
    }

    fn head(&self, head: Head) -> &[f64] {
        match head {
            Head::A => &self.head_a,
            Head::G => &self.head_g,
        }
    }
}

/// Exact gradients of the loss described by `loss_grads` with respect to every
/// parameter.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    loss_grads: &LossGrads,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(params);
    backward_into(params, trace, loss_grads, &mut grads)?;
    Ok(grads)
}

/// Accumulates into `grads` instead of allocating.
pub fn backward_into(
    params: &ModelParams,
    trace: &ForwardTrace,
    loss_grads: &LossGrads,
    grads: &mut Gradients,
) -> Result<()> {
    if trace.shape != params.shape {
        return Err(Error::TraceMismatch(format!(
            "trace built for {:?}, parameters have {:?}",
            trace.shape, params.shape
        )));
    }
    if grads.values.shape != params.shape {
        return Err(Error::Shape(format!(
            "gradient buffer has shape {:?}, parameters {:?}",
            grads.values.shape, params.shape
        )));
    }
    for head in [Head::A, Head::G] {
        let g = loss_grads.head(head);
        if !g.is_empty() && g.len() != trace.len() {
            return Err(Error::TraceMismatch(format!(
                "{} upstream gradients for {} traced samples",
                g.len(),
                trace.len()
            )));
        }
    }

    let shape = params.shape;
    let width = shape.input_width();
    for (i, st) in trace.samples.iter().enumerate() {
        if st.input.len() != width {
            return Err(Error::TraceMismatch(format!(
                "sample {i} input width {}",
                st.input.len()
            )));
        }
        let mut d_input = vec![0.0; width];
        let mut any = false;
        for head in [Head::A, Head::G] {
            let g = loss_grads.head(head);
            if g.is_empty() || g[i] == 0.0 {
                continue;
            }
            let tt = &st.towers[head.index()];
            let raw = sigmoid(tt.logit);
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&raw) {
                // The clamp is flat outside its range.
                continue;
            }
            let d_logit = g[i] * raw * (1.0 - raw);
            tower_backward(
                &params.towers[head.index()],
                &mut grads.values.towers[head.index()],
                tt,
                &st.input,
                d_logit,
                &mut d_input,
            );
            any = true;
        }
        if !any {
            continue;
        }
        attention_backward(params, grads, st, &d_input);
    }
    Ok(())
}

fn tower_backward(
    tower: &Tower,
    out: &mut Tower,
    tt: &TowerTrace,
    input: &[f64],
    d_logit: f64,
    d_input: &mut [f64],
) {
    let [l0, l1, l2] = &tower.layers;
    let [g0, g1, g2] = &mut out.layers;

    add_outer(&tt.act[1], &[d_logit], &mut g2.weight.data);
    g2.bias.data[0] += d_logit;
    let mut d_pre1: Vec<f64> = l2.weight.data.iter().map(|w| w * d_logit).collect();
    for (g, z) in d_pre1.iter_mut().zip(&tt.pre[1]) {
        if *z <= 0.0 {
            *g = 0.0;
        }
    }

    add_outer(&tt.act[0], &d_pre1, &mut g1.weight.data);
    for (b, g) in g1.bias.data.iter_mut().zip(&d_pre1) {
        *b += g;
    }
    let mut d_pre0 = vec![0.0; l1.inputs()];
    add_mat_vec(&l1.weight.data, &d_pre1, &mut d_pre0);
    for (g, z) in d_pre0.iter_mut().zip(&tt.pre[0]) {
        if *z <= 0.0 {
            *g = 0.0;
        }
    }

    add_outer(input, &d_pre0, &mut g0.weight.data);
    for (b, g) in g0.bias.data.iter_mut().zip(&d_pre0) {
        *b += g;
    }
    add_mat_vec(&l0.weight.data, &d_pre0, d_input);
}

fn attention_backward(
    params: &ModelParams,
    grads: &mut Gradients,
    st: &SampleTrace,
    d_input: &[f64],
) {
    let shape = params.shape;
    let d = shape.dim;
    let dk = shape.head_dim;
    let emb = &st.embedded;

    for (k, &row) in emb.slot_rows.iter().enumerate() {
        let g = &d_input[k * d..(k + 1) * d];
        for (acc, v) in grads.embedding_row_mut(row).iter_mut().zip(g) {
            *acc += v;
        }
    }

    if !emb.mask.iter().any(|&m| m) {
        return;
    }
    let d_summary = &d_input[FEATURE_SLOTS * d..];
    let att = &st.attention;
    add_outer(&att.concat, d_summary, &mut grads.values.output.data);
    let mut d_concat = vec![0.0; shape.heads * dk];
    add_mat_vec(&params.output.data, d_summary, &mut d_concat);

    let n = emb.mask.len();
    let scale = 1.0 / sqrt(dk as f64);
    let mut d_target = vec![0.0; d];
    let mut d_seq = vec![0.0; n * d];
    let mut d_weight = vec![0.0; n];
    let mut d_key = vec![0.0; dk];
    let mut d_value = vec![0.0; dk];
    for (h, ah) in att.heads.iter().enumerate() {
        let d_out = &d_concat[h * dk..(h + 1) * dk];
        let mut weighted = 0.0;
        for j in (0..n).filter(|&j| emb.mask[j]) {
            d_weight[j] = dot(d_out, &ah.values[j * dk..(j + 1) * dk]);
            weighted += ah.weights[j] * d_weight[j];
        }
        let mut d_query = vec![0.0; dk];
        for j in (0..n).filter(|&j| emb.mask[j]) {
            let a = ah.weights[j];
            let d_logit = a * (d_weight[j] - weighted) * scale;
            let key = &ah.keys[j * dk..(j + 1) * dk];
            for ((dq, kv), (dkey, qv)) in d_query
                .iter_mut()
                .zip(key)
                .zip(d_key.iter_mut().zip(&ah.query))
            {
                *dq += d_logit * kv;
                *dkey = d_logit * qv;
            }
            for (dv, o) in d_value.iter_mut().zip(d_out) {
                *dv = a * o;
            }
            let s = &emb.sequence[j * d..(j + 1) * d];
            add_outer(s, &d_key, &mut grads.values.key[h].data);
            add_outer(s, &d_value, &mut grads.values.value[h].data);
            let ds = &mut d_seq[j * d..(j + 1) * d];
            add_mat_vec(&params.key[h].data, &d_key, ds);
            add_mat_vec(&params.value[h].data, &d_value, ds);
        }
        add_outer(&emb.target, &d_query, &mut grads.values.query[h].data);
        add_mat_vec(&params.query[h].data, &d_query, &mut d_target);
    }

    for (acc, v) in grads
        .embedding_row_mut(emb.target_row)
        .iter_mut()
        .zip(&d_target)
    {
        *acc += v;
    }
    for j in (0..n).filter(|&j| emb.mask[j]) {
        let g = &d_seq[j * d..(j + 1) * d];
        for (acc, v) in grads.embedding_row_mut(emb.seq_rows[j]).iter_mut().zip(g) {
            *acc += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Labels, SampleFeatures, Split};
    use crate::model::Tensor;

    fn shape() -> ModelShape {
        ModelShape {
            vocab: 30,
            dim: 4,
            heads: 2,
            head_dim: 3,
            hidden: [6, 5],
            seq_cap: 5,
        }
    }

    fn sample(item: u32, seq: &[u32]) -> Sample {
        Sample {
            user_id: 0,
            item_id: item,
            timestamp: 0,
            pv: true,
            features: SampleFeatures {
                user: [20, 21],
                item: [item, 22],
                context: [23, 24],
            },
            sequence: seq.to_vec(),
            labels: Labels::default(),
            split: Split::Train,
        }
    }

    #[test]
    fn embedding_lookup_is_pure_and_masks_empty_sequences() {
        let mut p = ModelParams::init(shape(), 1).unwrap();
        p.embedding.row_mut(3).fill(0.0);
        let e = embed(&p, &sample(3, &[])).unwrap();
        assert!(e.target.iter().all(|&x| x == 0.0));
        assert!(e.mask.iter().all(|&m| !m));
        assert!(e.sequence.iter().all(|&x| x == 0.0));
        assert_eq!(
            embed(&p, &sample(5, &[1, 2])).unwrap(),
            embed(&p, &sample(5, &[1, 2])).unwrap()
        );
    }

    #[test]
    fn out_of_vocabulary_ids_are_rejected() {
        let p = ModelParams::init(shape(), 1).unwrap();
        assert!(matches!(
            embed(&p, &sample(3, &[1, 30])),
            Err(Error::OutOfVocabulary { id: 30, vocab: 30 })
        ));
    }

    #[test]
    fn long_sequences_keep_most_recent_items() {
        let p = ModelParams::init(shape(), 1).unwrap();
        let e = embed(&p, &sample(3, &[1, 2, 3, 4, 5, 6, 7])).unwrap();
        assert_eq!(e.seq_rows, [3, 4, 5, 6, 7]);
        assert!(e.mask.iter().all(|&m| m));
    }

    #[test]
    fn single_key_attention_returns_projected_value() {
        let p = ModelParams::init(shape(), 2).unwrap();
        let e = embed(&p, &sample(3, &[9])).unwrap();
        let out = target_attention(&p, &e.target, &e.sequence, &e.mask).unwrap();
        let mut expect_concat = Vec::new();
        for h in 0..2 {
            assert_eq!(out.heads[h].weights[0], 1.0);
            let mut v = vec![0.0; 3];
            add_vec_mat(p.embedding.row(9), &p.value[h].data, &mut v);
            expect_concat.extend(v);
        }
        let mut expect = vec![0.0; 4];
        add_vec_mat(&expect_concat, &p.output.data, &mut expect);
        for (a, b) in out.summary.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_two_key_softmax() {
        // h = 1, d_k = 1, q = 1: logits (0, ln 3) over values (4, 0) give
        // weights (0.25, 0.75) and head output 1.0. Embedding coordinates are
        // [key coordinate, value coordinate].
        let s = ModelShape {
            vocab: 3,
            dim: 2,
            heads: 1,
            head_dim: 1,
            hidden: [1, 1],
            seq_cap: 2,
        };
        let mut p = ModelParams::zeros(s).unwrap();
        p.query[0] = Tensor::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        p.key[0] = Tensor::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        p.value[0] = Tensor::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let ln3 = crate::math::ln(3.0);
        let out = target_attention(&p, &[1.0, 0.0], &[0.0, 4.0, ln3, 0.0], &[true, true]).unwrap();
        let w = &out.heads[0].weights;
        assert!(
            (w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15,
            "{w:?}"
        );
        assert!((out.concat[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn all_masked_sequence_gives_zero_summary() {
        let p = ModelParams::init(shape(), 4).unwrap();
        let e = embed(&p, &sample(3, &[])).unwrap();
        let out = target_attention(&p, &e.target, &e.sequence, &e.mask).unwrap();
        assert!(out.summary.iter().all(|&x| x == 0.0));
        assert!(out
            .heads
            .iter()
            .all(|h| h.weights.iter().all(|&w| w == 0.0)));
    }

    #[test]
    fn attention_shape_errors() {
        let p = ModelParams::init(shape(), 4).unwrap();
        assert!(matches!(
            target_attention(&p, &[0.0; 3], &[0.0; 8], &[true, true]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            target_attention(&p, &[0.0; 4], &[0.0; 7], &[true, true]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn tower_anchors() {
        let mut p = ModelParams::zeros(shape()).unwrap();
        let x = vec![0.3; shape().input_width()];
        assert_eq!(head_forward(&p, Head::A, &x).unwrap().prob, 0.5);
        p.towers[1].layers[2].bias.data[0] = crate::math::ln(3.0);
        let t = head_forward(&p, Head::G, &x).unwrap();
        assert!((t.prob - 0.75).abs() < 1e-15);
        p.towers[0].layers[2].bias.data[0] = 400.0;
        assert_eq!(head_forward(&p, Head::A, &x).unwrap().prob, 1.0 - PROB_EPS);
        p.towers[0].layers[2].bias.data[0] = -400.0;
        assert_eq!(head_forward(&p, Head::A, &x).unwrap().prob, PROB_EPS);
        p.towers[0].layers[0].bias.data[0] = f64::INFINITY;
        assert!(matches!(
            head_forward(&p, Head::A, &x),
            Err(Error::NumericOverflow { layer: 0 })
        ));
        assert!(matches!(
            head_forward(&p, Head::A, &x[1..]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn eslm_score_is_the_product() {
        assert!((eslm_score(0.2, 0.5) - 0.1).abs() < 1e-17);
        assert!((eslm_score(0.3, 1.0 - 1e-12) - 0.3).abs() < 1e-11);
    }

    #[test]
    fn batch_of_one_and_permutation() {
        let mut p = ModelParams::init(shape(), 5).unwrap();
        p.randomize_output_layers(6);
        let batch = [sample(1, &[2, 3]), sample(4, &[]), sample(5, &[6, 7, 8])];
        let full = forward(&p, &batch).unwrap();
        for (i, s) in batch.iter().enumerate() {
            let one = forward(&p, core::slice::from_ref(s)).unwrap();
            assert_eq!(one.samples[0], full.samples[i]);
        }
        let permuted = [batch[2].clone(), batch[0].clone(), batch[1].clone()];
        let perm = forward(&p, &permuted).unwrap();
        assert_eq!(perm.p_a(), [full.p_a()[2], full.p_a()[0], full.p_a()[1]]);
        assert_eq!(perm.p_g(), [full.p_g()[2], full.p_g()[0], full.p_g()[1]]);
    }

    #[test]
    fn trace_probabilities_match_recomputation() {
        let mut p = ModelParams::init(shape(), 5).unwrap();
        p.randomize_output_layers(6);
        let batch = [sample(1, &[2, 3]), sample(4, &[9])];
        let trace = forward(&p, &batch).unwrap();
        for (s, st) in batch.iter().zip(&trace.samples) {
            let e = embed(&p, s).unwrap();
            let att = target_attention(&p, &e.target, &e.sequence, &e.mask).unwrap();
            let mut x = e.slots.clone();
            x.extend(att.summary);
            assert_eq!(
                head_forward(&p, Head::A, &x).unwrap().prob,
                st.prob(Head::A)
            );
            assert_eq!(
                head_forward(&p, Head::G, &x).unwrap().prob,
                st.prob(Head::G)
            );
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut p = ModelParams::init(shape(), 5).unwrap();
        p.randomize_output_layers(6);
        let batch = [sample(1, &[2, 3])];
        let trace = forward(&p, &batch).unwrap();
        let g = backward(&p, &trace, &LossGrads::zeros(1)).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn untouched_rows_have_zero_gradient() {
        let mut p = ModelParams::init(shape(), 5).unwrap();
        p.randomize_output_layers(6);
        let batch = [sample(1, &[2, 3])];
        let trace = forward(&p, &batch).unwrap();
        let g = backward(
            &p,
            &trace,
            &LossGrads {
                head_a: vec![1.0],
                head_g: vec![-0.5],
            },
        )
        .unwrap();
        let touched = g.touched_rows();
        assert_eq!(touched, [1, 2, 3, 20, 21, 22, 23, 24]);
        for r in 0..30u32 {
            if !touched.contains(&r) {
                assert!(g.values.embedding.row(r as usize).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn stale_trace_is_rejected() {
        let p = ModelParams::init(shape(), 5).unwrap();
        let trace = forward(&p, &[sample(1, &[2])]).unwrap();
        let other = ModelParams::init(
            ModelShape {
                vocab: 31,
                ..shape()
            },
            5,
        )
        .unwrap();
        assert!(matches!(
            backward(&other, &trace, &LossGrads::zeros(1)),
            Err(Error::TraceMismatch(_))
        ));
        assert!(matches!(
            backward(&p, &trace, &LossGrads::zeros(2)),
            Err(Error::TraceMismatch(_))
        ));
    }
}
