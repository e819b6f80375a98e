use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dataset::FEATURE_SLOTS;
use crate::error::{Error, Result};
use crate::funnel::stream_rng;
use crate::math::sqrt;

const DOMAIN_INIT: u64 = 0x494e_4954;

/// Layer sizes of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    /// Rows of the shared embedding table.
    pub vocab: usize,
    /// Embedding width `d`.
    pub dim: usize,
    /// Attention heads `h`.
    pub heads: usize,
    /// Per-head projection width `d_k`.
    pub head_dim: usize,
    /// Widths of the two hidden tower layers; the third layer emits one logit.
    pub hidden: [usize; 2],
    /// Longest behaviour sequence attended over (most recent entries kept).
    pub seq_cap: usize,
}

impl ModelShape {
    pub fn new(vocab: usize) -> Self {
        Self {
            vocab,
            dim: 16,
            heads: 2,
            head_dim: 8,
            hidden: [64, 32],
            seq_cap: 20,
        }
    }

    /// Width of the tower input: every feature slot plus the attention summary.
    pub fn input_width(&self) -> usize {
        (FEATURE_SLOTS + 1) * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("vocab", self.vocab),
            ("dim", self.dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("hidden", self.hidden[0].min(self.hidden[1])),
            ("seq_cap", self.seq_cap),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} tensor given {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    /// `in × out`
    pub weight: Tensor,
    /// `1 × out`
    pub bias: Tensor,
}

impl Affine {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(inputs, outputs),
            bias: Tensor::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols
    }
}

/// Three affine layers; rectifier on the two hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub layers: [Affine; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    A,
    G,
}

impl Head {
    pub fn index(self) -> usize {
        match self {
            Head::A => 0,
            Head::G => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    /// `vocab × d`, shared by both heads.
    pub embedding: Tensor,
    /// Per attention head, `d × d_k` each.
    pub query: Vec<Tensor>,
    pub key: Vec<Tensor>,
    pub value: Vec<Tensor>,
    /// `h·d_k × d`
    pub output: Tensor,
    /// Indexed by [`Head::index`].
    pub towers: [Tower; 2],
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Result<Self> {
        shape.validate()?;
        let d = shape.dim;
        let dk = shape.head_dim;
        let tower = || Tower {
            layers: [
                Affine::zeros(shape.input_width(), shape.hidden[0]),
                Affine::zeros(shape.hidden[0], shape.hidden[1]),
                Affine::zeros(shape.hidden[1], 1),
            ],
        };
        Ok(Self {
            shape,
            embedding: Tensor::zeros(shape.vocab, d),
            query: (0..shape.heads).map(|_| Tensor::zeros(d, dk)).collect(),
            key: (0..shape.heads).map(|_| Tensor::zeros(d, dk)).collect(),
            value: (0..shape.heads).map(|_| Tensor::zeros(d, dk)).collect(),
            output: Tensor::zeros(shape.heads * dk, d),
            towers: [tower(), tower()],
        })
    }

    /// Uniform(−0.05, 0.05) embeddings, fan-in scaled uniform projections and
    /// hidden layers, zero biases, and zero output layers so that an untrained
    /// model predicts exactly 0.5 on both heads.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        let mut rng = stream_rng(seed, DOMAIN_INIT, 0);
        let d = shape.dim;
        let dk = shape.head_dim;
        p.embedding = Tensor::uniform(&mut rng, shape.vocab, d, 0.05);
        let fan = |n: usize| 1.0 / sqrt(n as f64);
        for h in 0..shape.heads {
            p.query[h] = Tensor::uniform(&mut rng, d, dk, fan(d));
            p.key[h] = Tensor::uniform(&mut rng, d, dk, fan(d));
            p.value[h] = Tensor::uniform(&mut rng, d, dk, fan(d));
        }
        p.output = Tensor::uniform(&mut rng, shape.heads * dk, d, fan(shape.heads * dk));
        for tower in &mut p.towers {
            for layer in &mut tower.layers[..2] {
                let (i, o) = (layer.inputs(), layer.outputs());
                layer.weight = Tensor::uniform(&mut rng, i, o, fan(i));
            }
        }
        Ok(p)
    }

    /// Replaces the zero output layers with fan-in scaled values, so that
    /// gradients reach every parameter (used by gradient checks).
    pub fn randomize_output_layers(&mut self, seed: u64) {
        let mut rng = stream_rng(seed, DOMAIN_INIT, 1);
        for tower in &mut self.towers {
            for layer in &mut tower.layers {
                let bound = 1.0 / sqrt(layer.inputs() as f64);
                for b in &mut layer.bias.data {
                    *b = rng.random_range(-0.1..0.1);
                }
                if layer.outputs() == 1 {
                    layer.weight = Tensor::uniform(&mut rng, layer.inputs(), 1, bound);
                }
            }
        }
    }

    /// All parameter tensors in a fixed order, with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        out.push((String::from("embedding"), &self.embedding));
        for (h, t) in self.query.iter().enumerate() {
            out.push((format!("attention.{h}.query"), t));
        }
        for (h, t) in self.key.iter().enumerate() {
            out.push((format!("attention.{h}.key"), t));
        }
        for (h, t) in self.value.iter().enumerate() {
            out.push((format!("attention.{h}.value"), t));
        }
        out.push((String::from("attention.output"), &self.output));
        for (name, tower) in ["tower_a", "tower_g"].iter().zip(&self.towers) {
            for (l, layer) in tower.layers.iter().enumerate() {
                out.push((format!("{name}.{l}.weight"), &layer.weight));
                out.push((format!("{name}.{l}.bias"), &layer.bias));
            }
        }
        out
    }

    /// Same order as [`ModelParams::named_tensors`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        out.push(&self.embedding);
        out.extend(self.query.iter());
        out.extend(self.key.iter());
        out.extend(self.value.iter());
        out.push(&self.output);
        for tower in &self.towers {
            for layer in &tower.layers {
                out.push(&layer.weight);
                out.push(&layer.bias);
            }
        }
        out
    }

    /// Same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.push(&mut self.embedding);
        out.extend(self.query.iter_mut());
        out.extend(self.key.iter_mut());
        out.extend(self.value.iter_mut());
        out.push(&mut self.output);
        for tower in &mut self.towers {
            for layer in &mut tower.layers {
                out.push(&mut layer.weight);
                out.push(&mut layer.bias);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Shape congruence with another parameter set.
    pub fn check_congruent(&self, other: &ModelParams) -> Result<()> {
        let a = self.named_tensors();
        let b = other.named_tensors();
        if a.len() != b.len() {
            return Err(Error::Shape(format!("{} tensors vs {}", a.len(), b.len())));
        }
        for ((name, x), (_, y)) in a.iter().zip(&b) {
            if !x.same_shape(y) {
                return Err(Error::Shape(format!(
                    "{name}: {}x{} vs {}x{}",
                    x.rows, x.cols, y.rows, y.cols
                )));
            }
        }
        Ok(())
    }
}

/// Gradients with the layout of [`ModelParams`], plus the set of embedding
/// rows that received any contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: ModelParams,
    touched: Vec<u32>,
    touched_mask: Vec<bool>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let values = ModelParams::zeros(params.shape).expect("shape already validated");
        Self {
            touched: Vec::new(),
            touched_mask: vec![false; params.shape.vocab],
            values,
        }
    }

    #[inline]
    pub(crate) fn embedding_row_mut(&mut self, row: u32) -> &mut [f64] {
        let r = row as usize;
        if !self.touched_mask[r] {
            self.touched_mask[r] = true;
            self.touched.push(row);
        }
        self.values.embedding.row_mut(r)
    }

    /// Embedding rows looked up by the batches accumulated so far, ascending.
    pub fn touched_rows(&self) -> Vec<u32> {
        let mut rows = self.touched.clone();
        rows.sort_unstable();
        rows
    }

    /// Resets to zero, clearing only the embedding rows that were touched.
    pub fn clear(&mut self) {
        for &r in &self.touched {
            self.values.embedding.row_mut(r as usize).fill(0.0);
            self.touched_mask[r as usize] = false;
        }
        self.touched.clear();
        for (i, t) in self.values.tensors_mut().into_iter().enumerate() {
            if i > 0 {
                t.data.fill(0.0);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for &r in &self.touched {
            for g in self.values.embedding.row_mut(r as usize) {
                *g *= factor;
            }
        }
        for (i, t) in self.values.tensors_mut().into_iter().enumerate() {
            if i > 0 {
                t.data.iter_mut().for_each(|g| *g *= factor);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values
            .tensors()
            .iter()
            .all(|t| t.data.iter().all(|&g| g == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.values.is_finite()
    }
}
