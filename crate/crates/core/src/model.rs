//! Bimodal encoder pair: an input encoder and a label encoder, each an affine
//! map (optionally with one tanh hidden layer) followed by L2 normalization.
//!
//! All trainable parameters live in one flat [`ParamVector`] with the layout
//!
//! ```text
//! [ input weights | input biases | label weights | label biases ]
//! ```
//!
//! Within each encoder, weights are listed layer by layer (first layer, then
//! output layer when `hidden_dim > 0`), each matrix row-major with shape
//! `(fan_out, fan_in)`; biases follow the same layer order. The label encoder
//! consumes a one-hot vector of length `num_classes_max`, so its first weight
//! matrix acts as a learned table indexed by class id.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero when normalizing.
const MIN_NORM: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub num_classes_max: usize,
    /// 0 selects a single affine map.
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be >= 1".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::InvalidConfig("embed_dim must be >= 1".into()));
        }
        if self.num_classes_max == 0 {
            return Err(Error::InvalidConfig("num_classes_max must be >= 1".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let mut offset = 0;
        let input = TowerShape::new(self.input_dim, self.hidden_dim, self.embed_dim);
        let label = TowerShape::new(self.num_classes_max, self.hidden_dim, self.embed_dim);

        let input_w = offset;
        offset += input.weight_len();
        let input_b = offset;
        offset += input.bias_len();
        let label_w = offset;
        offset += label.weight_len();
        let label_b = offset;
        offset += label.bias_len();

        Layout {
            input: TowerLayout {
                shape: input,
                weights: input_w,
                biases: input_b,
            },
            label: TowerLayout {
                shape: label,
                weights: label_w,
                biases: label_b,
            },
            len: offset,
        }
    }

    pub fn param_len(&self) -> usize {
        self.layout().len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TowerShape {
    pub fan_in: usize,
    pub hidden: usize,
    pub out: usize,
}

impl TowerShape {
    fn new(fan_in: usize, hidden: usize, out: usize) -> Self {
        Self {
            fan_in,
            hidden,
            out,
        }
    }

    fn first_out(&self) -> usize {
        if self.hidden == 0 {
            self.out
        } else {
            self.hidden
        }
    }

    pub fn weight_len(&self) -> usize {
        if self.hidden == 0 {
            self.out * self.fan_in
        } else {
            self.hidden * self.fan_in + self.out * self.hidden
        }
    }

    pub fn bias_len(&self) -> usize {
        if self.hidden == 0 {
            self.out
        } else {
            self.hidden + self.out
        }
    }
}

/// Offsets of one encoder's segments inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TowerLayout {
    pub shape: TowerShape,
    pub weights: usize,
    pub biases: usize,
}

impl TowerLayout {
    fn w1(&self) -> usize {
        self.weights
    }
    fn w2(&self) -> usize {
        self.weights + self.shape.hidden * self.shape.fan_in
    }
    fn b1(&self) -> usize {
        self.biases
    }
    fn b2(&self) -> usize {
        self.biases + self.shape.hidden
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub input: TowerLayout,
    pub label: TowerLayout,
    pub len: usize,
}

/// Flat parameters of both encoders, tagged with the config that fixes their layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    config: EncoderConfig,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub normalized: bool,
}

impl Embedding {
    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.vector, &other.vector)
    }
}

/// Seeded initialization: weights uniform in (-1, 1) scaled by `1/sqrt(fan_in)`, biases zero.
pub fn init_params(config: &EncoderConfig) -> Result<ParamVector> {
    config.validate()?;
    let layout = config.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut values = vec![0.0; layout.len];
    for tower in [layout.input, layout.label] {
        let s = tower.shape;
        let scale1 = 1.0 / (s.fan_in as f64).sqrt();
        let first = s.first_out() * s.fan_in;
        for w in &mut values[tower.w1()..tower.w1() + first] {
            *w = rng.random_range(-1.0..1.0) * scale1;
        }
        if s.hidden > 0 {
            let scale2 = 1.0 / (s.hidden as f64).sqrt();
            for w in &mut values[tower.w2()..tower.w2() + s.out * s.hidden] {
                *w = rng.random_range(-1.0..1.0) * scale2;
            }
        }
    }
    Ok(ParamVector { config: *config, values })
}

enum TowerInput<'a> {
    Dense(&'a [f64]),
    OneHot(usize),
}

/// Forward-pass intermediates of one encoder, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activation {
    hidden: Vec<f64>,
    norm: f64,
    unit: Vec<f64>,
}

impl Activation {
    pub fn unit(&self) -> &[f64] {
        &self.unit
    }
}

impl ParamVector {
    pub fn from_values(config: EncoderConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { config, values })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    fn tower_forward(&self, tower: &TowerLayout, input: TowerInput<'_>) -> Result<Activation> {
        let s = tower.shape;
        let p = &self.values;
        let first_out = s.first_out();
        let mut a = p[tower.b1()..tower.b1() + first_out].to_vec();
        match input {
            TowerInput::Dense(x) => {
                for (r, ar) in a.iter_mut().enumerate() {
                    let row = &p[tower.w1() + r * s.fan_in..tower.w1() + (r + 1) * s.fan_in];
                    *ar += dot(row, x);
                }
            }
            TowerInput::OneHot(c) => {
                for (r, ar) in a.iter_mut().enumerate() {
                    *ar += p[tower.w1() + r * s.fan_in + c];
                }
            }
        }
        let (hidden, z) = if s.hidden == 0 {
            (Vec::new(), a)
        } else {
            let h: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
            let mut z = p[tower.b2()..tower.b2() + s.out].to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &p[tower.w2() + r * s.hidden..tower.w2() + (r + 1) * s.hidden];
                *zr += dot(row, &h);
            }
            (h, z)
        };
        let norm = dot(&z, &z).sqrt();
        if !(norm > MIN_NORM) {
            return Err(if norm.is_finite() {
                Error::ZeroNorm
            } else {
                Error::NonFinite("embedding")
            });
        }
        let unit = z.iter().map(|v| v / norm).collect();
        Ok(Activation { hidden, norm, unit })
    }

    /// Accumulates `d<unit, grad_unit>/dparams` into `out`.
    fn tower_backward(
        &self,
        tower: &TowerLayout,
        input: TowerInput<'_>,
        act: &Activation,
        grad_unit: &[f64],
        out: &mut [f64],
    ) {
        let s = tower.shape;
        let p = &self.values;
        // Jacobian of z / |z| applied to the upstream gradient.
        let proj = dot(grad_unit, &act.unit);
        let dz: Vec<f64> = grad_unit
            .iter()
            .zip(&act.unit)
            .map(|(g, u)| (g - proj * u) / act.norm)
            .collect();

        let da = if s.hidden == 0 {
            dz
        } else {
            for (r, dzr) in dz.iter().enumerate() {
                out[tower.b2() + r] += dzr;
                let row = &mut out[tower.w2() + r * s.hidden..tower.w2() + (r + 1) * s.hidden];
                for (o, h) in row.iter_mut().zip(&act.hidden) {
                    *o += dzr * h;
                }
            }
            let mut dh = vec![0.0; s.hidden];
            for (r, dzr) in dz.iter().enumerate() {
                let row = &p[tower.w2() + r * s.hidden..tower.w2() + (r + 1) * s.hidden];
                for (d, w) in dh.iter_mut().zip(row) {
                    *d += dzr * w;
                }
            }
            dh.iter()
                .zip(&act.hidden)
                .map(|(d, h)| d * (1.0 - h * h))
                .collect()
        };

        for (r, dar) in da.iter().enumerate() {
            out[tower.b1() + r] += dar;
            match input {
                TowerInput::Dense(x) => {
                    let row = &mut out[tower.w1() + r * s.fan_in..tower.w1() + (r + 1) * s.fan_in];
                    for (o, xv) in row.iter_mut().zip(x) {
                        *o += dar * xv;
                    }
                }
                TowerInput::OneHot(c) => out[tower.w1() + r * s.fan_in + c] += dar,
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                what: "input vector",
                expected: self.config.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_class(&self, class_id: u32) -> Result<usize> {
        let c = class_id as usize;
        if c >= self.config.num_classes_max {
            return Err(Error::ClassOutOfRange {
                class_id,
                max: self.config.num_classes_max,
            });
        }
        Ok(c)
    }

    pub fn forward_input(&self, x: &[f64]) -> Result<Activation> {
        self.check_input(x)?;
        self.tower_forward(&self.layout().input, TowerInput::Dense(x))
    }

    pub fn forward_label(&self, class_id: u32) -> Result<Activation> {
        let c = self.check_class(class_id)?;
        self.tower_forward(&self.layout().label, TowerInput::OneHot(c))
    }

    /// Adds the vector-Jacobian product of the input encoder at `x` into `out`.
    pub fn backward_input(&self, x: &[f64], act: &Activation, grad_unit: &[f64], out: &mut ParamVector) {
        self.tower_backward(&self.layout().input, TowerInput::Dense(x), act, grad_unit, &mut out.values);
    }

    /// Adds the vector-Jacobian product of the label encoder at `class_id` into `out`.
    pub fn backward_label(&self, class_id: u32, act: &Activation, grad_unit: &[f64], out: &mut ParamVector) {
        let c = class_id as usize;
        self.tower_backward(&self.layout().label, TowerInput::OneHot(c), act, grad_unit, &mut out.values);
    }

    pub fn encode_input(&self, x: &[f64]) -> Result<Embedding> {
        let act = self.forward_input(x)?;
        Ok(Embedding {
            vector: act.unit,
            normalized: true,
        })
    }

    pub fn encode_label(&self, class_id: u32) -> Result<Embedding> {
        let act = self.forward_label(class_id)?;
        Ok(Embedding {
            vector: act.unit,
            normalized: true,
        })
    }

    /// Cosine similarity between the input embedding of `x` and the label embedding of `class_id`.
    pub fn pair_similarity(&self, x: &[f64], class_id: u32) -> Result<f64> {
        let e1 = self.forward_input(x)?;
        let e2 = self.forward_label(class_id)?;
        Ok(dot(&e1.unit, &e2.unit))
    }

    pub fn pair_similarity_grad(&self, x: &[f64], class_id: u32) -> Result<ParamVector> {
        let e1 = self.forward_input(x)?;
        let e2 = self.forward_label(class_id)?;
        let mut grad = self.zeros_like();
        self.backward_input(x, &e1, &e2.unit, &mut grad);
        self.backward_label(class_id, &e2, &e1.unit, &mut grad);
        Ok(grad)
    }

    /// Label embeddings for a set of classes, in the given order.
    pub fn label_table(&self, classes: &[u32]) -> Result<Vec<Embedding>> {
        classes.iter().map(|&c| self.encode_label(c)).collect()
    }

    /// Most similar candidate class; ties go to the smallest class id.
    pub fn predict(&self, x: &[f64], candidate_classes: &[u32]) -> Result<u32> {
        if candidate_classes.is_empty() {
            return Err(Error::Empty("candidate class set"));
        }
        let e1 = self.encode_input(x)?;
        let mut sims = Vec::with_capacity(candidate_classes.len());
        for &c in candidate_classes {
            sims.push((c, e1.dot(&self.encode_label(c)?)));
        }
        Ok(argmax_smallest_id(&sims))
    }
}

/// Argmax over `(class, score)` pairs, ties broken toward the smallest class id.
pub fn argmax_smallest_id(scores: &[(u32, f64)]) -> u32 {
    let mut best = scores[0];
    for &(c, s) in &scores[1..] {
        if s > best.1 || (s == best.1 && c < best.0) {
            best = (c, s);
        }
    }
    best.0
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
