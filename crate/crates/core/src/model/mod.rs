//! Linear and one-hidden-layer MLP classifiers with exact backprop.
//!
//! Parameters live in one flat `Vec<f64>` so the optimizer and the gradient
//! checks can treat them uniformly. Layout, row-major:
//!
//! * linear: `W (out x d)`, `b (out)`
//! * mlp:    `W1 (h x d)`, `b1 (h)`, `W2 (out x h)`, `b2 (out)`
//!
//! The hidden activation is ReLU.

mod adam;

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{ClassProbabilities, CumulativeProbabilities};
use crate::rng::{self, streams};

pub use adam::{Adam, AdamConfig};

pub const DEFAULT_HIDDEN: usize = 300;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear { d: usize, outputs: usize },
    Mlp { d: usize, hidden: usize, outputs: usize },
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::Linear { d, .. } | Architecture::Mlp { d, .. } => d,
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            Architecture::Linear { outputs, .. } | Architecture::Mlp { outputs, .. } => outputs,
        }
    }

    pub fn num_params(&self) -> usize {
        match *self {
            Architecture::Linear { d, outputs } => outputs * d + outputs,
            Architecture::Mlp { d, hidden, outputs } => hidden * d + hidden + outputs * hidden + outputs,
        }
    }
}

/// How raw outputs become class probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// `k` outputs, softmax.
    Softmax,
    /// One output `f`; `p(y = 1) = sigmoid(f)`. Treated as a two-class
    /// softmax over the class logits `(0, f)`.
    Sigmoid,
    /// `k` outputs, softmax, exposed as running sums `p(y <= j)`.
    Cumulative,
}

impl Head {
    pub fn outputs_for(self, k: usize) -> usize {
        match self {
            Head::Sigmoid => 1,
            Head::Softmax | Head::Cumulative => k,
        }
    }

    /// Class logits from raw outputs.
    pub fn class_logits(self, outputs: &[f64]) -> Vec<f64> {
        match self {
            Head::Sigmoid => vec![0.0, outputs[0]],
            Head::Softmax | Head::Cumulative => outputs.to_vec(),
        }
    }

    /// Gradient with respect to raw outputs from one with respect to class logits.
    pub fn pullback(self, class_grad: &[f64]) -> Vec<f64> {
        match self {
            Head::Sigmoid => vec![class_grad[1]],
            Head::Softmax | Head::Cumulative => class_grad.to_vec(),
        }
    }
}

/// Cached forward pass for one input, consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Activations {
    version: u64,
    input: Vec<f64>,
    /// Post-ReLU hidden layer (empty for linear models).
    hidden: Vec<f64>,
    output: Vec<f64>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    head: Head,
    params: Vec<f64>,
    /// Bumped on every mutable access to the parameters.
    version: u64,
}

impl Model {
    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(arch: Architecture, head: Head, seed: u64) -> Self {
        let mut params = vec![0.0; arch.num_params()];
        let mut rng = rng::seeded(seed, streams::INIT);
        let mut fill = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            slice.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        };
        match arch {
            Architecture::Linear { d, outputs } => fill(&mut params[..outputs * d], d, outputs),
            Architecture::Mlp { d, hidden, outputs } => {
                fill(&mut params[..hidden * d], d, hidden);
                let w2 = hidden * d + hidden;
                fill(&mut params[w2..w2 + outputs * hidden], hidden, outputs);
            }
        }
        Model { arch, head, params, version: 0 }
    }

    pub fn linear(d: usize, k: usize, head: Head, seed: u64) -> Self {
        Model::new(Architecture::Linear { d, outputs: head.outputs_for(k) }, head, seed)
    }

    pub fn mlp(d: usize, hidden: usize, k: usize, head: Head, seed: u64) -> Self {
        Model::new(Architecture::Mlp { d, hidden, outputs: head.outputs_for(k) }, head, seed)
    }

    pub fn zeros(arch: Architecture, head: Head) -> Self {
        Model { arch, head, params: vec![0.0; arch.num_params()], version: 0 }
    }

    pub fn from_params(arch: Architecture, head: Head, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.num_params() {
            return Err(Error::Dimension { expected: arch.num_params(), got: params.len() });
        }
        Ok(Model { arch, head, params, version: 0 })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn num_classes(&self) -> usize {
        match self.head {
            Head::Sigmoid => 2,
            Head::Softmax | Head::Cumulative => self.arch.outputs(),
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        let d = self.arch.input_dim();
        if x.len() == d {
            Ok(())
        } else {
            Err(Error::Dimension { expected: d, got: x.len() })
        }
    }

    /// Raw outputs for `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Activations> {
        self.check_dim(x)?;
        let p = &self.params;
        let (hidden, output) = match self.arch {
            Architecture::Linear { d, outputs } => (Vec::new(), affine(&p[..outputs * d], &p[outputs * d..], x)),
            Architecture::Mlp { d, hidden: h, outputs } => {
                let (w1, rest) = p.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(outputs * h);
                let mut hid = affine(w1, b1, x);
                hid.iter_mut().for_each(|v| *v = v.max(0.0));
                let out = affine(w2, b2, &hid);
                (hid, out)
            }
        };
        Ok(Activations { version: self.version, input: x.to_vec(), hidden, output })
    }

    /// Accumulates `d loss / d params` into `grads`, given `upstream =
    /// d loss / d outputs` for the cached input.
    pub fn backward(&self, act: &Activations, upstream: &[f64], grads: &mut [f64]) -> Result<()> {
        if act.version != self.version {
            return Err(Error::StaleCache { cached: act.version, current: self.version });
        }
        let outputs = self.arch.outputs();
        if upstream.len() != outputs {
            return Err(Error::Dimension { expected: outputs, got: upstream.len() });
        }
        if grads.len() != self.params.len() {
            return Err(Error::Dimension { expected: self.params.len(), got: grads.len() });
        }
        match self.arch {
            Architecture::Linear { d, outputs } => {
                let (gw, gb) = grads.split_at_mut(outputs * d);
                outer_accumulate(gw, gb, upstream, &act.input);
            }
            Architecture::Mlp { d, hidden: h, outputs } => {
                let w2 = &self.params[h * d + h..h * d + h + outputs * h];
                let (g1, g2) = grads.split_at_mut(h * d + h);
                let (gw2, gb2) = g2.split_at_mut(outputs * h);
                outer_accumulate(gw2, gb2, upstream, &act.hidden);
                // back through W2 and the ReLU gate
                let mut delta = vec![0.0; h];
                for (o, &u) in upstream.iter().enumerate() {
                    if u == 0.0 {
                        continue;
                    }
                    for (dh, &w) in delta.iter_mut().zip(&w2[o * h..(o + 1) * h]) {
                        *dh += u * w;
                    }
                }
                for (dh, &a) in delta.iter_mut().zip(&act.hidden) {
                    if a <= 0.0 {
                        *dh = 0.0;
                    }
                }
                let (gw1, gb1) = g1.split_at_mut(h * d);
                outer_accumulate(gw1, gb1, &delta, &act.input);
            }
        }
        Ok(())
    }

    pub fn class_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.head.class_logits(&self.forward(x)?))
    }

    /// Per-class probabilities: softmax, or the sigmoid pair for a binary head.
    pub fn eta(&self, x: &[f64]) -> Result<ClassProbabilities> {
        let out = self.forward(x)?;
        Ok(probabilities(self.head, &out))
    }

    /// `p(y <= j | x)`, the running sums of the class probabilities.
    pub fn cumulative(&self, x: &[f64]) -> Result<CumulativeProbabilities> {
        Ok(self.eta(x)?.cumulative())
    }

    /// `argmax_j f_j(x)`, ties to the lowest class.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.class_logits(x)?))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            architecture: self.arch,
            head: self.head,
            params: self.params.clone(),
            metadata: serde_json::Value::Null,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion(ck.schema_version));
        }
        Model::from_params(ck.architecture, ck.head, ck.params.clone())
    }
}

pub(crate) fn probabilities(head: Head, outputs: &[f64]) -> ClassProbabilities {
    match head {
        Head::Sigmoid => ClassProbabilities::from_binary_logit(outputs[0]),
        Head::Softmax | Head::Cumulative => ClassProbabilities::from_logits(outputs),
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| bias + w[o * d..(o + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// `gw += g x^T`, `gb += g`.
fn outer_accumulate(gw: &mut [f64], gb: &mut [f64], g: &[f64], x: &[f64]) {
    let d = x.len();
    for (o, &go) in g.iter().enumerate() {
        gb[o] += go;
        if go == 0.0 {
            continue;
        }
        for (w, &xi) in gw[o * d..(o + 1) * d].iter_mut().zip(x) {
            *w += go * xi;
        }
    }
}

/// Serialized model: architecture, head, and flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub architecture: Architecture,
    pub head: Head,
    pub params: Vec<f64>,
    /// Free-form provenance (task, class names, config hash).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion(ck.schema_version));
        }
        Ok(ck)
    }
}
