//! Minimal dense networks for the noise predictor and the scale regressor.
//!
//! Batched forward/backward passes over row-major `f32` buffers, a decoupled
//! weight-decay Adam optimizer with cosine learning-rate decay, and a
//! versioned binary checkpoint format shared by every trained model.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "GNCK"
//! version    u32      1
//! kind_len   u32, kind bytes (utf-8)
//! meta_len   u32, meta bytes (utf-8 JSON)
//! activation u8       0 = relu, 1 = silu
//! layers     u32
//! per layer: inputs u32, outputs u32, weights f32[outputs*inputs] (row-major), bias f32[outputs]
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"GNCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint kind mismatch: expected {expected}, found {found}")]
    Kind { expected: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f32) -> f32 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    #[inline]
    fn derivative(self, z: f32) -> f32 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + (acc[4] + acc[5]) + (acc[6] + acc[7]) + tail
}

#[inline]
fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Fully connected layer, weights stored row-major as `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        // Uniform Kaiming-style init.
        let bound = (6.0 / inputs as f32).sqrt() * 0.5;
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f32], batch: usize, out: &mut Vec<f32>) {
        out.clear();
        out.reserve(batch * self.outputs);
        for b in 0..batch {
            let row = &x[b * self.inputs..(b + 1) * self.inputs];
            for o in 0..self.outputs {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                out.push(self.bias[o] + dot(w, row));
            }
        }
    }
}

/// Multi-layer perceptron; `hidden` activation after every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    hidden: Activation,
}

/// Activations retained for a backward pass.
pub struct ForwardCache {
    batch: usize,
    /// Layer inputs (post-activation of the previous layer), one per layer.
    inputs: Vec<Vec<f32>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f32>>,
}

impl ForwardCache {
    /// Network output (pre-activation of the last layer).
    pub fn output(&self) -> &[f32] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradients with the same shapes as the network parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f32>>,
    pub bias: Vec<Vec<f32>>,
}

impl Mlp {
    /// Builds a network with layer widths `sizes` (input first, output last).
    pub fn new<R: Rng>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], rng))
            .collect();
        Self { layers, hidden }
    }

    pub fn from_layers(layers: Vec<Dense>, hidden: Activation) -> Self {
        Self { layers, hidden }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Inference pass over `batch` rows.
    pub fn forward(&self, input: &[f32], batch: usize) -> Vec<f32> {
        debug_assert_eq!(input.len(), batch * self.input_dim());
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, batch, &mut next);
            if i != last {
                for v in next.iter_mut() {
                    *v = self.hidden.apply(*v);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_cached(&self, input: &[f32], batch: usize) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&cur, batch, &mut z);
            let act = if i != last {
                z.iter().map(|&v| self.hidden.apply(v)).collect()
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut cur, act));
            pre.push(z);
        }
        ForwardCache { batch, inputs, pre }
    }

    /// Backpropagates `grad_out` (d loss / d output) through a cached pass.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f32]) -> Gradients {
        let batch = cache.batch;
        let n = self.layers.len();
        let mut gw: Vec<Vec<f32>> = self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
        let mut gb: Vec<Vec<f32>> = self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
        let mut delta = grad_out.to_vec();
        for li in (0..n).rev() {
            let layer = &self.layers[li];
            if li != n - 1 {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[li]) {
                    *d *= self.hidden.derivative(z);
                }
            }
            let x = &cache.inputs[li];
            let mut dx = if li > 0 { vec![0.0f32; batch * layer.inputs] } else { Vec::new() };
            for b in 0..batch {
                let xr = &x[b * layer.inputs..(b + 1) * layer.inputs];
                let dr = &delta[b * layer.outputs..(b + 1) * layer.outputs];
                for (o, &g) in dr.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    gb[li][o] += g;
                    axpy(&mut gw[li][o * layer.inputs..(o + 1) * layer.inputs], g, xr);
                    if li > 0 {
                        axpy(
                            &mut dx[b * layer.inputs..(b + 1) * layer.inputs],
                            g,
                            &layer.weights[o * layer.inputs..(o + 1) * layer.inputs],
                        );
                    }
                }
            }
            delta = dx;
        }
        Gradients { weights: gw, bias: gb }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(net: &Mlp, weight_decay: f32) -> Self {
        let shapes: Vec<usize> = net
            .layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f32) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            for (slot, (params, g, decay)) in [
                (&mut layer.weights, &grads.weights[li], true),
                (&mut layer.bias, &grads.bias[li], false),
            ]
            .into_iter()
            .enumerate()
            {
                let idx = 2 * li + slot;
                let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
                for i in 0..params.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    if decay {
                        params[i] -= lr * self.weight_decay * params[i];
                    }
                    params[i] -= lr * mh / (vh.sqrt() + self.eps);
                }
            }
        }
    }
}

/// Cosine decay from `base` to zero over `total` steps.
pub fn cosine_lr(base: f32, step: usize, total: usize) -> f32 {
    if total == 0 {
        return base;
    }
    let p = (step as f32 / total as f32).min(1.0);
    0.5 * base * (1.0 + (std::f32::consts::PI * p).cos())
}

/// A trained network plus free-form metadata, tagged with its model kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub metadata: serde_json::Value,
    pub network: Mlp,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_f32s<W: Write>(w: &mut W, vals: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(vals.len() * 4);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        write_u32(w, self.kind.len() as u32)?;
        w.write_all(self.kind.as_bytes())?;
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        write_u32(w, meta.len() as u32)?;
        w.write_all(&meta)?;
        w.write_all(&[match self.network.hidden {
            Activation::Relu => 0u8,
            Activation::Silu => 1u8,
        }])?;
        write_u32(w, self.network.layers.len() as u32)?;
        for l in &self.network.layers {
            write_u32(w, l.inputs as u32)?;
            write_u32(w, l.outputs as u32)?;
            write_f32s(w, &l.weights)?;
            write_f32s(w, &l.bias)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let kind_len = read_u32(r)? as usize;
        if kind_len > 1 << 16 {
            return Err(CheckpointError::Corrupt("kind too long".into()));
        }
        let mut kind = vec![0u8; kind_len];
        r.read_exact(&mut kind)?;
        let kind = String::from_utf8(kind).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let meta_len = read_u32(r)? as usize;
        if meta_len > 1 << 24 {
            return Err(CheckpointError::Corrupt("metadata too long".into()));
        }
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let metadata = serde_json::from_slice(&meta).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let mut act = [0u8; 1];
        r.read_exact(&mut act)?;
        let hidden = match act[0] {
            0 => Activation::Relu,
            1 => Activation::Silu,
            other => return Err(CheckpointError::Corrupt(format!("unknown activation {other}"))),
        };
        let n_layers = read_u32(r)? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(CheckpointError::Corrupt(format!("bad layer count {n_layers}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut prev_out: Option<usize> = None;
        for _ in 0..n_layers {
            let inputs = read_u32(r)? as usize;
            let outputs = read_u32(r)? as usize;
            if inputs == 0 || outputs == 0 || inputs * outputs > 1 << 26 {
                return Err(CheckpointError::Corrupt("bad layer shape".into()));
            }
            if prev_out.is_some_and(|p| p != inputs) {
                return Err(CheckpointError::Corrupt("layer shapes do not chain".into()));
            }
            prev_out = Some(outputs);
            let weights = read_f32s(r, inputs * outputs)?;
            let bias = read_f32s(r, outputs)?;
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        Ok(Self {
            kind,
            metadata,
            network: Mlp { layers, hidden },
        })
    }

    /// Reads and checks the model kind tag.
    pub fn read_kind<R: Read>(r: &mut R, expected: &str) -> Result<Self, CheckpointError> {
        let ck = Self::read_from(r)?;
        if ck.kind != expected {
            return Err(CheckpointError::Kind {
                expected: expected.to_string(),
                found: ck.kind,
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path, expected_kind: &str) -> Result<Self, CheckpointError> {
        let mut f = io::BufReader::new(std::fs::File::open(path)?);
        Self::read_kind(&mut f, expected_kind)
    }
}
