//! Sequential dense networks split into contiguous layer blocks.
//!
//! A global evaluation runs one forward and one backward pass over the whole
//! network and leaves behind a [`BlockCache`]: the input activation `x_d` of
//! every block and the adjoint `G_d = ∂f/∂(output of block d)`, stored per
//! sample. Local solves reuse that cache unchanged; only the block's own
//! parameters move.

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::partition::ParamPartition;
use crate::tensor_ad::{Tape, TapeError, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("layer {layer} ({inputs} -> {outputs}): {source}")]
    Layer {
        layer: usize,
        inputs: usize,
        outputs: usize,
        #[source]
        source: TapeError,
    },
    #[error("loss: {0}")]
    Loss(#[source] TapeError),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("network has no layers")]
    NoLayers,
    #[error("layer {layer} expects {expected} inputs but the previous layer emits {got}")]
    LayerChain {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid block split: {0}")]
    BlockSplit(String),
    #[error("block {0} does not exist")]
    BadBlock(usize),
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("targets do not match the configured loss")]
    TargetKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
        }
    }

    /// Weights (`inputs x outputs`, row-major) followed by biases.
    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SoftmaxCrossEntropy,
    MeanSquaredError,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples of one (mini)batch, tagged with an identifier that caches record.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub id: u64,
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Batch {
    pub fn new(id: u64, inputs: Tensor, targets: Targets) -> Self {
        Self {
            id,
            inputs,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0 || self.inputs.is_empty()
    }
}

/// How layers are grouped into subdomain blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockSplit {
    /// Layer indices at which a new block starts (strictly increasing, in `1..layers`).
    Cuts(Vec<usize>),
    /// `N` contiguous blocks minimizing the largest per-block parameter count.
    Balanced(usize),
}

/// Layer stack, loss and block layout. Shared immutably between the network
/// and every cache built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    layers: Vec<LayerSpec>,
    loss: LossKind,
    blocks: Vec<Range<usize>>,
    layer_offsets: Vec<usize>,
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>, loss: LossKind, split: BlockSplit) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::NoLayers);
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(ModelError::LayerChain {
                    layer: i + 1,
                    expected: pair[1].inputs,
                    got: pair[0].outputs,
                });
            }
        }
        let mut layer_offsets = Vec::with_capacity(layers.len() + 1);
        let mut acc = 0;
        layer_offsets.push(0);
        for l in &layers {
            acc += l.param_count();
            layer_offsets.push(acc);
        }
        let counts: Vec<usize> = layers.iter().map(LayerSpec::param_count).collect();
        let cuts = match split {
            BlockSplit::Cuts(c) => c,
            BlockSplit::Balanced(n) => balanced_cuts(&counts, n)?,
        };
        let blocks = blocks_from_cuts(&cuts, layers.len())?;
        Ok(Self {
            layers,
            loss,
            blocks,
            layer_offsets,
        })
    }

    /// Fully connected stack `dims[0] -> dims[1] -> ...` with `hidden` activation
    /// on every layer but the last, which is linear.
    pub fn mlp(dims: &[usize], hidden: Activation, loss: LossKind, split: BlockSplit) -> Result<Self, ModelError> {
        if dims.len() < 2 {
            return Err(ModelError::NoLayers);
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { hidden };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect();
        Self::new(layers, loss, split)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn param_count(&self) -> usize {
        *self.layer_offsets.last().unwrap()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_layers(&self, d: usize) -> Result<Range<usize>, ModelError> {
        self.blocks.get(d).cloned().ok_or(ModelError::BadBlock(d))
    }

    pub fn layer_params(&self, layer: usize) -> Range<usize> {
        self.layer_offsets[layer]..self.layer_offsets[layer + 1]
    }

    pub fn block_params(&self, d: usize) -> Result<Range<usize>, ModelError> {
        let layers = self.block_layers(d)?;
        Ok(self.layer_offsets[layers.start]..self.layer_offsets[layers.end])
    }

    /// Parameter partition whose cells are the blocks' contiguous slices of θ.
    pub fn partition(&self) -> ParamPartition {
        let ranges: Vec<_> = (0..self.num_blocks())
            .map(|d| self.block_params(d).expect("valid block"))
            .collect();
        ParamPartition::from_ranges(&ranges).expect("blocks tile the parameter vector")
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    /// Glorot-uniform weights (He-uniform for ReLU layers), zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; self.param_count()];
        for (l, spec) in self.layers.iter().enumerate() {
            let limit = match spec.activation {
                Activation::Relu => (6.0 / spec.inputs as f64).sqrt(),
                _ => (6.0 / (spec.inputs + spec.outputs) as f64).sqrt(),
            };
            let start = self.layer_offsets[l];
            for w in &mut theta[start..start + spec.inputs * spec.outputs] {
                *w = rng.random_range(-limit..limit);
            }
        }
        theta
    }

    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        if theta.len() != self.param_count() {
            return Err(ModelError::ParamLength {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Records layers `layers` on `tape`, reading their parameters from
    /// `params` (which starts at the first of those layers). Returns the
    /// output node and the (weight, bias) leaves.
    fn record_layers(
        &self,
        tape: &mut Tape,
        input: Var,
        layers: Range<usize>,
        params: &[f64],
    ) -> Result<(Var, Vec<(Var, Var)>), ModelError> {
        let mut cur = input;
        let mut leaves = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for l in layers {
            let spec = self.layers[l];
            let wrap = |source| ModelError::Layer {
                layer: l,
                inputs: spec.inputs,
                outputs: spec.outputs,
                source,
            };
            let nw = spec.inputs * spec.outputs;
            let w = Tensor::matrix(spec.inputs, spec.outputs, params[offset..offset + nw].to_vec())
                .map_err(wrap)?;
            let b = Tensor::vector(params[offset + nw..offset + nw + spec.outputs].to_vec());
            offset += spec.param_count();
            let wv = tape.leaf(w);
            let bv = tape.leaf(b);
            let h = tape.matmul(cur, wv).map_err(wrap)?;
            let z = tape.add_bias(h, bv).map_err(wrap)?;
            cur = match spec.activation {
                Activation::Identity => z,
                Activation::Relu => tape.relu(z),
                Activation::Tanh => tape.tanh(z),
            };
            leaves.push((wv, bv));
        }
        Ok((cur, leaves))
    }

    fn record_loss(&self, tape: &mut Tape, output: Var, targets: &Targets) -> Result<Var, ModelError> {
        match (self.loss, targets) {
            (LossKind::SoftmaxCrossEntropy, Targets::Classes(labels)) => {
                tape.softmax_cross_entropy(output, labels).map_err(ModelError::Loss)
            }
            (LossKind::MeanSquaredError, Targets::Values(values)) => {
                tape.mse(output, values).map_err(ModelError::Loss)
            }
            _ => Err(ModelError::TargetKind),
        }
    }

    /// Network output `D_N(...D_1(x))` for a `[batch, input_dim]` tensor.
    pub fn forward(&self, theta: &[f64], inputs: &Tensor) -> Result<Tensor, ModelError> {
        self.check_theta(theta)?;
        let mut tape = Tape::new();
        let x = tape.leaf(inputs.clone());
        let (out, _) = self.record_layers(&mut tape, x, 0..self.layers.len(), theta)?;
        Ok(tape.value(out).clone())
    }

    /// Objective `f(θ)` averaged over the batch, without gradients.
    pub fn loss(&self, theta: &[f64], batch: &Batch) -> Result<f64, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        self.check_theta(theta)?;
        let mut tape = Tape::new();
        let x = tape.leaf(batch.inputs.clone());
        let (out, _) = self.record_layers(&mut tape, x, 0..self.layers.len(), theta)?;
        let loss = self.record_loss(&mut tape, out, &batch.targets)?;
        Ok(tape.value(loss).data()[0])
    }

    /// Fraction of rows whose arg-max output matches the label.
    pub fn accuracy(&self, theta: &[f64], inputs: &Tensor, labels: &[usize]) -> Result<f64, ModelError> {
        if labels.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let out = self.forward(theta, inputs)?;
        let correct = labels
            .iter()
            .enumerate()
            .filter(|(i, &label)| argmax(out.row(*i)) == label)
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }

    /// One global forward/backward pass: objective, full gradient, and the
    /// boundary cache for local solves.
    pub fn evaluate_with_cache(self: &Arc<Self>, theta: &[f64], batch: &Batch) -> Result<Evaluation, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        self.check_theta(theta)?;
        let mut tape = Tape::new();
        let mut cur = tape.leaf(batch.inputs.clone());
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut block_outputs = Vec::with_capacity(self.blocks.len());
        let mut leaves = Vec::with_capacity(self.layers.len());
        for d in 0..self.blocks.len() {
            let range = self.block_params(d)?;
            block_inputs.push(tape.value(cur).clone());
            let (out, block_leaves) =
                self.record_layers(&mut tape, cur, self.blocks[d].clone(), &theta[range])?;
            block_outputs.push(out);
            leaves.extend(block_leaves);
            cur = out;
        }
        let loss_var = self.record_loss(&mut tape, cur, &batch.targets)?;
        let grads = tape
            .backward(loss_var, Tensor::scalar(1.0))
            .map_err(ModelError::Loss)?;

        let downstream = block_outputs
            .iter()
            .map(|&v| grads.wrt(v, tape.value(v).shape()))
            .collect();
        let mut grad = Vec::with_capacity(theta.len());
        for (w, b) in leaves {
            grad.extend_from_slice(grads.wrt(w, tape.value(w).shape()).data());
            grad.extend_from_slice(grads.wrt(b, tape.value(b).shape()).data());
        }
        let loss = tape.value(loss_var).data()[0];
        Ok(Evaluation {
            loss,
            grad: grad.clone(),
            cache: BlockCache {
                arch: Arc::clone(self),
                origin: theta.to_vec(),
                batch_id: batch.id,
                block_inputs,
                downstream,
                targets: batch.targets.clone(),
                loss,
                grad,
            },
        })
    }
}

/// Result of [`Architecture::evaluate_with_cache`].
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub cache: BlockCache,
}

/// Boundary activations and frozen downstream gradients at one iterate/batch.
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct BlockCache {
    arch: Arc<Architecture>,
    origin: Vec<f64>,
    batch_id: u64,
    block_inputs: Vec<Tensor>,
    downstream: Vec<Tensor>,
    targets: Targets,
    loss: f64,
    grad: Vec<f64>,
}

impl BlockCache {
    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_blocks(&self) -> usize {
        self.block_inputs.len()
    }

    /// Cached input `x_d` of block `d` (the raw batch for `d = 0`).
    pub fn block_input(&self, d: usize) -> Option<&Tensor> {
        self.block_inputs.get(d)
    }

    /// Cached per-sample adjoint `G_d` of block `d`'s output.
    pub fn downstream(&self, d: usize) -> Option<&Tensor> {
        self.downstream.get(d)
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn batch_id(&self) -> u64 {
        self.batch_id
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    /// True when the cache was built at exactly `theta` on batch `batch_id`.
    pub fn is_valid_for(&self, theta: &[f64], batch_id: u64) -> bool {
        self.batch_id == batch_id && self.origin == theta
    }

    /// Approximate block gradient `g̃_d = G_d · ∂D_d/∂θ_d (x_d; θ_d)` with the
    /// cached input and downstream adjoint held fixed.
    ///
    /// The last block has no downstream parameters, so its local objective is
    /// the loss itself on the cached targets and the result is exact for any
    /// `theta_d`.
    pub fn local_block_gradient(&self, d: usize, theta_d: &[f64]) -> Result<Vec<f64>, ModelError> {
        let arch = &*self.arch;
        let layers = arch.block_layers(d)?;
        let range = arch.block_params(d)?;
        if theta_d.len() != range.len() {
            return Err(ModelError::ParamLength {
                expected: range.len(),
                got: theta_d.len(),
            });
        }
        let mut tape = Tape::new();
        let x = tape.leaf(self.block_inputs[d].clone());
        let (out, leaves) = arch.record_layers(&mut tape, x, layers, theta_d)?;
        let grads = if d + 1 == self.num_blocks() {
            let loss = arch.record_loss(&mut tape, out, &self.targets)?;
            tape.backward(loss, Tensor::scalar(1.0))
        } else {
            tape.backward(out, self.downstream[d].clone())
        }
        .map_err(ModelError::Loss)?;
        let mut g = Vec::with_capacity(theta_d.len());
        for (w, b) in leaves {
            g.extend_from_slice(grads.wrt(w, tape.value(w).shape()).data());
            g.extend_from_slice(grads.wrt(b, tape.value(b).shape()).data());
        }
        Ok(g)
    }
}

/// Network plus its current flat parameter vector.
#[derive(Debug, Clone)]
pub struct SequentialNet {
    arch: Arc<Architecture>,
    theta: Vec<f64>,
}

impl SequentialNet {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self, ModelError> {
        arch.check_theta(&theta)?;
        Ok(Self {
            arch: Arc::new(arch),
            theta,
        })
    }

    pub fn initialized(arch: Architecture, seed: u64) -> Self {
        let theta = arch.init_params(seed);
        Self {
            arch: Arc::new(arch),
            theta,
        }
    }

    pub fn architecture(&self) -> &Arc<Architecture> {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<(), ModelError> {
        self.arch.check_theta(&theta)?;
        self.theta = theta;
        Ok(())
    }

    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor, ModelError> {
        self.arch.forward(&self.theta, inputs)
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64, ModelError> {
        self.arch.loss(&self.theta, batch)
    }

    pub fn evaluate_with_cache(&self, batch: &Batch) -> Result<Evaluation, ModelError> {
        self.arch.evaluate_with_cache(&self.theta, batch)
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn blocks_from_cuts(cuts: &[usize], layers: usize) -> Result<Vec<Range<usize>>, ModelError> {
    let mut blocks = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for &c in cuts {
        if c <= start || c >= layers {
            return Err(ModelError::BlockSplit(format!(
                "cut {c} must be increasing and inside 1..{layers}"
            )));
        }
        blocks.push(start..c);
        start = c;
    }
    blocks.push(start..layers);
    Ok(blocks)
}

/// Contiguous split of `counts` into `parts` groups minimizing the largest group sum.
fn balanced_cuts(counts: &[usize], parts: usize) -> Result<Vec<usize>, ModelError> {
    let l = counts.len();
    if parts == 0 || parts > l {
        return Err(ModelError::BlockSplit(format!(
            "cannot split {l} layers into {parts} blocks"
        )));
    }
    let mut prefix = vec![0usize; l + 1];
    for (i, c) in counts.iter().enumerate() {
        prefix[i + 1] = prefix[i] + c;
    }
    // best[p][i]: minimal max-sum splitting the first i layers into p blocks.
    let mut best = vec![vec![usize::MAX; l + 1]; parts + 1];
    let mut choice = vec![vec![0usize; l + 1]; parts + 1];
    best[0][0] = 0;
    for p in 1..=parts {
        for i in p..=l {
            for j in (p - 1)..i {
                if best[p - 1][j] == usize::MAX {
                    continue;
                }
                let cost = best[p - 1][j].max(prefix[i] - prefix[j]);
                if cost < best[p][i] {
                    best[p][i] = cost;
                    choice[p][i] = j;
                }
            }
        }
    }
    let mut cuts = Vec::with_capacity(parts - 1);
    let mut i = l;
    for p in (1..=parts).rev() {
        let j = choice[p][i];
        if p > 1 {
            cuts.push(j);
        }
        i = j;
    }
    cuts.reverse();
    Ok(cuts)
}
