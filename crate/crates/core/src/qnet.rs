//! Feedforward action-value network `Q̂(s, ·; w)` and its frozen target copy.
//!
//! The network maps a state vector to one value per action. Hidden layers use
//! a fixed nonlinearity and the output layer is linear. Training follows the
//! semi-gradient Q-learning rule
//!
//! ```text
//! w ← w + α · mean_batch[(y − Q̂(s, a; w)) ∇_w Q̂(s, a; w)]
//! y = r                                   if s' is terminal
//! y = r + γ · max_{a' available} Q̄(s', a')  otherwise
//! ```
//!
//! i.e. one plain SGD step on `½·mean(y − Q̂)²` where only the output unit of
//! the taken action carries error.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::Transition;
use crate::env::{MaskSnapshot, Observation};
use crate::error::{Error, Result};
use crate::linalg::{axpy, gemm};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Borrowed network input.
#[derive(Debug, Clone, Copy)]
pub enum Features<'a> {
    Dense(&'a [f64]),
    Sparse { dim: usize, indices: &'a [u32], values: &'a [f64] },
}

impl Features<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Features::Dense(x) => x.len(),
            Features::Sparse { dim, .. } => *dim,
        }
    }

    /// Calls `f(index, value)` for every stored entry, skipping exact zeros.
    #[inline]
    fn for_each_nonzero(&self, mut f: impl FnMut(usize, f64)) {
        match self {
            Features::Dense(x) => {
                for (i, &v) in x.iter().enumerate() {
                    if v != 0.0 {
                        f(i, v);
                    }
                }
            }
            Features::Sparse { indices, values, .. } => {
                for (&i, &v) in indices.iter().zip(values.iter()) {
                    if v != 0.0 {
                        f(i as usize, v);
                    }
                }
            }
        }
    }
}

impl<'a> From<&'a Observation> for Features<'a> {
    fn from(o: &'a Observation) -> Self {
        match o {
            Observation::Dense(v) => Features::Dense(v),
            Observation::Sparse(s) => Features::Sparse { dim: s.dim, indices: &s.indices, values: &s.values },
        }
    }
}

impl<'a> From<&'a [f64]> for Features<'a> {
    fn from(x: &'a [f64]) -> Self {
        Features::Dense(x)
    }
}

/// Fully connected layer; `weights` is `inputs × outputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn column(&self, j: usize, h: &[f64]) -> f64 {
        let mut s = self.bias[j];
        for (k, &hk) in h.iter().enumerate() {
            s += hk * self.weights[k * self.outputs + j];
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Number of weights and biases of a fully connected net with these sizes.
pub fn parameter_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument("a network needs at least an input and an output layer".to_string()));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("layer sizes must be at least 1".to_string()));
    }
    Ok(())
}

/// Index of the largest value among `candidates`; ties go to the lowest index.
pub fn masked_argmax(values: &[f64], candidates: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in candidates {
        let v = values[i];
        match best {
            Some((bi, bv)) if v < bv || (v == bv && i > bi) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Largest value among the actions of `mask`.
pub fn masked_max(values: &[f64], mask: &MaskSnapshot) -> Option<f64> {
    let removed = mask.removed();
    match mask.base() {
        crate::env::MaskBase::All(n) => {
            let n = *n;
            let mut best = f64::NEG_INFINITY;
            let mut found = false;
            let mut start = 0;
            for end in removed.iter().map(|&r| (r as usize).min(n)).chain(core::iter::once(n)) {
                if end > start {
                    found = true;
                    best = best.max(run_max(&values[start..end]));
                }
                start = start.max(end + 1);
            }
            found.then_some(best)
        }
        crate::env::MaskBase::Items(items) => items
            .iter()
            .filter(|i| removed.binary_search(i).is_err())
            .map(|&i| values[i as usize])
            .reduce(f64::max),
    }
}

/// Maximum of a non-empty run, four lanes at a time.
#[inline]
fn run_max(xs: &[f64]) -> f64 {
    let mut lanes = [f64::NEG_INFINITY; 4];
    let mut chunks = xs.chunks_exact(4);
    for c in &mut chunks {
        for k in 0..4 {
            lanes[k] = if c[k] > lanes[k] { c[k] } else { lanes[k] };
        }
    }
    let mut best = lanes[0].max(lanes[1]).max(lanes[2].max(lanes[3]));
    for &v in chunks.remainder() {
        best = best.max(v);
    }
    best
}

/// Per-sample quantities kept between the backward pass and the update.
struct SampleTrace<'a> {
    input: Features<'a>,
    /// Post-activation outputs of every hidden layer.
    hidden: Vec<Vec<f64>>,
    /// dLoss/dz for every hidden layer.
    deltas: Vec<Vec<f64>>,
    action: usize,
    /// dLoss/dz at the taken action's output unit.
    out_delta: f64,
}

impl QNetwork {
    /// Seeded initialization: weights uniform in ±1/√fan_in, biases zero.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / libm::sqrt(w[0] as f64);
                Layer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-bound..=bound)).collect(),
                    bias: alloc::vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a network needs at least one layer".to_string()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs
            {
                return Err(Error::InvalidArgument(format!("layer {k} has inconsistent shapes")));
            }
            if k > 0 && layers[k - 1].outputs != l.inputs {
                return Err(Error::InvalidArgument(format!("layer {k} input width does not chain")));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = alloc::vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_parameters(&self) -> usize {
        parameter_count(&self.layer_sizes())
    }

    /// Parameters flattened layer by layer (weights, then biases).
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    /// Mutable access to the `index`-th flattened parameter.
    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn same_architecture(&self, other: &QNetwork) -> bool {
        self.activation == other.activation && self.layer_sizes() == other.layer_sizes()
    }

    fn check_input(&self, x: &Features<'_>) -> Result<()> {
        if x.dim() != self.input_dim() {
            return Err(Error::ShapeMismatch { expected: self.input_dim(), got: x.dim() });
        }
        if let Features::Sparse { indices, values, dim } = x {
            if indices.len() != values.len() || indices.iter().any(|&i| i as usize >= *dim) {
                return Err(Error::InvalidArgument("malformed sparse input".to_string()));
            }
        }
        Ok(())
    }

    /// Pre-activation of the first layer.
    fn first_layer(&self, x: &Features<'_>, out: &mut [f64]) {
        let l = &self.layers[0];
        out.copy_from_slice(&l.bias);
        x.for_each_nonzero(|i, v| axpy(v, &l.weights[i * l.outputs..(i + 1) * l.outputs], out));
    }

    /// Hidden activations of every hidden layer for one input.
    fn hidden_activations(&self, x: &Features<'_>) -> Vec<Vec<f64>> {
        let n_hidden = self.layers.len() - 1;
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
        for k in 0..n_hidden {
            let l = &self.layers[k];
            let mut z = alloc::vec![0.0; l.outputs];
            if k == 0 {
                self.first_layer(x, &mut z);
            } else {
                z.copy_from_slice(&l.bias);
                let prev = &hidden[k - 1];
                for (i, &v) in prev.iter().enumerate() {
                    if v != 0.0 {
                        axpy(v, &l.weights[i * l.outputs..(i + 1) * l.outputs], &mut z);
                    }
                }
            }
            for v in &mut z {
                *v = self.activation.apply(*v);
            }
            hidden.push(z);
        }
        hidden
    }

    /// Q-values for every action.
    pub fn forward<'a>(&self, x: impl Into<Features<'a>>) -> Result<Vec<f64>> {
        let x = x.into();
        self.check_input(&x)?;
        let last = self.layers.last().unwrap_or_else(|| unreachable!());
        let mut out = alloc::vec![0.0; last.outputs];
        if self.layers.len() == 1 {
            self.first_layer(&x, &mut out);
            return Ok(out);
        }
        let hidden = self.hidden_activations(&x);
        let h = hidden.last().unwrap_or_else(|| unreachable!());
        out.copy_from_slice(&last.bias);
        for (k, &v) in h.iter().enumerate() {
            if v != 0.0 {
                axpy(v, &last.weights[k * last.outputs..(k + 1) * last.outputs], &mut out);
            }
        }
        Ok(out)
    }

    /// Q-values for a batch of inputs, row-major `batch × actions`.
    pub fn forward_batch(&self, xs: &[Features<'_>]) -> Result<Vec<f64>> {
        for x in xs {
            self.check_input(x)?;
        }
        let b = xs.len();
        let first = &self.layers[0];
        let mut act = alloc::vec![0.0; b * first.outputs];
        for (row, x) in act.chunks_exact_mut(first.outputs).zip(xs) {
            self.first_layer(x, row);
        }
        for k in 1..self.layers.len() {
            for v in &mut act {
                *v = self.activation.apply(*v);
            }
            let l = &self.layers[k];
            let mut next = alloc::vec![0.0; b * l.outputs];
            for row in next.chunks_exact_mut(l.outputs) {
                row.copy_from_slice(&l.bias);
            }
            gemm(b, l.inputs, l.outputs, &act, &l.weights, 1.0, &mut next);
            act = next;
        }
        Ok(act)
    }

    /// `Q̂(s, a)` without evaluating the other output units.
    pub fn q_value<'a>(&self, x: impl Into<Features<'a>>, action: usize) -> Result<f64> {
        let x = x.into();
        self.check_input(&x)?;
        if action >= self.output_dim() {
            return Err(Error::InvalidArgument(format!("action {action} out of range")));
        }
        let last = self.layers.last().unwrap_or_else(|| unreachable!());
        if self.layers.len() == 1 {
            let mut s = last.bias[action];
            x.for_each_nonzero(|i, v| s += v * last.weights[i * last.outputs + action]);
            return Ok(s);
        }
        let hidden = self.hidden_activations(&x);
        Ok(last.column(action, hidden.last().unwrap_or_else(|| unreachable!())))
    }

    fn trace<'a>(&self, x: Features<'a>, action: usize, target: f64, scale: f64) -> (f64, SampleTrace<'a>) {
        let last = self.layers.last().unwrap_or_else(|| unreachable!());
        let (hidden, q) = if self.layers.len() == 1 {
            let mut s = last.bias[action];
            x.for_each_nonzero(|i, v| s += v * last.weights[i * last.outputs + action]);
            (Vec::new(), s)
        } else {
            let hidden = self.hidden_activations(&x);
            let q = last.column(action, hidden.last().unwrap_or_else(|| unreachable!()));
            (hidden, q)
        };
        let err = q - target;
        let out_delta = err * scale;
        // back through the hidden layers
        let n_hidden = hidden.len();
        let mut deltas: Vec<Vec<f64>> = alloc::vec![Vec::new(); n_hidden];
        if n_hidden > 0 {
            let h = &hidden[n_hidden - 1];
            deltas[n_hidden - 1] = (0..h.len())
                .map(|k| {
                    out_delta * last.weights[k * last.outputs + action] * self.activation.derivative_from_output(h[k])
                })
                .collect();
            for k in (0..n_hidden - 1).rev() {
                let l = &self.layers[k + 1];
                let below = &hidden[k];
                let up = &deltas[k + 1];
                let d: Vec<f64> = (0..l.inputs)
                    .map(|i| {
                        let row = &l.weights[i * l.outputs..(i + 1) * l.outputs];
                        let s: f64 = row.iter().zip(up).map(|(w, g)| w * g).sum();
                        s * self.activation.derivative_from_output(below[i])
                    })
                    .collect();
                deltas[k] = d;
            }
        }
        (err, SampleTrace { input: x, hidden, deltas, action, out_delta })
    }

    /// Calls `f(flat_param_index, gradient_contribution)` for every nonzero
    /// gradient term of one traced sample.
    fn visit_gradient(&self, t: &SampleTrace<'_>, mut f: impl FnMut(usize, f64)) {
        let mut offset = 0;
        let last_k = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let bias_off = offset + l.weights.len();
            let input: Features<'_> = if k == 0 { t.input } else { Features::Dense(&t.hidden[k - 1]) };
            if k == last_k {
                input.for_each_nonzero(|i, v| f(offset + i * l.outputs + t.action, v * t.out_delta));
                f(bias_off + t.action, t.out_delta);
            } else {
                let delta = &t.deltas[k];
                input.for_each_nonzero(|i, v| {
                    for (j, &g) in delta.iter().enumerate() {
                        f(offset + i * l.outputs + j, v * g);
                    }
                });
                for (j, &g) in delta.iter().enumerate() {
                    f(bias_off + j, g);
                }
            }
            offset = bias_off + l.bias.len();
        }
    }

    /// Applies `w -= alpha · g` for one traced sample, straight into the
    /// weight rows. Returns false if a written value is not finite.
    fn apply_trace(&mut self, t: &SampleTrace<'_>, alpha: f64) -> bool {
        let mut finite = true;
        let last_k = self.layers.len() - 1;
        for k in 0..self.layers.len() {
            let input: Features<'_> = if k == 0 { t.input } else { Features::Dense(&t.hidden[k - 1]) };
            let l = &mut self.layers[k];
            let outs = l.outputs;
            if k == last_k {
                let g = alpha * t.out_delta;
                input.for_each_nonzero(|i, v| {
                    let w = &mut l.weights[i * outs + t.action];
                    *w -= g * v;
                    finite &= w.is_finite();
                });
                l.bias[t.action] -= g;
                finite &= l.bias[t.action].is_finite();
            } else {
                let delta = &t.deltas[k];
                input.for_each_nonzero(|i, v| {
                    let row = &mut l.weights[i * outs..(i + 1) * outs];
                    axpy(-alpha * v, delta, row);
                    finite &= row.iter().all(|w| w.is_finite());
                });
                axpy(-alpha, delta, &mut l.bias);
            }
        }
        finite
    }

    /// TD targets for a batch, bootstrapping from `target` on non-terminal
    /// transitions.
    pub fn td_targets(batch: &[&Transition], target: &QNetwork, gamma: f64) -> Result<Vec<f64>> {
        check_gamma(gamma)?;
        let open: Vec<usize> = (0..batch.len()).filter(|&k| !batch[k].done).collect();
        let mut y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        if open.is_empty() || gamma == 0.0 {
            return Ok(y);
        }
        let inputs: Vec<Features<'_>> = open.iter().map(|&k| Features::from(&batch[k].next_state)).collect();
        let q = target.forward_batch(&inputs)?;
        let n = target.output_dim();
        for (row, &k) in q.chunks_exact(n).zip(&open) {
            let best = masked_max(row, &batch[k].next_mask).ok_or(Error::EmptyMask)?;
            y[k] += gamma * best;
        }
        Ok(y)
    }

    /// Mean squared TD error `mean (y − Q̂(s,a))²` and the gradient of
    /// `½·mean (y − Q̂(s,a))²` with respect to the flattened parameters, for
    /// fixed targets `y`.
    pub fn loss_and_gradient(&self, batch: &[(Features<'_>, usize, f64)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".to_string()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = alloc::vec![0.0; self.num_parameters()];
        let mut sse = 0.0;
        for &(x, a, y) in batch {
            self.check_input(&x)?;
            let (err, t) = self.trace(x, a, y, scale);
            sse += err * err;
            self.visit_gradient(&t, |i, g| grad[i] += g);
        }
        Ok((sse * scale, grad))
    }

    /// `½·mean (y − Q̂(s,a))²` for fixed targets.
    pub fn half_mse(&self, batch: &[(Features<'_>, usize, f64)]) -> Result<f64> {
        let mut s = 0.0;
        for &(x, a, y) in batch {
            let e = self.q_value(x, a)? - y;
            s += e * e;
        }
        Ok(0.5 * s / batch.len() as f64)
    }

    /// One SGD step on a fixed-target batch; returns the mean squared TD error
    /// measured before the step.
    pub fn sgd_step(&mut self, batch: &[(Features<'_>, usize, f64)], alpha: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".to_string()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut sse = 0.0;
        let mut traces = Vec::with_capacity(batch.len());
        for &(x, a, y) in batch {
            self.check_input(&x)?;
            if a >= self.output_dim() {
                return Err(Error::InvalidArgument(format!("action {a} out of range")));
            }
            let (err, t) = self.trace(x, a, y, scale);
            sse += err * err;
            traces.push(t);
        }
        let loss = sse * scale;
        if !loss.is_finite() {
            return Err(Error::Divergence("Q-network training".to_string()));
        }
        // every trace was taken at the pre-step parameters
        let mut finite = true;
        for t in &traces {
            finite &= self.apply_trace(t, alpha);
        }
        if !finite {
            return Err(Error::Divergence("Q-network training".to_string()));
        }
        Ok(loss)
    }

    /// One Q-learning update on a replay minibatch.
    pub fn train_step(&mut self, target: &TargetNetwork, batch: &[&Transition], gamma: f64, alpha: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".to_string()));
        }
        let y = Self::td_targets(batch, &target.net, gamma)?;
        let samples: Vec<(Features<'_>, usize, f64)> =
            batch.iter().zip(&y).map(|(t, &y)| (Features::from(&t.state), t.action, y)).collect();
        self.sgd_step(&samples, alpha)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("discount {gamma} outside [0, 1]")));
    }
    Ok(())
}

/// `y` for a single transition.
pub fn td_target(transition: &Transition, target: &TargetNetwork, gamma: f64) -> Result<f64> {
    Ok(QNetwork::td_targets(&[transition], &target.net, gamma)?[0])
}

/// Frozen copy of a [`QNetwork`] that is refreshed every few updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNetwork {
    net: QNetwork,
    staleness: usize,
}

impl TargetNetwork {
    pub fn new(net: &QNetwork) -> Self {
        Self { net: net.clone(), staleness: 0 }
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }

    /// Train steps since the last sync.
    pub fn staleness(&self) -> usize {
        self.staleness
    }

    pub fn tick(&mut self) {
        self.staleness += 1;
    }

    /// Copies `net`'s parameters and resets the staleness counter.
    pub fn sync(&mut self, net: &QNetwork) -> Result<()> {
        if !self.net.same_architecture(net) {
            return Err(Error::ArchitectureMismatch);
        }
        for (dst, src) in self.net.layers.iter_mut().zip(&net.layers) {
            dst.weights.copy_from_slice(&src.weights);
            dst.bias.copy_from_slice(&src.bias);
        }
        self.staleness = 0;
        Ok(())
    }

    pub(crate) fn from_parts(net: QNetwork, staleness: usize) -> Self {
        Self { net, staleness }
    }
}

/// Spec-style free function: copy `net` into `target`.
pub fn sync_target(net: &QNetwork, target: &mut TargetNetwork) -> Result<()> {
    target.sync(net)
}
