//! Hand-rolled dueling Q-network in plain `f64`.
//!
//! The net is a ReLU trunk that splits into two linear-output streams: a
//! scalar state value V(s) and one advantage A(s,a) per action. They are
//! combined as
//!
//! ```text
//! Q(s,a) = V(s) + A(s,a) - mean_a' A(s,a')
//! ```
//!
//! so the advantage stream only ever encodes *relative* preferences and the
//! mean of the Q-values equals V(s). Gradients are derived by hand and
//! verified against central finite differences in the test suite.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::ACTION_COUNT;
use crate::{Error, Result};

/// Layer widths: trunk layers shared by both streams, then the hidden
/// layers of each stream (the two streams are symmetric). Either list may be
/// empty; the output layers are always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub trunk_sizes: Vec<usize>,
    pub stream_sizes: Vec<usize>,
}

impl Default for LayerSpec {
    fn default() -> Self {
        LayerSpec {
            trunk_sizes: vec![64, 64],
            stream_sizes: vec![32],
        }
    }
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_sizes.contains(&0) || self.stream_sizes.contains(&0) {
            return Err(Error::InvalidConfig(
                "layer sizes must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One dense layer. Weights are row-major: `weights[o * in_dim + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Linear {
    fn zeroed(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let mut layer = Linear::zeroed(in_dim, out_dim);
        for w in &mut layer.weights {
            *w = rng.gen_range(-scale..scale);
        }
        layer
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut z = self.biases[o];
            for (w, v) in row.iter().zip(x) {
                z += w * v;
            }
            out.push(z);
        }
    }

    /// Accumulate weight/bias gradients for upstream `dz` at input `x`, and
    /// write the gradient with respect to `x` into `dx`.
    fn backward(&self, x: &[f64], dz: &[f64], grad: &mut Linear, dx: &mut [f64]) {
        dx.fill(0.0);
        for (o, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.biases[o] += g;
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += row[i] * g;
            }
        }
    }
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Mask `dx` by the ReLU derivative, reading the post-activation values.
/// A post-activation of exactly zero gets derivative zero.
fn relu_backward(dx: &mut [f64], post: &[f64]) {
    for (d, &a) in dx.iter_mut().zip(post) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
}

/// All parameters of a dueling Q-network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    input_dim: usize,
    spec: LayerSpec,
    trunk: Vec<Linear>,
    value_hidden: Vec<Linear>,
    value_out: Linear,
    advantage_hidden: Vec<Linear>,
    advantage_out: Linear,
}

/// Gradient (or momentum velocity) with the same shape as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Linear>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            layers: params
                .layers()
                .iter()
                .map(|l| Linear::zeroed(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    /// `self = momentum * self + fresh`, the classic velocity update.
    pub fn blend(&mut self, momentum: f64, fresh: &Gradients) {
        for (v, g) in self.layers.iter_mut().zip(&fresh.layers) {
            for (a, b) in v.weights.iter_mut().zip(&g.weights) {
                *a = momentum * *a + b;
            }
            for (a, b) in v.biases.iter_mut().zip(&g.biases) {
                *a = momentum * *a + b;
            }
        }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }
}

/// Create a network with weights drawn uniformly from ±1/√fan_in and zero
/// biases. The same seed always produces bit-identical parameters.
pub fn init(spec: &LayerSpec, input_dim: usize, seed: u64) -> Result<NetworkParams> {
    spec.validate()?;
    if input_dim == 0 {
        return Err(Error::InvalidConfig(
            "input dimension must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trunk = Vec::new();
    let mut width = input_dim;
    for &n in &spec.trunk_sizes {
        trunk.push(Linear::init(width, n, &mut rng));
        width = n;
    }
    let trunk_out = width;

    let mut value_hidden = Vec::new();
    let mut vw = trunk_out;
    for &n in &spec.stream_sizes {
        value_hidden.push(Linear::init(vw, n, &mut rng));
        vw = n;
    }
    let value_out = Linear::init(vw, 1, &mut rng);

    let mut advantage_hidden = Vec::new();
    let mut aw = trunk_out;
    for &n in &spec.stream_sizes {
        advantage_hidden.push(Linear::init(aw, n, &mut rng));
        aw = n;
    }
    let advantage_out = Linear::init(aw, ACTION_COUNT, &mut rng);

    Ok(NetworkParams {
        input_dim,
        spec: spec.clone(),
        trunk,
        value_hidden,
        value_out,
        advantage_hidden,
        advantage_out,
    })
}

/// Forward-pass intermediates kept for backpropagation.
struct Trace {
    /// Post-ReLU activations; index 0 is the raw input.
    trunk: Vec<Vec<f64>>,
    value: Vec<Vec<f64>>,
    advantage: Vec<Vec<f64>>,
    v: f64,
    advantages: [f64; ACTION_COUNT],
    q: [f64; ACTION_COUNT],
}

impl NetworkParams {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    /// All layers in a fixed order: trunk, value hidden, value out,
    /// advantage hidden, advantage out. Gradients use the same order.
    pub fn layers(&self) -> Vec<&Linear> {
        let mut out: Vec<&Linear> = self.trunk.iter().collect();
        out.extend(self.value_hidden.iter());
        out.push(&self.value_out);
        out.extend(self.advantage_hidden.iter());
        out.push(&self.advantage_out);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Linear> {
        let mut out: Vec<&mut Linear> = self.trunk.iter_mut().collect();
        out.extend(self.value_hidden.iter_mut());
        out.push(&mut self.value_out);
        out.extend(self.advantage_hidden.iter_mut());
        out.push(&mut self.advantage_out);
        out
    }

    /// Names matching [`layers`], used in checkpoints.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.trunk.len() {
            names.push(format!("trunk.{i}"));
        }
        for i in 0..self.value_hidden.len() {
            names.push(format!("value.{i}"));
        }
        names.push("value_out".into());
        for i in 0..self.advantage_hidden.len() {
            names.push(format!("advantage.{i}"));
        }
        names.push("advantage_out".into());
        names
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Flat parameter access (weights then biases per layer, layer order as
    /// in [`layers`]). Used by the finite-difference tests and nothing hot.
    pub fn get_param(&self, mut index: usize) -> f64 {
        for layer in self.layers() {
            if index < layer.weights.len() {
                return layer.weights[index];
            }
            index -= layer.weights.len();
            if index < layer.biases.len() {
                return layer.biases[index];
            }
            index -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for layer in self.layers_mut() {
            if index < layer.weights.len() {
                layer.weights[index] = value;
                return;
            }
            index -= layer.weights.len();
            if index < layer.biases.len() {
                layer.biases[index] = value;
                return;
            }
            index -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.layers().iter().all(|l| {
            l.weights.iter().all(|w| w.is_finite()) && l.biases.iter().all(|b| b.is_finite())
        })
    }

    fn check_input(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim,
                got: obs.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, obs: &[f64]) -> Trace {
        let mut trunk = Vec::with_capacity(self.trunk.len() + 1);
        trunk.push(obs.to_vec());
        for layer in &self.trunk {
            let mut next = Vec::new();
            layer.forward(trunk.last().unwrap(), &mut next);
            relu_inplace(&mut next);
            trunk.push(next);
        }
        let trunk_out = trunk.last().unwrap().clone();

        let mut value = vec![trunk_out.clone()];
        for layer in &self.value_hidden {
            let mut next = Vec::new();
            layer.forward(value.last().unwrap(), &mut next);
            relu_inplace(&mut next);
            value.push(next);
        }
        let mut v_out = Vec::new();
        self.value_out.forward(value.last().unwrap(), &mut v_out);
        let v = v_out[0];

        let mut advantage = vec![trunk_out];
        for layer in &self.advantage_hidden {
            let mut next = Vec::new();
            layer.forward(advantage.last().unwrap(), &mut next);
            relu_inplace(&mut next);
            advantage.push(next);
        }
        let mut a_out = Vec::new();
        self.advantage_out
            .forward(advantage.last().unwrap(), &mut a_out);
        let advantages: [f64; ACTION_COUNT] = [a_out[0], a_out[1], a_out[2]];

        let mean = (advantages[0] + advantages[1] + advantages[2]) / ACTION_COUNT as f64;
        let mut q = [0.0; ACTION_COUNT];
        for a in 0..ACTION_COUNT {
            q[a] = v + advantages[a] - mean;
        }
        Trace {
            trunk,
            value,
            advantage,
            v,
            advantages,
            q,
        }
    }

    /// Q-values for one observation.
    pub fn forward(&self, obs: &[f64]) -> Result<[f64; ACTION_COUNT]> {
        self.check_input(obs)?;
        Ok(self.trace(obs).q)
    }

    /// The dueling decomposition for one observation: (V, advantages).
    pub fn value_and_advantages(&self, obs: &[f64]) -> Result<(f64, [f64; ACTION_COUNT])> {
        self.check_input(obs)?;
        let t = self.trace(obs);
        Ok((t.v, t.advantages))
    }

    /// Gradient step: `params <- params - learning_rate * gradients`.
    pub fn apply_update(&mut self, gradients: &Gradients, learning_rate: f64) {
        for (layer, grad) in self.layers_mut().into_iter().zip(&gradients.layers) {
            for (w, g) in layer.weights.iter_mut().zip(&grad.weights) {
                *w -= learning_rate * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(&grad.biases) {
                *b -= learning_rate * g;
            }
        }
    }
}

fn check_batch(
    params: &NetworkParams,
    observations: &[Vec<f64>],
    actions: &[usize],
    targets: &[f64],
    weights: &[f64],
) -> Result<()> {
    let n = observations.len();
    if n == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if actions.len() != n || targets.len() != n || weights.len() != n {
        return Err(Error::InvalidConfig(format!(
            "batch arrays disagree: {} observations, {} actions, {} targets, {} weights",
            n,
            actions.len(),
            targets.len(),
            weights.len()
        )));
    }
    if let Some(&a) = actions.iter().find(|&&a| a >= ACTION_COUNT) {
        return Err(Error::InvalidConfig(format!(
            "action index {a} out of range 0..{ACTION_COUNT}"
        )));
    }
    for obs in observations {
        params.check_input(obs)?;
    }
    Ok(())
}

/// Weighted half-mean-squared TD loss:
/// `L = 1/(2n) * sum_i w_i (target_i - Q(s_i, a_i))^2`.
///
/// Only the Q-value of each sample's taken action enters the loss.
pub fn loss(
    params: &NetworkParams,
    observations: &[Vec<f64>],
    actions: &[usize],
    targets: &[f64],
    weights: &[f64],
) -> Result<f64> {
    check_batch(params, observations, actions, targets, weights)?;
    let n = observations.len() as f64;
    let mut total = 0.0;
    for i in 0..observations.len() {
        let q = params.forward(&observations[i])?;
        let d = targets[i] - q[actions[i]];
        total += weights[i] * d * d;
    }
    Ok(total / (2.0 * n))
}

/// Analytic gradient of [`loss`]. Returns the loss value and per-sample TD
/// errors `target - Q(s,a)` alongside the gradients, since every caller
/// wants them for priority updates.
pub fn backward(
    params: &NetworkParams,
    observations: &[Vec<f64>],
    actions: &[usize],
    targets: &[f64],
    weights: &[f64],
) -> Result<(f64, Gradients, Vec<f64>)> {
    check_batch(params, observations, actions, targets, weights)?;
    let n = observations.len() as f64;
    let mut grads = Gradients::zeros_like(params);
    let (trunk_len, value_len) = (params.trunk.len(), params.value_hidden.len());
    let mut total = 0.0;
    let mut td_errors = Vec::with_capacity(observations.len());

    for i in 0..observations.len() {
        let trace = params.trace(&observations[i]);
        let a = actions[i];
        let d = targets[i] - trace.q[a];
        td_errors.push(d);
        total += weights[i] * d * d;

        // dL/dQ(s,a) for the taken action only.
        let gq = -(weights[i] * d) / n;

        // Through the aggregation: Q_a = V + A_a - mean(A).
        let gv = gq;
        let mut ga = [0.0; ACTION_COUNT];
        for (j, slot) in ga.iter_mut().enumerate() {
            let indicator = if j == a { 1.0 } else { 0.0 };
            *slot = gq * (indicator - 1.0 / ACTION_COUNT as f64);
        }

        let mut trunk_dx = vec![0.0; trace.trunk.last().unwrap().len()];

        // Value stream, output layer first.
        {
            let grad = &mut grads.layers[trunk_len + value_len];
            let x = trace.value.last().unwrap();
            let mut dx = vec![0.0; x.len()];
            params.value_out.backward(x, &[gv], grad, &mut dx);
            for k in (0..params.value_hidden.len()).rev() {
                relu_backward(&mut dx, &trace.value[k + 1]);
                let x = &trace.value[k];
                let mut dprev = vec![0.0; x.len()];
                params.value_hidden[k].backward(
                    x,
                    &dx,
                    &mut grads.layers[trunk_len + k],
                    &mut dprev,
                );
                dx = dprev;
            }
            for (t, d) in trunk_dx.iter_mut().zip(&dx) {
                *t += d;
            }
        }

        // Advantage stream.
        {
            let adv_out_idx = trunk_len + value_len + 1 + params.advantage_hidden.len();
            let x = trace.advantage.last().unwrap();
            let mut dx = vec![0.0; x.len()];
            params
                .advantage_out
                .backward(x, &ga, &mut grads.layers[adv_out_idx], &mut dx);
            for k in (0..params.advantage_hidden.len()).rev() {
                relu_backward(&mut dx, &trace.advantage[k + 1]);
                let x = &trace.advantage[k];
                let mut dprev = vec![0.0; x.len()];
                params.advantage_hidden[k].backward(
                    x,
                    &dx,
                    &mut grads.layers[trunk_len + value_len + 1 + k],
                    &mut dprev,
                );
                dx = dprev;
            }
            for (t, d) in trunk_dx.iter_mut().zip(&dx) {
                *t += d;
            }
        }

        // Trunk, shared by both streams.
        let mut dx = trunk_dx;
        for k in (0..params.trunk.len()).rev() {
            relu_backward(&mut dx, &trace.trunk[k + 1]);
            let x = &trace.trunk[k];
            let mut dprev = vec![0.0; x.len()];
            params.trunk[k].backward(x, &dx, &mut grads.layers[k], &mut dprev);
            dx = dprev;
        }
    }

    Ok((total / (2.0 * n), grads, td_errors))
}

const CHECKPOINT_FORMAT: &str = "storage-dqn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ArrayRecord {
    name: String,
    rows: usize,
    cols: usize,
    /// Raw IEEE-754 bit patterns, row-major, so round trips are bit-exact.
    weight_bits: Vec<u64>,
    bias_bits: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    seed: u64,
    input_dim: usize,
    trunk_sizes: Vec<usize>,
    stream_sizes: Vec<usize>,
    arrays: Vec<ArrayRecord>,
}

/// Serialize parameters (plus the run seed, for provenance) to a textual
/// checkpoint that round-trips bit-exactly.
pub fn save_checkpoint(params: &NetworkParams, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let arrays = params
        .layers()
        .iter()
        .zip(params.layer_names())
        .map(|(layer, name)| ArrayRecord {
            name,
            rows: layer.out_dim,
            cols: layer.in_dim,
            weight_bits: layer.weights.iter().map(|w| w.to_bits()).collect(),
            bias_bits: layer.biases.iter().map(|b| b.to_bits()).collect(),
        })
        .collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        seed,
        input_dim: params.input_dim,
        trunk_sizes: params.spec.trunk_sizes.clone(),
        stream_sizes: params.spec.stream_sizes.clone(),
        arrays,
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::Internal(format!("checkpoint serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NetworkParams, u64)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| {
        Error::InvalidConfig(format!("{}: not a valid checkpoint: {e}", path.display()))
    })?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::InvalidConfig(format!(
            "{}: unexpected format '{}'",
            path.display(),
            file.format
        )));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "{}: unsupported checkpoint version {} (this build reads {})",
            path.display(),
            file.version,
            CHECKPOINT_VERSION
        )));
    }
    let spec = LayerSpec {
        trunk_sizes: file.trunk_sizes,
        stream_sizes: file.stream_sizes,
    };
    let mut params = init(&spec, file.input_dim, 0)?;
    let names = params.layer_names();
    if file.arrays.len() != names.len() {
        return Err(Error::InvalidConfig(format!(
            "{}: expected {} parameter arrays, found {}",
            path.display(),
            names.len(),
            file.arrays.len()
        )));
    }
    for ((layer, name), record) in params.layers_mut().into_iter().zip(names).zip(&file.arrays) {
        let shape_ok = record.name == name
            && record.rows == layer.out_dim
            && record.cols == layer.in_dim
            && record.weight_bits.len() == layer.weights.len()
            && record.bias_bits.len() == layer.biases.len();
        if !shape_ok {
            return Err(Error::InvalidConfig(format!(
                "{}: array '{}' does not match layer '{}' ({}x{})",
                path.display(),
                record.name,
                name,
                layer.out_dim,
                layer.in_dim
            )));
        }
        for (w, bits) in layer.weights.iter_mut().zip(&record.weight_bits) {
            *w = f64::from_bits(*bits);
        }
        for (b, bits) in layer.biases.iter_mut().zip(&record.bias_bits) {
            *b = f64::from_bits(*bits);
        }
    }
    Ok((params, file.seed))
}
