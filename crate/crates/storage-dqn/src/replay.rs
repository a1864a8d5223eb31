//! Prioritized experience replay backed by a sum tree.
//!
//! Transitions are sampled with probability proportional to priority^alpha,
//! where priority is |TD error| + a small floor so nothing starves. The
//! importance-sampling weights `(N * P(i))^-beta` undo the induced bias;
//! beta is annealed toward 1 by the trainer. Parents in the tree are
//! recomputed as `left + right` on every update rather than nudged by a
//! delta, so the root is always the exact pairwise sum of the leaves.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::environment::Action;
use crate::{Error, Result};

/// One stored transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub observation: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub done: bool,
}

/// Binary indexed tree over leaf priorities, padded to a power of two.
/// `find` descends toward the leaf whose prefix-sum interval contains a
/// probability mass.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaf_base: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaf_base = capacity.next_power_of_two().max(1);
        SumTree {
            leaf_base,
            nodes: vec![0.0; 2 * leaf_base],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn leaf(&self, index: usize) -> f64 {
        self.nodes[self.leaf_base + index]
    }

    /// Set a leaf and recompute the path to the root.
    pub fn set(&mut self, index: usize, value: f64) {
        let mut node = self.leaf_base + index;
        self.nodes[node] = value;
        node /= 2;
        while node >= 1 {
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
            node /= 2;
        }
    }

    /// Leaf whose cumulative interval contains `mass` (0 <= mass < total).
    pub fn find(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.leaf_base {
            let left = 2 * node;
            if mass < self.nodes[left] {
                node = left;
            } else {
                mass -= self.nodes[left];
                node = left + 1;
            }
        }
        node - self.leaf_base
    }
}

/// Sampling knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct PerConfig {
    /// Priority exponent; 0 makes sampling uniform.
    pub alpha: f64,
    /// Initial importance-sampling exponent.
    pub beta: f64,
    /// Floor added to |TD error| so every transition stays sampleable.
    pub priority_epsilon: f64,
    /// Sample one draw per equal slice of the total mass instead of
    /// independent draws; lower variance, same expectation.
    pub stratified: bool,
}

impl Default for PerConfig {
    fn default() -> Self {
        PerConfig {
            alpha: 0.6,
            beta: 0.4,
            priority_epsilon: 1e-3,
            stratified: true,
        }
    }
}

/// A batch drawn from the buffer. Indices are buffer slots, valid until the
/// slot is overwritten; hand them straight back to `update_priorities`.
#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    pub experiences: Vec<Experience>,
    pub is_weights: Vec<f64>,
}

/// Fixed-capacity ring of experiences with proportional prioritized
/// sampling.
#[derive(Debug, Clone)]
pub struct PerBuffer {
    config: PerConfig,
    capacity: usize,
    entries: Vec<Experience>,
    tree: SumTree,
    next_slot: usize,
    max_priority: f64,
}

impl PerBuffer {
    pub fn new(capacity: usize, config: PerConfig) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig(
                "replay capacity must be positive".into(),
            ));
        }
        if config.alpha < 0.0
            || config.priority_epsilon <= 0.0
            || !(0.0..=1.0).contains(&config.beta)
        {
            return Err(Error::InvalidConfig(format!(
                "replay config out of range: alpha {} (>= 0), beta {} (0..=1), priority floor {} (> 0)",
                config.alpha, config.beta, config.priority_epsilon
            )));
        }
        Ok(PerBuffer {
            config,
            capacity,
            entries: Vec::with_capacity(capacity),
            tree: SumTree::new(capacity),
            next_slot: 0,
            max_priority: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn config(&self) -> &PerConfig {
        &self.config
    }

    /// Largest raw priority ever assigned; new experiences enter with it.
    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    /// The trainer anneals beta toward 1 over the course of training.
    pub fn set_beta(&mut self, beta: f64) {
        self.config.beta = beta.clamp(0.0, 1.0);
    }

    /// Priority^alpha as stored in the tree, for inspection.
    pub fn scaled_priority(&self, slot: usize) -> f64 {
        self.tree.leaf(slot)
    }

    /// Insert a transition, evicting the oldest once full.
    pub fn push(&mut self, experience: Experience) {
        let slot = self.next_slot;
        if self.entries.len() < self.capacity {
            self.entries.push(experience);
        } else {
            self.entries[slot] = experience;
        }
        let scaled = self.max_priority.powf(self.config.alpha);
        self.tree.set(slot, scaled);
        self.next_slot = (slot + 1) % self.capacity;
    }

    /// Draw a batch. Errors when fewer than `batch_size` transitions are
    /// stored; the trainer treats that as "skip this update".
    pub fn sample(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<SampledBatch> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if self.entries.len() < batch_size {
            return Err(Error::InvalidConfig(format!(
                "replay holds {} transition(s); cannot sample a batch of {batch_size}",
                self.entries.len()
            )));
        }
        let total = self.tree.total();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::Internal(format!(
                "sum tree total {total} is not positive despite {} entries",
                self.entries.len()
            )));
        }

        let n = self.entries.len() as f64;
        let mut indices = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        for k in 0..batch_size {
            let mass = if self.config.stratified {
                let lo = total * k as f64 / batch_size as f64;
                let hi = total * (k + 1) as f64 / batch_size as f64;
                rng.gen_range(lo..hi)
            } else {
                rng.gen_range(0.0..total)
            };
            // Guard against landing on a padding leaf through rounding.
            let slot = self.tree.find(mass).min(self.entries.len() - 1);
            let probability = self.tree.leaf(slot) / total;
            weights.push((n * probability).powf(-self.config.beta));
            indices.push(slot);
        }
        let max_w = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for w in &mut weights {
            *w /= max_w;
        }
        let experiences = indices.iter().map(|&i| self.entries[i].clone()).collect();
        Ok(SampledBatch {
            indices,
            experiences,
            is_weights: weights,
        })
    }

    /// Refresh priorities after a training step: priority = |TD error| +
    /// floor. Also raises the max-priority watermark used for new pushes.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        if indices.len() != td_errors.len() {
            return Err(Error::InvalidConfig(format!(
                "{} indices but {} TD errors",
                indices.len(),
                td_errors.len()
            )));
        }
        for (&slot, &delta) in indices.iter().zip(td_errors) {
            if slot >= self.entries.len() {
                return Err(Error::InvalidConfig(format!(
                    "replay slot {slot} out of range 0..{}",
                    self.entries.len()
                )));
            }
            let priority = delta.abs() + self.config.priority_epsilon;
            self.tree.set(slot, priority.powf(self.config.alpha));
            if priority > self.max_priority {
                self.max_priority = priority;
            }
        }
        Ok(())
    }
}
