//! Training loop: epsilon-greedy control, double-DQN targets against a
//! periodically synced target network, prioritized replay updates, and
//! checkpointing. A tabular Q-learner is included as the desk-scale
//! baseline for sanity checks on tiny discretized problems.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{LoadProfile, HOURS_PER_DAY};
use crate::environment::{baseline_cost, Action, EnvConfig, Environment, ACTION_COUNT};
use crate::network::{self, Gradients, LayerSpec, NetworkParams};
use crate::replay::{Experience, PerBuffer, PerConfig};
use crate::{Error, Result};

/// Everything the trainer needs besides the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub layers: LayerSpec,
    pub replay: PerConfig,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Discount factor applied to bootstrapped next-state values.
    pub gamma: f64,
    pub learning_rate: f64,
    /// Heavy-ball momentum on the gradient updates; 0 is plain SGD.
    pub momentum: f64,
    pub epsilon_initial: f64,
    pub epsilon_final: f64,
    /// Steps over which exploration decays linearly; `None` means 80% of
    /// the planned environment steps.
    pub epsilon_decay_steps: Option<usize>,
    /// Anneal the importance-sampling exponent from its configured start to
    /// 1 over the planned steps.
    pub anneal_beta: bool,
    /// Copy online weights into the target network every this many episodes.
    pub target_update_every: usize,
    pub epochs: usize,
    /// Train each epoch on a sliding window of this many days when the
    /// dataset is longer; `None` uses every day every epoch.
    pub history_days: Option<usize>,
    /// Minimum stored transitions before gradient updates begin.
    pub warmup_transitions: usize,
    /// Gradient updates performed per environment step once warm.
    pub updates_per_step: usize,
    /// Snapshot the online network every this many epochs.
    pub checkpoint_every: usize,
    /// Choose the bootstrap action with the online network (double DQN)
    /// instead of maximizing the target network directly.
    pub double_dqn: bool,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            layers: LayerSpec::default(),
            replay: PerConfig::default(),
            replay_capacity: 10240,
            batch_size: 32,
            gamma: 0.96,
            learning_rate: 0.00025,
            momentum: 0.0,
            epsilon_initial: 1.0,
            epsilon_final: 0.1,
            epsilon_decay_steps: None,
            anneal_beta: true,
            target_update_every: 5,
            epochs: 500,
            history_days: Some(15),
            warmup_transitions: 1024,
            updates_per_step: 1,
            checkpoint_every: 10,
            double_dqn: true,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.layers.validate()?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "discount {} must lie in (0, 1)",
                self.gamma
            )));
        }
        if !(0.0 <= self.epsilon_final
            && self.epsilon_final <= self.epsilon_initial
            && self.epsilon_initial <= 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "exploration must satisfy 0 <= final {} <= initial {} <= 1",
                self.epsilon_final, self.epsilon_initial
            )));
        }
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return Err(Error::InvalidConfig(format!(
                "batch size {} must be in 1..={}",
                self.batch_size, self.replay_capacity
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if self.target_update_every == 0 {
            return Err(Error::InvalidConfig(
                "target sync cadence must be at least 1 episode".into(),
            ));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig(
                "checkpoint cadence must be at least 1 epoch".into(),
            ));
        }
        if self.history_days == Some(0) {
            return Err(Error::InvalidConfig(
                "history window must cover at least 1 day".into(),
            ));
        }
        if self.updates_per_step == 0 {
            return Err(Error::InvalidConfig(
                "updates per step must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub total_reward: f64,
    pub cost: f64,
    pub savings_pct: f64,
    pub mean_loss: f64,
    pub epsilon: f64,
}

/// Snapshot of the online network after `epoch` completed epochs.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: NetworkParams,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: NetworkParams,
    pub checkpoints: Vec<Checkpoint>,
    pub records: Vec<TrainRecord>,
}

fn argmax_first(q: &[f64; ACTION_COUNT]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// The action with the highest Q estimate; ties go to the lowest index.
pub fn greedy_action(params: &NetworkParams, observation: &[f64]) -> Result<Action> {
    let q = params.forward(observation)?;
    Action::from_index(argmax_first(&q))
}

/// Epsilon-greedy action choice.
pub fn select_action(
    params: &NetworkParams,
    observation: &[f64],
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Action> {
    if rng.gen::<f64>() < epsilon {
        Action::from_index(rng.gen_range(0..ACTION_COUNT))
    } else {
        greedy_action(params, observation)
    }
}

/// Linear exploration schedule: `epsilon_initial` at step 0 down to
/// `epsilon_final` at `decay_steps`, constant afterwards.
pub fn epsilon_at(
    epsilon_initial: f64,
    epsilon_final: f64,
    decay_steps: usize,
    step: usize,
) -> f64 {
    if decay_steps == 0 || step >= decay_steps {
        return epsilon_final;
    }
    let fraction = step as f64 / decay_steps as f64;
    epsilon_initial + (epsilon_final - epsilon_initial) * fraction
}

/// Bootstrapped regression target for one transition. Terminal transitions
/// return the raw reward. With `double` the online network picks the next
/// action and the target network prices it, which damps the upward bias of
/// maximizing a single noisy estimate.
pub fn td_target(
    target: &NetworkParams,
    online: &NetworkParams,
    experience: &Experience,
    gamma: f64,
    double: bool,
) -> Result<f64> {
    if experience.done {
        return Ok(experience.reward);
    }
    let target_q = target.forward(&experience.next_observation)?;
    let bootstrap = if double {
        let online_q = online.forward(&experience.next_observation)?;
        target_q[argmax_first(&online_q)]
    } else {
        target_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(experience.reward + gamma * bootstrap)
}

struct Trainer<'a> {
    cfg: &'a AgentConfig,
    env: Environment,
    online: NetworkParams,
    target: NetworkParams,
    velocity: Gradients,
    buffer: PerBuffer,
    rng: ChaCha8Rng,
    global_step: usize,
    planned_steps: usize,
    decay_steps: usize,
    episodes_done: usize,
}

impl<'a> Trainer<'a> {
    fn new(initial: NetworkParams, env: Environment, cfg: &'a AgentConfig) -> Result<Self> {
        cfg.validate()?;
        env.config().validate()?;
        if initial.input_dim() != env.config().observation_len() {
            return Err(Error::ShapeMismatch {
                expected: env.config().observation_len(),
                got: initial.input_dim(),
            });
        }
        let train_days = env.profile().day_count();
        let window_len = cfg.history_days.map_or(train_days, |h| h.min(train_days));
        let planned_steps = cfg.epochs * window_len * HOURS_PER_DAY;
        let decay_steps = cfg
            .epsilon_decay_steps
            .unwrap_or((planned_steps as f64 * 0.8).round() as usize)
            .max(1);
        let buffer = PerBuffer::new(cfg.replay_capacity, cfg.replay.clone())?;
        // Distinct stream from the weight-init seed so exploration draws do
        // not mirror initialization.
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
        let velocity = Gradients::zeros_like(&initial);
        let target = initial.clone();
        Ok(Trainer {
            cfg,
            env,
            online: initial,
            target,
            velocity,
            buffer,
            rng,
            global_step: 0,
            planned_steps,
            decay_steps,
            episodes_done: 0,
        })
    }

    fn window_len(&self) -> usize {
        let train_days = self.env.profile().day_count();
        self.cfg
            .history_days
            .map_or(train_days, |h| h.min(train_days))
    }

    /// First day of the sliding training window for an epoch.
    fn window_start(&self, epoch: usize) -> usize {
        let train_days = self.env.profile().day_count();
        let windows = train_days - self.window_len() + 1;
        epoch % windows
    }

    /// One prioritized minibatch update; `None` while the buffer is warming
    /// up.
    fn gradient_step(&mut self) -> Result<Option<f64>> {
        let needed = self.cfg.batch_size.max(self.cfg.warmup_transitions);
        if self.buffer.len() < needed {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.rng)?;
        let mut observations = Vec::with_capacity(batch.experiences.len());
        let mut actions = Vec::with_capacity(batch.experiences.len());
        let mut targets = Vec::with_capacity(batch.experiences.len());
        for experience in &batch.experiences {
            targets.push(td_target(
                &self.target,
                &self.online,
                experience,
                self.cfg.gamma,
                self.cfg.double_dqn,
            )?);
            observations.push(experience.observation.clone());
            actions.push(experience.action.index());
        }
        let (loss, fresh, td_errors) = network::backward(
            &self.online,
            &observations,
            &actions,
            &targets,
            &batch.is_weights,
        )?;
        if self.cfg.momentum > 0.0 {
            self.velocity.blend(self.cfg.momentum, &fresh);
            let velocity = self.velocity.clone();
            self.online.apply_update(&velocity, self.cfg.learning_rate);
        } else {
            self.online.apply_update(&fresh, self.cfg.learning_rate);
        }
        self.buffer.update_priorities(&batch.indices, &td_errors)?;
        Ok(Some(loss))
    }

    fn run_episode(&mut self, day: usize) -> Result<(f64, f64, usize)> {
        let mut observation = self.env.reset(day)?;
        let mut reward_sum = 0.0;
        let mut loss_sum = 0.0;
        let mut loss_count = 0;
        loop {
            let epsilon = epsilon_at(
                self.cfg.epsilon_initial,
                self.cfg.epsilon_final,
                self.decay_steps,
                self.global_step,
            );
            let action = select_action(&self.online, &observation, epsilon, &mut self.rng)?;
            let outcome = self.env.step(action)?;
            reward_sum += outcome.reward;
            self.buffer.push(Experience {
                observation,
                action,
                reward: outcome.reward,
                next_observation: outcome.next_observation.clone(),
                done: outcome.done,
            });
            observation = outcome.next_observation;
            self.global_step += 1;
            if self.cfg.anneal_beta {
                let beta0 = self.cfg.replay.beta;
                let fraction =
                    (self.global_step as f64 / self.planned_steps.max(1) as f64).min(1.0);
                self.buffer.set_beta(beta0 + (1.0 - beta0) * fraction);
            }
            for _ in 0..self.cfg.updates_per_step {
                if let Some(loss) = self.gradient_step()? {
                    loss_sum += loss;
                    loss_count += 1;
                }
            }
            if outcome.done {
                break;
            }
        }
        self.episodes_done += 1;
        if self
            .episodes_done
            .is_multiple_of(self.cfg.target_update_every)
        {
            self.target = self.online.clone();
        }
        Ok((reward_sum, loss_sum, loss_count))
    }

    fn run(mut self) -> Result<TrainOutput> {
        let day_baselines: Vec<f64> = {
            let cfg = self.env.config();
            let profile = self.env.profile();
            (0..profile.day_count())
                .map(|d| baseline_cost(profile.day(d)?, &cfg.tariff, &cfg.dr))
                .collect::<Result<_>>()?
        };

        let mut checkpoints = vec![Checkpoint {
            epoch: 0,
            params: self.online.clone(),
        }];
        let mut records = Vec::with_capacity(self.cfg.epochs);

        for epoch in 0..self.cfg.epochs {
            let start = self.window_start(epoch);
            let mut reward_sum = 0.0;
            let mut loss_sum = 0.0;
            let mut loss_count = 0;
            let baseline_sum: f64 = day_baselines[start..start + self.window_len()].iter().sum();
            for day in start..start + self.window_len() {
                let (reward, losses, count) = self.run_episode(day)?;
                reward_sum += reward;
                loss_sum += losses;
                loss_count += count;
            }
            if !self.online.all_finite() {
                return Err(Error::Internal(format!(
                    "training diverged: non-finite parameters after epoch {}",
                    epoch + 1
                )));
            }
            let cost = -reward_sum;
            let completed = epoch + 1;
            records.push(TrainRecord {
                epoch: completed,
                total_reward: reward_sum,
                cost,
                savings_pct: crate::environment::cost_saving(cost, baseline_sum).unwrap_or(0.0),
                mean_loss: if loss_count > 0 {
                    loss_sum / loss_count as f64
                } else {
                    0.0
                },
                epsilon: epsilon_at(
                    self.cfg.epsilon_initial,
                    self.cfg.epsilon_final,
                    self.decay_steps,
                    self.global_step,
                ),
            });
            if completed % self.cfg.checkpoint_every == 0 {
                checkpoints.push(Checkpoint {
                    epoch: completed,
                    params: self.online.clone(),
                });
            }
        }
        if self.cfg.epochs > 0 && !self.cfg.epochs.is_multiple_of(self.cfg.checkpoint_every) {
            checkpoints.push(Checkpoint {
                epoch: self.cfg.epochs,
                params: self.online.clone(),
            });
        }
        Ok(TrainOutput {
            params: self.online,
            checkpoints,
            records,
        })
    }
}

/// Train a fresh network on the profile's days. Fully deterministic given
/// the seed: same config and data give bit-identical checkpoints.
pub fn train(env_cfg: &EnvConfig, profile: &LoadProfile, cfg: &AgentConfig) -> Result<TrainOutput> {
    let initial = network::init(&cfg.layers, env_cfg.observation_len(), cfg.seed)?;
    let env = Environment::new(env_cfg.clone(), profile.clone())?;
    Trainer::new(initial, env, cfg)?.run()
}

/// Continue training from existing weights, e.g. to adapt a tariff-trained
/// policy to demand-response penalties. The base network must have been
/// trained on observations of the same length.
pub fn fine_tune(
    base: &NetworkParams,
    env_cfg: &EnvConfig,
    profile: &LoadProfile,
    cfg: &AgentConfig,
) -> Result<TrainOutput> {
    let env = Environment::new(env_cfg.clone(), profile.clone())?;
    Trainer::new(base.clone(), env, cfg)?.run()
}

/// Action-value table over a small discrete state space.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    states: usize,
    values: Vec<f64>,
}

impl TabularQ {
    pub fn new(states: usize) -> Self {
        TabularQ {
            states,
            values: vec![0.0; states * ACTION_COUNT],
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn value(&self, state: usize, action: usize) -> f64 {
        self.values[state * ACTION_COUNT + action]
    }

    pub fn set_value(&mut self, state: usize, action: usize, value: f64) {
        self.values[state * ACTION_COUNT + action] = value;
    }

    /// Highest action value in a state.
    pub fn best_value(&self, state: usize) -> f64 {
        let row = &self.values[state * ACTION_COUNT..(state + 1) * ACTION_COUNT];
        row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action; ties go to the lowest index, matching
    /// [`select_action`].
    pub fn greedy_action(&self, state: usize) -> usize {
        let mut q = [0.0; ACTION_COUNT];
        for (a, slot) in q.iter_mut().enumerate() {
            *slot = self.value(state, a);
        }
        argmax_first(&q)
    }
}

/// One Q-learning backup: `Q(s,a) <- (1-alpha) Q(s,a) + alpha (r + gamma
/// max_a' Q(s',a'))`. Terminal transitions pass `None` and skip the
/// bootstrap.
pub fn tabular_q_update(
    q: &mut TabularQ,
    state: usize,
    action: usize,
    reward: f64,
    next_state: Option<usize>,
    alpha: f64,
    gamma: f64,
) {
    let bootstrap = next_state.map_or(0.0, |s| q.best_value(s));
    let target = reward + gamma * bootstrap;
    let old = q.value(state, action);
    q.set_value(state, action, (1.0 - alpha) * old + alpha * target);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{BatteryConfig, DemandResponseConfig};
    use crate::tariff::builtin_schedule;
    use approx::assert_relative_eq;

    fn forced_params(q: [f64; ACTION_COUNT]) -> NetworkParams {
        let spec = LayerSpec {
            trunk_sizes: vec![],
            stream_sizes: vec![],
        };
        let mut params = network::init(&spec, 4, 0).unwrap();
        let mean = (q[0] + q[1] + q[2]) / 3.0;
        // With no hidden layers the layer order is value output, then
        // advantage output. Zero weights make the input irrelevant; biases
        // set V and the advantages directly.
        let mut layers = params.layers_mut();
        for layer in layers.iter_mut() {
            for w in &mut layer.weights {
                *w = 0.0;
            }
            for b in &mut layer.biases {
                *b = 0.0;
            }
        }
        layers[0].biases[0] = mean;
        for (a, &target) in q.iter().enumerate() {
            layers[1].biases[a] = target - mean;
        }
        params
    }

    fn small_env_config() -> EnvConfig {
        let tariff = builtin_schedule("table1").unwrap();
        let battery = BatteryConfig::new(900.0, 300.0, 300.0, 0.0, 1.0).unwrap();
        EnvConfig::new(tariff, battery, DemandResponseConfig::disabled())
    }

    fn small_agent_config() -> AgentConfig {
        AgentConfig {
            layers: LayerSpec {
                trunk_sizes: vec![8],
                stream_sizes: vec![4],
            },
            replay_capacity: 512,
            batch_size: 8,
            warmup_transitions: 16,
            epochs: 2,
            checkpoint_every: 1,
            history_days: Some(2),
            ..AgentConfig::default()
        }
    }

    fn flat_profile(days: usize) -> LoadProfile {
        LoadProfile::new(vec![300.0; days * HOURS_PER_DAY], "constant").unwrap()
    }

    #[test]
    fn epsilon_schedule_hits_the_documented_points() {
        assert_eq!(epsilon_at(1.0, 0.1, 1000, 0), 1.0);
        assert_eq!(epsilon_at(1.0, 0.1, 1000, 1000), 0.1);
        assert_eq!(epsilon_at(1.0, 0.1, 1000, 5000), 0.1);
        assert_relative_eq!(epsilon_at(1.0, 0.1, 1000, 500), 0.55, max_relative = 1e-12);
    }

    #[test]
    fn greedy_selection_takes_the_argmax() {
        let params = forced_params([0.0, 5.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let action = select_action(&params, &[0.0; 4], 0.0, &mut rng).unwrap();
        assert_eq!(action, Action::DischargePlusGrid);
    }

    #[test]
    fn greedy_ties_break_toward_the_lowest_index() {
        let params = forced_params([2.0, 2.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let action = select_action(&params, &[0.0; 4], 0.0, &mut rng).unwrap();
        assert_eq!(action, Action::GridOnly);
    }

    #[test]
    fn full_exploration_is_roughly_uniform() {
        let params = forced_params([0.0, 5.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut counts = [0usize; ACTION_COUNT];
        let draws = 3000;
        for _ in 0..draws {
            let a = select_action(&params, &[0.0; 4], 1.0, &mut rng).unwrap();
            counts[a.index()] += 1;
        }
        let expected = draws as f64 / 3.0;
        let sigma = (draws as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() < 4.0 * sigma,
                "action {i} drawn {c} times, expected about {expected}"
            );
        }
    }

    #[test]
    fn terminal_targets_skip_the_bootstrap() {
        let params = forced_params([10.0, 20.0, 30.0]);
        let exp = Experience {
            observation: vec![0.0; 4],
            action: Action::GridOnly,
            reward: -2.0,
            next_observation: vec![0.0; 4],
            done: true,
        };
        assert_eq!(td_target(&params, &params, &exp, 0.96, true).unwrap(), -2.0);
    }

    #[test]
    fn double_and_single_targets_agree_when_networks_agree() {
        let params = forced_params([1.0, -0.5, 0.25]);
        let exp = Experience {
            observation: vec![0.0; 4],
            action: Action::ChargePlusGrid,
            reward: -1.0,
            next_observation: vec![0.0; 4],
            done: false,
        };
        let double = td_target(&params, &params, &exp, 0.9, true).unwrap();
        let single = td_target(&params, &params, &exp, 0.9, false).unwrap();
        assert_eq!(double, single);
        assert_relative_eq!(double, -1.0 + 0.9 * 1.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_discount_reduces_targets_to_rewards() {
        let target = forced_params([3.0, 4.0, 5.0]);
        let online = forced_params([0.0, 1.0, 2.0]);
        let exp = Experience {
            observation: vec![0.0; 4],
            action: Action::GridOnly,
            reward: -0.75,
            next_observation: vec![0.0; 4],
            done: false,
        };
        assert_eq!(td_target(&target, &online, &exp, 0.0, true).unwrap(), -0.75);
    }

    #[test]
    fn no_parameters_move_before_warmup() {
        let cfg = AgentConfig {
            warmup_transitions: 100_000,
            ..small_agent_config()
        };
        let env_cfg = small_env_config();
        let out = train(&env_cfg, &flat_profile(2), &cfg).unwrap();
        let initial = network::init(&cfg.layers, env_cfg.observation_len(), cfg.seed).unwrap();
        for i in 0..initial.param_count() {
            assert_eq!(out.params.get_param(i), initial.get_param(i));
        }
        assert!(out.records.iter().all(|r| r.mean_loss == 0.0));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let cfg = AgentConfig {
            seed: 7,
            ..small_agent_config()
        };
        let env_cfg = small_env_config();
        let profile = flat_profile(3);
        let a = train(&env_cfg, &profile, &cfg).unwrap();
        let b = train(&env_cfg, &profile, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.params.param_count(), b.params.param_count());
        for i in 0..a.params.param_count() {
            assert_eq!(a.params.get_param(i), b.params.get_param(i));
        }
    }

    #[test]
    fn checkpoint_cadence_includes_start_and_end() {
        let cfg = AgentConfig {
            epochs: 25,
            checkpoint_every: 10,
            warmup_transitions: 100_000, // skip gradient work, cadence only
            history_days: Some(1),
            ..small_agent_config()
        };
        let out = train(&small_env_config(), &flat_profile(1), &cfg).unwrap();
        let epochs: Vec<usize> = out.checkpoints.iter().map(|c| c.epoch).collect();
        assert_eq!(epochs, vec![0, 10, 20, 25]);
        assert_eq!(out.records.len(), 25);
    }

    #[test]
    fn target_network_is_constant_between_syncs() {
        let cfg = AgentConfig {
            target_update_every: 3,
            epochs: 1,
            history_days: Some(2),
            warmup_transitions: 8,
            ..small_agent_config()
        };
        let env_cfg = small_env_config();
        let profile = flat_profile(2);
        let initial = network::init(&cfg.layers, env_cfg.observation_len(), cfg.seed).unwrap();
        let env = Environment::new(env_cfg, profile).unwrap();
        let mut trainer = Trainer::new(initial.clone(), env, &cfg).unwrap();
        // Two episodes: fewer than the 3-episode cadence, so the target must
        // still equal the initial weights even though the online net moved.
        trainer.run_episode(0).unwrap();
        trainer.run_episode(1).unwrap();
        for i in 0..initial.param_count() {
            assert_eq!(trainer.target.get_param(i), initial.get_param(i));
        }
        let moved =
            (0..initial.param_count()).any(|i| trainer.online.get_param(i) != initial.get_param(i));
        assert!(moved, "online network should have been updated");
        trainer.run_episode(0).unwrap();
        let synced = (0..initial.param_count())
            .all(|i| trainer.target.get_param(i) == trainer.online.get_param(i));
        assert!(synced, "third episode should sync the target");
    }

    #[test]
    fn zero_epoch_fine_tune_returns_the_base_unchanged() {
        let env_cfg = small_env_config();
        let base = network::init(&LayerSpec::default(), env_cfg.observation_len(), 3).unwrap();
        let cfg = AgentConfig {
            epochs: 0,
            ..AgentConfig::default()
        };
        let out = fine_tune(&base, &env_cfg, &flat_profile(1), &cfg).unwrap();
        for i in 0..base.param_count() {
            assert_eq!(out.params.get_param(i), base.get_param(i));
        }
        assert_eq!(out.checkpoints.len(), 1);
        assert!(out.records.is_empty());
    }

    #[test]
    fn fine_tune_rejects_mismatched_observation_lengths() {
        let env_cfg = small_env_config();
        let base = network::init(&LayerSpec::default(), env_cfg.observation_len() + 1, 3).unwrap();
        let err =
            fine_tune(&base, &env_cfg, &flat_profile(1), &AgentConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn records_and_epsilon_move_in_the_right_direction() {
        let cfg = AgentConfig {
            epochs: 6,
            ..small_agent_config()
        };
        let out = train(&small_env_config(), &flat_profile(2), &cfg).unwrap();
        assert_eq!(out.records.len(), 6);
        for pair in out.records.windows(2) {
            assert!(
                pair[1].epsilon <= pair[0].epsilon,
                "exploration should not rise"
            );
        }
        for record in &out.records {
            assert!(record.cost.is_finite());
            assert!(record.mean_loss.is_finite());
            assert_eq!(record.total_reward, -record.cost);
        }
    }

    #[test]
    fn tabular_update_with_zero_alpha_is_a_no_op() {
        let mut q = TabularQ::new(4);
        q.set_value(1, 2, 5.0);
        let before = q.clone();
        tabular_q_update(&mut q, 1, 2, -3.0, Some(0), 0.0, 0.9);
        assert_eq!(q, before);
    }

    #[test]
    fn tabular_update_with_full_alpha_overwrites_with_the_target() {
        let mut q = TabularQ::new(2);
        tabular_q_update(&mut q, 0, 1, -2.5, None, 1.0, 0.9);
        assert_eq!(q.value(0, 1), -2.5);
        q.set_value(1, 0, 10.0);
        tabular_q_update(&mut q, 0, 2, 1.0, Some(1), 1.0, 0.5);
        assert_eq!(q.value(0, 2), 1.0 + 0.5 * 10.0);
    }

    #[test]
    fn tabular_sweeps_match_value_iteration_on_a_two_state_chain() {
        // Deterministic chain: action 0 stays put (reward 0 in state 0,
        // reward 2 in state 1), action 1 hops to the other state (reward 1),
        // action 2 mirrors action 0.
        let gamma = 0.9;
        let step = |s: usize, a: usize| -> (usize, f64) {
            match (s, a) {
                (0, 1) => (1, 1.0),
                (1, 1) => (0, 1.0),
                (0, _) => (0, 0.0),
                (1, _) => (1, 2.0),
                _ => unreachable!(),
            }
        };

        // Independent oracle: value iteration on the state values.
        let mut v = [0.0f64; 2];
        for _ in 0..2000 {
            let mut next = [0.0f64; 2];
            for (s, slot) in next.iter_mut().enumerate() {
                *slot = (0..ACTION_COUNT)
                    .map(|a| {
                        let (s2, r) = step(s, a);
                        r + gamma * v[s2]
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            v = next;
        }

        let mut q = TabularQ::new(2);
        for _ in 0..2000 {
            for s in 0..2 {
                for a in 0..ACTION_COUNT {
                    let (s2, r) = step(s, a);
                    tabular_q_update(&mut q, s, a, r, Some(s2), 1.0, gamma);
                }
            }
        }
        for (s, &expected) in v.iter().enumerate() {
            assert_relative_eq!(q.best_value(s), expected, max_relative = 1e-9);
        }
        // State 1's best move is to sit on the reward-2 self-loop.
        assert_eq!(q.greedy_action(1), 0);
    }

    #[test]
    fn converged_tabular_policy_matches_exhaustive_search_on_a_toy_day() {
        // Three hours, two charge levels. The battery holds one 300 Wh
        // block, the load is a constant 300 Wh, and prices are cheap then
        // expensive, so the optimal plan buys the block early.
        let prices = [1.0, 5.0, 5.0];
        let load: f64 = 300.0;
        let block: f64 = 300.0;
        let hours = prices.len();
        // State index: hour * 2 + charge level; terminal after the last hour.
        let step = |hour: usize, level: usize, action: usize| -> (usize, f64) {
            let (next_level, draw) = match action {
                0 => (level, load),
                1 => {
                    if level == 1 {
                        (0, (load - block).max(0.0))
                    } else {
                        (0, load)
                    }
                }
                _ => {
                    if level == 0 {
                        (1, load + block)
                    } else {
                        (1, load)
                    }
                }
            };
            (next_level, -(prices[hour] * draw / 1000.0))
        };

        let mut q = TabularQ::new(hours * 2);
        for _ in 0..50 {
            for hour in 0..hours {
                for level in 0..2 {
                    for action in 0..ACTION_COUNT {
                        let (next_level, reward) = step(hour, level, action);
                        let next_state = if hour + 1 < hours {
                            Some((hour + 1) * 2 + next_level)
                        } else {
                            None
                        };
                        tabular_q_update(
                            &mut q,
                            hour * 2 + level,
                            action,
                            reward,
                            next_state,
                            1.0,
                            1.0,
                        );
                    }
                }
            }
        }
        let mut greedy = Vec::new();
        let mut level = 0usize;
        let mut greedy_cost = 0.0;
        for hour in 0..hours {
            let action = q.greedy_action(hour * 2 + level);
            greedy.push(action);
            let (next_level, reward) = step(hour, level, action);
            greedy_cost += -reward;
            level = next_level;
        }

        // Exhaustive enumeration in lexicographic order, keeping the first
        // strictly best plan.
        let mut best_cost = f64::INFINITY;
        let mut best_plan = vec![0usize; hours];
        for code in 0..3usize.pow(hours as u32) {
            let mut plan = vec![0usize; hours];
            let mut c = code;
            for slot in (0..hours).rev() {
                plan[slot] = c % 3;
                c /= 3;
            }
            let mut cost = 0.0;
            let mut lvl = 0usize;
            for (hour, &action) in plan.iter().enumerate() {
                let (next_level, reward) = step(hour, lvl, action);
                cost += -reward;
                lvl = next_level;
            }
            if cost < best_cost {
                best_cost = cost;
                best_plan = plan;
            }
        }
        assert_eq!(greedy, best_plan);
        assert_eq!(greedy_cost, best_cost);
    }

    #[test]
    fn config_validation_rejects_out_of_range_values() {
        let default = AgentConfig::default;
        assert!(default().validate().is_ok());
        let rejected = [
            AgentConfig {
                gamma: 1.0,
                ..default()
            },
            AgentConfig {
                epsilon_initial: 0.2,
                epsilon_final: 0.5,
                ..default()
            },
            AgentConfig {
                batch_size: 0,
                ..default()
            },
            AgentConfig {
                batch_size: 64,
                replay_capacity: 32,
                ..default()
            },
            AgentConfig {
                history_days: Some(0),
                ..default()
            },
        ];
        for cfg in rejected {
            assert!(cfg.validate().is_err());
        }
    }
}
