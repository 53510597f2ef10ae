//! Twin-delayed deterministic actor-critic agent and its replay buffer.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::config::AgentConfig;
use crate::error::{Error, Result};
use crate::mlp::{AdamState, Network, NetworkCheckpoint, OutputActivation};
use crate::rng::Rng;
use crate::types::{AgentState, Normalization, Transition};

/// Bounded FIFO of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, data: Vec::with_capacity(capacity.min(4096)), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, overwriting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Draws `batch` transitions with replacement.
    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Result<Vec<Transition>> {
        if self.data.len() < batch {
            return Err(Error::WarmupIncomplete { size: self.data.len(), needed: batch });
        }
        Ok((0..batch).map(|_| self.data[rng.below(self.data.len())]).collect())
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.data.len() < self.capacity { 0 } else { self.next };
        self.data[split..].iter().chain(&self.data[..split])
    }
}

/// Actor, twin critics, their targets and optimizers.
#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub actor: Network,
    pub actor_target: Network,
    pub critic1: Network,
    pub critic2: Network,
    pub critic1_target: Network,
    pub critic2_target: Network,
    actor_opt: AdamState,
    critic1_opt: AdamState,
    critic2_opt: AdamState,
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: usize,
    /// Exploration std, C-rate.
    pub noise_std: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub norm: Normalization,
    /// Critic updates performed so far.
    pub updates: u64,
}

impl Td3Agent {
    pub fn new(cfg: &AgentConfig, a_min: f64, a_max: f64, norm: Normalization, rng: &mut Rng) -> Self {
        let dims = |input: usize| -> Vec<usize> {
            std::iter::once(input).chain(cfg.hidden.iter().copied()).chain(std::iter::once(1)).collect()
        };
        let actor = Network::new(&dims(4), OutputActivation::Tanh, cfg.actor_output_scale, rng);
        let critic1 = Network::new(&dims(5), OutputActivation::Identity, 1.0, rng);
        let critic2 = Network::new(&dims(5), OutputActivation::Identity, 1.0, rng);
        Self::from_networks(actor, critic1, critic2, cfg, a_min, a_max, norm)
    }

    /// Wraps given online networks; targets start as exact copies.
    pub fn from_networks(
        actor: Network,
        critic1: Network,
        critic2: Network,
        cfg: &AgentConfig,
        a_min: f64,
        a_max: f64,
        norm: Normalization,
    ) -> Self {
        Self {
            actor_opt: AdamState::new(&actor, cfg.actor_lr),
            critic1_opt: AdamState::new(&critic1, cfg.critic_lr),
            critic2_opt: AdamState::new(&critic2, cfg.critic_lr),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            gamma: cfg.gamma,
            tau: cfg.tau,
            policy_delay: cfg.policy_delay,
            noise_std: cfg.noise_variance.sqrt(),
            a_min,
            a_max,
            norm,
            updates: 0,
        }
    }

    /// Maps a tanh output in [-1, 1] to a C-rate.
    fn to_action(&self, u: f64) -> f64 {
        (self.a_min + 0.5 * (u + 1.0) * (self.a_max - self.a_min)).clamp(self.a_min, self.a_max)
    }

    /// Deterministic policy action, C-rate.
    pub fn policy(&self, s: &AgentState) -> f64 {
        let x = self.norm.state(s);
        self.to_action(self.actor.forward(&x)[0])
    }

    pub fn select_action(&self, s: &AgentState, rng: &mut Rng, explore: bool) -> f64 {
        let a = self.policy(s);
        if explore && self.noise_std > 0.0 {
            (a + self.noise_std * rng.normal()).clamp(self.a_min, self.a_max)
        } else {
            a
        }
    }

    fn states(&self, batch: &[Transition], next: bool) -> Array2<f64> {
        let mut m = Array2::zeros((batch.len(), 4));
        for (mut row, t) in m.rows_mut().into_iter().zip(batch) {
            let s = if next { &t.next_state } else { &t.state };
            row.assign(&ndarray::aview1(&self.norm.state(s)));
        }
        m
    }

    fn critic_inputs(&self, states: &Array2<f64>, actions: impl Iterator<Item = f64>) -> Array2<f64> {
        let mut m = Array2::zeros((states.nrows(), 5));
        m.slice_mut(s![.., ..4]).assign(states);
        for (v, a) in m.column_mut(4).iter_mut().zip(actions) {
            *v = self.norm.action(a);
        }
        m
    }

    /// `r + gamma (1 - done) min(Q1'(s', a'), Q2'(s', a'))` with
    /// `a' = actor_target(s')`.
    pub fn critic_targets(&self, batch: &[Transition]) -> Vec<f64> {
        assert!(!batch.is_empty(), "empty batch");
        let next = self.states(batch, true);
        let u = self.actor_target.forward_batch(next.view());
        let x = self.critic_inputs(&next, u.iter().map(|&u| self.to_action(u)));
        let q1 = self.critic1_target.forward_batch(x.view());
        let q2 = self.critic2_target.forward_batch(x.view());
        batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let boot = if t.done { 0.0 } else { self.gamma * q1[[i, 0]].min(q2[[i, 0]]) };
                t.reward + boot
            })
            .collect()
    }

    /// One Adam step on each critic towards the TD targets; returns the
    /// losses before the step.
    pub fn update_critics(&mut self, batch: &[Transition]) -> (f64, f64) {
        let y = self.critic_targets(batch);
        let states = self.states(batch, false);
        let x = self.critic_inputs(&states, batch.iter().map(|t| t.action));
        let b = batch.len() as f64;
        let mut losses = [0.0; 2];
        for (k, loss) in losses.iter_mut().enumerate() {
            let (net, opt) = match k {
                0 => (&mut self.critic1, &mut self.critic1_opt),
                _ => (&mut self.critic2, &mut self.critic2_opt),
            };
            let cache = net.forward_cached(x.clone());
            let q = cache.output();
            let mut upstream = Array2::zeros(q.dim());
            let mut l = 0.0;
            for i in 0..batch.len() {
                let e = q[[i, 0]] - y[i];
                l += e * e;
                upstream[[i, 0]] = 2.0 * e / b;
            }
            *loss = l / b;
            let grads = net.backward(&cache, &upstream);
            opt.step(net, &grads);
        }
        self.updates += 1;
        (losses[0], losses[1])
    }

    /// Every `policy_delay`-th step: one actor ascent step on mean
    /// `Q1(s, actor(s))` followed by Polyak updates of all three targets.
    /// Returns the actor loss `-mean Q1` when the update ran.
    pub fn update_actor_and_targets(&mut self, batch: &[Transition], step: u64) -> Option<f64> {
        if step % self.policy_delay as u64 != 0 {
            return None;
        }
        let states = self.states(batch, false);
        let actor_cache = self.actor.forward_cached(states.clone());
        let u = actor_cache.output().clone();
        let x = self.critic_inputs(&states, u.iter().map(|&u| self.to_action(u)));
        let critic_cache = self.critic1.forward_cached(x);
        let b = batch.len() as f64;
        let loss = -critic_cache.output().sum() / b;
        let upstream = Array2::from_elem((batch.len(), 1), -1.0 / b);
        let critic_grads = self.critic1.backward(&critic_cache, &upstream);
        // d a_norm / d u through the bound mapping and the normalization
        let (lo, hi) = self.norm.action;
        let da = (self.a_max - self.a_min) / (hi - lo);
        let actor_upstream = critic_grads.input.slice(s![.., 4..5]).mapv(|g| g * da);
        let grads = self.actor.backward(&actor_cache, &actor_upstream);
        self.actor_opt.step(&mut self.actor, &grads);

        self.actor_target.soft_update(&self.actor, self.tau);
        self.critic1_target.soft_update(&self.critic1, self.tau);
        self.critic2_target.soft_update(&self.critic2, self.tau);
        Some(loss)
    }

    /// Samples one batch, updates the critics and, on the delay schedule,
    /// the actor and targets.
    pub fn train_step(&mut self, buffer: &ReplayBuffer, batch_size: usize, rng: &mut Rng) -> Result<()> {
        let batch = buffer.sample(batch_size, rng)?;
        self.update_critics(&batch);
        self.update_actor_and_targets(&batch, self.updates);
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Td3Checkpoint {
        Td3Checkpoint {
            actor: self.actor.to_checkpoint(),
            actor_target: self.actor_target.to_checkpoint(),
            critic1: self.critic1.to_checkpoint(),
            critic2: self.critic2.to_checkpoint(),
            critic1_target: self.critic1_target.to_checkpoint(),
            critic2_target: self.critic2_target.to_checkpoint(),
            actor_opt: self.actor_opt.clone(),
            critic1_opt: self.critic1_opt.clone(),
            critic2_opt: self.critic2_opt.clone(),
            gamma: self.gamma,
            tau: self.tau,
            policy_delay: self.policy_delay,
            noise_std: self.noise_std,
            a_min: self.a_min,
            a_max: self.a_max,
            norm: self.norm.clone(),
            updates: self.updates,
        }
    }

    pub fn from_checkpoint(c: &Td3Checkpoint) -> Result<Self> {
        let actor = Network::from_checkpoint(&c.actor)?;
        let critic1 = Network::from_checkpoint(&c.critic1)?;
        let critic2 = Network::from_checkpoint(&c.critic2)?;
        let check = |opt: &AdamState, net: &Network| {
            if opt.len() == net.parameter_count() {
                Ok(())
            } else {
                Err(Error::Dimension { expected: net.parameter_count(), got: opt.len() })
            }
        };
        check(&c.actor_opt, &actor)?;
        check(&c.critic1_opt, &critic1)?;
        check(&c.critic2_opt, &critic2)?;
        Ok(Self {
            actor_target: Network::from_checkpoint(&c.actor_target)?,
            critic1_target: Network::from_checkpoint(&c.critic1_target)?,
            critic2_target: Network::from_checkpoint(&c.critic2_target)?,
            actor,
            critic1,
            critic2,
            actor_opt: c.actor_opt.clone(),
            critic1_opt: c.critic1_opt.clone(),
            critic2_opt: c.critic2_opt.clone(),
            gamma: c.gamma,
            tau: c.tau,
            policy_delay: c.policy_delay,
            noise_std: c.noise_std,
            a_min: c.a_min,
            a_max: c.a_max,
            norm: c.norm.clone(),
            updates: c.updates,
        })
    }
}

/// All six networks, optimizer moments and schedule state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Checkpoint {
    pub actor: NetworkCheckpoint,
    pub actor_target: NetworkCheckpoint,
    pub critic1: NetworkCheckpoint,
    pub critic2: NetworkCheckpoint,
    pub critic1_target: NetworkCheckpoint,
    pub critic2_target: NetworkCheckpoint,
    pub actor_opt: AdamState,
    pub critic1_opt: AdamState,
    pub critic2_opt: AdamState,
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: usize,
    pub noise_std: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub norm: Normalization,
    pub updates: u64,
}
