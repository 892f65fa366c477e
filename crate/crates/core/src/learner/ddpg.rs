//! DDPG proper: target networks, Bellman targets, critic and actor
//! updates, soft updates, action selection, and the training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::env::Environment;
use super::mlp::{Activation, Gradients, Mlp};
use super::replay::ReplayBuffer;
use super::{Action, DdpgConfig, LearnerError, State, TargetUpdate, Transition, ACTION_DIM, STATE_DIM};
use crate::exec;

/// Width of both hidden layers in the default architecture.
pub const HIDDEN: usize = 64;

const CRITIC_IN: usize = STATE_DIM + ACTION_DIM;

/// Online actor and critic plus their time-delayed target copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
}

impl DdpgNets {
    /// Seeded networks with the default hidden width; targets start as
    /// exact copies.
    pub fn seeded(rng: &mut impl Rng) -> Self {
        Self::with_hidden(HIDDEN, rng)
    }

    pub fn with_hidden(hidden: usize, rng: &mut impl Rng) -> Self {
        let actor = Mlp::seeded(
            &[STATE_DIM, hidden, hidden, ACTION_DIM],
            &[Activation::Relu, Activation::Relu, Activation::Tanh],
            rng,
        );
        let critic = Mlp::seeded(
            &[CRITIC_IN, hidden, hidden, 1],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            rng,
        );
        Self { actor_target: actor.clone(), critic_target: critic.clone(), actor, critic }
    }
}

fn check_head(net: &Mlp, context: &'static str, in_dim: usize, out_dim: usize) -> Result<(), LearnerError> {
    if net.in_dim() != in_dim {
        return Err(LearnerError::DimensionMismatch { context, expected: in_dim, got: net.in_dim() });
    }
    if net.out_dim() != out_dim {
        return Err(LearnerError::DimensionMismatch { context, expected: out_dim, got: net.out_dim() });
    }
    Ok(())
}

fn validate_nets(nets: &DdpgNets) -> Result<(), LearnerError> {
    check_head(&nets.actor, "actor", STATE_DIM, ACTION_DIM)?;
    check_head(&nets.actor_target, "actor target", STATE_DIM, ACTION_DIM)?;
    check_head(&nets.critic, "critic", CRITIC_IN, 1)?;
    check_head(&nets.critic_target, "critic target", CRITIC_IN, 1)?;
    for (online, target, context) in [
        (&nets.actor, &nets.actor_target, "actor target shape"),
        (&nets.critic, &nets.critic_target, "critic target shape"),
    ] {
        if online.param_count() != target.param_count() {
            return Err(LearnerError::DimensionMismatch {
                context,
                expected: online.param_count(),
                got: target.param_count(),
            });
        }
    }
    Ok(())
}

/// The critic's input layout: state components first, then the action in
/// normalized [-1, 1] space.
pub fn critic_input(s: &State, a_norm: [f64; 3]) -> [f64; 8] {
    let mut x = [0.0; 8];
    x[..STATE_DIM].copy_from_slice(&s.0);
    x[STATE_DIM..].copy_from_slice(&a_norm);
    x
}

/// The actor's raw Tanh head, each dimension in [-1, 1] (the critic
/// consumes actions in this normalized space).
pub fn actor_normalized(actor: &Mlp, s: &State) -> [f64; 3] {
    let out = actor.forward(&s.0).expect("actor shaped for the 5-dim state");
    [out[0], out[1], out[2]]
}

/// Deterministic policy: Tanh head affinely rescaled into action bounds.
pub fn actor_action(actor: &Mlp, s: &State) -> Action {
    Action::from_normalized(actor_normalized(actor, s))
}

/// Policy action plus zero-mean Gaussian exploration noise (applied in
/// normalized space), clamped into bounds. Sigma 0 is the deterministic
/// policy and draws nothing from the RNG.
pub fn select_action(actor: &Mlp, s: &State, noise_sigma: f64, rng: &mut impl Rng) -> Action {
    let mut t = actor_normalized(actor, s);
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite non-negative sigma");
        for v in &mut t {
            *v = (*v + normal.sample(rng)).clamp(-1.0, 1.0);
        }
    }
    Action::from_normalized(t)
}

/// Bellman target y = r + gamma * q_next, with q_next masked out on
/// terminal transitions. `q_next` must be the target critic's value at
/// (s_next, target_actor(s_next)).
pub fn bellman_target(r: f64, gamma: f64, q_next: f64, done: bool) -> f64 {
    debug_assert!((0.0..=1.0).contains(&gamma));
    if done {
        r
    } else {
        r + gamma * q_next
    }
}

/// Mean-squared critic loss over the batch and its exact parameter
/// gradients, at the current parameters. Batch targets use the target
/// networks; nothing is mutated.
pub fn critic_gradients(
    batch: &[Transition],
    nets: &DdpgNets,
    gamma: f64,
) -> Result<(f64, Gradients), LearnerError> {
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    validate_nets(nets)?;
    let e = batch.len() as f64;
    let chunks: Vec<&[Transition]> = batch.chunks(exec::CHUNK).collect();
    // Fixed chunk tree keeps the sum bit-identical between the parallel
    // and sequential execution modes.
    let partials: Vec<(f64, Gradients)> = exec::map_ordered(&chunks, |chunk| {
        let mut grads = Gradients::zeros_like(&nets.critic);
        let mut loss = 0.0;
        for t in chunk.iter() {
            let a_next = actor_normalized(&nets.actor_target, &t.s_next);
            let q_next = nets
                .critic_target
                .forward(&critic_input(&t.s_next, a_next))
                .expect("validated shapes")[0];
            let y = bellman_target(t.r, gamma, q_next, t.done);
            let cache = nets
                .critic
                .forward_cached(&critic_input(&t.s, t.a.to_normalized()))
                .expect("validated shapes");
            let err = cache.output()[0] - y;
            loss += err * err;
            let g = nets.critic.backward(&cache, &[2.0 * err / e]).expect("validated shapes");
            grads.add_assign(&g);
        }
        (loss, grads)
    });
    let mut total = Gradients::zeros_like(&nets.critic);
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        total.add_assign(g);
    }
    Ok((loss / e, total))
}

/// Gradients of the actor objective J = mean_i Q(s_i, actor(s_i)) with
/// respect to the actor parameters (ascent direction), chained through the
/// critic's input gradient.
pub fn actor_gradients(batch: &[Transition], nets: &DdpgNets) -> Result<Gradients, LearnerError> {
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    validate_nets(nets)?;
    let e = batch.len() as f64;
    let chunks: Vec<&[Transition]> = batch.chunks(exec::CHUNK).collect();
    let partials: Vec<Gradients> = exec::map_ordered(&chunks, |chunk| {
        let mut grads = Gradients::zeros_like(&nets.actor);
        for t in chunk.iter() {
            let acache = nets.actor.forward_cached(&t.s.0).expect("validated shapes");
            let head = acache.output();
            let a_norm = [head[0], head[1], head[2]];
            let ccache = nets
                .critic
                .forward_cached(&critic_input(&t.s, a_norm))
                .expect("validated shapes");
            let through = nets.critic.backward(&ccache, &[1.0 / e]).expect("validated shapes");
            let upstream = &through.dx[STATE_DIM..];
            let g = nets.actor.backward(&acache, upstream).expect("validated shapes");
            grads.add_assign(&g);
        }
        grads
    });
    let mut total = Gradients::zeros_like(&nets.actor);
    for g in &partials {
        total.add_assign(g);
    }
    Ok(total)
}

/// One critic step: returns the pre-update batch loss (Eq. of the mean
/// squared error between Bellman targets and current Q) and applies one
/// Adam step to the online critic. Targets are untouched.
pub fn critic_update(
    batch: &[Transition],
    nets: &mut DdpgNets,
    adam: &mut AdamState,
    cfg: &DdpgConfig,
) -> Result<f64, LearnerError> {
    let (loss, grads) = critic_gradients(batch, nets, cfg.gamma)?;
    adam_step(&mut nets.critic, &grads, adam, cfg.lr_critic);
    Ok(loss)
}

/// One actor step: ascends the batch-mean Q by descending its negation.
/// The critic is untouched.
pub fn actor_update(
    batch: &[Transition],
    nets: &mut DdpgNets,
    adam: &mut AdamState,
    cfg: &DdpgConfig,
) -> Result<(), LearnerError> {
    let mut grads = actor_gradients(batch, nets)?;
    grads.scale(-1.0);
    adam_step(&mut nets.actor, &grads, adam, cfg.lr_actor);
    Ok(())
}

/// Polyak update: every target parameter moves to
/// `tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<(), LearnerError> {
    if target.param_count() != online.param_count() {
        return Err(LearnerError::DimensionMismatch {
            context: "soft update",
            expected: online.param_count(),
            got: target.param_count(),
        });
    }
    for (t, o) in target.params_mut().zip(online.params()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub mean_critic_loss: f64,
    pub mean_reward: f64,
    pub epsilon_sigma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub seed: u64,
}

/// Per-episode training metrics; `to_csv` is the canonical export format.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<EpisodeRow>,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str =
        "episode,mean_critic_loss,mean_reward,epsilon_sigma,lr_actor,lr_critic,seed";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.episode,
                r.mean_critic_loss,
                r.mean_reward,
                r.epsilon_sigma,
                r.lr_actor,
                r.lr_critic,
                r.seed
            ));
        }
        out
    }

    /// Mean critic loss over the final `window` episodes (or all of them
    /// if fewer exist); warmup-only episodes report loss 0.
    pub fn final_mean_loss(&self, window: usize) -> f64 {
        let tail: Vec<f64> = self
            .rows
            .iter()
            .rev()
            .take(window)
            .map(|r| r.mean_critic_loss)
            .collect();
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Serializable snapshot of the full learner state at an episode boundary.
/// Together with the deterministic per-episode environment reset this
/// makes resumed training bit-identical to uninterrupted training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub cfg: DdpgConfig,
    pub episode: usize,
    pub updates: u64,
    pub nets: DdpgNets,
    pub adam_actor: AdamState,
    pub adam_critic: AdamState,
    pub buffer: ReplayBuffer,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoints are plain data")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

/// Stateful training driver; [`train`] wraps it for one-shot runs.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: DdpgConfig,
    nets: DdpgNets,
    adam_actor: AdamState,
    adam_critic: AdamState,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    episode: usize,
    updates: u64,
}

impl Trainer {
    pub fn new(cfg: &DdpgConfig) -> Result<Self, LearnerError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let nets = DdpgNets::seeded(&mut rng);
        Ok(Self {
            adam_actor: AdamState::zeros_like(&nets.actor),
            adam_critic: AdamState::zeros_like(&nets.critic),
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            cfg: cfg.clone(),
            nets,
            rng,
            episode: 0,
            updates: 0,
        })
    }

    pub fn nets(&self) -> &DdpgNets {
        &self.nets
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Runs one full episode: act, store, and (once the buffer can fill a
    /// batch) one critic update, one actor update, and one target update
    /// per step.
    pub fn run_episode(&mut self, env: &mut impl Environment) -> Result<EpisodeRow, LearnerError> {
        let mut s = env.reset(self.episode);
        let mut loss_sum = 0.0;
        let mut loss_count = 0u32;
        let mut reward_sum = 0.0;
        for _step in 0..self.cfg.steps_per_episode {
            let a = select_action(&self.nets.actor, &s, self.cfg.noise_sigma, &mut self.rng);
            let (s_next, r) = env.step(&a);
            // Episodes truncate at a fixed window count; the control task
            // itself never terminates, so the bootstrap chain is kept
            // (truncation is not termination).
            self.buffer.push(Transition { s, a, r, s_next, done: false });
            reward_sum += r;
            if self.buffer.len() >= self.cfg.batch {
                let batch = self.buffer.sample(self.cfg.batch, &mut self.rng);
                let loss =
                    critic_update(&batch, &mut self.nets, &mut self.adam_critic, &self.cfg)?;
                actor_update(&batch, &mut self.nets, &mut self.adam_actor, &self.cfg)?;
                self.updates += 1;
                match self.cfg.target_update {
                    TargetUpdate::Soft => {
                        soft_update(&mut self.nets.critic_target, &self.nets.critic, self.cfg.tau)?;
                        soft_update(&mut self.nets.actor_target, &self.nets.actor, self.cfg.tau)?;
                    }
                    TargetUpdate::HardEvery(n) => {
                        if self.updates % n == 0 {
                            self.nets.critic_target = self.nets.critic.clone();
                            self.nets.actor_target = self.nets.actor.clone();
                        }
                    }
                }
                loss_sum += loss;
                loss_count += 1;
            }
            s = s_next;
        }
        self.episode += 1;
        Ok(EpisodeRow {
            episode: self.episode,
            mean_critic_loss: if loss_count > 0 { loss_sum / f64::from(loss_count) } else { 0.0 },
            mean_reward: reward_sum / self.cfg.steps_per_episode as f64,
            epsilon_sigma: self.cfg.noise_sigma,
            lr_actor: self.cfg.lr_actor,
            lr_critic: self.cfg.lr_critic,
            seed: self.cfg.seed,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            cfg: self.cfg.clone(),
            episode: self.episode,
            updates: self.updates,
            nets: self.nets.clone(),
            adam_actor: self.adam_actor.clone(),
            adam_critic: self.adam_critic.clone(),
            buffer: self.buffer.clone(),
            rng_seed: self.rng.get_seed(),
            rng_word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn restore(cp: Checkpoint) -> Result<Self, LearnerError> {
        cp.cfg.validate()?;
        validate_nets(&cp.nets)?;
        let mut rng = ChaCha8Rng::from_seed(cp.rng_seed);
        rng.set_word_pos(cp.rng_word_pos);
        Ok(Self {
            cfg: cp.cfg,
            nets: cp.nets,
            adam_actor: cp.adam_actor,
            adam_critic: cp.adam_critic,
            buffer: cp.buffer,
            rng,
            episode: cp.episode,
            updates: cp.updates,
        })
    }
}

/// Full training run: `cfg.episodes` episodes against `env`.
pub fn train(env: &mut impl Environment, cfg: &DdpgConfig) -> Result<TrainingLog, LearnerError> {
    let mut trainer = Trainer::new(cfg)?;
    let mut log = TrainingLog::default();
    for _ in 0..cfg.episodes {
        log.rows.push(trainer.run_episode(env)?);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::mlp::Layer;

    /// Deterministic toy environment: state is a simple function of the
    /// episode and step, reward prefers speed limits near 9 m/s.
    struct StubEnv {
        episode: usize,
        step: usize,
    }

    impl StubEnv {
        fn new() -> Self {
            Self { episode: 0, step: 0 }
        }

        fn state(&self) -> State {
            let e = (self.episode % 7) as f64 / 7.0;
            let k = (self.step % 5) as f64 / 5.0;
            State([e, k, (e + k) / 2.0, 1.0 - e, 1.0 - k])
        }
    }

    impl Environment for StubEnv {
        fn reset(&mut self, episode: usize) -> State {
            self.episode = episode;
            self.step = 0;
            self.state()
        }

        fn step(&mut self, action: &Action) -> (State, f64) {
            self.step += 1;
            let r = -((action.0[0] - 9.0) / 8.89).abs();
            (self.state(), r)
        }
    }

    fn tiny_cfg() -> DdpgConfig {
        DdpgConfig {
            batch: 4,
            buffer_capacity: 64,
            episodes: 3,
            steps_per_episode: 6,
            ..DdpgConfig::default()
        }
    }

    fn seeded_nets(seed: u64) -> DdpgNets {
        DdpgNets::with_hidden(6, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn random_state(rng: &mut impl Rng) -> State {
        State(std::array::from_fn(|_| rng.random_range(0.0..1.0)))
    }

    fn random_transition(rng: &mut impl Rng) -> Transition {
        Transition {
            s: random_state(rng),
            a: Action::from_normalized(std::array::from_fn(|_| rng.random_range(-1.0..1.0))),
            r: rng.random_range(-1.0..1.0),
            s_next: random_state(rng),
            done: rng.random_bool(0.2),
        }
    }

    /// A critic that always outputs `c` regardless of input.
    fn constant_critic(c: f64) -> Mlp {
        Mlp {
            layers: vec![
                Layer { w: vec![vec![0.0; 8]; 2], b: vec![0.0; 2], act: Activation::Relu },
                Layer { w: vec![vec![0.0; 2]], b: vec![c], act: Activation::Identity },
            ],
        }
    }

    fn zero_actor() -> Mlp {
        Mlp {
            layers: vec![Layer {
                w: vec![vec![0.0; 5]; 3],
                b: vec![0.0; 3],
                act: Activation::Tanh,
            }],
        }
    }

    #[test]
    fn bellman_examples() {
        assert_eq!(bellman_target(0.7, 0.0, 5.0, false), 0.7);
        assert_eq!(bellman_target(1.0, 0.8, 2.0, false), 2.6);
        assert_eq!(bellman_target(0.3, 0.8, 99.0, true), 0.3);
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_zero_gradient() {
        // Terminal transitions with r = c against a critic that already
        // outputs c everywhere: every target is hit exactly.
        let c = 0.75;
        let nets = DdpgNets {
            actor: zero_actor(),
            actor_target: zero_actor(),
            critic: constant_critic(c),
            critic_target: constant_critic(c),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch: Vec<Transition> = (0..6)
            .map(|_| Transition { r: c, done: true, ..random_transition(&mut rng) })
            .collect();
        let (loss, grads) = critic_gradients(&batch, &nets, 0.8).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
        let mut nets = nets;
        let before = nets.critic.clone();
        let mut adam = AdamState::zeros_like(&nets.critic);
        critic_update(&batch, &mut nets, &mut adam, &DdpgConfig::default()).unwrap();
        assert_eq!(nets.critic, before, "zero gradient moves nothing");
    }

    #[test]
    fn single_transition_unit_loss() {
        let nets = DdpgNets {
            actor: zero_actor(),
            actor_target: zero_actor(),
            critic: constant_critic(0.0),
            critic_target: constant_critic(0.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = vec![Transition { r: 1.0, done: true, ..random_transition(&mut rng) }];
        let (loss, _) = critic_gradients(&batch, &nets, 0.8).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut nets = seeded_nets(1);
        let mut adam = AdamState::zeros_like(&nets.critic);
        let err = critic_update(&[], &mut nets, &mut adam, &DdpgConfig::default()).unwrap_err();
        assert_eq!(err, LearnerError::EmptyBatch);
        let mut adam = AdamState::zeros_like(&nets.actor);
        let err = actor_update(&[], &mut nets, &mut adam, &DdpgConfig::default()).unwrap_err();
        assert_eq!(err, LearnerError::EmptyBatch);
    }

    #[test]
    fn critic_loss_matches_brute_force_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let nets = seeded_nets(rng.random());
            let batch: Vec<Transition> =
                (0..rng.random_range(1..40)).map(|_| random_transition(&mut rng)).collect();
            let gamma = 0.8;
            let (loss, _) = critic_gradients(&batch, &nets, gamma).unwrap();
            // Independent scalar recomputation, one transition at a time.
            let mut expected = 0.0;
            for t in &batch {
                let a_next = actor_normalized(&nets.actor_target, &t.s_next);
                let q_next =
                    nets.critic_target.forward(&critic_input(&t.s_next, a_next)).unwrap()[0];
                let y = bellman_target(t.r, gamma, q_next, t.done);
                let q = nets.critic.forward(&critic_input(&t.s, t.a.to_normalized())).unwrap()[0];
                expected += (y - q) * (y - q);
            }
            expected /= batch.len() as f64;
            assert!(
                (loss - expected).abs() <= 1e-12,
                "loss {loss} vs brute force {expected}"
            );
        }
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..50 {
            let nets = seeded_nets(rng.random());
            let batch: Vec<Transition> =
                (0..4).map(|_| random_transition(&mut rng)).collect();
            let (_, grads) = critic_gradients(&batch, &nets, 0.8).unwrap();
            let analytic: Vec<f64> = grads.params().copied().collect();
            let loss_at = |critic: &Mlp| -> f64 {
                let probe = DdpgNets { critic: critic.clone(), ..nets.clone() };
                critic_gradients(&batch, &probe, 0.8).unwrap().0
            };
            for k in 0..analytic.len() {
                let mut plus = nets.critic.clone();
                *plus.params_mut().nth(k).unwrap() += h;
                let mut minus = nets.critic.clone();
                *minus.params_mut().nth(k).unwrap() -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let a = analytic[k];
                let scale = a.abs().max(fd.abs()).max(1e-3);
                assert!((a - fd).abs() / scale <= 1e-4, "critic param {k}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn actor_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-5;
        for _ in 0..50 {
            let nets = seeded_nets(rng.random());
            let batch: Vec<Transition> =
                (0..4).map(|_| random_transition(&mut rng)).collect();
            let grads = actor_gradients(&batch, &nets).unwrap();
            let analytic: Vec<f64> = grads.params().copied().collect();
            let objective = |actor: &Mlp| -> f64 {
                batch
                    .iter()
                    .map(|t| {
                        let a = actor_normalized(actor, &t.s);
                        nets.critic.forward(&critic_input(&t.s, a)).unwrap()[0]
                    })
                    .sum::<f64>()
                    / batch.len() as f64
            };
            for k in 0..analytic.len() {
                let mut plus = nets.actor.clone();
                *plus.params_mut().nth(k).unwrap() += h;
                let mut minus = nets.actor.clone();
                *minus.params_mut().nth(k).unwrap() -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let a = analytic[k];
                let scale = a.abs().max(fd.abs()).max(1e-3);
                assert!((a - fd).abs() / scale <= 1e-4, "actor param {k}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn critic_constant_in_action_leaves_actor_unchanged() {
        // Critic reads only the state inputs; dQ/da is identically zero.
        let mut critic = seeded_nets(13).critic;
        for row in &mut critic.layers[0].w {
            for w in row.iter_mut().skip(STATE_DIM) {
                *w = 0.0;
            }
        }
        let mut nets = DdpgNets {
            actor: seeded_nets(14).actor,
            actor_target: seeded_nets(14).actor_target,
            critic_target: critic.clone(),
            critic,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let batch: Vec<Transition> = (0..5).map(|_| random_transition(&mut rng)).collect();
        let before = nets.actor.clone();
        let mut adam = AdamState::zeros_like(&nets.actor);
        actor_update(&batch, &mut nets, &mut adam, &DdpgConfig::default()).unwrap();
        assert_eq!(nets.actor, before);
    }

    #[test]
    fn actor_climbs_a_vee_shaped_critic() {
        // Q = -|a0_norm - 0.3| built from a ReLU pair; the actor starts at
        // a0_norm = -0.4 and must walk toward 0.3.
        let mut l1 = Layer { w: vec![vec![0.0; 8]; 2], b: vec![-0.3, 0.3], act: Activation::Relu };
        l1.w[0][STATE_DIM] = 1.0;
        l1.w[1][STATE_DIM] = -1.0;
        let l2 = Layer { w: vec![vec![-1.0, -1.0]], b: vec![0.0], act: Activation::Identity };
        let critic = Mlp { layers: vec![l1, l2] };
        let mut actor = zero_actor();
        actor.layers[0].b[0] = (-0.4f64).atanh();
        let mut nets = DdpgNets {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let batch: Vec<Transition> = (0..4).map(|_| random_transition(&mut rng)).collect();
        let cfg = DdpgConfig { lr_actor: 0.02, ..DdpgConfig::default() };
        let mut adam = AdamState::zeros_like(&nets.actor);
        let s = batch[0].s;
        let start = actor_normalized(&nets.actor, &s)[0];
        assert!((start + 0.4).abs() < 1e-12);
        actor_update(&batch, &mut nets, &mut adam, &cfg).unwrap();
        let one = actor_normalized(&nets.actor, &s)[0];
        assert!(one > start, "first step moves toward the peak: {one} vs {start}");
        for _ in 0..300 {
            actor_update(&batch, &mut nets, &mut adam, &cfg).unwrap();
        }
        let settled = actor_normalized(&nets.actor, &s)[0];
        assert!((settled - 0.3).abs() < 0.05, "settles near the peak, got {settled}");
    }

    #[test]
    fn soft_update_examples_and_contraction() {
        let online = seeded_nets(17).critic;
        let mut target = constant_critic(0.0);
        // Shape mismatch is reported, not silently broadcast.
        assert!(soft_update(&mut target, &online, 0.5).is_err());

        let mut target = seeded_nets(18).critic;
        let frozen = target.clone();
        soft_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target, frozen, "tau 0 changes nothing");
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, online, "tau 1 copies");

        let mut simple_target = Mlp {
            layers: vec![Layer { w: vec![vec![0.0]], b: vec![0.0], act: Activation::Identity }],
        };
        let simple_online = Mlp {
            layers: vec![Layer { w: vec![vec![2.0]], b: vec![2.0], act: Activation::Identity }],
        };
        soft_update(&mut simple_target, &simple_online, 0.5).unwrap();
        assert_eq!(simple_target.layers[0].w[0][0], 1.0);

        let mut target = seeded_nets(19).critic;
        let mut previous_gap = f64::INFINITY;
        for _ in 0..20 {
            soft_update(&mut target, &online, 0.1).unwrap();
            let gap = target
                .params()
                .zip(online.params())
                .map(|(t, o)| (t - o).abs())
                .fold(0.0f64, f64::max);
            assert!(gap <= previous_gap + 1e-15, "target gap never grows");
            previous_gap = gap;
        }
    }

    #[test]
    fn select_action_examples() {
        let nets = seeded_nets(20);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = random_state(&mut rng);
        let deterministic = select_action(&nets.actor, &s, 0.0, &mut rng);
        assert_eq!(deterministic, actor_action(&nets.actor, &s));

        for _ in 0..10_000 {
            let s = random_state(&mut rng);
            let a = select_action(&nets.actor, &s, 0.7, &mut rng);
            assert!(a.in_bounds(), "noisy actions stay inside bounds: {a:?}");
        }

        let mut r1 = ChaCha8Rng::seed_from_u64(22);
        let mut r2 = ChaCha8Rng::seed_from_u64(22);
        let seq1: Vec<Action> = (0..50).map(|_| select_action(&nets.actor, &s, 0.3, &mut r1)).collect();
        let seq2: Vec<Action> = (0..50).map(|_| select_action(&nets.actor, &s, 0.3, &mut r2)).collect();
        assert_eq!(seq1, seq2);
    }

    #[test]
    fn training_produces_one_row_per_episode_and_is_seeded() {
        let cfg = tiny_cfg();
        let log1 = train(&mut StubEnv::new(), &cfg).unwrap();
        let log2 = train(&mut StubEnv::new(), &cfg).unwrap();
        assert_eq!(log1.rows.len(), 3);
        assert_eq!(log1, log2, "same seed, same config, same log");
        assert!(log1.rows.iter().enumerate().all(|(i, r)| r.episode == i + 1));
        let csv = log1.to_csv();
        assert!(csv.starts_with(TrainingLog::CSV_HEADER));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn warmup_gate_blocks_updates_until_a_batch_fits() {
        let cfg = DdpgConfig {
            batch: 256,
            episodes: 2,
            steps_per_episode: 5,
            ..DdpgConfig::default()
        };
        let mut trainer = Trainer::new(&cfg).unwrap();
        let before = trainer.nets().clone();
        let mut env = StubEnv::new();
        let r1 = trainer.run_episode(&mut env).unwrap();
        let r2 = trainer.run_episode(&mut env).unwrap();
        assert_eq!(r1.mean_critic_loss, 0.0);
        assert_eq!(r2.mean_critic_loss, 0.0);
        assert_eq!(trainer.nets(), &before, "10 transitions cannot fill a 256 batch");
    }

    #[test]
    fn checkpoint_resume_is_bit_identical() {
        let cfg = DdpgConfig { episodes: 4, ..tiny_cfg() };

        let mut straight = Trainer::new(&cfg).unwrap();
        let mut env = StubEnv::new();
        let mut straight_rows = Vec::new();
        for _ in 0..4 {
            straight_rows.push(straight.run_episode(&mut env).unwrap());
        }

        let mut first_half = Trainer::new(&cfg).unwrap();
        let mut env = StubEnv::new();
        for _ in 0..2 {
            first_half.run_episode(&mut env).unwrap();
        }
        let json = first_half.checkpoint().to_json();
        let mut resumed = Trainer::restore(Checkpoint::from_json(&json).unwrap()).unwrap();
        let mut env = StubEnv::new();
        let mut resumed_rows = Vec::new();
        for _ in 0..2 {
            resumed_rows.push(resumed.run_episode(&mut env).unwrap());
        }

        assert_eq!(resumed_rows, straight_rows[2..].to_vec());
        assert_eq!(resumed.nets(), straight.nets());
    }

    #[test]
    fn target_nets_start_as_exact_copies() {
        let nets = DdpgNets::seeded(&mut ChaCha8Rng::seed_from_u64(23));
        assert_eq!(nets.actor, nets.actor_target);
        assert_eq!(nets.critic, nets.critic_target);
        assert_eq!(nets.actor.in_dim(), STATE_DIM);
        assert_eq!(nets.actor.out_dim(), ACTION_DIM);
        assert_eq!(nets.critic.in_dim(), CRITIC_IN);
        assert_eq!(nets.critic.out_dim(), 1);
    }

    #[test]
    fn hard_copy_mode_snaps_targets_periodically() {
        let cfg = DdpgConfig {
            target_update: TargetUpdate::HardEvery(3),
            ..tiny_cfg()
        };
        let mut trainer = Trainer::new(&cfg).unwrap();
        let mut env = StubEnv::new();
        for _ in 0..3 {
            trainer.run_episode(&mut env).unwrap();
        }
        // updates = 3 episodes * 6 steps - warmup(3) = 15; 15 % 3 == 0, so
        // the last update hard-copied and targets equal onlines exactly.
        assert_eq!(trainer.nets().critic, trainer.nets().critic_target);
        assert_eq!(trainer.nets().actor, trainer.nets().actor_target);
    }
}
