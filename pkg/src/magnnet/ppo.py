"""CTDE training loop: rollout collection, GAE, clipped-surrogate PPO
updates with an entropy bonus, metrics logging and checkpointing.

All agents share one actor; their transitions pool into a single buffer.
The centralized critic sees the padded global state (all agent
embeddings + all task slot features) and is dropped at evaluation time.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import CheckpointMismatchError, NumericError
from .gnn import (GCNParams, HIDDEN, build_graph, gcn_encode, init_gcn_params,
                  padded_task_features)
from .policy import (ActorParams, CriticParams, actor_forward, critic_forward,
                     init_actor_params, init_critic_params, sample_action)
from .tensor import AdamState, Tensor, adam_step, backward, zero_grads
from .world import Episode, WorldConfig, terminal_bonus


@dataclass
class PPOConfig:
    learning_rate: float = 1e-5
    train_batch: int = 512
    minibatch: int = 64
    epochs_per_update: int = 10
    entropy_coef: float = 0.05
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    value_coef: float = 0.5
    total_steps: int = 100_000
    checkpoint_interval: int = 25  # updates between periodic checkpoints
    normalize_advantages: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.train_batch % self.minibatch != 0:
            raise ValueError("minibatch must divide train_batch")

    @classmethod
    def from_dict(cls, d: dict) -> "PPOConfig":
        return cls(**d)


@dataclass
class ModelParams:
    """Full parameter bundle; critic is optional (evaluation mode)."""

    gcn: GCNParams
    actor: ActorParams
    critic: CriticParams | None
    n_max: int
    m_max: int

    def parameters(self, include_critic: bool = True) -> list:
        out = self.gcn.parameters() + self.actor.parameters()
        if include_critic and self.critic is not None:
            out += self.critic.parameters()
        return out

    def named(self) -> dict:
        out = {}
        out.update(self.gcn.named())
        out.update(self.actor.named())
        if self.critic is not None:
            out.update(self.critic.named())
        return out

    @classmethod
    def init(cls, rng: np.random.Generator, n_max: int, m_max: int,
             with_critic: bool = True) -> "ModelParams":
        return cls(
            gcn=init_gcn_params(rng, m_max),
            actor=init_actor_params(rng, m_max),
            critic=init_critic_params(rng, n_max, m_max) if with_critic else None,
            n_max=n_max, m_max=m_max)

    def save(self, path) -> None:
        T.save_checkpoint(path, self.named(),
                          {"n_max": self.n_max, "m_max": self.m_max})

    @classmethod
    def load(cls, path, require_critic: bool = False) -> "ModelParams":
        arrays, manifest = T.load_checkpoint(path)
        n_max, m_max = int(manifest["n_max"]), int(manifest["m_max"])
        rng = np.random.default_rng(0)
        has_critic = any(k.startswith("critic.") for k in arrays)
        if require_critic and not has_critic:
            raise CheckpointMismatchError("checkpoint has no critic parameters")
        model = cls.init(rng, n_max, m_max, with_critic=has_critic)
        for name, p in model.named().items():
            if name not in arrays:
                raise CheckpointMismatchError(f"missing parameter {name}")
            if tuple(arrays[name].shape) != p.data.shape:
                raise CheckpointMismatchError(
                    f"{name}: shape {arrays[name].shape} != {p.data.shape}")
            p.data = arrays[name]
        return model

    def check_scenario(self, n_agents: int, m_max: int) -> None:
        if n_agents > self.n_max or m_max != self.m_max:
            raise CheckpointMismatchError(
                f"checkpoint (n_max={self.n_max}, m_max={self.m_max}) does not "
                f"cover scenario (n_agents={n_agents}, m_max={m_max})")


@dataclass
class StepRecord:
    """One synchronous decision round for all agents."""

    graph: object
    obs: np.ndarray        # N x (m_max + 1)
    masks: np.ndarray      # N x (m_max + 1)
    actions: np.ndarray    # N
    log_probs: np.ndarray  # N
    rewards: np.ndarray    # N
    value: float           # centralized estimate at this state
    done: bool = False     # last decision step of its episode


@dataclass
class RolloutBuffer:
    steps: list = field(default_factory=list)
    episode_rewards: list = field(default_factory=list)  # team reward / episode
    episode_count: int = 0

    @property
    def n_transitions(self) -> int:
        return sum(len(s.actions) for s in self.steps)

    @property
    def n_agents(self) -> int:
        return len(self.steps[0].actions)


def _padded_embeddings(emb: Tensor, n_max: int) -> Tensor:
    n = emb.data.shape[0]
    if n == n_max:
        return emb
    pad = Tensor(np.zeros((n_max - n, HIDDEN)))
    return T.concat([emb, pad], axis=0)


def _forward_step(model: ModelParams, graph, obs, masks, with_value: bool):
    emb = gcn_encode(graph, model.gcn)
    dist = actor_forward(obs, emb, model.actor, masks)
    value = None
    if with_value and model.critic is not None:
        value = critic_forward(_padded_embeddings(emb, model.n_max),
                               padded_task_features(graph, model.m_max),
                               model.critic)
    return dist, value


def collect_rollout(env_factory, model: ModelParams, config: PPOConfig,
                    rng: np.random.Generator,
                    min_transitions: int | None = None) -> RolloutBuffer:
    """Run whole episodes under the current policy until the buffer holds
    at least `min_transitions` (default: config.train_batch) transitions.

    Episodes always run to termination, so every recorded trajectory is
    terminal and GAE needs no bootstrap value.
    """
    target = config.train_batch if min_transitions is None else min_transitions
    buffer = RolloutBuffer()
    while buffer.n_transitions < target:
        ep = env_factory(int(rng.integers(2 ** 31)))
        ep_steps: list[StepRecord] = []
        while not ep.terminated:
            if ep.decision_due():
                obs, masks, cm, _ = ep.observe()
                graph = build_graph(ep.state, cm)
                with T.no_grad():
                    dist, value = _forward_step(model, graph, obs, masks,
                                                with_value=True)
                    actions, logps = sample_action(dist, rng)
                _, rewards = ep.act(actions)
                ep_steps.append(StepRecord(
                    graph, obs, masks, np.asarray(actions),
                    np.asarray(logps), rewards.copy(),
                    float(value.data) if value is not None else 0.0))
            ep.tick()
        if not ep_steps:
            continue
        if ep.all_tasks_done():
            bonus = terminal_bonus(ep.config.shaping, ep.optimal_total(),
                                   ep.achieved_total())
            ep_steps[-1].rewards += bonus
        ep_steps[-1].done = True
        buffer.steps.extend(ep_steps)
        buffer.episode_rewards.append(
            float(sum(s.rewards.mean() for s in ep_steps)))
        buffer.episode_count += 1
    return buffer


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float,
                bootstrap_value: float = 0.0):
    """Per-agent generalized advantage estimates on individual rewards.

    delta_t = r_t + gamma * V_{t+1} * (1 - done) - V_t
    A_t     = delta_t + gamma * lam * (1 - done) * A_{t+1}

    Returns (advantages, returns), each shaped (n_steps, n_agents);
    returns = advantages + values.
    """
    n_steps = len(buffer.steps)
    n_agents = buffer.n_agents
    advantages = np.zeros((n_steps, n_agents))
    last_adv = np.zeros(n_agents)
    next_value = bootstrap_value
    for t in range(n_steps - 1, -1, -1):
        step = buffer.steps[t]
        nonterminal = 0.0 if step.done else 1.0
        if step.done:
            next_value = bootstrap_value
        delta = step.rewards + gamma * next_value * nonterminal - step.value
        last_adv = delta + gamma * lam * nonterminal * last_adv
        advantages[t] = last_adv
        next_value = step.value
    values = np.array([[s.value] * n_agents for s in buffer.steps])
    return advantages, advantages + values


def ppo_update(buffer: RolloutBuffer, advantages: np.ndarray,
               returns: np.ndarray, model: ModelParams, config: PPOConfig,
               adam: AdamState, rng: np.random.Generator) -> dict:
    """Clipped-surrogate PPO epochs over shuffled minibatches.

    Minibatches are drawn at decision-step granularity (all of a step's
    agent transitions stay together, sharing one graph forward pass);
    with the default sizes each minibatch still holds `minibatch`
    transitions.  One Adam step per minibatch.
    """
    n_agents = buffer.n_agents
    steps_per_mb = max(1, config.minibatch // n_agents)
    adv = advantages
    if config.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    params = model.parameters()
    stats = {"policy_loss": [], "value_loss": [], "entropy": [],
             "clip_fraction": []}
    n_steps = len(buffer.steps)
    for _ in range(config.epochs_per_update):
        order = rng.permutation(n_steps)
        for lo in range(0, n_steps, steps_per_mb):
            chunk = order[lo:lo + steps_per_mb]
            logp_new, entropies, values = [], [], []
            old_logp, mb_adv, mb_ret = [], [], []
            for s_idx in chunk:
                step = buffer.steps[s_idx]
                dist, value = _forward_step(model, step.graph, step.obs,
                                            step.masks, with_value=True)
                logp_new.append(T.log(T.gather_rows(dist.probs, step.actions)))
                entropies.append(T.entropy_rows(dist.probs))
                values.append(T.reshape(value, (1,)))
                old_logp.append(step.log_probs)
                mb_adv.append(adv[s_idx])
                # centralized value regresses to the mean per-agent return
                mb_ret.append(returns[s_idx].mean())
            logp_new = T.concat(logp_new)
            entropy = T.mean(T.concat(entropies))
            values_t = T.concat(values)
            old_logp = np.concatenate(old_logp)
            mb_adv = np.concatenate(mb_adv)
            mb_ret = np.asarray(mb_ret)

            ratio = T.exp(T.sub(logp_new, Tensor(old_logp)))
            adv_t = Tensor(mb_adv)
            surrogate = T.minimum(
                T.mul(ratio, adv_t),
                T.mul(T.clip(ratio, 1.0 - config.clip_epsilon,
                             1.0 + config.clip_epsilon), adv_t))
            policy_loss = T.mul(T.mean(surrogate), -1.0)
            value_loss = T.mean(T.square(T.sub(values_t, Tensor(mb_ret))))
            loss = T.add(T.add(policy_loss,
                               T.mul(value_loss, config.value_coef)),
                         T.mul(entropy, -config.entropy_coef))
            if not np.isfinite(loss.data):
                raise NumericError("NaN/Inf PPO loss")
            zero_grads(params)
            grads = backward(loss, params)
            adam.lr = config.learning_rate
            adam_step(params, grads, adam)

            stats["policy_loss"].append(float(policy_loss.data))
            stats["value_loss"].append(float(value_loss.data))
            stats["entropy"].append(float(entropy.data))
            stats["clip_fraction"].append(
                float(np.mean(np.abs(ratio.data - 1.0) > config.clip_epsilon)))
    return {k: float(np.mean(v)) for k, v in stats.items()}


METRICS_COLUMNS = ["update_index", "env_steps", "mean_episode_reward",
                   "mean_entropy", "policy_loss", "value_loss",
                   "clip_fraction"]


def train(world_config: WorldConfig, ppo_config: PPOConfig, seed: int,
          out_dir: str) -> dict:
    """Alternate collect/update until the env-step budget is spent.

    Writes a metrics CSV (one row per update) and periodic + final
    checkpoints under `out_dir`.  On numeric divergence the last good
    checkpoint is kept and the error re-raised.
    """
    os.makedirs(out_dir, exist_ok=True)
    master = np.random.default_rng(seed)
    init_rng = np.random.default_rng(master.integers(2 ** 31))
    env_rng = np.random.default_rng(master.integers(2 ** 31))
    shuffle_rng = np.random.default_rng(master.integers(2 ** 31))
    sample_rng = env_rng  # env seeds and action sampling share a stream

    model = ModelParams.init(init_rng, world_config.n_agents,
                             world_config.m_max)
    adam = AdamState(lr=ppo_config.learning_rate)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    ckpt_path = os.path.join(out_dir, "checkpoint.json")

    def env_factory(ep_seed):
        return Episode(world_config, ep_seed)

    env_steps = 0
    update_index = 0
    with open(metrics_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        while env_steps < ppo_config.total_steps:
            buffer = collect_rollout(env_factory, model, ppo_config,
                                     sample_rng)
            env_steps += buffer.n_transitions
            advantages, returns = compute_gae(
                buffer, ppo_config.gamma, ppo_config.gae_lambda)
            try:
                stats = ppo_update(buffer, advantages, returns, model,
                                   ppo_config, adam, shuffle_rng)
            except NumericError:
                model_path = ckpt_path if os.path.exists(ckpt_path) else None
                raise NumericError(
                    f"training diverged at update {update_index}; last good "
                    f"checkpoint: {model_path}")
            update_index += 1
            writer.writerow([
                update_index, env_steps,
                f"{np.mean(buffer.episode_rewards):.6f}",
                f"{stats['entropy']:.6f}",
                f"{stats['policy_loss']:.6f}",
                f"{stats['value_loss']:.6f}",
                f"{stats['clip_fraction']:.6f}",
            ])
            f.flush()
            if update_index % ppo_config.checkpoint_interval == 0:
                model.save(ckpt_path)
    model.save(ckpt_path)
    return {"checkpoint": ckpt_path, "metrics": metrics_path,
            "updates": update_index, "env_steps": env_steps}
