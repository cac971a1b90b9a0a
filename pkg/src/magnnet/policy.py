"""Shared per-agent actor and centralized critic.

One ActorParams instance serves every agent (parameter sharing); agents
differ only through their observations and graph embeddings.  The critic
consumes the full padded global state and exists only during training:
evaluation runs must work with critic parameters absent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .gnn import HIDDEN
from .tensor import Tensor

ACTOR_HIDDEN = 128
CRITIC_HIDDEN = 128


@dataclass
class ActorParams:
    """(m_max + 7) -> 128 -> (m_max + 1), ReLU hidden, softmax head."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def m_max(self) -> int:
        return self.w2.data.shape[1] - 1

    def parameters(self) -> list:
        return [self.w1, self.b1, self.w2, self.b2]

    def named(self, prefix: str = "actor") -> dict:
        return {f"{prefix}.{k}": getattr(self, k)
                for k in ("w1", "b1", "w2", "b2")}


@dataclass
class CriticParams:
    """(6*n_max + 4*m_max) -> 128 -> 1."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def parameters(self) -> list:
        return [self.w1, self.b1, self.w2, self.b2]

    def named(self, prefix: str = "critic") -> dict:
        return {f"{prefix}.{k}": getattr(self, k)
                for k in ("w1", "b1", "w2", "b2")}


@dataclass
class ActionDistribution:
    probs: Tensor          # rows over m_max + 1 actions
    mask: np.ndarray       # True = selectable; action 0 always True

    @property
    def p(self) -> np.ndarray:
        return self.probs.data


def init_actor_params(rng: np.random.Generator, m_max: int) -> ActorParams:
    n_in = m_max + 7
    n_out = m_max + 1
    return ActorParams(
        w1=T.param(T.glorot_uniform(rng, n_in, ACTOR_HIDDEN)),
        b1=T.param(np.zeros(ACTOR_HIDDEN)),
        w2=T.param(T.glorot_uniform(rng, ACTOR_HIDDEN, n_out)),
        b2=T.param(np.zeros(n_out)),
    )


def init_critic_params(rng: np.random.Generator, n_max: int,
                       m_max: int) -> CriticParams:
    n_in = HIDDEN * n_max + 4 * m_max
    return CriticParams(
        w1=T.param(T.glorot_uniform(rng, n_in, CRITIC_HIDDEN)),
        b1=T.param(np.zeros(CRITIC_HIDDEN)),
        w2=T.param(T.glorot_uniform(rng, CRITIC_HIDDEN, 1)),
        b2=T.param(np.zeros(1)),
    )


def actor_forward(obs, emb, p: ActorParams, mask) -> ActionDistribution:
    """Masked softmax policy over {reject, request slot 1..m_max}.

    `obs` rows are [status, slot costs] of length m_max + 1; `emb` rows
    are the 6-wide agent embeddings.  Accepts a single agent (1-D) or a
    batch (2-D rows).
    """
    obs_t = T.as_tensor(np.atleast_2d(np.asarray(obs, dtype=np.float64))) \
        if not isinstance(obs, Tensor) else obs
    emb_t = emb if isinstance(emb, Tensor) else \
        T.as_tensor(np.atleast_2d(np.asarray(emb, dtype=np.float64)))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    if obs_t.data.shape[1] != p.m_max + 1:
        raise ShapeError(
            f"obs width {obs_t.data.shape[1]} != m_max+1 = {p.m_max + 1}")
    if emb_t.data.shape[1] != HIDDEN:
        raise ShapeError(f"embedding width {emb_t.data.shape[1]} != {HIDDEN}")
    if not mask[:, 0].all():
        raise ShapeError("reject action must never be masked")
    x = T.concat([obs_t, emb_t], axis=1)
    h = T.relu(T.add(T.matmul(x, p.w1), p.b1))
    logits = T.add(T.matmul(h, p.w2), p.b2)
    return ActionDistribution(T.masked_softmax(logits, mask), mask)


def critic_forward(agent_embs, task_feats, p: CriticParams) -> Tensor:
    """Scalar value of the global state.

    `agent_embs` is n_max x 6 (zero rows for absent agents), `task_feats`
    m_max x 4 (zero rows for absent slots).
    """
    emb_t = agent_embs if isinstance(agent_embs, Tensor) \
        else T.as_tensor(np.asarray(agent_embs, dtype=np.float64))
    task_t = task_feats if isinstance(task_feats, Tensor) \
        else T.as_tensor(np.asarray(task_feats, dtype=np.float64))
    flat = T.concat([T.reshape(emb_t, (1, -1)), T.reshape(task_t, (1, -1))],
                    axis=1)
    if flat.data.shape[1] != p.w1.data.shape[0]:
        raise ShapeError(
            f"critic input width {flat.data.shape[1]} != {p.w1.data.shape[0]}")
    h = T.relu(T.add(T.matmul(flat, p.w1), p.b1))
    v = T.add(T.matmul(h, p.w2), p.b2)
    return T.reshape(v, ())


def sample_action(dist: ActionDistribution, rng: np.random.Generator,
                  greedy: bool = False):
    """Draw one action per row; returns (actions, natural-log probs)."""
    p = dist.p
    squeeze = p.ndim == 1
    p2 = np.atleast_2d(p)
    actions = np.empty(p2.shape[0], dtype=int)
    for i, row in enumerate(p2):
        if greedy:
            actions[i] = int(np.argmax(row))
        else:
            actions[i] = int(rng.choice(len(row), p=row / row.sum()))
    logp = np.log(p2[np.arange(len(actions)), actions])
    if squeeze:
        return int(actions[0]), float(logp[0])
    return actions, logp
