"""Heterogeneous agent-task graph and 2-layer graph-convolution encoder.

Agent nodes carry [normalized position (3), status (1), normalized
velocity (1), normalized slot costs (m_max)]; task nodes carry
[normalized location (3), assigned flag (1)].  The graph is complete
bipartite agent-task; each edge carries weight 1/(1+c_ij) used (by
default) to weight the degree-normalized mean aggregation.  Optional
agent-agent edges within a communication radius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .world import (SENTINEL_NORMALIZED_COST, STATUS_CODE, EpisodeState,
                    TaskStatus, slot_cost_array)

HIDDEN = 6
VELOCITY_SCALE = 10.0


@dataclass
class HeteroGraph:
    agent_x: np.ndarray          # N x (5 + m_max)
    task_x: np.ndarray           # M_live x 4
    edge_w: np.ndarray           # N x M_live, 1/(1+c); 0 where unreachable
    comm: np.ndarray | None      # N x N bool, optional agent-agent edges
    task_slots: list             # observation slot of each live task
    use_edge_weights: bool = True

    @property
    def n_agents(self) -> int:
        return self.agent_x.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.task_x.shape[0]


@dataclass
class GCNParams:
    """Per-type input projections to width 6 plus two conv layers."""

    wa: Tensor
    ba: Tensor
    wt: Tensor
    bt: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def parameters(self) -> list:
        return [self.wa, self.ba, self.wt, self.bt,
                self.w1, self.b1, self.w2, self.b2]

    def named(self, prefix: str = "gcn") -> dict:
        return {f"{prefix}.{k}": getattr(self, k)
                for k in ("wa", "ba", "wt", "bt", "w1", "b1", "w2", "b2")}


def init_gcn_params(rng: np.random.Generator, m_max: int) -> GCNParams:
    agent_in = 5 + m_max
    return GCNParams(
        wa=T.param(T.glorot_uniform(rng, agent_in, HIDDEN)),
        ba=T.param(np.zeros(HIDDEN)),
        wt=T.param(T.glorot_uniform(rng, 4, HIDDEN)),
        bt=T.param(np.zeros(HIDDEN)),
        w1=T.param(T.glorot_uniform(rng, HIDDEN, HIDDEN)),
        b1=T.param(np.zeros(HIDDEN)),
        w2=T.param(T.glorot_uniform(rng, HIDDEN, HIDDEN)),
        b2=T.param(np.zeros(HIDDEN)),
    )


def build_graph(state: EpisodeState, cm, comm_radius: float | None = None,
                use_edge_weights: bool = True) -> HeteroGraph:
    """Assemble node features and edge weights from the live world."""
    cfg = state.config
    dims = np.asarray(cfg.grid_dims, dtype=np.float64)
    live = state.live_tasks()
    task_ids = [t.id for t in live]
    slot_costs = slot_cost_array(state, cm, task_ids)

    agent_x = np.zeros((len(state.agents), 5 + cfg.m_max))
    for i, ag in enumerate(state.agents):
        agent_x[i, :3] = np.asarray(ag.position) / dims
        agent_x[i, 3] = STATUS_CODE[ag.status]
        agent_x[i, 4] = ag.velocity / VELOCITY_SCALE
        row = slot_costs[i]
        agent_x[i, 5:] = np.where(np.isfinite(row), row / cfg.cost_scale,
                                  SENTINEL_NORMALIZED_COST)

    task_x = np.zeros((len(live), 4))
    for j, t in enumerate(live):
        task_x[j, :3] = np.asarray(t.location) / dims
        task_x[j, 3] = 1.0 if t.status is TaskStatus.ASSIGNED else 0.0

    edge_w = np.where(np.isfinite(cm.entries), 1.0 / (1.0 + cm.entries), 0.0)

    comm = None
    if comm_radius is not None:
        pos = np.array([a.position for a in state.agents], dtype=np.float64)
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        comm = (d <= comm_radius) & ~np.eye(len(state.agents), dtype=bool)

    return HeteroGraph(agent_x, task_x, edge_w, comm,
                       [state.slot_of_task(t.id) for t in live],
                       use_edge_weights)


def _norm_adjacency(g: HeteroGraph) -> np.ndarray:
    """Row-normalized (self-loop included) weighted adjacency over the
    stacked [agents; tasks] node ordering."""
    n, m = g.n_agents, g.n_tasks
    size = n + m
    a = np.eye(size)
    w = g.edge_w if g.use_edge_weights else (g.edge_w > 0).astype(np.float64)
    if m:
        a[:n, n:] = w
        a[n:, :n] = w.T
    if g.comm is not None:
        a[:n, :n] += g.comm.astype(np.float64)
    return a / a.sum(axis=1, keepdims=True)


def gcn_encode(g: HeteroGraph, p: GCNParams) -> Tensor:
    """Two rounds of weighted-mean message passing; returns the agent
    rows, one 6-vector per agent."""
    h_agents = T.add(T.matmul(Tensor(g.agent_x), p.wa), p.ba)
    if g.n_tasks:
        h_tasks = T.add(T.matmul(Tensor(g.task_x), p.wt), p.bt)
        h = T.concat([h_agents, h_tasks], axis=0)
    else:
        h = h_agents
    adj = Tensor(_norm_adjacency(g))
    h = T.relu(T.add(T.matmul(T.matmul(adj, h), p.w1), p.b1))
    h = T.relu(T.add(T.matmul(T.matmul(adj, h), p.w2), p.b2))
    return T.slice_rows(h, 0, g.n_agents)


def padded_task_features(g: HeteroGraph, m_max: int) -> np.ndarray:
    """Task features laid out by observation slot, zero rows for absent
    slots; feeds the centralized critic."""
    out = np.zeros((m_max, 4))
    for row, slot in zip(g.task_x, g.task_slots):
        if slot is not None:
            out[slot] = row
    return out
