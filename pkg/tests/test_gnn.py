"""Graph encoder tests: feature assembly, adjacency normalization,
permutation equivariance and a hand-computed forward pass."""

import numpy as np
import pytest

from magnnet import tensor as T
from magnnet.gnn import (HIDDEN, GCNParams, HeteroGraph, VELOCITY_SCALE,
                         _norm_adjacency, build_graph, gcn_encode,
                         init_gcn_params, padded_task_features)
from magnnet.world import (STATUS_CODE, WorldConfig, current_cost_matrix,
                           init_episode)


def small_state(seed=0):
    cfg = WorldConfig(grid_dims=(15, 15, 6), n_agents=4, n_tasks_initial=4,
                      n_ground=2, n_aerial=2, obstacle_density=0.08, seed=0)
    return init_episode(cfg, seed)


def identity_params(m_max):
    """Projections that copy the first HIDDEN input dims; convs identity."""
    p = init_gcn_params(np.random.default_rng(0), m_max)
    for w, n_in in ((p.wa, 5 + m_max), (p.wt, 4)):
        w.data = np.zeros((n_in, HIDDEN))
        np.fill_diagonal(w.data, 1.0)
    p.w1.data = np.eye(HIDDEN)
    p.w2.data = np.eye(HIDDEN)
    for b in (p.ba, p.bt, p.b1, p.b2):
        b.data = np.zeros(HIDDEN)
    return p


class TestBuildGraph:
    def test_feature_layout(self):
        st = small_state(1)
        cm, _ = current_cost_matrix(st)
        g = build_graph(st, cm)
        assert g.agent_x.shape == (4, 5 + st.config.m_max)
        assert g.task_x.shape == (4, 4)
        dims = np.asarray(st.config.grid_dims, dtype=float)
        for i, ag in enumerate(st.agents):
            assert np.allclose(g.agent_x[i, :3], np.asarray(ag.position) / dims)
            assert g.agent_x[i, 3] == STATUS_CODE[ag.status]
            assert g.agent_x[i, 4] == ag.velocity / VELOCITY_SCALE

    def test_edge_weights_formula(self):
        st = small_state(2)
        cm, _ = current_cost_matrix(st)
        g = build_graph(st, cm)
        finite = np.isfinite(cm.entries)
        assert np.allclose(g.edge_w[finite],
                           1.0 / (1.0 + cm.entries[finite]))
        assert (g.edge_w[~finite] == 0.0).all()

    def test_comm_radius_edges(self):
        st = small_state(3)
        cm, _ = current_cost_matrix(st)
        g = build_graph(st, cm, comm_radius=1000.0)
        assert g.comm is not None
        assert g.comm.sum() == 4 * 3  # complete, no self loops
        g2 = build_graph(st, cm, comm_radius=0.0)
        assert g2.comm.sum() == 0


class TestAdjacency:
    def test_rows_sum_to_one(self):
        st = small_state(4)
        cm, _ = current_cost_matrix(st)
        a = _norm_adjacency(build_graph(st, cm))
        assert a.shape == (8, 8)
        assert np.allclose(a.sum(axis=1), 1.0)

    def test_agent_agent_block_empty_without_comm(self):
        st = small_state(5)
        cm, _ = current_cost_matrix(st)
        a = _norm_adjacency(build_graph(st, cm))
        off_diag = a[:4, :4] - np.diag(np.diag(a[:4, :4]))
        assert np.allclose(off_diag, 0.0)


class TestEncode:
    def test_output_shape(self):
        st = small_state(6)
        cm, _ = current_cost_matrix(st)
        p = init_gcn_params(np.random.default_rng(1), st.config.m_max)
        emb = gcn_encode(build_graph(st, cm), p)
        assert emb.data.shape == (4, HIDDEN)

    def test_hand_computed_single_agent_single_task(self):
        # one agent, one task, identity weights: two rounds of averaging
        agent_x = np.zeros((1, 9))
        agent_x[0, :3] = [0.5, 0.25, 0.0]
        task_x = np.zeros((1, 4))
        task_x[0, :3] = [1.0, 1.0, 0.0]
        edge_w = np.array([[0.5]])  # cost 1 -> weight 1/2
        g = HeteroGraph(agent_x, task_x, edge_w, None, [0])
        p = identity_params(m_max=4)
        emb = gcn_encode(g, p).data

        task_proj = np.zeros((1, HIDDEN))
        task_proj[:, :4] = task_x  # 4 input features copied, rest zero
        h0 = np.vstack([agent_x[:, :HIDDEN], task_proj])
        a = np.array([[1.0, 0.5], [0.5, 1.0]])
        a = a / a.sum(axis=1, keepdims=True)
        h1 = np.maximum(a @ h0, 0.0)
        h2 = np.maximum(a @ h1, 0.0)
        assert np.allclose(emb, h2[:1])

    def test_permutation_equivariance_over_tasks(self):
        # relabeling task columns must permute nothing for agents: the
        # aggregation is a sum over tasks, so embeddings are invariant
        st = small_state(7)
        cm, _ = current_cost_matrix(st)
        g = build_graph(st, cm)
        p = init_gcn_params(np.random.default_rng(2), st.config.m_max)
        base = gcn_encode(g, p).data

        perm = np.array([2, 0, 3, 1])
        g2 = HeteroGraph(g.agent_x, g.task_x[perm], g.edge_w[:, perm],
                         g.comm, [g.task_slots[k] for k in perm],
                         g.use_edge_weights)
        assert np.allclose(gcn_encode(g2, p).data, base)

    def test_permutation_equivariance_over_agents(self):
        st = small_state(8)
        cm, _ = current_cost_matrix(st)
        g = build_graph(st, cm)
        p = init_gcn_params(np.random.default_rng(3), st.config.m_max)
        base = gcn_encode(g, p).data
        perm = np.array([3, 1, 0, 2])
        g2 = HeteroGraph(g.agent_x[perm], g.task_x, g.edge_w[perm],
                         g.comm, g.task_slots, g.use_edge_weights)
        assert np.allclose(gcn_encode(g2, p).data, base[perm])

    def test_no_tasks_still_encodes(self):
        st = small_state(9)
        for t in st.tasks:
            t.status = type(t.status).DONE
        cm, _ = current_cost_matrix(st)
        g = build_graph(st, cm)
        p = init_gcn_params(np.random.default_rng(4), st.config.m_max)
        assert gcn_encode(g, p).data.shape == (4, HIDDEN)

    def test_gradients_flow_to_all_params(self):
        st = small_state(10)
        cm, _ = current_cost_matrix(st)
        g = build_graph(st, cm)
        p = init_gcn_params(np.random.default_rng(5), st.config.m_max)
        loss = T.tsum(T.square(gcn_encode(g, p)))
        grads = T.backward(loss, p.parameters())
        assert any(np.abs(gr).sum() > 0 for gr in grads)


class TestPaddedTaskFeatures:
    def test_slot_layout(self):
        st = small_state(11)
        cm, _ = current_cost_matrix(st)
        g = build_graph(st, cm)
        out = padded_task_features(g, m_max=6)
        assert out.shape == (6, 4)
        for row, slot in zip(g.task_x, g.task_slots):
            assert np.array_equal(out[slot], row)
        assert np.allclose(out[4:], 0.0)
