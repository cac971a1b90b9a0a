"""Actor/critic tests: widths, masking, uniformity at zero weights,
sampling statistics and evaluation without a critic."""

import numpy as np
import pytest

from magnnet.errors import ShapeError
from magnnet.gnn import HIDDEN
from magnnet.policy import (ACTOR_HIDDEN, ActorParams, actor_forward,
                            critic_forward, init_actor_params,
                            init_critic_params, sample_action)

M_MAX = 4


def zero_actor(m_max=M_MAX):
    p = init_actor_params(np.random.default_rng(0), m_max)
    for t in p.parameters():
        t.data = np.zeros_like(t.data)
    return p


class TestActor:
    def test_input_width_is_m_plus_7(self):
        p = init_actor_params(np.random.default_rng(1), M_MAX)
        assert p.w1.data.shape == (M_MAX + 7, ACTOR_HIDDEN)
        assert p.w2.data.shape == (ACTOR_HIDDEN, M_MAX + 1)
        assert p.m_max == M_MAX

    def test_uniform_at_zero_weights(self):
        p = zero_actor()
        obs = np.random.default_rng(2).normal(size=(3, M_MAX + 1))
        emb = np.zeros((3, HIDDEN))
        dist = actor_forward(obs, emb, p, np.ones((3, M_MAX + 1), bool))
        assert np.allclose(dist.p, 1.0 / (M_MAX + 1))

    def test_masked_entries_zero_probability(self):
        p = init_actor_params(np.random.default_rng(3), M_MAX)
        mask = np.ones((2, M_MAX + 1), bool)
        mask[0, 2] = False
        mask[1, 1:] = False
        dist = actor_forward(np.zeros((2, M_MAX + 1)), np.zeros((2, HIDDEN)),
                             p, mask)
        assert dist.p[0, 2] == 0.0
        assert dist.p[1, 0] == 1.0
        assert np.allclose(dist.p.sum(axis=1), 1.0)

    def test_reject_mask_rejected(self):
        p = init_actor_params(np.random.default_rng(4), M_MAX)
        mask = np.ones((1, M_MAX + 1), bool)
        mask[0, 0] = False
        with pytest.raises(ShapeError):
            actor_forward(np.zeros((1, M_MAX + 1)), np.zeros((1, HIDDEN)),
                          p, mask)

    def test_wrong_obs_width_rejected(self):
        p = init_actor_params(np.random.default_rng(5), M_MAX)
        with pytest.raises(ShapeError):
            actor_forward(np.zeros((1, M_MAX + 3)), np.zeros((1, HIDDEN)),
                          p, np.ones((1, M_MAX + 3), bool))

    def test_single_agent_1d_input(self):
        p = init_actor_params(np.random.default_rng(6), M_MAX)
        dist = actor_forward(np.zeros(M_MAX + 1), np.zeros(HIDDEN), p,
                             np.ones(M_MAX + 1, bool))
        assert dist.p.shape == (1, M_MAX + 1)


class TestCritic:
    def test_scalar_output(self):
        p = init_critic_params(np.random.default_rng(7), n_max=4, m_max=M_MAX)
        v = critic_forward(np.zeros((4, HIDDEN)), np.zeros((M_MAX, 4)), p)
        assert v.data.shape == ()

    def test_width_mismatch_rejected(self):
        p = init_critic_params(np.random.default_rng(8), n_max=4, m_max=M_MAX)
        with pytest.raises(ShapeError):
            critic_forward(np.zeros((5, HIDDEN)), np.zeros((M_MAX, 4)), p)


class TestSampling:
    def test_greedy_takes_argmax(self):
        probs = np.array([[0.1, 0.7, 0.2], [0.6, 0.3, 0.1]])
        from magnnet.policy import ActionDistribution
        from magnnet.tensor import Tensor
        dist = ActionDistribution(Tensor(probs), np.ones((2, 3), bool))
        actions, logp = sample_action(dist, np.random.default_rng(0),
                                      greedy=True)
        assert list(actions) == [1, 0]
        assert np.allclose(logp, np.log([0.7, 0.6]))

    def test_sampling_matches_distribution(self):
        from magnnet.policy import ActionDistribution
        from magnnet.tensor import Tensor
        probs = np.array([[0.2, 0.8]])
        dist = ActionDistribution(Tensor(probs), np.ones((1, 2), bool))
        rng = np.random.default_rng(1)
        draws = [sample_action(dist, rng)[0][0] for _ in range(2000)]
        assert 0.75 < np.mean(draws) < 0.85

    def test_never_samples_masked_action(self):
        from magnnet.policy import ActionDistribution
        from magnnet.tensor import Tensor
        probs = np.array([[0.5, 0.0, 0.5]])
        mask = np.array([[True, False, True]])
        dist = ActionDistribution(Tensor(probs), mask)
        rng = np.random.default_rng(2)
        for _ in range(200):
            a, _ = sample_action(dist, rng)
            assert a[0] != 1

    def test_deterministic_per_rng_state(self):
        from magnnet.policy import ActionDistribution
        from magnnet.tensor import Tensor
        probs = np.full((5, 3), 1 / 3)
        dist = ActionDistribution(Tensor(probs), np.ones((5, 3), bool))
        a1, _ = sample_action(dist, np.random.default_rng(9))
        a2, _ = sample_action(dist, np.random.default_rng(9))
        assert np.array_equal(a1, a2)
