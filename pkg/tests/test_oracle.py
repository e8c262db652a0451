import numpy as np
import pytest

from conftest import single_state
from eventrl.inference import backward_all, policy_from_messages
from eventrl.mdp import ALL, ANY, TabularMDP, at, build_gold_miner, random_mdp
from eventrl.oracle import (
    EnumerationLimitError,
    count_atoms,
    enumerate_trajectories,
    exact_objective,
    exact_policy_gradient,
    exact_query_prob,
    kl_to_posterior,
    state_marginals,
)
from eventrl.policy_opt import SoftmaxPolicyParams


class TestEnumerate:
    def test_single_atom(self):
        atoms = list(enumerate_trajectories(single_state(0.5, 3)))
        assert atoms == [((0, 0, 0), (0, 0, 0), 1.0)]

    def test_two_starts(self):
        P = np.zeros((2, 1, 2))
        P[0, 0, 1] = P[1, 0, 0] = 1.0
        mdp = TabularMDP(P, [0.5, 0.5], np.ones((2, 1)), 2)
        atoms = list(enumerate_trajectories(mdp))
        assert [a.prob for a in atoms] == [0.5, 0.5]
        assert [a.states for a in atoms] == [(0, 1), (1, 0)]

    def test_gold_miner_sums_to_one(self):
        atoms = enumerate_trajectories(build_gold_miner())
        assert len(atoms) == 5 ** 8
        assert atoms.prob.sum() == pytest.approx(1.0, abs=1e-10)

    def test_random_policy_sums_to_one(self, rng):
        mdp = random_mdp(rng, 4, 3, 4)
        params = SoftmaxPolicyParams(rng.normal(size=(4, 4, 3)))
        assert enumerate_trajectories(mdp, params.policy_array(4)).prob.sum() == pytest.approx(1.0, abs=1e-10)

    def test_lexicographic_order(self, rng):
        atoms = enumerate_trajectories(random_mdp(rng, 2, 2, 3))
        keys = [tuple(np.ravel(np.column_stack([s, a]))) for s, a, _ in atoms]
        assert keys == sorted(keys)

    def test_ceiling(self):
        with pytest.raises(EnumerationLimitError, match="390625"):
            enumerate_trajectories(build_gold_miner(), ceiling=1000)

    def test_count_matches(self, rng):
        mdp = random_mdp(rng, 3, 2, 3, sparsity=0.5)
        pi = np.full((3, 3, 2), 0.5)
        assert count_atoms(mdp.transitions, mdp.initial_dist, pi) == len(enumerate_trajectories(mdp))


class TestQueryProb:
    @pytest.mark.parametrize("query", [ALL, ANY, at(2)])
    def test_certain_event(self, rng, query):
        mdp = random_mdp(rng, 3, 2, 3).with_events(np.ones((3, 2)))
        assert exact_query_prob(mdp, query, 1, 0, 1) == pytest.approx(1.0, abs=1e-12)

    def test_closed_forms(self):
        mdp = single_state(0.5, 2)
        assert exact_query_prob(mdp, ALL, 1, 0, 0) == pytest.approx(0.25)
        assert exact_query_prob(mdp, ANY, 1, 0, 0) == pytest.approx(0.75)


class TestObjective:
    def test_certain_single_action(self):
        assert exact_objective(single_state(1.0, 3), np.ones((3, 1, 1)), ALL) == 0.0

    def test_pure_entropy(self):
        mdp = single_state(1.0, 1, num_actions=2)
        assert exact_objective(mdp, np.full((1, 1, 2), 0.5), ALL) == pytest.approx(np.log(2))

    def test_zero_evidence_is_neg_inf(self):
        assert exact_objective(single_state(0.0, 2), np.ones((2, 1, 1)), ALL) == -np.inf

    def test_gold_miner_posterior_beats_perturbations(self, rng):
        mdp = build_gold_miner()
        post = policy_from_messages(backward_all(mdp)).pi
        best = exact_objective(mdp, post, ALL)
        assert np.isfinite(best)
        for _ in range(3):
            noisy = post * np.exp(0.3 * rng.normal(size=post.shape))
            noisy /= noisy.sum(axis=-1, keepdims=True)
            assert exact_objective(mdp, noisy, ALL) < best


class TestGradient:
    def test_symmetric_is_zero(self):
        mdp = single_state(0.4, 3, num_actions=2)
        for query in (ALL, ANY, at(2)):
            g = exact_policy_gradient(mdp, SoftmaxPolicyParams.uniform(mdp), query)
            np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_finite_differences(self, rng):
        from eventrl.check import finite_difference_gradient

        mdp = random_mdp(rng, 3, 2, 3)
        params = SoftmaxPolicyParams(rng.normal(size=(3, 3, 2)), entropy_coeff=0.7)
        for query in (ALL, ANY, at(2)):
            exact = exact_policy_gradient(mdp, params, query)
            np.testing.assert_allclose(exact, finite_difference_gradient(mdp, params, query), atol=1e-6, rtol=0)

    def test_shared_logits_sum_over_time(self, rng):
        mdp = random_mdp(rng, 2, 2, 3)
        logits = rng.normal(size=(1, 2, 2))
        shared = SoftmaxPolicyParams(logits, shared=True)
        full = SoftmaxPolicyParams(np.repeat(logits, 3, axis=0))
        np.testing.assert_allclose(exact_policy_gradient(mdp, shared, ANY),
                                   exact_policy_gradient(mdp, full, ANY).sum(axis=0, keepdims=True), atol=1e-14)

    def test_gold_miner_any_ascent(self):
        mdp = build_gold_miner()
        params = SoftmaxPolicyParams.uniform(mdp)
        g = exact_policy_gradient(mdp, params, ANY)
        before = exact_objective(mdp, params.policy_array(8), ANY)
        after = exact_objective(mdp, params.with_logits(params.logits + 1e-2 * g).policy_array(8), ANY)
        assert after > before


def test_zero_kl_for_deterministic_dynamics(rng):
    for _ in range(10):
        mdp = random_mdp(rng, 4, 3, 4, deterministic=True, point_start=True)
        post = policy_from_messages(backward_all(mdp))
        assert abs(kl_to_posterior(mdp, post, ALL)) < 1e-9


def test_kl_positive_for_stochastic_dynamics(rng):
    mdp = random_mdp(rng, 3, 2, 3, point_start=True)
    assert kl_to_posterior(mdp, policy_from_messages(backward_all(mdp)), ALL) > 1e-6


def test_state_marginals_rows(rng):
    marg = state_marginals(random_mdp(rng, 3, 2, 4))
    np.testing.assert_allclose(marg.sum(axis=1), 1.0, atol=1e-12)
