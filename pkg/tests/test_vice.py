import numpy as np
import pytest

from conftest import single_state
from eventrl.mdp import ALL, ANY, TabularMDP, at, build_gold_miner, default_distractor_spec, random_mdp, state_index
from eventrl.policy_opt import SoftmaxPolicyParams, sample_trajectories
from eventrl.vice import (
    DiscriminatorState,
    EventModel,
    NoSuccessExamplesError,
    SuccessDataset,
    VICEConfig,
    balanced_loss_and_grad,
    collect_success_examples,
    discriminator_output,
    discriminator_reward,
    naive_classifier_baseline,
    time_averaged_policy,
    vice_train,
    visit_probability,
)


class TestDiscriminator:
    def test_two_thirds(self):
        state = DiscriminatorState(EventModel(np.zeros((1, 4))), np.full((1, 4), 0.25))
        assert discriminator_output(state, 0, 2) == pytest.approx(2 / 3, abs=1e-15)

    def test_reward_identity(self, rng):
        model = EventModel(rng.normal(size=(4, 3)), offset=0.3)
        pi = rng.dirichlet(np.ones(3), size=4)
        state = DiscriminatorState(model, pi)
        s, a = np.repeat(np.arange(4), 3), np.tile(np.arange(3), 4)
        np.testing.assert_allclose(discriminator_reward(state, s, a), model.f()[s, a] - np.log(pi[s, a]), atol=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        model = EventModel(rng.normal(size=(3, 2)), offset=-0.2)
        pi = rng.dirichlet(np.ones(2), size=3)
        pos = (np.array([0, 1, 1]), np.array([1, 0, 0]), np.full(3, 1 / 3))
        neg = (np.array([0, 2, 2, 1]), np.array([0, 1, 0, 0]), np.full(4, 0.25))
        _, g_l, g_c, _ = balanced_loss_and_grad(DiscriminatorState(model, pi), pos, neg)

        def loss(logits, offset):
            return balanced_loss_and_grad(DiscriminatorState(EventModel(logits, offset), pi), pos, neg)[0]

        h = 1e-6
        for idx in np.ndindex(3, 2):
            e = np.zeros((3, 2))
            e[idx] = h
            fd = (loss(model.logits + e, model.offset) - loss(model.logits - e, model.offset)) / (2 * h)
            assert g_l[idx] == pytest.approx(fd, abs=1e-8)
        fd_c = (loss(model.logits, model.offset + h) - loss(model.logits, model.offset - h)) / (2 * h)
        assert g_c == pytest.approx(fd_c, abs=1e-8)

    def test_gradient_signs(self):
        model = EventModel.zeros(2, 1, state_only=True)
        state = DiscriminatorState(model, np.full((2, 1), 1.0))
        pos = (np.array([0]), np.array([0]), np.ones(1))
        neg = (np.array([1]), np.array([0]), np.ones(1))
        _, g_l, _, _ = balanced_loss_and_grad(state, pos, neg)
        assert g_l[0, 0] < 0 < g_l[1, 0]

    def test_zero_policy_rejected(self):
        from eventrl.mdp import DomainError

        state = DiscriminatorState(EventModel(np.zeros((1, 2))), np.array([[1.0, 0.0]]))
        with pytest.raises(DomainError):
            discriminator_output(state, 0, 1)

    def test_time_average(self):
        pi = np.stack([np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])])
        np.testing.assert_array_equal(time_averaged_policy(pi), [[0.5, 0.5]])


class TestCollect:
    def test_gold_miner_any_at_mines(self):
        mdp = build_gold_miner()
        mines = {state_index(mdp, (0, 0)), state_index(mdp, (0, 3))}
        data = collect_success_examples(mdp, ANY, 50, seed=0)
        assert {s for s, _ in data.examples} <= mines

    def test_certain_events_record_first_step(self, rng):
        mdp = random_mdp(rng, 3, 2, 4).with_events(np.ones((3, 2)))
        data = collect_success_examples(mdp, ANY, 4000, seed=1)
        freq = np.bincount([s for s, _ in data.examples], minlength=3) / 4000
        np.testing.assert_allclose(freq, mdp.initial_dist, atol=0.03)

    def test_all_records_every_step(self, rng):
        mdp = random_mdp(rng, 3, 2, 4).with_events(np.ones((3, 2)))
        data = collect_success_examples(mdp, ALL, 4000, seed=1)
        marg = np.zeros(3)
        from eventrl.oracle import state_marginals

        marg = state_marginals(mdp).mean(axis=0)
        freq = np.bincount([s for s, _ in data.examples], minlength=3) / 4000
        np.testing.assert_allclose(freq, marg, atol=0.03)

    def test_deterministic(self):
        mdp = build_gold_miner()
        assert collect_success_examples(mdp, ANY, 30, 5) == collect_success_examples(mdp, ANY, 30, 5)

    def test_state_only(self):
        data = collect_success_examples(build_gold_miner(), at(8), 10, 0, state_only=True)
        assert data.state_only and all(a is None for _, a in data.examples)

    @pytest.mark.parametrize("query", [ALL, ANY, at(2)])
    def test_no_success(self, query):
        with pytest.raises(NoSuccessExamplesError, match="no success examples generatable"):
            collect_success_examples(single_state(0.0, 3), query, 5, 0)


class TestNaiveClassifier:
    def test_separates_seen_cells(self):
        mdp = build_gold_miner(default_distractor_spec())
        data = collect_success_examples(mdp, ANY, 20, 0, state_only=True)
        model = naive_classifier_baseline(data, mdp, 2400, 0)
        p = model.event_prob(mdp.num_actions)[:, 0]
        goal = state_index(mdp, (0, 4))
        assert p[goal] > 0.5
        batch = sample_trajectories(mdp, SoftmaxPolicyParams.uniform(mdp), 200, 0)
        unvisited = np.setdiff1d(np.arange(mdp.num_states), np.concatenate([batch.states.ravel(), [goal]]))
        np.testing.assert_allclose(p[unvisited], 0.5)
        start = state_index(mdp, (4, 0))
        assert p[start] < 0.5

    def test_needs_enough_negatives(self):
        data = SuccessDataset(((0, None),) * 5)
        with pytest.raises(ValueError):
            naive_classifier_baseline(data, single_state(0.5, 2), 3, 0)


class TestVICE:
    def _chain(self, n=4, T=6):
        # left/right on a line; start at 0
        P = np.zeros((n, 2, n))
        for s in range(n):
            P[s, 0, max(s - 1, 0)] = 1.0
            P[s, 1, min(s + 1, n - 1)] = 1.0
        rho = np.zeros(n)
        rho[0] = 1.0
        return TabularMDP(P, rho, np.zeros((n, 2)), T)

    def test_recovers_goal(self):
        mdp = self._chain()
        data = SuccessDataset(((3, None),) * 10, ANY)
        result = vice_train(mdp, data, ANY, VICEConfig(iters=60, batch_size=64))
        assert result.improved
        assert int(np.argmax(result.event_model.logits[:, 0])) == 3
        target = np.zeros((4, 2))
        target[3] = 1.0
        pi = result.params.policy_array(mdp.horizon)
        uniform = SoftmaxPolicyParams.uniform(mdp).policy_array(mdp.horizon)
        assert visit_probability(mdp, pi, target) > visit_probability(mdp, uniform, target)

    def test_unreachable_example_never_improves(self):
        mdp = self._chain()
        P = mdp.transitions.copy()
        P[2, 1] = 0.0
        P[2, 1, 2] = 1.0
        mdp = mdp.replace(transitions=P)
        result = vice_train(mdp, SuccessDataset(((3, None),), ANY), ANY, VICEConfig(iters=10, batch_size=32))
        assert not result.improved
        assert all(row[3] == 0.0 for row in result.log)

    def test_seeded_runs_repeat(self):
        mdp = self._chain()
        data = SuccessDataset(((3, 1), (2, 1)), ANY)
        cfg = VICEConfig(iters=5, batch_size=32, seed=3)
        a, b = vice_train(mdp, data, ANY, cfg), vice_train(mdp, data, ANY, cfg)
        np.testing.assert_array_equal(a.event_model.logits, b.event_model.logits)
        assert a.log == b.log

    def test_out_of_range_dataset(self):
        from eventrl.mdp import DomainError

        with pytest.raises(DomainError):
            vice_train(self._chain(), SuccessDataset(((9, None),)), ANY, VICEConfig(iters=1))
