import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventrl.mdp import (
    ALL,
    ANY,
    GRID_ACTIONS,
    DomainError,
    GridSpecError,
    GridWorldSpec,
    Query,
    TabularMDP,
    apply_discount_transform,
    at,
    build_gold_miner,
    default_gold_miner_spec,
    from_rewards,
    random_mdp,
    state_index,
    validate,
)


def two_state(row00=(0.5, 0.5), p1=None):
    P = np.array([[[0.5, 0.5]], [[0.0, 1.0]]])
    P[0, 0] = row00
    return TabularMDP(P, [1.0, 0.0], np.full((2, 1), 0.5) if p1 is None else p1, 3)


class TestValidate:
    def test_well_formed(self):
        assert validate(two_state()) == []

    def test_bad_row_sum(self):
        assert validate(two_state(row00=(0.5, 0.4))) == ["transition row 0,0 sums to 0.9"]

    def test_event_out_of_range_names_index(self):
        report = validate(two_state(p1=np.array([[0.5], [1.2]])))
        assert len(report) == 1
        assert "event_prob[1,0]" in report[0]

    def test_negative_and_initial(self):
        mdp = TabularMDP(np.array([[[1.5, -0.5]], [[0.0, 1.0]]]), [0.7, 0.2], np.zeros((2, 1)), 1)
        report = validate(mdp)
        assert any("0,0->1 is negative" in r for r in report)
        assert any("initial_dist sums to" in r for r in report)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            TabularMDP(np.ones((2, 1, 2)) / 2, [1.0], np.zeros((2, 1)), 1)


class TestQuery:
    def test_parse(self):
        assert Query.parse("ALL") == ALL
        assert Query.parse("at:3") == at(3)
        assert Query.parse("at", 2) == at(2)
        assert str(at(4)) == "at:4"

    def test_at_needs_positive_time(self):
        with pytest.raises(DomainError):
            at(0)

    def test_at_beyond_horizon(self):
        with pytest.raises(DomainError):
            at(5).check_horizon(4)

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            Query("exactly-once")


class TestGoldMiner:
    def test_default_is_valid_and_sized(self):
        spec = default_gold_miner_spec()
        mdp = build_gold_miner(spec)
        assert validate(mdp) == []
        assert mdp.num_states == spec.width * spec.height - len(spec.walls)
        assert mdp.num_actions == 5
        assert set(np.unique(mdp.event_prob)) == {0.0, 0.1, 1.0}
        assert mdp.initial_dist[state_index(mdp, spec.start)] == 1.0

    def test_stay_at_high_mine_self_loops(self):
        mdp = build_gold_miner()
        g = state_index(mdp, (0, 3))
        assert mdp.transitions[g, GRID_ACTIONS.index("stay"), g] == 1.0

    def test_walls_and_boundaries_block(self):
        mdp = build_gold_miner()
        s = state_index(mdp, (0, 1))
        down = GRID_ACTIONS.index("down")
        up = GRID_ACTIONS.index("up")
        assert mdp.transitions[s, down, s] == 1.0
        assert mdp.transitions[s, up, s] == 1.0

    def test_degenerate_grid(self):
        mdp = build_gold_miner(GridWorldSpec(1, 1, start=(0, 0), mines=(((0, 0), 1.0),), horizon=2))
        assert mdp.num_states == 1
        np.testing.assert_array_equal(mdp.event_prob, np.ones((1, 5)))

    @pytest.mark.parametrize(
        "spec",
        [
            GridWorldSpec(3, 3, walls=frozenset({(0, 0)}), start=(0, 0)),
            GridWorldSpec(3, 3, start=(5, 0)),
            GridWorldSpec(3, 3, walls=frozenset({(1, 1)}), mines=(((1, 1), 0.5),)),
            GridWorldSpec(3, 3, mines=(((1, 1), 1.5),)),
        ],
    )
    def test_invalid_specs(self, spec):
        with pytest.raises(GridSpecError):
            build_gold_miner(spec)


class TestDiscountTransform:
    def test_gamma_one_identity(self, rng):
        mdp = random_mdp(rng, 3, 2, 4)
        big = apply_discount_transform(mdp, 1.0, ALL)
        np.testing.assert_array_equal(big.transitions[:3, :, :3], mdp.transitions)
        assert np.all(big.transitions[:3, :, 3] == 0)
        assert big.initial_dist[3] == 0

    def test_any_absorbing_has_no_event(self):
        mdp = two_state()
        big = apply_discount_transform(mdp, 0.9, ANY)
        np.testing.assert_allclose(big.transitions[:2, :, 2], 0.1)
        np.testing.assert_array_equal(big.event_prob[2], [0.0])

    def test_all_absorbing_has_certain_event(self):
        big = apply_discount_transform(two_state(), 0.9, ALL)
        np.testing.assert_array_equal(big.event_prob[2], [1.0])

    @pytest.mark.parametrize("gamma", [0.0, -0.1, 1.5])
    def test_bad_gamma(self, gamma):
        with pytest.raises(DomainError):
            apply_discount_transform(two_state(), gamma, ALL)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), gamma=st.floats(0.01, 1.0))
    def test_transform_valid_and_scaled(self, seed, gamma):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)), 3)
        big = apply_discount_transform(mdp, gamma, ANY)
        assert validate(big) == []
        S = mdp.num_states
        np.testing.assert_allclose(big.transitions[:S, :, :S].sum(axis=2), gamma, atol=1e-12)


def test_from_rewards():
    mdp = from_rewards(np.ones((1, 1, 1)), [1.0], [[np.log(0.25)]], 2)
    np.testing.assert_allclose(mdp.event_prob, [[0.25]])
    with pytest.raises(DomainError):
        from_rewards(np.ones((1, 1, 1)), [1.0], [[0.5]], 2)


def test_mdp_is_immutable(rng):
    mdp = random_mdp(rng, 2, 2, 2)
    with pytest.raises(ValueError):
        mdp.transitions[0, 0, 0] = 3.0
