import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evalrl.mdp import (
    TabularMDP,
    check_irreducible_aperiodic,
    check_policy,
    differential_q,
    entropy_reg_rate,
    evaluate_policy,
    format_mdp,
    induced_chain,
    max_mean_cycle,
    pair_occupancy,
    parse_mdp,
    reward_rate,
    shift_rewards,
    stationary_distribution,
    uniform_policy,
)
from oracles import best_deterministic_rate, random_mdp, simple_cycles_best_rate, stationary_dense


def two_cycle():
    # two states, one action each, swapping: period 2
    return TabularMDP([[1], [0]], [[0.0], [-1.0]])


class TestTabularMDP:
    def test_shapes_and_counts(self):
        mdp = TabularMDP([[0, 1], [1, 0]], [[0.0, -1.0], [-0.5, 0.0]])
        assert (mdp.num_states, mdp.num_actions, mdp.num_pairs) == (2, 2, 4)

    def test_rejects_bad_successor(self):
        with pytest.raises(ValueError, match="invalid state"):
            TabularMDP([[2]], [[0.0]])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            TabularMDP([[0, 0]], [[0.0]])

    def test_immutable(self):
        mdp = TabularMDP([[0]], [[0.0]])
        with pytest.raises(ValueError):
            mdp.reward[0, 0] = 1.0

    def test_shift_rewards(self):
        mdp = TabularMDP([[0, 0]], [[2.0, 1.0]])
        shifted, offset = shift_rewards(mdp)
        assert offset == 2.0
        assert np.array_equal(shifted.reward, [[0.0, -1.0]])


class TestPolicies:
    def test_check_policy_rejects_unnormalized(self):
        with pytest.raises(ValueError, match="sum to 1"):
            check_policy([[0.5, 0.6]])

    def test_full_support(self):
        with pytest.raises(ValueError, match="full support"):
            check_policy([[1.0, 0.0]], full_support=True)

    def test_induced_chain_is_column_stochastic(self, rng):
        mdp = random_mdp(rng, 6, 3)
        chain = induced_chain(mdp, uniform_policy(6, 3))
        assert np.allclose(chain.sum(axis=0), 1.0)

    def test_stationary_matches_dense_solve(self, rng):
        mdp = random_mdp(rng, 8, 3)
        chain = induced_chain(mdp, uniform_policy(8, 3))
        assert np.allclose(stationary_distribution(chain), stationary_dense(chain), atol=1e-10)

    def test_unused_pairs_have_no_mass(self):
        mdp = TabularMDP([[0, 0]], [[0.0, -1.0]])
        nu = pair_occupancy(mdp, [[1.0, 0.0]])
        assert nu[1] == 0.0 and reward_rate(mdp, [[1.0, 0.0]]) == 0.0

    def test_periodic_chain_converges(self):
        nu = stationary_distribution(induced_chain(two_cycle(), [[1.0], [1.0]]))
        assert np.allclose(nu, [0.5, 0.5])


class TestRates:
    def test_single_state_rate(self):
        mdp = TabularMDP([[0, 0]], [[0.0, -1.0]])
        assert reward_rate(mdp, [[0.25, 0.75]]) == pytest.approx(-0.75)

    def test_two_cycle_rate(self):
        assert reward_rate(two_cycle(), [[1.0], [1.0]]) == pytest.approx(-0.5)

    def test_entropy_rate_equals_rate_at_prior(self, rng):
        mdp = random_mdp(rng, 5, 2)
        pi = uniform_policy(5, 2)
        assert entropy_reg_rate(mdp, pi, pi, 3.0) == pytest.approx(reward_rate(mdp, pi), abs=1e-12)

    def test_entropy_rate_single_state_closed_form(self):
        # rate is E[r] - KL(pi || pi0) / beta
        mdp = TabularMDP([[0, 0]], [[0.0, -1.0]])
        pi, pi0, beta = np.array([[0.8, 0.2]]), np.array([[0.5, 0.5]]), 2.0
        kl = 0.8 * np.log(0.8 / 0.5) + 0.2 * np.log(0.2 / 0.5)
        assert entropy_reg_rate(mdp, pi, pi0, beta) == pytest.approx(-0.2 - kl / beta, abs=1e-10)

    def test_infinite_kl_rejected(self):
        mdp = TabularMDP([[0, 0]], [[0.0, -1.0]])
        with pytest.raises(ValueError, match="infinite KL"):
            entropy_reg_rate(mdp, [[0.5, 0.5]], [[1.0, 0.0]], 1.0)

    def test_differential_q_solves_bellman(self, rng):
        mdp = random_mdp(rng, 6, 2)
        pi = uniform_policy(6, 2)
        ev = evaluate_policy(mdp, pi)
        chain = induced_chain(mdp, pi)
        q = ev.q_diff.reshape(-1)
        assert np.allclose(q, mdp.reward.reshape(-1) - ev.rho + chain.T @ q, atol=1e-10)
        assert ev.nu @ q == pytest.approx(0.0, abs=1e-10)

    def test_differential_q_rejects_wrong_rate(self, rng):
        mdp = random_mdp(rng, 4, 2)
        with pytest.raises(ValueError, match="inconsistent"):
            differential_q(mdp, uniform_policy(4, 2), rho=5.0)


class TestMaxMeanCycle:
    def test_matches_enumeration_on_small_mdps(self, rng):
        for _ in range(20):
            mdp = random_mdp(rng, 5, 2)
            assert max_mean_cycle(mdp) == pytest.approx(best_deterministic_rate(mdp), abs=1e-12)

    def test_gridworld_matches_cycle_enumeration(self, grid_mdp):
        mdp, _ = grid_mdp
        assert max_mean_cycle(mdp) == pytest.approx(simple_cycles_best_rate(mdp), abs=1e-12)
        assert max_mean_cycle(mdp) == pytest.approx(-3.0 / 7.0)

    def test_disconnected_rejected(self):
        with pytest.raises(ValueError, match="strongly connected"):
            max_mean_cycle(TabularMDP([[0], [1]], [[0.0], [0.0]]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 3))
    def test_bounds_every_deterministic_rate(self, seed, n_s, n_a):
        mdp = random_mdp(np.random.default_rng(seed), n_s, n_a)
        best = max_mean_cycle(mdp)
        det = np.zeros((n_s, n_a))
        det[np.arange(n_s), np.random.default_rng(seed + 1).integers(0, n_a, n_s)] = 1.0
        mixed = 0.5 * det + 0.5 * uniform_policy(n_s, n_a)
        assert reward_rate(mdp, mixed) <= best + 1e-9


class TestDiagnostics:
    def test_irreducible_aperiodic_grid(self, grid_mdp):
        mdp, prior = grid_mdp
        assert check_irreducible_aperiodic(induced_chain(mdp, prior))

    def test_periodic_detected(self):
        diag = check_irreducible_aperiodic(induced_chain(two_cycle(), [[1.0], [1.0]]))
        assert diag.irreducible and not diag.aperiodic and diag.period == 2

    def test_reducible_detected(self):
        diag = check_irreducible_aperiodic(induced_chain(TabularMDP([[0], [1]], [[0.0], [0.0]]), [[1.0], [1.0]]))
        assert not diag.irreducible


class TestTextFormat:
    def test_round_trip(self, rng):
        mdp = random_mdp(rng, 4, 3)
        back = parse_mdp(format_mdp(mdp))
        assert np.array_equal(back.next_state, mdp.next_state)
        assert np.array_equal(back.reward, mdp.reward)

    def test_duplicate_rejected(self):
        with pytest.raises(ValueError, match="line 3: duplicate"):
            parse_mdp("states 1 actions 1\n0 0 0 0.0\n0 0 0 -1\n")

    def test_missing_rejected(self):
        with pytest.raises(ValueError, match="missing entry"):
            parse_mdp("states 1 actions 2\n0 0 0 0.0\n")

    def test_bad_header(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_mdp("nodes 2\n")
