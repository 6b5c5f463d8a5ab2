import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfql.instances import built_in_instances, chain, random_mdp, zero_reward
from dfql.mdp import (EpisodicMDP, OfflineDataset, PolicyStack, bellman_residual,
                      empirical_occupancy, exact_value, monte_carlo_value, occupancy, optimal,
                      rollout)

import oracles


def _random_policy(rng, H, S, A):
    return PolicyStack(rng.dirichlet(np.ones(A), size=(H, S)))


def _constant_mdp(H, S, A, reward):
    P = np.full((H, S, A, S), 1.0 / S)
    return EpisodicMDP(P, np.full((H, S, A), reward), np.full(S, 1.0 / S))


class TestValidation:
    def test_rejects_bad_transition_rows(self):
        P = np.full((1, 2, 1, 2), 0.6)
        with pytest.raises(ValueError):
            EpisodicMDP(P, np.zeros((1, 2, 1)), np.array([1.0, 0.0]))

    def test_rejects_rewards_outside_unit_interval(self):
        P = np.full((1, 2, 1, 2), 0.5)
        with pytest.raises(ValueError):
            EpisodicMDP(P, np.full((1, 2, 1), 1.5), np.array([1.0, 0.0]))

    def test_rejects_bad_initial_distribution(self):
        P = np.full((1, 2, 1, 2), 0.5)
        with pytest.raises(ValueError):
            EpisodicMDP(P, np.zeros((1, 2, 1)), np.array([0.7, 0.7]))

    def test_policy_rows_must_sum_to_one(self):
        with pytest.raises(ValueError):
            PolicyStack(np.full((1, 2, 2), 0.3))

    def test_policy_shape_mismatch_is_rejected(self):
        mdp = random_mdp(3, 2, 3).mdp
        with pytest.raises(ValueError, match="does not match"):
            exact_value(mdp, PolicyStack.uniform(3, 3, 4))

    def test_arrays_are_read_only(self):
        mdp = random_mdp(3, 2, 2).mdp
        with pytest.raises(ValueError):
            mdp.rewards[0, 0, 0] = 0.5


class TestExactValue:
    def test_zero_reward_gives_zero_value(self):
        inst = zero_reward(4, 3, 5)
        _, v = exact_value(inst.mdp, inst.behavior)
        assert v == 0.0

    def test_single_step_unit_reward(self):
        mdp = _constant_mdp(1, 3, 2, 1.0)
        _, v = exact_value(mdp, PolicyStack.uniform(1, 3, 2))
        assert v == pytest.approx(1.0, abs=1e-15)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        mdp = random_mdp(4, 3, 5, seed=3).mdp
        pol = _random_policy(rng, 5, 4, 3)
        values, v = exact_value(mdp, pol)
        ref = oracles.backward_values(np.asarray(mdp.transitions), np.asarray(mdp.rewards),
                                      pol.probs)
        np.testing.assert_allclose(values.V, ref, atol=1e-12)
        assert v == pytest.approx(float(mdp.initial_dist @ ref[0]), abs=1e-12)

    def test_matches_monte_carlo(self):
        inst = random_mdp(3, 2, 3, seed=11)
        _, v = exact_value(inst.mdp, inst.behavior)
        mean, se = monte_carlo_value(inst.mdp, inst.behavior, 1_000_000, seed=5)
        assert abs(mean - v) <= 3 * se

    def test_values_bounded_by_remaining_horizon(self):
        inst = random_mdp(5, 3, 6, seed=2)
        values, _ = exact_value(inst.mdp, inst.behavior)
        H = inst.mdp.horizon
        for h in range(H + 1):
            assert np.all(values.V[h] >= 0) and np.all(values.V[h] <= H - h + 1e-12)


class TestOptimal:
    def test_dominant_action_is_chosen(self):
        H, S, A = 3, 2, 3
        r = np.zeros((H, S, A))
        r[:, :, 2] = 1.0
        mdp = EpisodicMDP(np.full((H, S, A, S), 0.5), r, np.array([0.5, 0.5]))
        pi, _, v = optimal(mdp)
        assert np.all(pi.actions() == 2)
        assert v == pytest.approx(3.0)

    def test_zero_reward_ties_pick_lowest_action(self):
        pi, values, v = optimal(zero_reward(3, 4, 3).mdp)
        assert np.all(pi.actions() == 0)
        assert v == 0.0 and np.all(values.V == 0)

    def test_dominates_random_policies(self):
        mdp = random_mdp(4, 3, 4, seed=8).mdp
        _, _, v_star = optimal(mdp)
        rng = np.random.default_rng(0)
        for _ in range(100):
            _, v = exact_value(mdp, _random_policy(rng, 4, 4, 3))
            assert v <= v_star + 1e-12

    def test_bellman_residual_is_zero(self):
        mdp = random_mdp(5, 3, 5, seed=1).mdp
        _, values, _ = optimal(mdp)
        assert bellman_residual(mdp, values) <= 1e-10
        values_pi, _ = exact_value(mdp, PolicyStack.uniform(5, 5, 3))
        assert bellman_residual(mdp, values_pi) <= 1e-10

    def test_chain_goal_value(self):
        inst = chain(5, 4)
        _, _, v_star = optimal(inst.mdp)
        assert v_star == pytest.approx(1.0)


class TestOccupancy:
    def test_first_step_is_product(self):
        inst = random_mdp(4, 3, 3, seed=4)
        d = occupancy(inst.mdp, inst.behavior)
        expected = inst.mdp.initial_dist[:, None] * inst.behavior.probs[0]
        np.testing.assert_array_equal(d[0], expected)

    def test_uniform_symmetry(self):
        mdp = _constant_mdp(4, 3, 2, 0.5)
        d = occupancy(mdp, PolicyStack.uniform(4, 3, 2))
        np.testing.assert_allclose(d, np.full((4, 3, 2), 1 / 6), atol=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), S=st.integers(1, 6), A=st.integers(1, 4),
           H=st.integers(1, 6))
    def test_mass_is_conserved(self, seed, S, A, H):
        inst = random_mdp(S, A, H, seed=seed)
        d = occupancy(inst.mdp, inst.behavior)
        np.testing.assert_allclose(d.sum(axis=(1, 2)), 1.0, atol=1e-10)

    def test_matches_empirical_frequencies(self):
        inst = random_mdp(3, 2, 3, seed=6)
        d = occupancy(inst.mdp, inst.behavior)
        K = 100_000
        emp = empirical_occupancy(rollout(inst.mdp, inst.behavior, K, 9), 3, 2)
        sigma = np.sqrt(d * (1 - d) / K)
        assert np.all(np.abs(emp - d) <= 4 * sigma + 1e-12)


class TestRollout:
    def test_same_seed_same_bytes(self):
        inst = random_mdp(4, 2, 3, seed=1, reward_noise="bernoulli")
        a = rollout(inst.mdp, inst.behavior, 50, 7)
        b = rollout(inst.mdp, inst.behavior, 50, 7)
        c = rollout(inst.mdp, inst.behavior, 50, 8)
        assert a.to_csv() == b.to_csv()
        assert a.to_csv() != c.to_csv()

    def test_deterministic_everything_gives_identical_episodes(self):
        inst = chain(5, 4, reward_noise="none")
        pi, _, _ = optimal(inst.mdp)
        data = rollout(inst.mdp, pi, 20, 0)
        assert np.all(data.states == data.states[0])
        assert np.all(data.rewards == data.rewards[0])

    def test_rejects_nonpositive_K(self):
        inst = chain(3, 2)
        with pytest.raises(ValueError):
            rollout(inst.mdp, inst.behavior, 0, 0)


class TestMonteCarlo:
    def test_deterministic_has_zero_stderr(self):
        inst = chain(5, 4, reward_noise="none")
        pi, _, v = optimal(inst.mdp)
        mean, se = monte_carlo_value(inst.mdp, pi, 5000, 1, chunk=700)
        assert se == 0.0 and mean == v

    def test_zero_reward_mean(self):
        inst = zero_reward()
        assert monte_carlo_value(inst.mdp, inst.behavior, 100, 0)[0] == 0.0


class TestDatasetCsv:
    def test_round_trip(self):
        inst = random_mdp(4, 3, 3, seed=2, reward_noise="bernoulli")
        data = rollout(inst.mdp, inst.behavior, 30, 4)
        text = data.to_csv()
        assert text.startswith("episode,h,s,a,r,s_next\n")
        assert "\r" not in text
        back = OfflineDataset.from_csv(text)
        np.testing.assert_array_equal(back.states, data.states)
        np.testing.assert_array_equal(back.actions, data.actions)
        np.testing.assert_array_equal(back.rewards, data.rewards)
        assert back.to_csv() == text

    def test_rewards_keep_full_precision(self):
        data = OfflineDataset(np.array([[0, 0]]), np.array([[0]]), np.array([[1 / 3]]))
        assert OfflineDataset.from_csv(data.to_csv()).rewards[0, 0] == 1 / 3

    def test_rejects_broken_contiguity(self):
        text = "episode,h,s,a,r,s_next\n0,1,0,0,0,1\n0,2,2,0,0,1\n"
        with pytest.raises(ValueError, match="contiguous"):
            OfflineDataset.from_csv(text)

    def test_rejects_wrong_header(self):
        with pytest.raises(ValueError, match="header"):
            OfflineDataset.from_csv("ep,h\n0,1\n")

    def test_parity_split(self):
        inst = random_mdp(3, 2, 2)
        data = rollout(inst.mdp, inst.behavior, 10, 0)
        even, odd = data.split_parity()
        np.testing.assert_array_equal(even.states, data.states[0::2])
        np.testing.assert_array_equal(odd.states, data.states[1::2])


class TestMdpSerialization:
    def test_json_round_trip(self, tmp_path):
        mdp = random_mdp(3, 2, 4, seed=5, reward_noise="bernoulli").mdp
        path = tmp_path / "mdp.json"
        mdp.save(path)
        back = EpisodicMDP.load(path)
        np.testing.assert_array_equal(back.transitions, mdp.transitions)
        np.testing.assert_array_equal(back.rewards, mdp.rewards)
        np.testing.assert_array_equal(back.initial_dist, mdp.initial_dist)
        assert back.reward_noise == "bernoulli"


class TestInstances:
    def test_unknown_name_lists_valid_ones(self):
        with pytest.raises(ValueError, match="chain"):
            built_in_instances("nope")

    def test_random_is_reproducible(self):
        a, b = random_mdp(4, 3, 3, seed=9).mdp, random_mdp(4, 3, 3, seed=9).mdp
        assert np.array_equal(a.transitions, b.transitions) and np.array_equal(a.rewards, b.rewards)

    def test_two_arm_variance_equal_means(self):
        inst = built_in_instances("two_arm_variance")
        _, values, v_star = optimal(inst.mdp)
        assert values.Q[0, 0, 0] == pytest.approx(values.Q[0, 0, 1])
        pi_other = PolicyStack.deterministic(np.ones((inst.mdp.horizon, 4), dtype=int), 2)
        assert exact_value(inst.mdp, pi_other)[1] == pytest.approx(v_star)

    def test_behavior_has_full_support(self):
        inst = built_in_instances("cliff", S=5, H=4)
        assert np.all(inst.behavior.probs > 0)
