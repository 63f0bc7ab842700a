import numpy as np
import pytest

from mpglab import (EnumerationCapError, JointPolicy, build_blackhole,
                    decode_joint_action, encode_joint_action, induced_chain,
                    iter_joint_actions, joint_action_probs, occupancy,
                    validate_game, validate_policy, value_exact)
from conftest import random_game, random_policy


def small_valid_game():
    rewards = np.zeros((2, 2, 4))
    rewards[0, 0, :] = 0.5
    transitions = np.zeros((2, 4, 2))
    transitions[:, :, 0] = 0.25
    transitions[:, :, 1] = 0.75
    return dict(num_agents=2, num_states=2, action_counts=(2, 2),
                rewards=rewards, transitions=transitions, discount=0.9,
                initial_dist=np.array([0.5, 0.5]))


class TestValidation:
    def test_well_formed_game_gives_empty_report(self):
        from mpglab import TabularMarkovGame
        assert validate_game(TabularMarkovGame(**small_valid_game())) == []

    def test_substochastic_transition_row_is_cited(self):
        from mpglab import TabularMarkovGame
        kw = small_valid_game()
        kw["transitions"][1, 3, 1] = 0.65  # row sums to 0.9
        report = validate_game(TabularMarkovGame(**kw))
        assert any("state 1" in p and "joint action 3" in p for p in report)

    def test_out_of_range_reward_is_cited(self):
        from mpglab import TabularMarkovGame
        kw = small_valid_game()
        kw["rewards"][1, 0, 2] = 1.5
        report = validate_game(TabularMarkovGame(**kw))
        assert any("out of [-1, 1]" in p for p in report)

    def test_validation_never_mutates(self):
        from mpglab import TabularMarkovGame
        kw = small_valid_game()
        kw["rewards"][0, 0, 0] = 2.0
        game = TabularMarkovGame(**kw)
        before = game.rewards.copy()
        validate_game(game)
        assert np.array_equal(before, game.rewards)

    def test_policy_validation(self):
        good = JointPolicy.uniform(2, (2, 3))
        assert validate_policy(good, (2, 3), 2) == []
        bad = JointPolicy([np.array([[0.5, 0.4], [0.5, 0.5]]),
                           np.ones((2, 3)) / 3])
        assert any("sums to" in p for p in validate_policy(bad))


class TestJointActionEncoding:
    def test_agent_zero_is_most_significant(self):
        counts = (2, 3, 2)
        assert encode_joint_action((0, 0, 0), counts) == 0
        assert encode_joint_action((0, 0, 1), counts) == 1
        assert encode_joint_action((0, 1, 0), counts) == 2
        assert encode_joint_action((1, 0, 0), counts) == 6

    def test_round_trip_and_iteration_order(self, rng):
        counts = (3, 2, 4)
        for j, actions in enumerate(iter_joint_actions(counts)):
            assert encode_joint_action(actions, counts) == j
            assert decode_joint_action(j, counts) == actions


class TestInducedChain:
    def test_deterministic_policy_picks_matching_rows(self, rng):
        game = random_game(rng, num_agents=2, num_states=3)
        actions = [[1, 0, 1], [0, 1, 1]]
        policy = JointPolicy.deterministic(3, game.action_counts, actions)
        p_pi, r_pi = induced_chain(game, policy)
        for s in range(3):
            j = encode_joint_action((actions[0][s], actions[1][s]), game.action_counts)
            assert np.allclose(p_pi[s], game.transitions[s, j], atol=1e-15)
            assert np.allclose(r_pi[:, s], game.rewards[:, s, j], atol=1e-15)

    def test_blackhole_origin_self_loop_under_sure_stay(self):
        game = build_blackhole(0.9)
        stay = JointPolicy.deterministic(2, (2, 2), [[0, 0], [0, 0]])
        p_pi, _ = induced_chain(game, stay)
        assert p_pi[0, 0] == 1.0

    def test_uniform_policy_matches_brute_force(self, rng):
        game = random_game(rng)
        policy = JointPolicy.uniform(game.num_states, game.action_counts)
        p_pi, r_pi = induced_chain(game, policy)
        # Oracle: direct enumeration over every joint action.
        for s in range(game.num_states):
            row = np.zeros(game.num_states)
            rew = np.zeros(game.num_agents)
            for j, acts in enumerate(iter_joint_actions(game.action_counts)):
                w = np.prod([policy.probs[i][s, a] for i, a in enumerate(acts)])
                row += w * game.transitions[s, j]
                rew += w * game.rewards[:, s, j]
            assert np.allclose(p_pi[s], row, atol=1e-12)
            assert np.allclose(r_pi[:, s], rew, atol=1e-12)
            assert abs(p_pi[s].sum() - 1.0) < 1e-10

    def test_cap_violation_raises(self, rng):
        game = random_game(rng, num_agents=2, action_counts=(3, 3))
        policy = random_policy(game, rng)
        with pytest.raises(EnumerationCapError):
            induced_chain(game, policy, cap=8)


class TestValueExact:
    def test_blackhole_closed_form(self, rng):
        # V at the origin state is the expected stage reward over 1 - g*p*q.
        gamma = 0.9
        game = build_blackhole(gamma)
        scale = game.meta["reward_scale"]
        r0 = [np.array([[5.0, -1.0], [-5.0, 1.0]]) / scale,
              np.array([[2.0, -2.0], [-4.0, 4.0]]) / scale]
        for _ in range(100):
            p, q = rng.random(), rng.random()
            policy = JointPolicy([np.array([[p, 1 - p], [0.5, 0.5]]),
                                  np.array([[q, 1 - q], [0.5, 0.5]])])
            rep = value_exact(game, policy)
            for i in range(2):
                stage = np.array([p, 1 - p]) @ r0[i] @ np.array([q, 1 - q])
                assert rep.values[i, 0] == pytest.approx(
                    stage / (1 - gamma * p * q), abs=1e-10)

    def test_zero_reward_game_has_zero_values(self, rng):
        game = random_game(rng)
        game.rewards[:] = 0.0
        rep = value_exact(game, random_policy(game, rng))
        assert np.allclose(rep.values, 0.0, atol=1e-14)
        assert np.allclose(rep.q_values, 0.0, atol=1e-14)

    def test_bellman_identity_and_advantage_mean_zero(self, rng):
        for _ in range(20):
            game = random_game(rng, gamma=float(rng.choice([0.3, 0.9])))
            policy = random_policy(game, rng)
            rep = value_exact(game, policy)
            p_pi, r_pi = induced_chain(game, policy)
            residual = rep.values - (r_pi + game.discount * rep.values @ p_pi.T)
            assert np.abs(residual).max() < 1e-10
            for s in range(game.num_states):
                w = joint_action_probs(policy, s)
                mean_adv = rep.advantages[:, s, :] @ w
                assert np.abs(mean_adv).max() < 1e-10

    def test_matches_monte_carlo_rollouts(self):
        # Oracle: termination-sampled rollouts; with survival probability g
        # per step, the undiscounted reward sum is an unbiased value sample.
        rng = np.random.default_rng(7)
        game = random_game(rng, num_agents=2, num_states=3,
                           action_counts=(2, 2), gamma=0.5)
        policy = random_policy(game, rng)
        rep = value_exact(game, policy, start=game.initial_dist)
        episodes = 1_000_000
        mc = np.random.default_rng(99)
        states = game.sample_initial(episodes, mc)
        totals = np.zeros((episodes, game.num_agents))
        alive = np.arange(episodes)
        while len(alive):
            acts = np.empty((len(alive), 2), dtype=int)
            for i in range(2):
                rows = policy.probs[i][states[alive]]
                acts[:, i] = (np.cumsum(rows, axis=1)
                              < mc.random((len(alive), 1))).sum(axis=1)
            totals[alive] += game.batch_rewards(states[alive], acts)
            keep = mc.random(len(alive)) < game.discount
            nxt = game.batch_next_states(states[alive], acts, mc)
            states[alive] = nxt
            alive = alive[keep]
        exact = rep.values @ game.initial_dist
        est = totals.mean(axis=0)
        sem = totals.std(axis=0, ddof=1) / np.sqrt(episodes)
        assert np.all(np.abs(est - exact) <= 3 * sem)


class TestOccupancy:
    def test_blackhole_closed_form(self, rng):
        gamma = 0.9
        game = build_blackhole(gamma)
        for _ in range(20):
            p, q = rng.random(), rng.random()
            policy = JointPolicy([np.array([[p, 1 - p], [0.5, 0.5]]),
                                  np.array([[q, 1 - q], [0.5, 0.5]])])
            d = occupancy(game, policy, start=np.array([1.0, 0.0]))
            assert d[0] == pytest.approx((1 - gamma) / (1 - gamma * p * q), abs=1e-12)
            assert d.sum() == pytest.approx(1.0, abs=1e-10)

    def test_absorbing_state_is_point_mass(self):
        from mpglab import TabularMarkovGame
        game = TabularMarkovGame(
            num_agents=1, num_states=1, action_counts=(2,),
            rewards=np.zeros((1, 1, 2)), transitions=np.ones((1, 2, 1)),
            discount=0.8, initial_dist=np.array([1.0]))
        d = occupancy(game, JointPolicy.uniform(1, (2,)))
        assert np.allclose(d, [1.0], atol=1e-14)

    def test_lower_bound_by_start_distribution(self, rng):
        for _ in range(20):
            game = random_game(rng, gamma=float(rng.choice([0.3, 0.9])))
            policy = random_policy(game, rng)
            mu = rng.dirichlet(np.ones(game.num_states))
            d = occupancy(game, policy, start=mu)
            assert np.all(d >= (1 - game.discount) * mu - 1e-12)


class TestPerformanceDifference:
    def test_identity_on_random_triples(self, rng):
        # V_i(pi) - V_i(pi') with pi' differing only in agent i equals the
        # occupancy-weighted mean advantage of pi under pi'.
        for _ in range(30):
            game = random_game(rng, gamma=float(rng.choice([0.5, 0.9])))
            policy = random_policy(game, rng)
            agent = int(rng.integers(game.num_agents))
            other = policy.replace_agent(
                agent, rng.dirichlet(np.ones(game.action_counts[agent]),
                                     size=game.num_states))
            rho = rng.dirichlet(np.ones(game.num_states))
            lhs = (value_exact(game, policy).values[agent]
                   - value_exact(game, other).values[agent]) @ rho
            d = occupancy(game, policy, start=rho)
            adv = value_exact(game, other).advantages[agent]
            mean_adv = np.array([joint_action_probs(policy, s) @ adv[s]
                                 for s in range(game.num_states)])
            rhs = (d @ mean_adv) / (1 - game.discount)
            assert lhs == pytest.approx(rhs, abs=1e-8)
