import numpy as np
import pytest

from mpglab import (JointPolicy, MpgLabError, best_response, build_blackhole,
                    build_chain_mpg, build_congestion, build_random_mpg,
                    build_xor_zerosum, congestion_symmetric_nash_search,
                    CongestionSpec, cycle_residual, deterministic_nash_search,
                    iter_joint_actions, mismatch_estimate, nash_gap,
                    normal_form_potential, occupancy, potential_value,
                    potential_identity_residual, value_exact, verify_mpg)
from conftest import random_game, random_policy


class TestBestResponse:
    def test_xor_game_reply_forces_preferred_state(self):
        # With the first agent fixed on action 0 at state 0, the second
        # agent prefers state 1 and must play the action with xor sum 1.
        game = build_xor_zerosum(0.9)
        policy = JointPolicy.deterministic(2, (2, 2), [[0, 0], [0, 0]])
        br = best_response(game, policy, 1)
        assert br.actions[0] == 1  # 0 xor 0 xor 1 = 1
        assert br.bellman_residual < 1e-9

    def test_team_maximizer_has_zero_gain(self, rng):
        game, handle = build_random_mpg("team", 2, 2, 2, rng)
        profiles = deterministic_nash_search(game)
        assert profiles
        # Pick the deterministic profile with the highest common value: a
        # global maximizer of the potential is deviation-proof.
        best = max(profiles, key=lambda pr: float(
            value_exact(game, JointPolicy.deterministic(
                2, game.action_counts, pr)).values[0] @ game.initial_dist))
        policy = JointPolicy.deterministic(2, game.action_counts, best)
        values = value_exact(game, policy).values
        for i in range(2):
            br = best_response(game, policy, i)
            assert np.all(br.values - values[i] <= 1e-9)

    def test_matches_enumeration_oracle(self, rng):
        for _ in range(10):
            game = random_game(rng, num_agents=2, num_states=2,
                               action_counts=(2, 3), gamma=0.8)
            policy = random_policy(game, rng)
            agent = int(rng.integers(2))
            br = best_response(game, policy, agent)
            # Oracle: evaluate every deterministic reply of the agent.
            best = np.full(game.num_states, -np.inf)
            for choice in iter_joint_actions(
                    (game.action_counts[agent],) * game.num_states):
                table = np.zeros((game.num_states, game.action_counts[agent]))
                table[np.arange(game.num_states), list(choice)] = 1.0
                vals = value_exact(game, policy.replace_agent(agent, table))
                best = np.maximum(best, vals.values[agent])
            assert np.allclose(br.values, best, atol=1e-8)

    def test_dominance_over_random_replies(self, rng):
        game = random_game(rng, num_agents=2, gamma=0.9)
        policy = random_policy(game, rng)
        br = best_response(game, policy, 0)
        for _ in range(100):
            table = rng.dirichlet(np.ones(game.action_counts[0]),
                                  size=game.num_states)
            vals = value_exact(game, policy.replace_agent(0, table))
            assert np.all(br.values >= vals.values[0] - 1e-9)


class TestNashGap:
    def test_single_agent_optimum_has_zero_gap(self, rng):
        game = random_game(rng, num_agents=1, gamma=0.8)
        uniform = game.uniform_policy()
        br = best_response(game, uniform, 0)
        report = nash_gap(game, JointPolicy([br.table]), epsilon=1e-9)
        assert report.gap <= 1e-9
        assert report.is_eps_nash

    def test_uniform_profile_on_xor_game_is_the_mixed_nash(self):
        # Against a uniform opponent the xor transition makes the next state
        # uniform whatever the agent plays, so nobody has any influence and
        # the uniform profile is an exact (mixed) Nash.
        game = build_xor_zerosum(0.9)
        report = nash_gap(game, game.uniform_policy(), epsilon=1e-9)
        assert report.gap <= 1e-9
        assert report.is_eps_nash

    def test_every_deterministic_profile_on_xor_game_is_beatable(self):
        game = build_xor_zerosum(0.9)
        for a_choice in iter_joint_actions((2, 2)):
            for b_choice in iter_joint_actions((2, 2)):
                policy = JointPolicy.deterministic(
                    2, (2, 2), [list(a_choice), list(b_choice)])
                assert nash_gap(game, policy, epsilon=1e-3).gap > 1e-3

    def test_gains_never_negative(self, rng):
        for _ in range(5):
            game = random_game(rng)
            report = nash_gap(game, random_policy(game, rng))
            assert np.all(report.gains >= -1e-9)


class TestDeterministicNashSearch:
    def test_xor_has_none(self):
        game = build_xor_zerosum(0.9)
        assert deterministic_nash_search(game) == []

    def test_team_has_at_least_one(self, rng):
        game, _ = build_random_mpg("team", 2, 2, (2, 3), rng)
        found = deterministic_nash_search(game)
        assert len(found) >= 1
        for profile in found:
            policy = JointPolicy.deterministic(2, game.action_counts, profile)
            assert nash_gap(game, policy).gap <= 1e-9

    def test_budget_guard(self, rng):
        from mpglab import EnumerationCapError
        game = random_game(rng, num_agents=3, num_states=4,
                           action_counts=(3, 3, 3))
        with pytest.raises(EnumerationCapError):
            deterministic_nash_search(game, profile_budget=100)

    def test_symmetric_search_agrees_with_full_enumeration(self):
        # On a small congestion game the occupancy-pair scan must certify
        # exactly the canonical profiles that full enumeration certifies.
        spec = CongestionSpec(4, 2, crowd_threshold=3, spread_threshold=2)
        game = build_congestion(spec, 0.9)
        sym = congestion_symmetric_nash_search(game)
        full = deterministic_nash_search(game, profile_budget=300)
        full_set = {tuple(tuple(row) for row in profile) for profile in full}
        for entry in sym:
            assert tuple(tuple(row) for row in entry["profile"]) in full_set
        # every canonical-form profile found by full enumeration is reported
        canon = set()
        for profile in full:
            safe = tuple(sorted(row[0] for row in profile))
            dist = tuple(sorted(row[1] for row in profile))
            arr = np.asarray(profile)
            if (np.array_equal(np.sort(arr[:, 0]), arr[:, 0])
                    and np.array_equal(np.sort(arr[:, 1]), arr[:, 1])):
                canon.add((safe, dist))
        sym_pairs = set()
        for entry in sym:
            arr = np.asarray(entry["profile"])
            sym_pairs.add((tuple(np.sort(arr[:, 0])), tuple(np.sort(arr[:, 1]))))
        assert canon <= sym_pairs


class TestCycleResidual:
    def test_team_cycles_vanish(self, rng):
        game, _ = build_random_mpg("team", 3, 2, 2, rng)
        for _ in range(10):
            rest = random_policy(game, rng)
            tables = [rng.dirichlet(np.ones(2), size=2) for _ in range(4)]
            res = cycle_residual(game, 0, 2, tables[0], tables[1],
                                 tables[2], tables[3], rest,
                                 state=int(rng.integers(2)))
            assert abs(res) < 1e-10

    def test_chain_cycles_vanish(self, rng):
        game = build_chain_mpg(0.95, p0=0.25)
        for _ in range(20):
            rest = random_policy(game, rng)
            tables = [rng.dirichlet(np.ones(2), size=6) for _ in range(4)]
            res = cycle_residual(game, 0, 1, tables[0], tables[1], tables[2],
                                 tables[3], rest, state=int(rng.integers(6)))
            assert abs(res) < 1e-8

    def test_blackhole_deterministic_cycle_against_closed_form(self):
        # Oracle: V at the origin is stage(p, q) / (1 - g p q); walk the
        # deviation square (p, q) in {0, 1}^2 and sum the value changes.
        gamma = 0.9
        game = build_blackhole(gamma)
        scale = game.meta["reward_scale"]
        r = [np.array([[5.0, -1.0], [-5.0, 1.0]]) / scale,
             np.array([[2.0, -2.0], [-4.0, 4.0]]) / scale]

        def value(i, p, q):
            stage = np.array([p, 1 - p]) @ r[i] @ np.array([q, 1 - q])
            return stage / (1 - gamma * p * q)

        # corners: (p=1,q=1) -> (p=0,q=1) -> (p=0,q=0) -> (p=1,q=0)
        expected = ((value(0, 0, 1) - value(0, 1, 1))
                    + (value(1, 0, 0) - value(1, 0, 1))
                    + (value(0, 1, 0) - value(0, 0, 0))
                    + (value(1, 1, 1) - value(1, 1, 0)))
        assert abs(expected) > 1e-6  # the refutation is real

        def table(first_prob):
            return np.array([[first_prob, 1 - first_prob], [0.5, 0.5]])

        rest = game.uniform_policy()
        res = cycle_residual(game, 0, 1, table(1.0), table(0.0),
                             table(1.0), table(0.0), rest, state=0)
        assert res == pytest.approx(expected, abs=1e-10)

    def test_same_agent_rejected(self, rng):
        game = build_blackhole(0.9)
        t = rng.dirichlet(np.ones(2), size=2)
        with pytest.raises(MpgLabError):
            cycle_residual(game, 1, 1, t, t, t, t, game.uniform_policy(), 0)


class TestNormalFormPotential:
    def test_recovers_known_potential(self):
        phi = np.array([[4.0, 0.0], [-6.0, 2.0]])
        u1 = np.array([1.0, -1.0])   # depends on the other agent only
        u2 = np.array([-2.0, 2.0])
        r1 = phi + u1[None, :]
        r2 = phi + u2[:, None]
        got = normal_form_potential([r1.ravel(), r2.ravel()], (2, 2))
        assert got is not None
        assert np.ptp(got - phi.ravel()) < 1e-12

    def test_rejects_matching_pennies(self):
        r1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
        assert normal_form_potential([r1.ravel(), -r1.ravel()], (2, 2)) is None

    def test_three_agent_random_potential_game(self, rng):
        counts = (2, 3, 2)
        phi = rng.normal(size=counts)
        tables = []
        for i in range(3):
            others = tuple(c for k, c in enumerate(counts) if k != i)
            u = rng.normal(size=others)
            tables.append((phi + np.expand_dims(u, axis=i)).ravel())
        got = normal_form_potential(tables, counts)
        assert got is not None
        assert np.ptp(got - phi.ravel()) < 1e-10


class TestVerify:
    def test_team_exact(self, rng):
        game, _ = build_random_mpg("team", 2, 2, 2, rng)
        cert = verify_mpg(game, 50, rng)
        assert cert.verdict == "exact-mpg"
        assert cert.construction == "team"
        assert cert.residual_max <= 1e-8

    def test_c1_exact(self, rng):
        game, _ = build_random_mpg("c1", 2, 2, (2, 3), rng)
        cert = verify_mpg(game, 50, rng)
        assert cert.verdict == "exact-mpg"
        assert cert.construction == "agent-independent-transitions"

    def test_chain_exact_via_analytic_handle(self, rng):
        cert = verify_mpg(build_chain_mpg(0.9, 0.5), 50, rng)
        assert cert.verdict == "exact-mpg"
        assert cert.construction == "analytic"

    def test_blackhole_refuted_with_ordinal_evidence(self, rng):
        cert = verify_mpg(build_blackhole(0.9), 100, rng)
        assert cert.verdict == "ordinal-evidence"
        assert cert.witness is not None
        assert abs(cert.witness["residual"]) > 1e-6
        assert cert.ordinal["passed"]

    def test_xor_refuted(self, rng):
        cert = verify_mpg(build_xor_zerosum(0.9), 100, rng)
        assert cert.verdict == "refuted"
        assert cert.witness is not None

    def test_verdict_serializes(self, rng):
        import json
        cert = verify_mpg(build_blackhole(0.9), 50, rng)
        blob = json.dumps(cert.to_dict())
        assert "ordinal" in blob


class TestPotentialValue:
    def test_team_potential_equals_common_value(self, rng):
        game, handle = build_random_mpg("team", 2, 3, 2, rng)
        policy = random_policy(game, rng)
        mu = game.uniform_state_dist()
        phi = potential_value(game, handle, policy, mu)
        assert phi == pytest.approx(
            float(value_exact(game, policy).values[0] @ mu), abs=1e-10)

    def test_c1_deviation_identity(self, rng):
        game, handle = build_random_mpg("c1", 3, 2, 2, rng)
        assert potential_identity_residual(game, handle, rng, samples=50) < 1e-8

    def test_zero_state_potentials_give_zero(self, rng):
        from mpglab import StateRewardPotential
        game, _ = build_random_mpg("c1", 2, 2, 2, rng)
        zero = StateRewardPotential(np.zeros((2, 4)), exact=False)
        assert potential_value(game, zero, random_policy(game, rng)) == 0.0

    def test_uncertified_rejected(self, rng):
        game = random_game(rng)
        with pytest.raises(MpgLabError):
            potential_value(game, None, random_policy(game, rng))

    def test_separability_on_certified_instances(self, rng):
        # V_i(s) - Phi(s) must not move when agent i's policy changes.
        game, handle = build_random_mpg("c1", 2, 2, (2, 3), rng)
        base = random_policy(game, rng)
        for i in range(2):
            seen = []
            for _ in range(20):
                table = rng.dirichlet(np.ones(game.action_counts[i]), size=2)
                pol = base.replace_agent(i, table)
                dummy = (value_exact(game, pol).values[i]
                         - handle.values(game, pol))
                seen.append(dummy)
            spread = np.ptp(np.asarray(seen), axis=0).max()
            assert spread < 1e-8

    def test_gradient_domination_inequality(self, rng):
        # Potential gain of a best-response deviation is bounded by the
        # occupancy-mismatch factor times the best single-agent directional
        # improvement.
        from mpglab import directional_improvement, exact_gradient
        game, handle = build_random_mpg("c1", 2, 3, 2, rng, gamma=0.8)
        mu = game.uniform_state_dist()
        for _ in range(10):
            policy = random_policy(game, rng)
            for i in range(2):
                br = best_response(game, policy, i)
                deviated = br.as_policy(policy)
                lhs = (handle.value(game, deviated, mu)
                       - handle.value(game, policy, mu))
                d_br = occupancy(game, deviated, start=mu)
                coeff = float((d_br / mu).max()) / (1 - game.discount)
                grads = [exact_gradient(game, policy, j, mu) for j in range(2)]
                best_dir = directional_improvement(policy, grads, agent=i)
                assert lhs <= coeff * best_dir + 1e-8


class TestMismatchEstimate:
    def test_single_state_is_one(self, rng):
        game = random_game(rng, num_states=1)
        mu = np.array([1.0])
        assert mismatch_estimate(game, [game.uniform_policy()], mu) \
            == pytest.approx(1.0, abs=1e-12)

    def test_blackhole_uniform_matches_closed_form(self):
        game = build_blackhole(0.9)
        mu = np.array([0.5, 0.5])
        got = mismatch_estimate(game, [game.uniform_policy()], mu)
        # Closed-form occupancy from each start, averaged under uniform mu.
        g, p, q = 0.9, 0.5, 0.5
        d0_from0 = (1 - g) / (1 - g * p * q)
        d = 0.5 * np.array([d0_from0, 0.0]) + 0.5 * np.array([0.0, 1.0]) \
            + 0.5 * np.array([0.0, 1.0 - d0_from0])
        assert got == pytest.approx(float((d / mu).max()), abs=1e-12)

    def test_at_least_one(self, rng):
        for _ in range(10):
            game = random_game(rng)
            mu = rng.dirichlet(np.ones(game.num_states)) + 0.01
            mu /= mu.sum()
            got = mismatch_estimate(game, [random_policy(game, rng)], mu)
            assert got >= 1.0 - 1e-12

    def test_zero_coordinate_rejected(self, rng):
        game = random_game(rng, num_states=2)
        with pytest.raises(MpgLabError):
            mismatch_estimate(game, [game.uniform_policy()], np.array([1.0, 0.0]))
