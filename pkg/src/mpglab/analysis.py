"""Certification tools: best responses, Nash gaps, potential verification.

Verification semantics are deliberately one-sided.  "Exact" verdicts only
ever come from a construction (team rewards, action-independent
transitions with per-state potential games, or a verified analytic
handle); sampling can refute exactness with a concrete deviation cycle but
can never prove it, so the fallback verdict is "inconclusive".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EnumerationCapError, MpgLabError
from .game import (DEFAULT_ENUMERATION_CAP, JointPolicy, TabularMarkovGame,
                   check_enumeration_cap, iter_joint_actions,
                   marginalize_over_others, value_exact, value_of_state_rewards)
from .potentials import PotentialHandle, StateRewardPotential

VI_RESIDUAL_TOL = 1e-12   # sup-norm Bellman residual for value iteration
NASH_TOL = 1e-9           # deviation-gain tolerance for deterministic Nash
CYCLE_REFUTE_TOL = 1e-6


@dataclass
class BestResponse:
    """Deterministic optimal reply of one agent against fixed opponents."""

    agent: int
    actions: np.ndarray    # (S,) chosen action per state
    table: np.ndarray      # (S, A_agent) point-mass rows
    values: np.ndarray     # (S,) optimal values of the induced MDP
    bellman_residual: float

    def as_policy(self, policy: JointPolicy) -> JointPolicy:
        return policy.replace_agent(self.agent, self.table)


def induced_single_agent_mdp(game: TabularMarkovGame, policy: JointPolicy,
                             agent: int, cap: int = DEFAULT_ENUMERATION_CAP):
    """Rewards (S, A_i) and transitions (S, A_i, S) seen by one agent when
    every other agent follows ``policy``."""
    if hasattr(game, "induced_single_agent_counts"):
        return game.induced_single_agent_counts(policy, agent)
    check_enumeration_cap(game, cap)
    s_count = game.num_states
    a_count = game.action_counts[agent]
    r_bar = np.empty((s_count, a_count))
    p_bar = np.empty((s_count, a_count, s_count))
    for s in range(s_count):
        r_bar[s] = marginalize_over_others(game.rewards[agent, s], policy, s, agent)
        for s2 in range(s_count):
            p_bar[s, :, s2] = marginalize_over_others(
                game.transitions[s, :, s2], policy, s, agent)
    return r_bar, p_bar


def best_response(game: TabularMarkovGame, policy: JointPolicy, agent: int,
                  cap: int = DEFAULT_ENUMERATION_CAP) -> BestResponse:
    """Optimal deterministic reply, by value iteration on the induced MDP.

    Iterates until the sup-norm Bellman residual is below 1e-12 (value
    accuracy 1e-12 / (1 - gamma)), extracts the greedy policy with ties to
    the lowest action index, and recomputes its values with one exact
    policy-evaluation solve.
    """
    r_bar, p_bar = induced_single_agent_mdp(game, policy, agent, cap)
    gamma = game.discount
    v = np.zeros(game.num_states)
    for _ in range(4_000_000):
        q = r_bar + gamma * (p_bar @ v)
        v_new = q.max(axis=1)
        if np.abs(v_new - v).max() <= VI_RESIDUAL_TOL:
            v = v_new
            break
        v = v_new
    else:
        raise MpgLabError("value iteration did not reach the residual tolerance")
    greedy = np.argmax(r_bar + gamma * (p_bar @ v), axis=1)

    s_count, a_count = r_bar.shape
    p_greedy = p_bar[np.arange(s_count), greedy]
    r_greedy = r_bar[np.arange(s_count), greedy]
    values = np.linalg.solve(np.eye(s_count) - gamma * p_greedy, r_greedy)
    residual = float(np.abs((r_bar + gamma * (p_bar @ values)).max(axis=1) - values).max())
    table = np.zeros((s_count, a_count))
    table[np.arange(s_count), greedy] = 1.0
    return BestResponse(agent=agent, actions=greedy, table=table, values=values,
                        bellman_residual=residual)


@dataclass
class NashReport:
    """Per-agent, per-state gains from an optimal unilateral deviation."""

    gains: np.ndarray          # (n, S): V_i(BR_i, pi_-i)(s) - V_i(pi)(s)
    gap: float                 # max over agents and states
    epsilon: float
    is_eps_nash: bool
    best_responses: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "gains": self.gains.tolist(),
            "gap": self.gap,
            "epsilon": self.epsilon,
            "is_eps_nash": self.is_eps_nash,
            "best_response_actions": [br.actions.tolist() for br in self.best_responses],
        }


def nash_gap(game: TabularMarkovGame, policy: JointPolicy, epsilon: float = 0.0,
             cap: int = DEFAULT_ENUMERATION_CAP) -> NashReport:
    """Exact per-state deviation gains of every agent at a joint policy."""
    report = value_exact(game, policy, cap=cap)
    gains = np.empty((game.num_agents, game.num_states))
    responses = []
    for i in range(game.num_agents):
        br = best_response(game, policy, i, cap)
        gains[i] = br.values - report.values[i]
        responses.append(br)
    gap = float(gains.max())
    return NashReport(gains=gains, gap=gap, epsilon=epsilon,
                      is_eps_nash=bool(gap <= epsilon), best_responses=responses)


def _deterministic_best_value(game, policy, agent, cap):
    """Best deterministic reply by explicit enumeration of A_i^S tables.

    Exact for finite MDPs: some deterministic reply is optimal at every
    state simultaneously, so the optimal value is the pointwise max over
    candidates and is attained by the candidate with the largest value sum.
    Used by the profile searches, where each candidate costs one small
    linear solve.
    """
    r_bar, p_bar = induced_single_agent_mdp(game, policy, agent, cap)
    gamma = game.discount
    s_count, a_count = r_bar.shape
    eye = np.eye(s_count)
    states = np.arange(s_count)
    v_star, best_actions, best_sum = None, None, -np.inf
    for choice in iter_joint_actions((a_count,) * s_count):
        idx = np.asarray(choice)
        v = np.linalg.solve(eye - gamma * p_bar[states, idx], r_bar[states, idx])
        v_star = v if v_star is None else np.maximum(v_star, v)
        if v.sum() > best_sum:
            best_sum, best_actions = v.sum(), idx
    return v_star, best_actions


def deterministic_nash_search(game: TabularMarkovGame, tol: float = NASH_TOL,
                              profile_budget: int = 100_000,
                              cap: int = DEFAULT_ENUMERATION_CAP):
    """Exhaustively test every deterministic joint profile for the Nash
    property; returns the list of profiles (actions[i][s]) that pass.

    A profile passes when no agent's best response improves any state value
    by more than ``tol``.
    """
    per_agent = [game.action_counts[i] ** game.num_states
                 for i in range(game.num_agents)]
    total = int(np.prod([float(c) for c in per_agent]))
    if total > profile_budget:
        raise EnumerationCapError(
            f"{total} deterministic profiles exceed the search budget {profile_budget}")

    agent_tables = []
    for i in range(game.num_agents):
        tables = list(iter_joint_actions((game.action_counts[i],) * game.num_states))
        agent_tables.append(tables)

    found = []
    for combo in iter_joint_actions(per_agent):
        actions = [np.asarray(agent_tables[i][c]) for i, c in enumerate(combo)]
        policy = JointPolicy.deterministic(game.num_states, game.action_counts, actions)
        report = value_exact(game, policy, cap=cap)
        is_nash = True
        for i in range(game.num_agents):
            best_v, _ = _deterministic_best_value(game, policy, i, cap)
            if np.any(best_v - report.values[i] > tol):
                is_nash = False
                break
        if is_nash:
            found.append([a.tolist() for a in actions])
    return found


def _compositions(total, parts):
    """All ways to split ``total`` into ``parts`` nonnegative counts."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _assignment_from_counts(counts):
    """Canonical agent assignment realizing a facility count vector."""
    out = []
    for k, c in enumerate(counts):
        out.extend([k] * c)
    return np.asarray(out, dtype=int)


def congestion_symmetric_nash_search(game: TabularMarkovGame, tol: float = NASH_TOL,
                                     cap: int = DEFAULT_ENUMERATION_CAP):
    """Deterministic-Nash scan of a congestion game over occupancy vectors.

    Agents are exchangeable, so the scan enumerates pairs of facility count
    vectors (one per state) and certifies one canonical assignment per pair
    with exact per-agent best responses.  Every returned profile is a
    certified Nash; pairs whose canonical representative fails are not
    reported even if some other assignment with the same counts would pass.
    """
    spec = game.meta.get("spec")
    if game.meta.get("instance") != "congestion" or spec is None:
        raise MpgLabError("symmetric search needs a congestion instance")
    n = game.num_agents
    f = game.action_counts[0]
    results = []
    count_vectors = list(_compositions(n, f))
    for safe_counts in count_vectors:
        safe_assign = _assignment_from_counts(safe_counts)
        for dist_counts in count_vectors:
            dist_assign = _assignment_from_counts(dist_counts)
            actions = [np.array([safe_assign[i], dist_assign[i]]) for i in range(n)]
            policy = JointPolicy.deterministic(game.num_states, game.action_counts,
                                               actions)
            report = value_exact(game, policy, cap=cap)
            is_nash = True
            for i in range(n):
                best_v, _ = _deterministic_best_value(game, policy, i, cap)
                if np.any(best_v - report.values[i] > tol):
                    is_nash = False
                    break
            if is_nash:
                results.append({
                    "safe_counts": list(safe_counts),
                    "distancing_counts": list(dist_counts),
                    "profile": [a.tolist() for a in actions],
                })
    return results


def cycle_residual(game: TabularMarkovGame, agent_i: int, agent_j: int,
                   pi_i, pi_i2, pi_j, pi_j2, rest: JointPolicy, state: int,
                   cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Signed value change around a closed two-agent deviation cycle.

    Independent deviations i: pi_i -> pi_i' and j: pi_j -> pi_j' are walked
    around the four corners; the sum of the deviating agent's value changes
    telescopes to zero whenever an exact potential exists, so a nonzero
    residual is a refutation witness.
    """
    if agent_i == agent_j:
        raise MpgLabError("cycle agents must differ")

    def corner(ti, tj):
        p = rest.replace_agent(agent_i, ti)
        return p.replace_agent(agent_j, tj)

    def vals(p):
        rep = value_exact(game, p, cap=cap)
        return rep.values[agent_i, state], rep.values[agent_j, state]

    vi_a, vj_a = vals(corner(pi_i, pi_j))
    vi_b, vj_b = vals(corner(pi_i2, pi_j))
    vi_c, vj_c = vals(corner(pi_i2, pi_j2))
    vi_d, vj_d = vals(corner(pi_i, pi_j2))
    return float((vi_b - vi_a) + (vj_c - vj_b) + (vi_d - vi_c) + (vj_a - vj_d))


def normal_form_potential(reward_tables, action_counts, tol: float = 1e-9):
    """Exact potential of one normal-form game, or None.

    ``reward_tables[i]`` is agent i's flat joint-action table.  The
    candidate potential is integrated along coordinate paths from the
    all-zeros profile, then verified: a valid potential makes every
    ``R_i - phi`` constant along agent i's own axis.
    """
    action_counts = tuple(int(a) for a in action_counts)
    n = len(reward_tables)
    phi = np.zeros(action_counts)
    for i in range(n):
        r = np.asarray(reward_tables[i]).reshape(action_counts)
        # Difference against this agent playing 0, with later agents at 0.
        sl_zero = [slice(None)] * (i + 1) + [slice(0, 1)] * (n - i - 1)
        block = r[tuple(sl_zero)]
        base = np.take(block, [0], axis=i)
        phi += (block - base).reshape(phi.shape[: i + 1] + (1,) * (n - i - 1))
    phi_flat = phi.ravel()
    for i in range(n):
        diff = np.asarray(reward_tables[i]).reshape(action_counts) - phi
        spread = diff.max(axis=i) - diff.min(axis=i)
        if spread.max() > tol:
            return None
    return phi_flat


def statewise_potentials(game: TabularMarkovGame, tol: float = 1e-9):
    """Per-state exact potentials of all state games, or None if any fails."""
    tables = []
    for s in range(game.num_states):
        phi = normal_form_potential([game.rewards[i, s] for i in range(game.num_agents)],
                                    game.action_counts, tol)
        if phi is None:
            return None
        tables.append(phi)
    return np.asarray(tables)


def has_action_independent_transitions(game: TabularMarkovGame,
                                       tol: float = 1e-12) -> bool:
    spread = game.transitions.max(axis=1) - game.transitions.min(axis=1)
    return bool(spread.max() <= tol)


def potential_identity_residual(game: TabularMarkovGame, handle: PotentialHandle,
                                rng, samples: int = 100, weights=None,
                                cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Largest |delta Phi - w_i * delta V_i| over random unilateral deviations,
    taken across all start states.  ``weights`` defaults to all ones."""
    if weights is None:
        weights = np.ones(game.num_agents)
    worst = 0.0
    for _ in range(samples):
        policy = JointPolicy.random(game.num_states, game.action_counts, rng)
        agent = int(rng.integers(game.num_agents))
        other = rng.dirichlet(np.ones(game.action_counts[agent]),
                              size=game.num_states)
        deviated = policy.replace_agent(agent, other)
        d_phi = handle.values(game, deviated) - handle.values(game, policy)
        d_v = (value_exact(game, deviated, cap=cap).values[agent]
               - value_exact(game, policy, cap=cap).values[agent])
        worst = max(worst, float(np.abs(d_phi - weights[agent] * d_v).max()))
    return worst


def ordinal_sign_check(game: TabularMarkovGame, handle: PotentialHandle, rng,
                       samples: int = 1000, tol: float = 1e-9,
                       cap: int = DEFAULT_ENUMERATION_CAP):
    """Count sign disagreements of (delta Phi, delta V_i) on random
    unilateral deviations; a disagreement is a strictly opposite pair beyond
    ``tol``.  Returns (disagreements, samples)."""
    bad = 0
    for _ in range(samples):
        policy = JointPolicy.random(game.num_states, game.action_counts, rng)
        agent = int(rng.integers(game.num_agents))
        other = rng.dirichlet(np.ones(game.action_counts[agent]),
                              size=game.num_states)
        deviated = policy.replace_agent(agent, other)
        d_phi = handle.values(game, deviated) - handle.values(game, policy)
        d_v = (value_exact(game, deviated, cap=cap).values[agent]
               - value_exact(game, policy, cap=cap).values[agent])
        if np.any((d_phi > tol) & (d_v < -tol)) or np.any((d_phi < -tol) & (d_v > tol)):
            bad += 1
    return bad, samples


def dummy_term_flatness_evidence(game: TabularMarkovGame, state_potentials,
                                 rng, num_policies: int = 50, step: float = 1e-6,
                                 cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Numeric probe of the dummy-term regularity behind exactness proofs.

    For each agent the dummy reward ``u_i = R_i - phi`` ignores the agent's
    own action; exactness with action-dependent transitions requires the
    discounted dummy value to have an action-uniform gradient in the
    agent's policy block at every state.  Returns the largest observed
    within-block gradient spread over random interior policies (finite
    differences); small values are evidence, not proof.
    """
    check_enumeration_cap(game, cap)
    worst = 0.0
    counts = game.action_counts
    for _ in range(num_policies):
        policy = JointPolicy.random(game.num_states, game.action_counts, rng)
        # Keep clear of the boundary so forward differences stay feasible.
        policy = JointPolicy([(p + 0.2) / (1.0 + 0.2 * p.shape[1]) for p in policy.probs])
        for i in range(game.num_agents):
            dummy = np.empty((game.num_states, game.num_joint_actions))
            for s in range(game.num_states):
                block = (game.rewards[i, s] - state_potentials[s]).reshape(counts)
                dummy[s] = np.broadcast_to(np.take(block, [0], axis=i), counts).ravel()
            base = value_of_state_rewards(game, policy, dummy)
            for s in range(game.num_states):
                grads = np.empty(counts[i])
                for a in range(counts[i]):
                    bumped = policy.probs[i].copy()
                    bumped[s, a] += step
                    bumped[s] /= bumped[s].sum()
                    moved = policy.replace_agent(i, bumped)
                    val = value_of_state_rewards(game, moved, dummy)
                    grads[a] = (game.initial_dist @ (val - base)) / step
                worst = max(worst, float(grads.max() - grads.min()))
    return worst


@dataclass
class PotentialCertificate:
    """Outcome of potential-structure verification.

    verdict: "exact-mpg" (constructive), "refuted" (cycle witness),
    "ordinal-evidence" (exactness refuted but a candidate potential passes
    the sign check), or "inconclusive".
    """

    verdict: str
    construction: str | None = None
    witness: dict | None = None
    residual_max: float = 0.0
    samples_tested: int = 0
    ordinal: dict | None = None
    notes: list = field(default_factory=list)
    handle: PotentialHandle | None = None

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict,
            "construction": self.construction,
            "residual_max": self.residual_max,
            "samples_tested": self.samples_tested,
            "notes": list(self.notes),
        }
        if self.witness is not None:
            out["witness"] = {k: v for k, v in self.witness.items()}
        if self.ordinal is not None:
            out["ordinal"] = dict(self.ordinal)
        return out


def _random_cycle(game, rng):
    agents = rng.choice(game.num_agents, size=2, replace=False)
    i, j = int(agents[0]), int(agents[1])
    rest = JointPolicy.random(game.num_states, game.action_counts, rng)

    def table(agent):
        return rng.dirichlet(np.ones(game.action_counts[agent]),
                             size=game.num_states)

    state = int(rng.integers(game.num_states))
    return i, j, table(i), table(i), table(j), table(j), rest, state


def sample_cycle_residuals(game: TabularMarkovGame, num_samples: int, rng,
                           cap: int = DEFAULT_ENUMERATION_CAP):
    """Draw random two-agent deviation cycles; returns (residual_max, witness).

    The witness describes the first cycle whose |residual| crosses the
    refutation tolerance, or None.
    """
    residual_max = 0.0
    witness = None
    for _ in range(num_samples):
        i, j, ti, ti2, tj, tj2, rest, state = _random_cycle(game, rng)
        res = cycle_residual(game, i, j, ti, ti2, tj, tj2, rest, state, cap)
        if abs(res) > residual_max:
            residual_max = abs(res)
        if witness is None and abs(res) > CYCLE_REFUTE_TOL:
            witness = {
                "agents": [i, j],
                "state": state,
                "residual": res,
                "policies": {
                    "pi_i": np.asarray(ti).tolist(),
                    "pi_i_alt": np.asarray(ti2).tolist(),
                    "pi_j": np.asarray(tj).tolist(),
                    "pi_j_alt": np.asarray(tj2).tolist(),
                    "others": [p.tolist() for p in rest.probs],
                },
            }
    return residual_max, witness


def verify_mpg(game: TabularMarkovGame, num_samples: int = 100, rng=None,
               candidate: PotentialHandle | None = None,
               cap: int = DEFAULT_ENUMERATION_CAP) -> PotentialCertificate:
    """Verify or refute exact potential structure.

    Pipeline: (1) identical rewards make a team game, exact by
    construction; (2) per-state exact potentials plus action-independent
    transitions are exact by construction; (3) an attached analytic handle
    is accepted after its identity holds on sampled deviations; otherwise
    (4) random deviation cycles either refute exactness with a witness or
    leave the verdict inconclusive.  A candidate potential (argument, or a
    non-exact handle on the game) additionally gets an ordinal sign check.
    Every exact verdict is double-checked with 100 random cycles.
    """
    check_enumeration_cap(game, cap)
    rng = np.random.default_rng(0) if rng is None else rng
    notes = []

    certificate = None
    if np.all([np.array_equal(game.rewards[0], game.rewards[i])
               for i in range(game.num_agents)]):
        handle = StateRewardPotential(game.rewards[0].copy(), exact=True,
                                      construction="team")
        certificate = PotentialCertificate(verdict="exact-mpg", construction="team",
                                           handle=handle, notes=notes)
    if certificate is None:
        tables = statewise_potentials(game)
        if tables is not None:
            notes.append("every state game admits an exact potential")
            if has_action_independent_transitions(game):
                handle = StateRewardPotential(tables, exact=True, construction="c1")
                certificate = PotentialCertificate(
                    verdict="exact-mpg", construction="agent-independent-transitions",
                    handle=handle, notes=notes)
            else:
                flat = dummy_term_flatness_evidence(game, tables, rng,
                                                    num_policies=10)
                notes.append(
                    f"dummy-term gradient spread {flat:.3e} over sampled policies "
                    "(flatness evidence only, transitions depend on actions)")
        else:
            notes.append("some state game has no exact potential")
    if certificate is None and game.potential is not None and game.potential.exact:
        residual = potential_identity_residual(game, game.potential, rng,
                                               samples=min(num_samples, 100), cap=cap)
        if residual <= 1e-8:
            notes.append(f"analytic potential identity residual {residual:.3e}")
            certificate = PotentialCertificate(
                verdict="exact-mpg", construction=game.potential.construction or "analytic",
                handle=game.potential, notes=notes)
        else:
            notes.append(f"attached analytic handle FAILED its identity ({residual:.3e})")

    if certificate is not None:
        residual_max, witness = sample_cycle_residuals(game, 100, rng, cap)
        certificate.residual_max = residual_max
        certificate.samples_tested = 100
        if witness is not None:
            # The construction claimed exactness but a cycle disagrees; the
            # refutation wins (sound over complete).
            certificate = PotentialCertificate(
                verdict="refuted", witness=witness, residual_max=residual_max,
                samples_tested=100,
                notes=notes + ["construction contradicted by a sampled cycle"])
        return certificate

    residual_max, witness = sample_cycle_residuals(game, num_samples, rng, cap)
    ordinal = None
    cand = candidate
    if cand is None and game.potential is not None and not game.potential.exact:
        cand = game.potential
    if cand is not None:
        bad, total = ordinal_sign_check(game, cand, rng, samples=1000, cap=cap)
        ordinal = {"passed": bad == 0, "disagreements": bad, "samples": total}

    if witness is not None:
        verdict = "refuted"
        if ordinal is not None and ordinal["passed"]:
            verdict = "ordinal-evidence"
            notes.append("exactness refuted; candidate potential passes the "
                         "ordinal sign check")
        return PotentialCertificate(verdict=verdict, witness=witness,
                                    residual_max=residual_max,
                                    samples_tested=num_samples,
                                    ordinal=ordinal, notes=notes)
    return PotentialCertificate(verdict="inconclusive", residual_max=residual_max,
                                samples_tested=num_samples, ordinal=ordinal,
                                notes=notes)


def potential_value(game: TabularMarkovGame, handle: PotentialHandle,
                    policy: JointPolicy, start=None) -> float:
    """Potential value of a policy under a certified construction handle."""
    if handle is None:
        raise MpgLabError("game has no certified potential construction")
    if not isinstance(handle, PotentialHandle):
        raise MpgLabError("potential_value requires a PotentialHandle")
    return handle.value(game, policy, start)


def mismatch_estimate(game: TabularMarkovGame, policies, mu,
                      cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Lower bound on the distribution mismatch coefficient.

    Maximum of ``max_s d_mu(s) / mu(s)`` over the supplied policies; the
    true coefficient takes a supremum over all policies, so this is an
    estimate from below (always at least 1).
    """
    from .game import occupancy as occupancy_of

    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0.0):
        raise MpgLabError("mismatch estimate needs a strictly positive reference "
                          "distribution")
    best = 0.0
    for policy in policies:
        d = occupancy_of(game, policy, mu, cap)
        best = max(best, float((d / mu).max()))
    return best
