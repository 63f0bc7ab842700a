"""Tabular n-agent Markov games and exact policy evaluation.

A game is the tuple (states, agents, per-agent action sets, per-agent
rewards, transitions, discount, initial distribution), stored as dense
numpy tables indexed by a mixed-radix joint-action code.  Evaluation of a
stochastic joint policy (values, Q-functions, advantages, discounted state
occupancy) reduces to one LU factorization of ``I - gamma * P_pi`` shared
by all agents.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import EnumerationCapError, GameValidationError

# Dense tensors over the joint action space are kept in memory; anything
# larger must go through the sampling path.
DEFAULT_ENUMERATION_CAP = 2**20

PROB_ATOL = 1e-12


def joint_action_count(action_counts) -> int:
    out = 1
    for a in action_counts:
        out *= int(a)
    return out


def encode_joint_action(actions, action_counts) -> int:
    """Mixed-radix code of a joint action; agent 0 is the most significant digit."""
    return int(np.ravel_multi_index(tuple(int(a) for a in actions), tuple(action_counts)))


def decode_joint_action(index, action_counts) -> tuple[int, ...]:
    """Inverse of :func:`encode_joint_action`."""
    return tuple(int(a) for a in np.unravel_index(int(index), tuple(action_counts)))


def iter_joint_actions(action_counts):
    """Yield all joint actions in increasing mixed-radix order."""
    return itertools.product(*(range(int(a)) for a in action_counts))


class JointPolicy:
    """Per-agent, per-state action distributions under direct parameterization.

    ``probs[i]`` is an ``(S, A_i)`` row-stochastic array: ``probs[i][s, a]``
    is the probability that agent ``i`` plays ``a`` at state ``s``.
    """

    def __init__(self, probs):
        self.probs = [np.asarray(p, dtype=float) for p in probs]

    @property
    def num_agents(self) -> int:
        return len(self.probs)

    @property
    def num_states(self) -> int:
        return self.probs[0].shape[0]

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(p.shape[1] for p in self.probs)

    @classmethod
    def uniform(cls, num_states, action_counts) -> "JointPolicy":
        return cls([np.full((num_states, a), 1.0 / a) for a in action_counts])

    @classmethod
    def deterministic(cls, num_states, action_counts, actions) -> "JointPolicy":
        """Point-mass policy; ``actions[i][s]`` is agent i's action at state s."""
        probs = []
        for i, a_count in enumerate(action_counts):
            p = np.zeros((num_states, a_count))
            for s in range(num_states):
                p[s, int(actions[i][s])] = 1.0
            probs.append(p)
        return cls(probs)

    @classmethod
    def random(cls, num_states, action_counts, rng) -> "JointPolicy":
        """Rows drawn from a flat Dirichlet, independently per (agent, state)."""
        return cls([rng.dirichlet(np.ones(a), size=num_states) for a in action_counts])

    def copy(self) -> "JointPolicy":
        return JointPolicy([p.copy() for p in self.probs])

    def replace_agent(self, agent, table) -> "JointPolicy":
        probs = [p.copy() for p in self.probs]
        probs[agent] = np.asarray(table, dtype=float)
        return JointPolicy(probs)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.probs])

    def greedy_actions(self):
        """Argmax action per agent per state (ties to the lowest index)."""
        return [np.argmax(p, axis=1) for p in self.probs]

    def __eq__(self, other):
        return isinstance(other, JointPolicy) and all(
            np.array_equal(a, b) for a, b in zip(self.probs, other.probs)
        )


def validate_policy(policy: JointPolicy, action_counts=None, num_states=None):
    """Return a list of violated policy invariants (empty means valid)."""
    problems = []
    for i, p in enumerate(policy.probs):
        if p.ndim != 2:
            problems.append(f"agent {i}: table is not 2-dimensional")
            continue
        if num_states is not None and p.shape[0] != num_states:
            problems.append(f"agent {i}: expected {num_states} states, got {p.shape[0]}")
        if action_counts is not None and p.shape[1] != action_counts[i]:
            problems.append(f"agent {i}: expected {action_counts[i]} actions, got {p.shape[1]}")
        if not np.all(np.isfinite(p)):
            problems.append(f"agent {i}: non-finite entries")
            continue
        if np.any(p < -PROB_ATOL):
            problems.append(f"agent {i}: negative probabilities")
        bad = np.flatnonzero(np.abs(p.sum(axis=1) - 1.0) > PROB_ATOL)
        for s in bad:
            problems.append(f"agent {i}, state {int(s)}: row sums to {p[s].sum()!r}, not 1")
    return problems


@dataclass
class TabularMarkovGame:
    """Finite n-agent Markov game with dense reward and transition tables.

    rewards:      ``(n, S, J)`` with ``J = prod(action_counts)``; entries in [-1, 1].
    transitions:  ``(S, J, S)`` row-stochastic over next states.
    initial_dist: ``(S,)`` distribution of the start state.
    meta:         free-form instance data (reward scaling map, potential handle, ...).
    """

    num_agents: int
    num_states: int
    action_counts: tuple
    rewards: np.ndarray
    transitions: np.ndarray
    discount: float
    initial_dist: np.ndarray
    meta: dict = field(default_factory=dict)
    potential: object = None

    def __post_init__(self):
        self.action_counts = tuple(int(a) for a in self.action_counts)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.initial_dist = np.asarray(self.initial_dist, dtype=float)

    @property
    def num_joint_actions(self) -> int:
        return joint_action_count(self.action_counts)

    @property
    def max_actions(self) -> int:
        return max(self.action_counts)

    def uniform_policy(self) -> JointPolicy:
        return JointPolicy.uniform(self.num_states, self.action_counts)

    def uniform_state_dist(self) -> np.ndarray:
        return np.full(self.num_states, 1.0 / self.num_states)

    def smoothness_bound(self) -> float:
        """Guarantee-grade Lipschitz constant of the joint value gradient,
        ``2 n g A_max / (1-g)^3``, as used by the step-size schedules."""
        g = self.discount
        return 2.0 * self.num_agents * g * self.max_actions / (1.0 - g) ** 3

    def curvature_bound(self) -> float:
        """Valid Hessian norm bound for any discount, including 0.

        The guarantee constant drops the cross-agent multilinear term
        (bounded by ``sqrt(A_i A_j) / (1-g)`` per block and not scaled by
        the discount), so it degenerates to 0 at ``g = 0``; this bound keeps
        every term and always dominates it.
        """
        g = self.discount
        per_block = (1.0 / (1.0 - g) + 2.0 * g / (1.0 - g) ** 2
                     + 2.0 * g / (1.0 - g) ** 3)
        return self.num_agents * self.max_actions * per_block

    # Sampling interface, shared with implicit game representations.

    def batch_rewards(self, states, actions) -> np.ndarray:
        """Rewards for a batch; states (B,), actions (B, n) -> (B, n)."""
        j = np.ravel_multi_index(np.asarray(actions).T, self.action_counts)
        return self.rewards[:, np.asarray(states), j].T

    def batch_transition_probs(self, states, actions) -> np.ndarray:
        j = np.ravel_multi_index(np.asarray(actions).T, self.action_counts)
        return self.transitions[np.asarray(states), j]

    def batch_next_states(self, states, actions, rng) -> np.ndarray:
        probs = self.batch_transition_probs(states, actions)
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(len(cdf))
        nxt = (cdf < u[:, None]).sum(axis=1)
        return np.minimum(nxt, self.num_states - 1)

    def sample_initial(self, batch, rng) -> np.ndarray:
        return rng.choice(self.num_states, size=batch, p=self.initial_dist)


@dataclass
class EvaluationReport:
    """Exact evaluation of one joint policy from a given start distribution."""

    values: np.ndarray      # (n, S)  V[i, s]
    q_values: np.ndarray    # (n, S, J)
    advantages: np.ndarray  # (n, S, J), Q - V
    occupancy: np.ndarray   # (S,) discounted state visitation from `start`
    start: np.ndarray       # (S,) the distribution the occupancy refers to

    def value_at(self, agent, start=None) -> float:
        mu = self.start if start is None else np.asarray(start, dtype=float)
        return float(mu @ self.values[agent])


def validate_game(game: TabularMarkovGame):
    """Return a list of violated game invariants (empty means valid).

    Report-style: never raises on bad content, never mutates the input.
    """
    problems = []
    n, s_count, j_count = game.num_agents, game.num_states, game.num_joint_actions
    if n < 1:
        problems.append("num_agents must be positive")
    if s_count < 1:
        problems.append("num_states must be positive")
    if any(a < 1 for a in game.action_counts):
        problems.append("action_counts must all be positive")
    if len(game.action_counts) != n:
        problems.append("action_counts length differs from num_agents")
    if not 0.0 <= game.discount < 1.0:
        problems.append(f"discount {game.discount!r} outside [0, 1)")

    if game.rewards.shape != (n, s_count, j_count):
        problems.append(f"rewards shape {game.rewards.shape} != {(n, s_count, j_count)}")
    elif not np.all(np.isfinite(game.rewards)):
        problems.append("rewards contain non-finite entries")
    else:
        over = np.abs(game.rewards) > 1.0 + PROB_ATOL
        if np.any(over):
            i, s, j = (int(x[0]) for x in np.nonzero(over))
            problems.append(
                f"reward out of [-1, 1]: agent {i}, state {s}, joint action {j} "
                f"-> {game.rewards[i, s, j]!r}"
            )

    if game.transitions.shape != (s_count, j_count, s_count):
        problems.append(
            f"transitions shape {game.transitions.shape} != {(s_count, j_count, s_count)}"
        )
    elif not np.all(np.isfinite(game.transitions)):
        problems.append("transitions contain non-finite entries")
    else:
        if np.any(game.transitions < -PROB_ATOL):
            problems.append("transitions contain negative probabilities")
        sums = game.transitions.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > PROB_ATOL)
        for s, j in bad[:16]:
            problems.append(
                f"transition row (state {int(s)}, joint action {int(j)}) sums to "
                f"{sums[s, j]!r}, not 1"
            )

    if game.initial_dist.shape != (s_count,):
        problems.append(f"initial_dist shape {game.initial_dist.shape} != {(s_count,)}")
    else:
        if np.any(game.initial_dist < -PROB_ATOL):
            problems.append("initial_dist has negative entries")
        if abs(game.initial_dist.sum() - 1.0) > PROB_ATOL:
            problems.append(f"initial_dist sums to {game.initial_dist.sum()!r}, not 1")
    return problems


def require_valid(game: TabularMarkovGame):
    problems = validate_game(game)
    if problems:
        raise GameValidationError("; ".join(problems))


def check_enumeration_cap(game: TabularMarkovGame, cap: int = DEFAULT_ENUMERATION_CAP):
    j = game.num_joint_actions
    if j > cap:
        raise EnumerationCapError(
            f"{j} joint actions exceed the enumeration cap {cap}; "
            "too large for exact path, use the sampling path instead"
        )


def joint_action_probs(policy: JointPolicy, state: int) -> np.ndarray:
    """Probability of each joint action at ``state`` under the product policy."""
    out = policy.probs[0][state]
    for p in policy.probs[1:]:
        out = np.multiply.outer(out, p[state])
    return out.ravel()


def marginalize_over_others(table_flat, policy: JointPolicy, state: int, agent: int) -> np.ndarray:
    """Expectation of a joint-action table over all agents' policies except one.

    ``table_flat`` has length ``prod(A)``; the result has length ``A_agent``:
    ``out[a] = sum_{a_others} prod_{j != agent} pi_j(a_j | state) * table[a, a_others]``.
    """
    counts = policy.action_counts
    t = np.asarray(table_flat).reshape(counts)
    t = np.moveaxis(t, agent, 0)
    others = [j for j in range(len(counts)) if j != agent]
    for j in reversed(others):
        t = t @ policy.probs[j][state]
    return t


def expected_over_policy(table_flat, policy: JointPolicy, state: int) -> float:
    """Expectation of a joint-action table over the full product policy."""
    t = np.asarray(table_flat).reshape(policy.action_counts)
    for j in reversed(range(policy.num_agents)):
        t = t @ policy.probs[j][state]
    return float(t)


def induced_chain(game: TabularMarkovGame, policy: JointPolicy,
                  cap: int = DEFAULT_ENUMERATION_CAP):
    """Marginalize transitions and rewards over the product policy.

    Returns ``(P_pi, r_pi)`` where ``P_pi[s, s']`` is the state chain and
    ``r_pi[i, s]`` the expected one-step reward of agent ``i``.  Games with
    a structured exact interface (count marginals) bypass the joint-action
    enumeration and its cap.
    """
    if hasattr(game, "induced_chain_counts"):
        return game.induced_chain_counts(policy)
    check_enumeration_cap(game, cap)
    s_count = game.num_states
    p_pi = np.empty((s_count, s_count))
    r_pi = np.empty((game.num_agents, s_count))
    for s in range(s_count):
        w = joint_action_probs(policy, s)
        p_pi[s] = w @ game.transitions[s]
        r_pi[:, s] = game.rewards[:, s, :] @ w
    return p_pi, r_pi


def _occupancy_from_chain(p_pi, lu, mu, gamma) -> np.ndarray:
    # d^T = (1 - gamma) mu^T (I - gamma P_pi)^(-1), via the transposed solve.
    d = lu_solve(lu, (1.0 - gamma) * mu, trans=1)
    return d


def value_exact(game: TabularMarkovGame, policy: JointPolicy, start=None,
                cap: int = DEFAULT_ENUMERATION_CAP) -> EvaluationReport:
    """Exact values, Q-functions, advantages and occupancy for a joint policy.

    Solves ``(I - gamma P_pi) V_i = r_pi_i`` per agent with one shared LU
    factorization, then ``Q_i(s, a) = R_i(s, a) + gamma * P(.|s, a) @ V_i``.
    """
    mu = game.initial_dist if start is None else np.asarray(start, dtype=float)
    p_pi, r_pi = induced_chain(game, policy, cap)
    gamma = game.discount
    m = np.eye(game.num_states) - gamma * p_pi
    lu = lu_factor(m)
    values = lu_solve(lu, r_pi.T).T                      # (n, S)
    d = _occupancy_from_chain(p_pi, lu, mu, gamma)
    if not hasattr(game, "transitions"):
        # Structured games solve the chain exactly but have no dense joint
        # tables to spell Q out over.
        return EvaluationReport(values=values, q_values=None, advantages=None,
                                occupancy=d, start=mu)
    # Per-agent expected next value for every (s, a).
    next_values = np.einsum("sjt,it->isj", game.transitions, values)
    q_values = game.rewards + gamma * next_values
    advantages = q_values - values[:, :, None]
    return EvaluationReport(values=values, q_values=q_values, advantages=advantages,
                            occupancy=d, start=mu)


def occupancy(game: TabularMarkovGame, policy: JointPolicy, start=None,
              cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Discounted state visitation ``d(s) = (1-gamma) sum_t gamma^t Pr(s_t = s)``."""
    mu = game.initial_dist if start is None else np.asarray(start, dtype=float)
    p_pi, _ = induced_chain(game, policy, cap)
    m = np.eye(game.num_states) - game.discount * p_pi
    return _occupancy_from_chain(p_pi, lu_factor(m), mu, game.discount)


def value_of_state_rewards(game: TabularMarkovGame, policy: JointPolicy,
                           state_rewards, start=None,
                           cap: int = DEFAULT_ENUMERATION_CAP):
    """Per-state discounted value of auxiliary rewards ``state_rewards[s][a_joint]``.

    Evaluates ``E[sum_t gamma^t f(s_t, a_t)]`` for every start state under the
    game's transitions; used for potential functions and dummy-term values.
    """
    check_enumeration_cap(game, cap)
    p_pi = np.empty((game.num_states, game.num_states))
    r = np.empty(game.num_states)
    for s in range(game.num_states):
        w = joint_action_probs(policy, s)
        p_pi[s] = w @ game.transitions[s]
        r[s] = np.asarray(state_rewards[s]) @ w
    m = np.eye(game.num_states) - game.discount * p_pi
    values = np.linalg.solve(m, r)
    if start is None:
        return values
    return float(np.asarray(start, dtype=float) @ values)
