"""Constructors for the benchmark games and random shared-interest instances.

All builders rescale raw reward specifications into [-1, 1] by dividing by
the largest absolute raw reward; the divisor is recorded under
``meta["reward_scale"]`` so original-scale quantities stay recoverable.
Affine reward scaling preserves Nash policies, potential structure and
ordinal comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EnumerationCapError, MpgLabError
from .game import (DEFAULT_ENUMERATION_CAP, TabularMarkovGame,
                   joint_action_count)
from .potentials import (BilinearStatePotential, StateRewardPotential,
                         StaticStatePotential)

FACILITY_NAMES = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def build_xor_zerosum(gamma: float) -> TabularMarkovGame:
    """Two-state pursuit game with xor transitions and no deterministic Nash.

    Each state pays a fixed reward to one agent only (state 0 favors agent
    0, state 1 favors agent 1); the next state is ``s xor a0 xor a1``, so
    each agent can unilaterally force a state flip.  Every state game is
    trivially a potential game, yet the overall game behaves like matching
    pennies over states.
    """
    if not 0.0 <= gamma < 1.0:
        raise MpgLabError(f"gamma must lie in [0, 1), got {gamma!r}")
    scale = 2.0
    rewards = np.zeros((2, 2, 4))
    rewards[0, 0, :] = 2.0 / scale
    rewards[1, 1, :] = 2.0 / scale
    transitions = np.zeros((2, 4, 2))
    for s in range(2):
        for j, (a, b) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
            transitions[s, j, s ^ a ^ b] = 1.0
    return TabularMarkovGame(
        num_agents=2, num_states=2, action_counts=(2, 2),
        rewards=rewards, transitions=transitions, discount=gamma,
        initial_dist=np.array([0.5, 0.5]),
        meta={"instance": "xor", "reward_scale": scale},
    )


def build_blackhole(gamma: float) -> TabularMarkovGame:
    """Two-state coordination game with an absorbing bad state.

    State 0 plays a battle-of-the-sexes-like 2x2 game; only the profile
    (0, 0) keeps the play at state 0, every other profile falls into the
    absorbing zero-reward state 1.  Each state game is a potential game,
    but the action-dependent dynamics break the exact potential identity;
    the state potentials are attached as an ordinal candidate.

    At state 1 each agent formally has a single action; it is padded to two
    equivalent actions so the action count is uniform across states.
    """
    if not 0.0 <= gamma < 1.0:
        raise MpgLabError(f"gamma must lie in [0, 1), got {gamma!r}")
    scale = 5.0
    r_a = np.array([[5.0, -1.0], [-5.0, 1.0]])
    r_b = np.array([[2.0, -2.0], [-4.0, 4.0]])
    phi0 = np.array([[4.0, 0.0], [-6.0, 2.0]])
    rewards = np.zeros((2, 2, 4))
    rewards[0, 0, :] = r_a.ravel() / scale
    rewards[1, 0, :] = r_b.ravel() / scale
    transitions = np.zeros((2, 4, 2))
    transitions[0, 0, 0] = 1.0       # (0, 0) loops at state 0
    transitions[0, 1:, 1] = 1.0      # anything else falls in
    transitions[1, :, 1] = 1.0       # absorbing
    candidate = StaticStatePotential(
        np.stack([phi0.ravel() / scale, np.zeros(4)]),
        construction="state-games",
    )
    return TabularMarkovGame(
        num_agents=2, num_states=2, action_counts=(2, 2),
        rewards=rewards, transitions=transitions, discount=gamma,
        initial_dist=np.array([0.5, 0.5]),
        meta={"instance": "blackhole", "reward_scale": scale},
        potential=candidate,
    )


def build_chain_mpg(gamma: float, p0: float = 0.5) -> TabularMarkovGame:
    """Six-state game that is a potential game globally but not per state.

    State 0 is matching pennies; its action profile routes the play through
    one of four single-action relay states whose fixed rewards (scaled by
    1/gamma) swap the agents' state-0 payoffs, so every pass through the
    first five states nets both agents the same total.  State 5 plays a 2x2
    coordination game and returns to state 0 with exogenous probability
    ``p0``.  The closed-form potential is ``kappa[s] * x^T M y`` over the
    agents' state-5 action distributions.

    Relay states are padded to two equivalent actions per agent.
    """
    if not 0.0 < gamma < 1.0:
        raise MpgLabError(f"gamma must lie in (0, 1), got {gamma!r}")
    if not 0.0 <= p0 <= 1.0:
        raise MpgLabError(f"p0 must lie in [0, 1], got {p0!r}")
    r1_s0 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    r1_s1 = np.array([[1.0, 9.0], [0.0, 6.0]])
    r2_s1 = np.array([[1.0, 0.0], [9.0, 6.0]])
    phi_s1 = np.array([[4.0, 3.0], [3.0, 0.0]])
    scale = max(9.0, 1.0 / gamma)

    num_states = 6
    rewards = np.zeros((2, num_states, 4))
    rewards[0, 0, :] = r1_s0.ravel() / scale
    rewards[1, 0, :] = -r1_s0.ravel() / scale
    for a in range(2):
        for b in range(2):
            relay = 1 + 2 * a + b
            # Swapped and 1/gamma-scaled: over (state 0, relay) both agents
            # collect the same discounted total for every action pair.
            rewards[0, relay, :] = -r1_s0[a, b] / gamma / scale
            rewards[1, relay, :] = r1_s0[a, b] / gamma / scale
    rewards[0, 5, :] = r1_s1.ravel() / scale
    rewards[1, 5, :] = r2_s1.ravel() / scale

    transitions = np.zeros((num_states, 4, num_states))
    for j, (a, b) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        transitions[0, j, 1 + 2 * a + b] = 1.0
    for relay in range(1, 5):
        transitions[relay, :, 5] = 1.0
    transitions[5, :, 0] = p0
    transitions[5, :, 5] = 1.0 - p0

    c = 1.0 / (1.0 - gamma * (1.0 - p0) - gamma**3 * p0)
    kappa = c * np.array([gamma**2, gamma, gamma, gamma, gamma, 1.0])
    handle = BilinearStatePotential(kappa, phi_s1 / scale, state_index=5,
                                    exact=True, construction="analytic")
    return TabularMarkovGame(
        num_agents=2, num_states=num_states, action_counts=(2, 2),
        rewards=rewards, transitions=transitions, discount=gamma,
        initial_dist=np.full(num_states, 1.0 / num_states),
        meta={"instance": "chain", "reward_scale": scale, "p0": p0},
        potential=handle,
    )


@dataclass
class CongestionSpec:
    """Parameters of the two-state (safe / distancing) congestion game.

    Every agent picks one of ``num_facilities`` facilities; its reward is
    the facility weight times the head count there.  At the distancing
    state the weights are cut by the penalty, ``w_k - c_k``, which turns
    them negative for a dominating penalty.  Crowding any facility beyond
    ``crowd_threshold`` sends the play to the distancing state; spreading
    out to at most ``spread_threshold`` per facility returns it.
    ``leak_p`` and ``leak_q`` add exogenous switching noise to the two
    rules.
    """

    num_agents: int
    num_facilities: int
    weights: tuple = None          # strictly increasing, defaults to 0.1 * (1..F)
    penalty: object = None         # uniform c (float) or per-facility c_k (tuple)
    crowd_threshold: float = None  # default N / 2
    spread_threshold: float = None  # default N / 4
    leak_p: float = 0.0            # safe -> distancing regardless of counts
    leak_q: float = 0.0            # stay distancing although spread out
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n, f = int(self.num_agents), int(self.num_facilities)
        if n < 1 or f < 1:
            raise MpgLabError("num_agents and num_facilities must be positive")
        if self.weights is None:
            self.weights = tuple(0.1 * (k + 1) for k in range(f))
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != f:
            raise MpgLabError("one weight per facility required")
        if any(b <= a for a, b in zip(self.weights, self.weights[1:])):
            raise MpgLabError("weights must be strictly increasing")
        if self.penalty is None:
            self.penalty = 2.0 * self.weights[-1] * n
        if np.isscalar(self.penalty):
            self.penalties = tuple(float(self.penalty) for _ in range(f))
        else:
            self.penalties = tuple(float(c) for c in self.penalty)
            if len(self.penalties) != f:
                raise MpgLabError("one penalty per facility required")
        if any(c <= 0 for c in self.penalties):
            raise MpgLabError("penalties must be positive")
        if self.crowd_threshold is None:
            self.crowd_threshold = n / 2
        if self.spread_threshold is None:
            self.spread_threshold = n / 4
        for name in ("crowd_threshold", "spread_threshold"):
            t = float(getattr(self, name))
            if not 1.0 <= t <= n:
                raise MpgLabError(f"{name} must lie in [1, num_agents], got {t!r}")
        for name in ("leak_p", "leak_q"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise MpgLabError(f"{name} must lie in [0, 1], got {v!r}")

    @property
    def uniform_penalty(self) -> bool:
        return len(set(self.penalties)) == 1

    def reward_scale(self) -> float:
        """Largest absolute raw reward over both states."""
        n = self.num_agents
        extremes = [self.weights[-1] * n]
        for w, c in zip(self.weights, self.penalties):
            extremes.append(abs(w - c) * n)
        return max(extremes)

    def to_dict(self) -> dict:
        return {
            "num_agents": self.num_agents,
            "num_facilities": self.num_facilities,
            "weights": list(self.weights),
            "penalty": (self.penalties[0] if self.uniform_penalty
                        else list(self.penalties)),
            "crowd_threshold": self.crowd_threshold,
            "spread_threshold": self.spread_threshold,
            "leak_p": self.leak_p,
            "leak_q": self.leak_q,
        }

    @classmethod
    def from_dict(cls, data) -> "CongestionSpec":
        return cls(
            num_agents=data["num_agents"],
            num_facilities=data["num_facilities"],
            weights=data.get("weights"),
            penalty=data.get("penalty"),
            crowd_threshold=data.get("crowd_threshold"),
            spread_threshold=data.get("spread_threshold"),
            leak_p=data.get("leak_p", 0.0),
            leak_q=data.get("leak_q", 0.0),
        )


SAFE, DISTANCING = 0, 1


class ImplicitCongestionGame:
    """Congestion game evaluated on demand, without dense joint-action
    tables.

    Exact expectations go through facility-count marginals (see
    :mod:`mpglab.congestion_counts`), so policy evaluation, gradients and
    best responses stay polynomial in the number of agents even when the
    joint-action space dwarfs the dense enumeration cap.  The sampling
    interface matches :class:`TabularMarkovGame`.
    """

    def __init__(self, spec: CongestionSpec, gamma: float):
        if not 0.0 <= gamma < 1.0:
            raise MpgLabError(f"gamma must lie in [0, 1), got {gamma!r}")
        self.spec = spec
        self.discount = float(gamma)
        self.num_agents = spec.num_agents
        self.num_states = 2
        self.action_counts = (spec.num_facilities,) * spec.num_agents
        self.initial_dist = np.array([0.5, 0.5])
        self.scale = spec.reward_scale()
        self._w = np.asarray(spec.weights)
        self._c = np.asarray(spec.penalties)
        self.potential = None
        self.meta = {"instance": "congestion", "implicit": True,
                     "reward_scale": self.scale, "spec": spec.to_dict(),
                     "facilities": FACILITY_NAMES[:spec.num_facilities]}

    @property
    def num_joint_actions(self) -> int:
        return joint_action_count(self.action_counts)

    @property
    def max_actions(self) -> int:
        return self.spec.num_facilities

    def uniform_policy(self):
        from .game import JointPolicy
        return JointPolicy.uniform(self.num_states, self.action_counts)

    def uniform_state_dist(self) -> np.ndarray:
        return np.array([0.5, 0.5])

    def smoothness_bound(self) -> float:
        g = self.discount
        return 2.0 * self.num_agents * g * self.max_actions / (1.0 - g) ** 3

    def curvature_bound(self) -> float:
        g = self.discount
        per_block = (1.0 / (1.0 - g) + 2.0 * g / (1.0 - g) ** 2
                     + 2.0 * g / (1.0 - g) ** 3)
        return self.num_agents * self.max_actions * per_block

    # Exact count-marginal interface, used by the evaluation/gradient
    # dispatchers in place of joint-action enumeration.

    def marginals(self, policy):
        from .congestion_counts import CongestionMarginals
        return CongestionMarginals(self.spec, self.scale, policy)

    def induced_chain_counts(self, policy):
        return self.marginals(policy).chain()

    def induced_single_agent_counts(self, policy, agent):
        marg = self.marginals(policy)
        return marg.induced_rewards(agent), marg.induced_transitions(agent)

    def induced_all_agents_counts(self, policy):
        """One marginal computation shared across every agent."""
        marg = self.marginals(policy)
        return [(marg.induced_rewards(i), marg.induced_transitions(i))
                for i in range(self.num_agents)]

    def _counts(self, actions) -> np.ndarray:
        """Facility head counts; actions is (batch, n), result (batch, F)."""
        actions = np.asarray(actions)
        batch = actions.shape[0]
        counts = np.zeros((batch, self.spec.num_facilities), dtype=int)
        for i in range(self.num_agents):
            np.add.at(counts, (np.arange(batch), actions[:, i]), 1)
        return counts

    def batch_rewards(self, states, actions) -> np.ndarray:
        """Rewards for a batch; states (B,), actions (B, n) -> (B, n)."""
        states = np.asarray(states)
        actions = np.asarray(actions)
        counts = self._counts(actions)
        own = np.take_along_axis(counts, actions, axis=1)       # (B, n)
        weights = (self._w[actions]
                   - self._c[actions] * (states == DISTANCING)[:, None])
        return weights * own / self.scale

    def batch_transition_probs(self, states, actions) -> np.ndarray:
        """Next-state distributions for a batch, shape (B, 2)."""
        states = np.asarray(states)
        counts = self._counts(actions)
        crowded = (counts > self.spec.crowd_threshold).any(axis=1)
        spread = (counts <= self.spec.spread_threshold).all(axis=1)
        p, q = self.spec.leak_p, self.spec.leak_q
        out = np.empty((states.shape[0], 2))
        from_safe = states == SAFE
        go_dist = np.where(crowded, 1.0, p)
        out[from_safe, DISTANCING] = go_dist[from_safe]
        out[from_safe, SAFE] = 1.0 - go_dist[from_safe]
        stay_dist = np.where(spread, q, 1.0)
        out[~from_safe, DISTANCING] = stay_dist[~from_safe]
        out[~from_safe, SAFE] = 1.0 - stay_dist[~from_safe]
        return out

    def batch_next_states(self, states, actions, rng) -> np.ndarray:
        probs = self.batch_transition_probs(states, actions)
        return (rng.random(len(probs)) >= probs[:, SAFE]).astype(int)

    def sample_initial(self, batch, rng) -> np.ndarray:
        return rng.choice(self.num_states, size=batch, p=self.initial_dist)


def congestion_state_potentials(spec: CongestionSpec) -> np.ndarray:
    """Per-state exact potentials of the two state games, already rescaled.

    For facility payoffs ``w * n`` the classic congestion-game potential is
    ``sum_k w_k n_k (n_k + 1) / 2``, with weights ``w_k - c_k`` at the
    distancing state.
    """
    n, f = spec.num_agents, spec.num_facilities
    j_count = f**n
    actions = np.stack(np.unravel_index(np.arange(j_count), (f,) * n)).T
    counts = np.zeros((j_count, f), dtype=int)
    for i in range(n):
        np.add.at(counts, (np.arange(j_count), actions[:, i]), 1)
    w = np.asarray(spec.weights)
    c = np.asarray(spec.penalties)
    pairs = counts * (counts + 1) / 2.0
    safe = (w * pairs).sum(axis=1)
    dist = ((w - c) * pairs).sum(axis=1)
    return np.stack([safe, dist]) / spec.reward_scale()


def build_congestion(spec: CongestionSpec, gamma: float,
                     cap: int = DEFAULT_ENUMERATION_CAP) -> TabularMarkovGame:
    """Dense two-state congestion game; raises when F^N exceeds the cap."""
    implicit = ImplicitCongestionGame(spec, gamma)
    j_count = implicit.num_joint_actions
    if j_count > cap:
        raise EnumerationCapError(
            f"{j_count} joint actions exceed the enumeration cap {cap}; "
            "too large for exact path, keep the implicit representation"
        )
    n, f = spec.num_agents, spec.num_facilities
    actions = np.stack(np.unravel_index(np.arange(j_count), (f,) * n)).T
    rewards = np.empty((n, 2, j_count))
    transitions = np.empty((2, j_count, 2))
    for s in range(2):
        states = np.full(j_count, s)
        rewards[:, s, :] = implicit.batch_rewards(states, actions).T
        transitions[s] = implicit.batch_transition_probs(states, actions)
    candidate = StateRewardPotential(congestion_state_potentials(spec),
                                     exact=False, construction="state-congestion")
    return TabularMarkovGame(
        num_agents=n, num_states=2, action_counts=(f,) * n,
        rewards=rewards, transitions=transitions, discount=gamma,
        initial_dist=np.array([0.5, 0.5]),
        meta={"instance": "congestion", "reward_scale": implicit.scale,
              "spec": spec.to_dict(),
              "facilities": FACILITY_NAMES[:f]},
        potential=candidate,
    )


def build_random_mpg(kind: str, num_agents: int, num_states: int, action_counts,
                     rng, gamma: float = 0.9):
    """Random instance with a known exact potential.

    ``kind='team'``: all agents share one reward table drawn uniformly in
    [-1, 1]; transitions are arbitrary random rows.
    ``kind='c1'``: per-state random potential games (random potential plus
    random per-agent dummy terms over the other agents' actions) with
    transitions that ignore the joint action.

    Returns ``(game, handle)`` where ``handle`` also sits on the game.
    """
    if np.isscalar(action_counts):
        action_counts = (int(action_counts),) * num_agents
    action_counts = tuple(int(a) for a in action_counts)
    if len(action_counts) != num_agents:
        raise MpgLabError("one action count per agent required")
    j_count = joint_action_count(action_counts)
    initial = np.full(num_states, 1.0 / num_states)

    if kind == "team":
        common = rng.uniform(-1.0, 1.0, size=(num_states, j_count))
        rewards = np.broadcast_to(common, (num_agents, num_states, j_count)).copy()
        transitions = rng.dirichlet(np.ones(num_states), size=(num_states, j_count))
        handle = StateRewardPotential(common, exact=True, construction="team")
        meta = {"instance": "random-team"}
    elif kind == "c1":
        phi = rng.uniform(-0.5, 0.5, size=(num_states, j_count))
        rewards = np.empty((num_agents, num_states, j_count))
        for i in range(num_agents):
            others = tuple(a for k, a in enumerate(action_counts) if k != i)
            u = rng.uniform(-0.5, 0.5, size=(num_states,) + others)
            for s in range(num_states):
                block = phi[s].reshape(action_counts) + np.expand_dims(u[s], axis=i)
                rewards[i, s] = block.ravel()
        rows = rng.dirichlet(np.ones(num_states), size=num_states)
        transitions = np.repeat(rows[:, None, :], j_count, axis=1)
        handle = StateRewardPotential(phi, exact=True, construction="c1")
        meta = {"instance": "random-c1"}
    else:
        raise MpgLabError(f"unknown random instance kind {kind!r}")

    meta["reward_scale"] = 1.0
    game = TabularMarkovGame(
        num_agents=num_agents, num_states=num_states, action_counts=action_counts,
        rewards=rewards, transitions=transitions, discount=gamma,
        initial_dist=initial, meta=meta, potential=handle,
    )
    return game, handle
