"""Potential-function handles for games with known shared-interest structure.

A handle computes the per-state potential value of a joint policy.  Handles
marked ``exact`` come from a construction that guarantees the defining
identity (unilateral deviations change the potential exactly as much as the
deviating agent's value); non-exact handles are candidates used for ordinal
sign checks only.
"""

from __future__ import annotations

import numpy as np

from .errors import MpgLabError
from .game import (JointPolicy, TabularMarkovGame, joint_action_probs,
                   value_of_state_rewards)


class PotentialHandle:
    kind = "abstract"
    exact = False
    construction = ""

    def values(self, game: TabularMarkovGame, policy: JointPolicy) -> np.ndarray:
        """Potential value per start state, shape (S,)."""
        raise NotImplementedError

    def value(self, game, policy, start=None) -> float:
        mu = game.initial_dist if start is None else np.asarray(start, dtype=float)
        return float(mu @ self.values(game, policy))

    def gradient(self, game, policy, start=None):
        """Per-agent gradient tables of the potential, or None if unavailable."""
        return None

    def max_value_bound(self, game) -> float:
        """Default range bound for rewards in [-1, 1]."""
        return 1.0 / (1.0 - game.discount)

    def to_dict(self) -> dict:
        raise NotImplementedError


class StateRewardPotential(PotentialHandle):
    """Discounted sum of per-state joint-action potentials along the play.

    ``tables[s]`` assigns a potential to every joint action of the state
    game at ``s``; the handle evaluates the game's own transition dynamics
    with these tables in place of the rewards.  Exact for team games and
    for games whose transitions do not depend on actions.
    """

    kind = "state_mdp"

    def __init__(self, tables, exact=False, construction=""):
        self.tables = np.asarray(tables, dtype=float)
        self.exact = bool(exact)
        self.construction = construction

    def values(self, game, policy):
        return value_of_state_rewards(game, policy, self.tables)

    def gradient(self, game, policy, start=None):
        from .gradients import exact_gradient_all

        aux = TabularMarkovGame(
            num_agents=game.num_agents,
            num_states=game.num_states,
            action_counts=game.action_counts,
            rewards=np.broadcast_to(self.tables, (game.num_agents,) + self.tables.shape).copy(),
            transitions=game.transitions,
            discount=game.discount,
            initial_dist=game.initial_dist,
        )
        return exact_gradient_all(aux, policy, start)

    def max_value_bound(self, game):
        return float(np.abs(self.tables).max()) / (1.0 - game.discount)

    def to_dict(self):
        return {"kind": self.kind, "exact": self.exact,
                "construction": self.construction, "tables": self.tables.tolist()}


class StaticStatePotential(PotentialHandle):
    """One-shot expected state-game potential, without any look-ahead.

    ``values(.)[s]`` is the expectation of ``tables[s]`` under the joint
    action distribution at ``s`` alone.  Used as an ordinal candidate for
    games whose state games are potential but whose dynamics break the
    exact identity.
    """

    kind = "state_static"

    def __init__(self, tables, construction=""):
        self.tables = np.asarray(tables, dtype=float)
        self.exact = False
        self.construction = construction

    def values(self, game, policy):
        return np.array([joint_action_probs(policy, s) @ self.tables[s]
                         for s in range(game.num_states)])

    def to_dict(self):
        return {"kind": self.kind, "exact": self.exact,
                "construction": self.construction, "tables": self.tables.tolist()}


class BilinearStatePotential(PotentialHandle):
    """Closed-form potential ``kappa[s] * x^T M y`` for two-agent games.

    ``x`` and ``y`` are the two agents' action distributions at one
    designated state; every start state sees the same bilinear form scaled
    by a state coefficient.
    """

    kind = "bilinear_state"

    def __init__(self, kappa, matrix, state_index, exact=True, construction="analytic"):
        self.kappa = np.asarray(kappa, dtype=float)
        self.matrix = np.asarray(matrix, dtype=float)
        self.state_index = int(state_index)
        self.exact = bool(exact)
        self.construction = construction

    def values(self, game, policy):
        if game.num_agents != 2:
            raise MpgLabError("bilinear potential handles require exactly 2 agents")
        x = policy.probs[0][self.state_index]
        y = policy.probs[1][self.state_index]
        return self.kappa * float(x @ self.matrix @ y)

    def gradient(self, game, policy, start=None):
        mu = game.initial_dist if start is None else np.asarray(start, dtype=float)
        scale = float(mu @ self.kappa)
        x = policy.probs[0][self.state_index]
        y = policy.probs[1][self.state_index]
        grads = [np.zeros_like(policy.probs[0]), np.zeros_like(policy.probs[1])]
        grads[0][self.state_index] = scale * (self.matrix @ y)
        grads[1][self.state_index] = scale * (self.matrix.T @ x)
        return grads

    def max_value_bound(self, game):
        return float(np.abs(self.kappa).max() * np.abs(self.matrix).max())

    def to_dict(self):
        return {"kind": self.kind, "exact": self.exact, "construction": self.construction,
                "kappa": self.kappa.tolist(), "matrix": self.matrix.tolist(),
                "state_index": self.state_index}


def handle_from_dict(data) -> PotentialHandle:
    kind = data["kind"]
    if kind == StateRewardPotential.kind:
        return StateRewardPotential(data["tables"], exact=data["exact"],
                                    construction=data.get("construction", ""))
    if kind == StaticStatePotential.kind:
        return StaticStatePotential(data["tables"],
                                    construction=data.get("construction", ""))
    if kind == BilinearStatePotential.kind:
        return BilinearStatePotential(data["kappa"], data["matrix"], data["state_index"],
                                      exact=data["exact"],
                                      construction=data.get("construction", ""))
    raise MpgLabError(f"unknown potential handle kind {kind!r}")
