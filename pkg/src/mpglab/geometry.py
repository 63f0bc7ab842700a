"""Simplex geometry: projections, greedy exploration maps, policy distances.

The Euclidean projection onto a product of simplices factors into
independent per-(agent, state) simplex projections, which is what makes
independent projected ascent equal to a joint projected step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import JointPolicy


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of a vector onto the probability simplex.

    Sort-based threshold rule: with ``u`` the coordinates in decreasing
    order, find the largest k with ``u_k + (1 - sum_{i<=k} u_i) / k > 0``
    and clip ``v + tau`` at zero, ``tau = (1 - sum_{i<=k} u_i) / k``.
    Ties are resolved by the stable sort, so results are reproducible.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("project_simplex expects a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("project_simplex expects finite entries")
    u = np.sort(v, kind="stable")[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    k = int(np.nonzero(u - css / ks > 0)[0][-1]) + 1
    tau = css[k - 1] / k
    return np.maximum(v - tau, 0.0)


def project_rows(table) -> np.ndarray:
    """Row-wise simplex projection of an (S, A) table."""
    table = np.asarray(table, dtype=float)
    return np.vstack([project_simplex(row) for row in table])


def project_policy(raw_tables) -> JointPolicy:
    """Project per-agent, per-state tables onto the product of simplices.

    Equal to the joint Euclidean projection onto the whole policy space,
    computed blockwise per (agent, state).
    """
    if isinstance(raw_tables, JointPolicy):
        raw_tables = raw_tables.probs
    return JointPolicy([project_rows(t) for t in raw_tables])


def alpha_greedy(params: JointPolicy, alpha: float) -> JointPolicy:
    """Mix each action distribution with the uniform one: (1-a)*x + a/A_i.

    Keeps every action probability at least ``alpha / A_i``, which is what
    bounds the variance of score-function gradient estimates.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    return JointPolicy([(1.0 - alpha) * p + alpha / p.shape[1] for p in params.probs])


@dataclass
class GradientMapping:
    """Projected-gradient surrogate for stationarity over the policy space.

    ``mapped_point = P(pi + g / beta)`` and ``mapping_norm = beta *
    ||mapped_point - pi||_2``; a small norm certifies that no feasible
    direction can improve the objective much (factor 2 at the mapped point).
    """

    beta: float
    mapped_point: JointPolicy
    mapping_norm: float


def gradient_mapping(policy: JointPolicy, gradients, beta: float) -> GradientMapping:
    """Gradient mapping of a (policy, per-agent gradient tables) pair."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    raw = [p + np.asarray(g) / beta for p, g in zip(policy.probs, gradients)]
    mapped = project_policy(raw)
    sq = 0.0
    for p, m in zip(policy.probs, mapped.probs):
        sq += float(np.sum((m - p) ** 2))
    return GradientMapping(beta=beta, mapped_point=mapped, mapping_norm=beta * np.sqrt(sq))


def directional_improvement(policy: JointPolicy, gradients, agent=None) -> float:
    """Largest first-order gain over feasible single-agent policy changes.

    For one agent this is ``max_{pi'} (pi' - pi)^T g``, which separates per
    state into ``max_a g[s, a] - pi(s) . g[s]``.  With ``agent=None`` the
    per-agent maxima are summed (every agent deviating at once).
    """
    agents = range(policy.num_agents) if agent is None else [agent]
    total = 0.0
    for i in agents:
        g = np.asarray(gradients[i])
        p = policy.probs[i]
        total += float(np.sum(g.max(axis=1) - np.sum(p * g, axis=1)))
    return total


def l1_accuracy(policy: JointPolicy, reference: JointPolicy) -> float:
    """Mean over agents of the entrywise L1 distance between two policies."""
    if policy.action_counts != reference.action_counts \
            or policy.num_states != reference.num_states:
        raise ValueError("policy shapes do not match")
    total = 0.0
    for p, q in zip(policy.probs, reference.probs):
        total += float(np.abs(p - q).sum())
    return total / policy.num_agents


def linf_distance(policy: JointPolicy, reference: JointPolicy) -> float:
    """Largest absolute entrywise difference between two policies."""
    return max(float(np.abs(p - q).max())
               for p, q in zip(policy.probs, reference.probs))
