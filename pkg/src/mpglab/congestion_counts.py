"""Exact congestion-game marginals over facility head counts.

Congestion rewards and transitions depend on a joint action only through
the facility count vector, so expectations over product policies never
need the joint-action enumeration: expected own-facility counts are linear
in the other agents' choice probabilities, and threshold events ("some
facility above t", "every facility at most t") come from a dynamic program
over count vectors capped just above the threshold.  This makes the exact
path (values, gradients, best responses) polynomial in the number of
agents, covering games whose joint-action space is far beyond any dense
representation.
"""

from __future__ import annotations

import numpy as np


def _add_shifted(target, grid, axis, cap, weight):
    """target += weight * (grid with one more head at this facility);
    counts advance along ``axis`` and the cap cell absorbs the overflow."""
    src = [slice(None)] * grid.ndim
    dst = [slice(None)] * grid.ndim
    src[axis] = slice(0, cap)
    dst[axis] = slice(1, cap + 1)
    target[tuple(dst)] += weight * grid[tuple(src)]
    src[axis] = slice(cap, cap + 1)
    target[tuple(src)] += weight * grid[tuple(src)]


def capped_count_distributions(rows, cap):
    """Leave-one-out and joint distributions of capped facility counts.

    ``rows[j]`` is agent j's facility distribution.  Returns an array of
    shape ``(n + 1, cap + 1, ..., cap + 1)``: entry ``j < n`` is the count
    distribution of all agents except j, entry ``n`` of all agents.
    Counts beyond ``cap`` are lumped into the cap cell, which is harmless
    for any threshold below it.
    """
    rows = np.asarray(rows)
    n, f = rows.shape
    shape = (cap + 1,) * f
    grids = np.zeros((n + 1,) + shape)
    grids[(slice(None),) + (0,) * f] = 1.0
    scratch = np.empty_like(grids)
    for j in range(n):
        keep = grids[j].copy()
        scratch[:] = 0.0
        for k in range(f):
            _add_shifted(scratch, grids, axis=1 + k, cap=cap, weight=rows[j, k])
        grids, scratch = scratch, grids
        grids[j] = keep
    return grids


def prob_counts_within(grid, limits):
    """Mass of the event ``count_k <= limits[k]`` for every facility."""
    sl = []
    for lim in limits:
        if lim < 0:
            return 0.0
        sl.append(slice(0, min(int(lim), grid.shape[0] - 1) + 1))
    return float(grid[(slice(None),) * 0 + tuple(sl)].sum())


class CongestionMarginals:
    """Exact per-state marginals of a congestion game for one joint policy.

    Precomputes, for both states, the leave-one-out facility-count
    distributions of all agents plus the all-agent one, and reduces them
    into the threshold probabilities conditioned on each own-facility
    choice.
    """

    def __init__(self, spec, scale, policy):
        self.spec = spec
        self.scale = scale
        self.policy = policy
        n, f = spec.num_agents, spec.num_facilities
        self.safe_weights = np.asarray(spec.weights) / scale
        self.dist_weights = (np.asarray(spec.weights)
                             - np.asarray(spec.penalties)) / scale
        self.crowd = int(np.floor(spec.crowd_threshold))
        self.spread = int(np.floor(spec.spread_threshold))
        self.cap = min(max(self.crowd, self.spread) + 1, n)

        # within[s][i, k]: P(every count <= t_s | agent i plays facility k),
        # last row unconditional; t_0 is the crowding and t_1 the spreading
        # threshold.
        self.within = []
        self.expected_others = []
        for s, threshold in ((0, self.crowd), (1, self.spread)):
            rows = np.stack([policy.probs[j][s] for j in range(n)])
            grids = capped_count_distributions(rows, self.cap)
            t = min(threshold, self.cap)
            box = grids[(slice(None),) + (slice(0, t + 1),) * f]
            total = box.reshape(n + 1, -1).sum(axis=1)       # all counts <= t
            cond = np.empty((n + 1, f))
            if threshold >= 1:
                for k in range(f):
                    # own facility contributes one head: others there <= t-1
                    top = np.take(box, t, axis=1 + k)
                    cond[:, k] = total - top.reshape(n + 1, -1).sum(axis=1)
            else:
                cond[:] = 0.0
            self.within.append((total, cond))
            self.expected_others.append(rows.sum(axis=0)[None, :] - rows)

    def _next_rows(self, state, within):
        if state == 0:
            p_d = 1.0 - within * (1.0 - self.spec.leak_p)
            return np.stack([1.0 - p_d, p_d], axis=-1)
        p_s = within * (1.0 - self.spec.leak_q)
        return np.stack([p_s, 1.0 - p_s], axis=-1)

    def transition_rows(self, state, agent=None, own_facility=None):
        """Next-state distribution [P(safe), P(distancing)]."""
        total, cond = self.within[state]
        if agent is None:
            return self._next_rows(state, total[-1])
        return self._next_rows(state, cond[agent, own_facility])

    def induced_rewards(self, agent):
        """Expected reward of each own facility choice, shape (2, F)."""
        return np.stack([
            self.safe_weights * (1.0 + self.expected_others[0][agent]),
            self.dist_weights * (1.0 + self.expected_others[1][agent]),
        ])

    def induced_transitions(self, agent):
        """Per own facility choice, shape (2, F, 2)."""
        return np.stack([self._next_rows(0, self.within[0][1][agent]),
                         self._next_rows(1, self.within[1][1][agent])])

    def chain(self):
        """Joint state chain (2, 2) and expected rewards (n, 2)."""
        p_pi = np.stack([self._next_rows(0, self.within[0][0][-1]),
                         self._next_rows(1, self.within[1][0][-1])])
        n = self.spec.num_agents
        r_pi = np.empty((n, 2))
        for s, weights in ((0, self.safe_weights), (1, self.dist_weights)):
            own = np.stack([self.policy.probs[i][s] for i in range(n)])
            expect = weights * (1.0 + self.expected_others[s])
            r_pi[:, s] = (own * expect).sum(axis=1)
        return p_pi, r_pi
