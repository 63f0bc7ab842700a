"""Policy gradients under direct parameterization, exact and sampled.

The exact gradient of agent i's value in its own policy coordinates is

    g[s, a] = d_mu(s) * Qbar_i(s, a) / (1 - gamma),

where ``d_mu`` is the discounted state occupancy and ``Qbar_i``
marginalizes the joint Q-function over the other agents' policies.  The
sampled path draws trajectories whose horizon follows a geometric law with
success probability ``1 - gamma`` (the discount acts as a per-step survival
probability) and scores them REINFORCE-style.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import (DEFAULT_ENUMERATION_CAP, JointPolicy, TabularMarkovGame,
                   marginalize_over_others, value_exact)
from .geometry import alpha_greedy


def exact_gradient(game: TabularMarkovGame, policy: JointPolicy, agent: int,
                   start=None, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Exact value gradient of one agent, shape (S, A_agent)."""
    report = value_exact(game, policy, start, cap)
    if hasattr(game, "induced_single_agent_counts"):
        return _gradient_from_induced(game, policy, report, agent)
    grad = np.empty((game.num_states, game.action_counts[agent]))
    scale = report.occupancy / (1.0 - game.discount)
    for s in range(game.num_states):
        qbar = marginalize_over_others(report.q_values[agent, s], policy, s, agent)
        grad[s] = scale[s] * qbar
    return grad


def _gradient_from_induced(game, policy, report, agent):
    r_bar, p_bar = game.induced_single_agent_counts(policy, agent)
    qbar = r_bar + game.discount * (p_bar @ report.values[agent])
    return (report.occupancy / (1.0 - game.discount))[:, None] * qbar


def exact_gradient_all(game: TabularMarkovGame, policy: JointPolicy,
                       start=None, cap: int = DEFAULT_ENUMERATION_CAP):
    """Exact value gradients of every agent, sharing one policy evaluation.

    Avoids materializing joint Q tensors: per state it builds running
    prefix/suffix products of the agents' action distributions, so the
    other-agent marginalization of each agent's Q row is two contiguous
    matrix-vector contractions.
    """
    from .game import check_enumeration_cap

    if hasattr(game, "marginals"):
        # Structured game: one marginal computation drives the chain solve
        # and every agent's induced rewards/transitions.
        mu = game.initial_dist if start is None else np.asarray(start, dtype=float)
        marg = game.marginals(policy)
        p_pi, r_pi = marg.chain()
        gamma = game.discount
        m = np.eye(game.num_states) - gamma * p_pi
        vals = np.linalg.solve(m, r_pi.T).T
        d = np.linalg.solve(m.T, (1.0 - gamma) * mu)
        scale = d / (1.0 - gamma)
        grads = []
        for i in range(game.num_agents):
            qbar = (marg.induced_rewards(i)
                    + gamma * (marg.induced_transitions(i) @ vals[i]))
            grads.append(scale[:, None] * qbar)
        return grads
    check_enumeration_cap(game, cap)
    mu = game.initial_dist if start is None else np.asarray(start, dtype=float)
    n, s_count = game.num_agents, game.num_states
    counts = game.action_counts
    gamma = game.discount
    lead = np.cumprod((1,) + counts)          # lead[i] = prod(counts[:i])
    trail = lead[-1] // (lead[:-1] * counts)  # trail[i] = prod(counts[i+1:])

    def contract(flat, pre, suf, i):
        # E over all other agents: two contiguous matrix-vector products.
        return pre[i] @ (flat.reshape(lead[i], counts[i], trail[i]) @ suf[i + 1])

    prefixes, suffixes, r_bars = [], [], []
    p_pi = np.empty((s_count, s_count))
    r_pi = np.empty((n, s_count))
    for s in range(s_count):
        pre = [np.ones(1)]
        for i in range(n):
            pre.append(np.multiply.outer(pre[-1], policy.probs[i][s]).ravel())
        suf = [np.ones(1)]
        for i in range(n - 1, -1, -1):
            suf.append(np.multiply.outer(policy.probs[i][s], suf[-1]).ravel())
        suf.reverse()
        prefixes.append(pre)
        suffixes.append(suf)
        r_bars.append([contract(game.rewards[i, s], pre, suf, i) for i in range(n)])
        for i in range(n):
            r_pi[i, s] = policy.probs[i][s] @ r_bars[s][i]
        p_pi[s] = pre[-1] @ game.transitions[s]

    m = np.eye(s_count) - gamma * p_pi
    values = np.linalg.solve(m, r_pi.T).T
    d = np.linalg.solve(m.T, (1.0 - gamma) * mu)
    scale = d / (1.0 - gamma)

    grads = [np.empty((s_count, counts[i])) for i in range(n)]
    for s in range(s_count):
        next_v = values @ game.transitions[s].T   # (n, J), rows contiguous
        for i in range(n):
            qbar = r_bars[s][i] + gamma * contract(next_v[i], prefixes[s],
                                                   suffixes[s], i)
            grads[i][s] = scale[s] * qbar
    return grads


@dataclass
class TrajectorySample:
    """One sampled play: states s_0..s_T, joint actions a_0..a_T, rewards."""

    states: np.ndarray    # (T + 1,)
    actions: np.ndarray   # (T + 1, n)
    rewards: np.ndarray   # (n, T + 1)

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def total_rewards(self) -> np.ndarray:
        """Undiscounted per-agent reward sums; the geometric horizon already
        carries the discounting."""
        return self.rewards.sum(axis=1)


def _draw(rng, pvec) -> int:
    cdf = np.cumsum(pvec)
    return int(min(np.searchsorted(cdf, rng.random(), side="right"), len(pvec) - 1))


def sample_trajectory(game, policy: JointPolicy, rng) -> TrajectorySample:
    """Sample one trajectory with geometric horizon ``T ~ Geom(1 - gamma)``.

    ``T`` counts post-initial steps, so the sample always contains ``s_0``
    and one joint action; ``gamma = 0`` yields single-step bandit samples.
    Draw order is fixed for reproducibility: first ``s_0``, then ``T``,
    then per step each agent's action in index order followed by the state
    transition (skipped after the final action).
    """
    gamma = game.discount
    s = _draw(rng, game.initial_dist)
    horizon = 0 if gamma == 0.0 else int(rng.geometric(1.0 - gamma)) - 1
    n = len(policy.probs)
    states = np.empty(horizon + 1, dtype=int)
    actions = np.empty((horizon + 1, n), dtype=int)
    rewards = np.empty((n, horizon + 1))
    for k in range(horizon + 1):
        states[k] = s
        for i in range(n):
            actions[k, i] = _draw(rng, policy.probs[i][s])
        rewards[:, k] = game.batch_rewards(states[k:k + 1], actions[k:k + 1])[0]
        if k < horizon:
            s = int(game.batch_next_states(states[k:k + 1], actions[k:k + 1], rng)[0])
    return TrajectorySample(states=states, actions=actions, rewards=rewards)


def trajectory_stream(master_seed: int, iteration: int, index: int):
    """RNG stream for one trajectory, derived by a fixed counter scheme.

    Streams are Philox generators keyed by ``(master_seed, iteration *
    2**32 + index)``; distinct (iteration, index) pairs never collide, and
    batches may be sampled concurrently as long as results are reduced in
    index order.
    """
    key = np.array([np.uint64(master_seed),
                    np.uint64((iteration << np.uint64(32)) + index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class GradientEstimate:
    """Batch-averaged score-function gradient estimate for one agent."""

    estimate: np.ndarray      # (S, A_agent), mean over the batch
    sample_count: int
    second_moment: float      # mean of ||per-trajectory estimate||_2^2

    @property
    def gradient(self) -> np.ndarray:
        return self.estimate


def reinforce_estimate(game, params: JointPolicy, alpha: float, agent: int,
                       trajectories) -> GradientEstimate:
    """REINFORCE estimate of agent's value gradient in the parameters x.

    Each trajectory contributes ``R_total * sum_k dlog pi(a_k | s_k)/dx``
    where the policy is the alpha-greedy mixture ``(1-alpha) x + alpha/A``;
    the chain rule gives ``dlog pi(a|s)/dx[s, a] = (1 - alpha)/pi(a|s)``.
    Trajectories must have been generated under that same mixture.  The
    batch mean is reduced in trajectory order so results do not depend on
    any parallel sampling schedule.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be positive; interior policies are required "
                         "for a bounded-variance estimate")
    policy = alpha_greedy(params, alpha)
    probs = policy.probs[agent]
    shape = params.probs[agent].shape
    total = np.zeros(shape)
    second = 0.0
    count = 0
    for traj in trajectories:
        score = np.zeros(shape)
        for k in range(traj.horizon + 1):
            s = traj.states[k]
            a = traj.actions[k, agent]
            score[s, a] += (1.0 - alpha) / probs[s, a]
        est = float(traj.rewards[agent].sum()) * score
        total += est
        second += float(np.sum(est * est))
        count += 1
    if count == 0:
        raise ValueError("empty trajectory batch")
    return GradientEstimate(estimate=total / count, sample_count=count,
                            second_moment=second / count)


def estimator_second_moment_bound(game, alpha: float) -> float:
    """Guaranteed ceiling on the estimator's per-agent second moment."""
    a_max = max(game.action_counts)
    return 24.0 * a_max**2 / (alpha * (1.0 - game.discount) ** 4)


def episodic_gradient_estimates(game, policy: JointPolicy, batch: int,
                                horizon: int, rng, chain_factor: float = 1.0):
    """Plug-in gradient estimates from fixed-length episodes, all agents.

    Runs ``batch`` episodes of ``horizon`` steps in lockstep, estimates the
    discounted state occupancy and, per (agent, state, action), the
    discounted reward-to-go following visits where the agent played that
    action.  The gradient coordinate is the product of the two plug-in
    estimates over ``1 - gamma``; coordinates never visited stay zero.
    Returns a list of (S, A_i) arrays.
    """
    gamma = game.discount
    n = game.num_agents
    states = game.sample_initial(batch, rng)
    state_log = np.empty((horizon, batch), dtype=int)
    action_log = np.empty((horizon, batch, n), dtype=int)
    reward_log = np.empty((horizon, batch, n))
    uniforms = rng.random((horizon, batch, n))
    for t in range(horizon):
        state_log[t] = states
        for i in range(n):
            rows = policy.probs[i][states]
            cdf = np.cumsum(rows, axis=1)
            acts = (cdf < uniforms[t, :, i, None]).sum(axis=1)
            action_log[t, :, i] = np.minimum(acts, rows.shape[1] - 1)
        reward_log[t] = game.batch_rewards(states, action_log[t])
        states = game.batch_next_states(states, action_log[t], rng)

    returns = np.empty_like(reward_log)
    returns[-1] = reward_log[-1]
    for t in range(horizon - 2, -1, -1):
        returns[t] = reward_log[t] + gamma * returns[t + 1]

    weights = gamma ** np.arange(horizon)
    flat_states = state_log.ravel()
    flat_w = np.repeat(weights, batch)
    occ = np.bincount(flat_states, weights=flat_w, minlength=game.num_states)
    occ *= (1.0 - gamma) / batch

    estimates = []
    for i in range(n):
        a_count = game.action_counts[i]
        keys = flat_states * a_count + action_log[:, :, i].ravel()
        wsum = np.bincount(keys, weights=flat_w * returns[:, :, i].ravel(),
                           minlength=game.num_states * a_count)
        wcnt = np.bincount(keys, weights=flat_w,
                           minlength=game.num_states * a_count)
        qbar = np.divide(wsum, wcnt, out=np.zeros_like(wsum), where=wcnt > 0)
        grad = (occ[:, None] * qbar.reshape(game.num_states, a_count)
                / (1.0 - gamma)) * chain_factor
        estimates.append(grad)
    return estimates
