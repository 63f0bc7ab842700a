"""Independent projected gradient ascent on policies, exact and stochastic.

All agents step simultaneously from the same iterate; each agent ascends
its own value and projects back onto its per-state simplices, which for
potential-structured games coincides with a joint projected ascent step on
the potential.  Runs log a trace with the stationarity surrogate, Nash
gaps, potential values and policy distances; stochastic runs are
bit-reproducible from a single master seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import mismatch_estimate, nash_gap
from .errors import MisconfigurationError, MpgLabError
from .game import (DEFAULT_ENUMERATION_CAP, JointPolicy, TabularMarkovGame,
                   value_exact)
from .geometry import alpha_greedy, gradient_mapping, l1_accuracy, project_policy
from .gradients import (episodic_gradient_estimates, exact_gradient_all,
                        reinforce_estimate, sample_trajectory, trajectory_stream)

DIVERGENCE_TOL = 1e-7  # potential drop that flags a misconfigured exact run


def theoretical_schedule(game, epsilon: float, mode: str, d_mismatch: float = 1.0,
                         phi_max: float | None = None):
    """Step size, iteration count and exploration from the guarantee formulas.

    exact:      eta = (1-g)^3 / (2 n g A_max),
                T   = ceil(16 n g D^2 S A_max Phi_max / ((1-g)^5 eps^2)),  alpha = 0.
    stochastic: eta = eps^4 (1-g)^3 g / (48 n D^2 A_max^2 S),
                T   = ceil(48 (1-g) A_max Phi_max D^4 S^2 / (eps^6 g^3)),
                alpha = eps^2.

    These are worst-case prescriptions; practical runs use far larger steps.
    """
    if not 0.0 < epsilon <= 1.0:
        raise MpgLabError(f"epsilon must lie in (0, 1], got {epsilon!r}")
    if d_mismatch < 1.0:
        raise MpgLabError("the mismatch coefficient is never below 1")
    g = game.discount
    n = game.num_agents
    a_max = game.max_actions
    s_count = game.num_states
    if phi_max is None:
        phi_max = 1.0 / (1.0 - g)
    if phi_max <= 0:
        raise MpgLabError("phi_max must be positive")
    if mode == "exact":
        if g == 0.0:
            raise MpgLabError("the exact-schedule step size degenerates at "
                              "discount 0; pick a step size directly")
        eta = (1.0 - g) ** 3 / (2.0 * n * g * a_max)
        iters = math.ceil(16.0 * n * g * d_mismatch**2 * s_count * a_max * phi_max
                          / ((1.0 - g) ** 5 * epsilon**2))
        return eta, iters, 0.0
    if mode == "stochastic":
        if g == 0.0:
            raise MpgLabError("the stochastic schedule degenerates at discount 0 "
                              "(step size and iteration formulas divide by it); "
                              "pick a step size directly")
        eta = epsilon**4 * (1.0 - g) ** 3 * g / (48.0 * n * d_mismatch**2
                                                 * a_max**2 * s_count)
        iters = math.ceil(48.0 * (1.0 - g) * a_max * phi_max * d_mismatch**4
                          * s_count**2 / (epsilon**6 * g**3))
        return eta, iters, epsilon**2
    raise MpgLabError(f"unknown schedule mode {mode!r}")


@dataclass
class PgaConfig:
    """Exact-gradient run parameters.

    ``step_size`` may be a scalar or one value per agent; None picks the
    guarantee value ``(1-g)^3 / (2 n g A_max)``.  ``start`` is the gradient
    start distribution (uniform when omitted; it must be strictly positive
    for the mismatch-based certification).
    """

    step_size: object = None
    max_iters: int = 1000
    epsilon: float = 1e-3
    start: object = None
    log_every: int = 10
    start_policy: JointPolicy | None = None
    track_nash_gap: bool = True
    phi_max: float | None = None
    divergence_check: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise MpgLabError("max_iters must be at least 1")
        if self.epsilon <= 0:
            raise MpgLabError("epsilon must be positive")


@dataclass
class PsgaConfig:
    """Sampled-gradient run parameters.

    ``horizon_mode='geometric'`` is the score-function estimator with
    geometrically distributed trajectory length (requires ``alpha > 0``);
    ``'episodic'`` replays the fixed-horizon mini-batch protocol used by
    the congestion experiments and also accepts ``alpha = 0``.
    """

    step_size: object = 1e-4
    max_iters: int = 1000
    alpha: float = 0.0
    batch: int = 20
    seed: int = 0
    epsilon: float = 1e-3
    horizon_mode: str = "episodic"
    episode_length: int = 20
    start: object = None
    log_every: int = 100
    start_policy: JointPolicy | None = None
    track_nash_gap: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise MpgLabError("max_iters must be at least 1")
        if self.batch < 1:
            raise MpgLabError("batch must be at least 1")
        if self.horizon_mode not in ("geometric", "episodic"):
            raise MpgLabError(f"unknown horizon_mode {self.horizon_mode!r}")
        if self.horizon_mode == "geometric" and not 0.0 < self.alpha <= 1.0:
            raise MpgLabError("geometric-horizon runs need alpha in (0, 1] for a "
                              "bounded-variance estimator")
        if self.horizon_mode == "episodic" and not 0.0 <= self.alpha <= 1.0:
            raise MpgLabError("alpha must lie in [0, 1]")
        if self.horizon_mode == "episodic" and self.episode_length < 1:
            raise MpgLabError("episode_length must be at least 1")


@dataclass
class TraceRow:
    iteration: int
    policy: JointPolicy
    values: np.ndarray
    potential: float
    mapping_norm: float
    nash_gap: float
    d_hat: float
    l1_accuracy: float = float("nan")
    wall_clock: float = 0.0


@dataclass
class LearningTrace:
    """Per-iteration log of one run plus end-of-run summary fields."""

    algorithm: str
    mode: str
    rows: list = field(default_factory=list)
    final_policy: JointPolicy | None = None
    best_iteration: int = -1
    best_gap: float = float("nan")
    stop_reason: str = ""
    config: dict = field(default_factory=dict)

    CSV_COLUMNS = ("iter", "nash_gap", "mapping_norm", "potential", "l1_accuracy")

    def backfill_l1(self):
        for row in self.rows:
            row.l1_accuracy = l1_accuracy(row.policy, self.final_policy)

    def mark_best(self):
        tracked = [r for r in self.rows if not math.isnan(r.nash_gap)]
        if tracked:
            best = min(tracked, key=lambda r: r.nash_gap)
            self.best_iteration = best.iteration
            self.best_gap = best.nash_gap

    def csv_lines(self):
        n = len(self.rows[0].values) if self.rows else 0
        header = list(self.CSV_COLUMNS[:4]) + [f"V_{i}" for i in range(n)] \
            + [self.CSV_COLUMNS[4]]
        yield ",".join(header)
        for r in self.rows:
            cells = [str(r.iteration), repr(r.nash_gap), repr(r.mapping_norm),
                     repr(r.potential)]
            cells += [repr(float(v)) for v in r.values]
            cells.append(repr(r.l1_accuracy))
            yield ",".join(cells)

    def write_csv(self, path):
        with open(path, "w") as fh:
            for line in self.csv_lines():
                fh.write(line + "\n")

    def summary(self) -> dict:
        last = self.rows[-1] if self.rows else None
        return {
            "algorithm": self.algorithm,
            "mode": self.mode,
            "iterations": last.iteration if last else 0,
            "final_nash_gap": last.nash_gap if last else float("nan"),
            "final_mapping_norm": last.mapping_norm if last else float("nan"),
            "final_potential": last.potential if last else float("nan"),
            "best_iteration": self.best_iteration,
            "best_nash_gap": self.best_gap,
            "stop_reason": self.stop_reason,
            "config": self.config,
        }


def _per_agent_steps(step_size, num_agents):
    if np.isscalar(step_size):
        return [float(step_size)] * num_agents
    steps = [float(e) for e in step_size]
    if len(steps) != num_agents:
        raise MpgLabError("one step size per agent required")
    if any(e <= 0 for e in steps):
        raise MpgLabError("step sizes must be positive")
    return steps


def pga_step(game: TabularMarkovGame, policy: JointPolicy, eta, start=None,
             cap: int = DEFAULT_ENUMERATION_CAP) -> JointPolicy:
    """One simultaneous projected ascent step on every agent's own value."""
    steps = _per_agent_steps(eta, game.num_agents)
    grads = exact_gradient_all(game, policy, start, cap)
    raw = [p + e * g for p, e, g in zip(policy.probs, steps, grads)]
    return project_policy(raw)


def _stop_threshold(epsilon, gamma, num_states, d_hat):
    return epsilon * (1.0 - gamma) / (2.0 * max(d_hat, 1.0) * np.sqrt(num_states))


def run_pga(game: TabularMarkovGame, config: PgaConfig,
            cap: int = DEFAULT_ENUMERATION_CAP) -> LearningTrace:
    """Exact-gradient independent projected ascent with convergence logging.

    Runs until the gradient-mapping norm falls below
    ``eps (1-g) / (2 D_hat sqrt(S))`` or the iteration budget is spent; the
    mismatch estimate D_hat is refreshed at logged iterations from the
    current policy, its best responses and the uniform policy.  On games
    with an exact potential handle, a potential drop beyond tolerance
    raises ``MisconfigurationError`` (the step size is too large for the
    ascent guarantee).
    """
    n = game.num_agents
    mu = game.uniform_state_dist() if config.start is None else np.asarray(config.start)
    if config.step_size is None:
        eta, _, _ = theoretical_schedule(game, config.epsilon, "exact")
        steps = [eta] * n
    else:
        steps = _per_agent_steps(config.step_size, n)
    policy = (game.uniform_policy() if config.start_policy is None
              else config.start_policy.copy())
    beta = game.curvature_bound()
    handle = game.potential
    exact_handle = handle is not None and handle.exact

    trace = LearningTrace(algorithm="pga", mode="exact",
                          config={"step_size": steps, "epsilon": config.epsilon,
                                  "max_iters": config.max_iters})
    d_hat = mismatch_estimate(game, [game.uniform_policy()], mu, cap)
    last_potential = None
    t0 = time.perf_counter()
    stop_reason = "budget-exhausted"

    def log_row(it, policy, phi, mapping_norm):
        nonlocal d_hat
        report = value_exact(game, policy, mu, cap)
        gap = float("nan")
        if config.track_nash_gap:
            ng = nash_gap(game, policy, config.epsilon, cap)
            gap = ng.gap
            br_policies = [br.as_policy(policy) for br in ng.best_responses]
            d_hat = mismatch_estimate(
                game, br_policies + [policy, game.uniform_policy()], mu, cap)
        trace.rows.append(TraceRow(
            iteration=it, policy=policy.copy(),
            values=(report.values @ mu).copy(), potential=phi,
            mapping_norm=mapping_norm, nash_gap=gap, d_hat=d_hat,
            wall_clock=time.perf_counter() - t0))

    for it in range(config.max_iters + 1):
        grads = exact_gradient_all(game, policy, mu, cap)
        mapping = gradient_mapping(policy, grads, beta)
        phi = handle.value(game, policy, mu) if handle is not None else float("nan")

        if exact_handle and config.divergence_check and last_potential is not None:
            if phi < last_potential - DIVERGENCE_TOL:
                raise MisconfigurationError(
                    f"potential decreased by {last_potential - phi:.3e} on a "
                    "certified instance; the step size violates the ascent "
                    "guarantee")
        last_potential = phi

        logged = it % config.log_every == 0 or it == config.max_iters
        maybe_stop = mapping.mapping_norm <= _stop_threshold(
            config.epsilon, game.discount, game.num_states, d_hat)
        if logged or maybe_stop:
            log_row(it, policy, phi, mapping.mapping_norm)
        if maybe_stop:
            # Confirm against the mismatch estimate refreshed by the log.
            if mapping.mapping_norm <= _stop_threshold(
                    config.epsilon, game.discount, game.num_states, d_hat):
                stop_reason = "stationarity-reached"
                break
        if it == config.max_iters:
            break
        raw = [p + e * g for p, e, g in zip(policy.probs, steps, grads)]
        policy = project_policy(raw)

    trace.final_policy = policy
    trace.stop_reason = stop_reason
    trace.backfill_l1()
    trace.mark_best()
    return trace


def run_psga(game, config: PsgaConfig,
             cap: int = DEFAULT_ENUMERATION_CAP) -> LearningTrace:
    """Stochastic independent projected ascent, reproducible from the seed.

    Geometric mode scores whole trajectories against the alpha-greedy
    mixture (one RNG stream per trajectory, reduced in index order);
    episodic mode estimates occupancies and action values from fixed-length
    mini-batches.  Metrics are logged for the effective behavior policy.
    """
    n = game.num_agents
    steps = _per_agent_steps(config.step_size, n)
    params = (game.uniform_policy() if config.start_policy is None
              else config.start_policy.copy())
    exact_ok = isinstance(game, TabularMarkovGame) \
        and game.num_joint_actions <= cap
    mu = None
    if exact_ok:
        mu = game.uniform_state_dist() if config.start is None \
            else np.asarray(config.start)
    beta = game.curvature_bound() if exact_ok else float("nan")
    handle = getattr(game, "potential", None)
    chain = 1.0 - config.alpha

    trace = LearningTrace(
        algorithm="psga", mode=config.horizon_mode,
        config={"step_size": steps, "alpha": config.alpha, "batch": config.batch,
                "seed": config.seed, "max_iters": config.max_iters,
                "episode_length": config.episode_length})
    t0 = time.perf_counter()

    def behavior(x):
        return alpha_greedy(x, config.alpha) if config.alpha > 0 else x

    for it in range(config.max_iters + 1):
        logged = it % config.log_every == 0 or it == config.max_iters
        if logged:
            policy = behavior(params)
            values = np.full(n, float("nan"))
            phi = float("nan")
            mapping_norm = float("nan")
            gap = float("nan")
            d_hat = float("nan")
            if exact_ok:
                report = value_exact(game, policy, mu, cap)
                values = report.values @ mu
                if handle is not None:
                    phi = handle.value(game, policy, mu)
                mapping = gradient_mapping(policy, exact_gradient_all(game, policy,
                                                                      mu, cap), beta)
                mapping_norm = mapping.mapping_norm
                if config.track_nash_gap:
                    gap = nash_gap(game, policy, config.epsilon, cap).gap
            trace.rows.append(TraceRow(
                iteration=it, policy=policy.copy(), values=values, potential=phi,
                mapping_norm=mapping_norm, nash_gap=gap, d_hat=d_hat,
                wall_clock=time.perf_counter() - t0))
        if it == config.max_iters:
            break

        if config.horizon_mode == "geometric":
            policy = behavior(params)
            batch = [sample_trajectory(game, policy,
                                       trajectory_stream(config.seed, it, k))
                     for k in range(config.batch)]
            grads = [reinforce_estimate(game, params, config.alpha, i, batch).estimate
                     for i in range(n)]
        else:
            rng = trajectory_stream(config.seed, it, 0)
            grads = episodic_gradient_estimates(game, behavior(params), config.batch,
                                                config.episode_length, rng,
                                                chain_factor=chain if config.alpha > 0
                                                else 1.0)
        raw = [x + e * g for x, e, g in zip(params.probs, steps, grads)]
        params = project_policy(raw)

    trace.final_policy = behavior(params)
    trace.stop_reason = "budget-exhausted"
    trace.backfill_l1()
    trace.mark_best()
    return trace
