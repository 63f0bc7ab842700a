"""Command-line front end: build instances, run learning, verify structure.

Every command is a pure function of its input files, flags and seed;
rerunning reproduces the outputs byte for byte (timestamps live only in
the run manifest).  Exit codes: 0 success, 2 validation error, 3 resource
cap exceeded, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .analysis import (congestion_symmetric_nash_search,
                       deterministic_nash_search, nash_gap, verify_mpg)
from .errors import (EnumerationCapError, GameValidationError,
                     MisconfigurationError, MpgLabError)
from .game import JointPolicy, validate_game, value_exact
from .instances import (CongestionSpec, ImplicitCongestionGame,
                        build_blackhole, build_chain_mpg, build_congestion,
                        build_random_mpg, build_xor_zerosum)
from .io import (file_sha256, game_from_dict, load_game, load_policy,
                 policy_to_lists, save_game, save_policy)
from .learning import PgaConfig, PsgaConfig, run_pga, run_psga

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CAP = 3
EXIT_INTERNAL = 4


def _apply_thread_cap():
    """MPG_LAB_THREADS caps the native worker threads of the linear algebra
    backends; all other computation is sequential by design."""
    cap = os.environ.get("MPG_LAB_THREADS")
    if not cap:
        return
    try:
        limit = max(1, int(cap))
    except ValueError:
        raise GameValidationError(f"MPG_LAB_THREADS must be an integer, got {cap!r}")
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limit)
    except ImportError:
        pass


def _dump_json(data, path=None):
    text = json.dumps(data, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _manifest(command, args_blob, seed, inputs, outputs, started, ended):
    return {
        "command": command,
        "config_hash": hashlib.sha256(args_blob.encode()).hexdigest(),
        "input_hashes": {name: file_sha256(path) for name, path in inputs.items()},
        "seed": seed,
        "tool_version": __version__,
        "started": started,
        "ended": ended,
        "outputs": outputs,
    }


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def cmd_make_instance(args) -> int:
    if args.name == "xor":
        game = build_xor_zerosum(args.gamma)
    elif args.name == "blackhole":
        game = build_blackhole(args.gamma)
    elif args.name == "chain":
        game = build_chain_mpg(args.gamma, p0=args.p0)
    elif args.name == "congestion":
        if args.spec_json:
            spec = CongestionSpec.from_dict(json.loads(args.spec_json))
        else:
            penalty = None
            if args.penalty:
                values = [float(x) for x in args.penalty.split(",")]
                penalty = values[0] if len(values) == 1 else tuple(values)
            spec = CongestionSpec(
                num_agents=args.agents, num_facilities=args.facilities,
                penalty=penalty, crowd_threshold=args.crowd_threshold,
                spread_threshold=args.spread_threshold,
                leak_p=args.leak_p, leak_q=args.leak_q)
        try:
            game = build_congestion(spec, args.gamma, cap=args.cap)
        except EnumerationCapError:
            # Too large for dense tables: write the generating spec with the
            # exact-path-disabled flag instead.
            game = ImplicitCongestionGame(spec, args.gamma)
    elif args.name in ("random-team", "random-c1"):
        kind = args.name.split("-", 1)[1]
        game, _ = build_random_mpg(kind, args.agents, args.states,
                                   args.actions, np.random.default_rng(args.seed),
                                   gamma=args.gamma)
    else:
        raise GameValidationError(f"unknown instance {args.name!r}")

    if hasattr(game, "transitions"):
        problems = validate_game(game)
        if problems:
            raise GameValidationError("; ".join(problems))
    save_game(game, args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def _start_policy(game, value):
    if value in (None, "uniform"):
        return None
    return load_policy(value, game)


def _occupancy_summary(game, policy):
    """Facility head counts of the argmax profile, per state, for
    congestion instances."""
    meta = getattr(game, "meta", {})
    if meta.get("instance") != "congestion":
        return None
    f = game.action_counts[0]
    counts = []
    for s in range(game.num_states):
        greedy = [int(np.argmax(p[s])) for p in policy.probs]
        counts.append(np.bincount(greedy, minlength=f).tolist())
    names = meta.get("facilities", "")
    return {"facilities": names, "safe": counts[0], "distancing": counts[1]}


def cmd_run(args) -> int:
    started = _now()
    game = load_game(args.game)
    with open(args.config) as fh:
        config = json.load(fh)
    algorithm = config.get("algorithm", "pga")
    seed = int(config.get("seed", 0))
    start_policy = _start_policy(game, config.get("start_policy", "uniform"))
    step = config.get("step_size")
    if config.get("theoretical"):
        step = None

    if algorithm == "pga":
        cfg = PgaConfig(
            step_size=step,
            max_iters=int(config.get("max_iters", 1000)),
            epsilon=float(config.get("epsilon", 1e-3)),
            log_every=int(config.get("log_every", 100)),
            start_policy=start_policy,
            track_nash_gap=bool(config.get("track_nash_gap", True)),
        )
        trace = run_pga(game, cfg)
    elif algorithm == "psga":
        cfg = PsgaConfig(
            step_size=step if step is not None else 1e-4,
            max_iters=int(config.get("max_iters", 1000)),
            alpha=float(config.get("alpha", 0.0)),
            batch=int(config.get("batch", 20)),
            seed=seed,
            epsilon=float(config.get("epsilon", 1e-3)),
            horizon_mode=config.get("horizon_mode", "episodic"),
            episode_length=int(config.get("episode_length", 20)),
            log_every=int(config.get("log_every", 100)),
            start_policy=start_policy,
            track_nash_gap=bool(config.get("track_nash_gap", False)),
        )
        trace = run_psga(game, cfg)
    else:
        raise GameValidationError(f"unknown algorithm {algorithm!r}")

    prefix = args.out_prefix
    csv_path = prefix + ".csv"
    policy_path = prefix + ".policy.json"
    summary_path = prefix + ".summary.json"
    manifest_path = prefix + ".manifest.json"
    trace.write_csv(csv_path)
    save_policy(trace.final_policy, policy_path)

    summary = trace.summary()
    summary["final_policy_file"] = policy_path
    summary["manifest_file"] = manifest_path
    occupancy = _occupancy_summary(game, trace.final_policy)
    if occupancy is not None:
        summary["equilibrium_occupancy"] = occupancy
    _dump_json(summary, summary_path)
    _dump_json(_manifest(
        "run", json.dumps(config, sort_keys=True), seed,
        {"game": args.game, "config": args.config},
        [csv_path, policy_path, summary_path], started, _now()), manifest_path)
    print(f"wrote {csv_path}, {summary_path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    game = load_game(args.game)
    rng = np.random.default_rng(args.seed)
    cert = verify_mpg(game, num_samples=args.samples, rng=rng)
    result = {"certificate": cert.to_dict()}
    if args.nash_search:
        try:
            profiles = deterministic_nash_search(game,
                                                 profile_budget=args.budget)
            result["deterministic_nash"] = {
                "profiles": profiles,
                "count": len(profiles),
                "finding": ("no deterministic Nash profile exists"
                            if not profiles else
                            f"{len(profiles)} deterministic Nash profiles"),
            }
        except EnumerationCapError as exc:
            result["deterministic_nash"] = {"error": str(exc)}
    _dump_json(result, args.out)
    return EXIT_OK


def cmd_nash_search(args) -> int:
    game = load_game(args.game)
    if args.symmetric:
        entries = congestion_symmetric_nash_search(game)
        result = {"mode": "symmetric-occupancy", "profiles": entries,
                  "count": len(entries)}
    else:
        profiles = deterministic_nash_search(game, profile_budget=args.budget)
        result = {"mode": "exhaustive", "profiles": profiles,
                  "count": len(profiles)}
    _dump_json(result, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    game = load_game(args.game)
    if args.policy == "uniform":
        policy = JointPolicy.uniform(game.num_states, game.action_counts)
    else:
        policy = load_policy(args.policy, game)
    report = value_exact(game, policy)
    result = {
        "values": report.values.tolist(),
        "occupancy": report.occupancy.tolist(),
    }
    if args.nash_gap:
        result["nash_gap"] = nash_gap(game, policy).to_dict()
    if args.full and report.q_values is not None:
        result["q_values"] = report.q_values.tolist()
        result["advantages"] = report.advantages.tolist()
    occupancy = _occupancy_summary(game, policy)
    if occupancy is not None:
        result["equilibrium_occupancy"] = occupancy
    _dump_json(result, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpglab",
        description="Finite multi-agent Markov games: instances, independent "
                    "policy gradient, and potential-structure verification.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    mk = sub.add_parser("make-instance", help="write a game file")
    mk.add_argument("name", help="xor | blackhole | chain | congestion | "
                                 "random-team | random-c1")
    mk.add_argument("--gamma", type=float, default=0.9)
    mk.add_argument("--p0", type=float, default=0.5,
                    help="return probability of the chain instance")
    mk.add_argument("--agents", type=int, default=8)
    mk.add_argument("--facilities", type=int, default=4)
    mk.add_argument("--states", type=int, default=2,
                    help="state count for random instances")
    mk.add_argument("--actions", type=int, default=2,
                    help="actions per agent for random instances")
    mk.add_argument("--penalty", default=None,
                    help="uniform value or comma list per facility")
    mk.add_argument("--crowd-threshold", type=float, default=None)
    mk.add_argument("--spread-threshold", type=float, default=None)
    mk.add_argument("--leak-p", type=float, default=0.0)
    mk.add_argument("--leak-q", type=float, default=0.0)
    mk.add_argument("--spec-json", default=None,
                    help="full congestion spec as a JSON fragment")
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--cap", type=int, default=2**20,
                    help="joint-action cap for dense tables")
    mk.add_argument("--output", required=True)
    mk.set_defaults(func=cmd_make_instance)

    run = sub.add_parser("run", help="run a learning experiment")
    run.add_argument("--game", required=True)
    run.add_argument("--config", required=True, help="run config JSON")
    run.add_argument("--out-prefix", required=True)
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="verify potential structure")
    ver.add_argument("--game", required=True)
    ver.add_argument("--samples", type=int, default=100)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--nash-search", action="store_true",
                     help="also enumerate deterministic Nash profiles")
    ver.add_argument("--budget", type=int, default=100_000)
    ver.add_argument("--out", default=None)
    ver.set_defaults(func=cmd_verify)

    ns = sub.add_parser("nash-search", help="deterministic Nash enumeration")
    ns.add_argument("--game", required=True)
    ns.add_argument("--budget", type=int, default=100_000)
    ns.add_argument("--symmetric", action="store_true",
                    help="occupancy-vector scan for congestion instances")
    ns.add_argument("--out", default=None)
    ns.set_defaults(func=cmd_nash_search)

    ev = sub.add_parser("evaluate", help="one-shot policy evaluation")
    ev.add_argument("--game", required=True)
    ev.add_argument("--policy", default="uniform",
                    help="'uniform' or a policy JSON file")
    ev.add_argument("--nash-gap", action="store_true")
    ev.add_argument("--full", action="store_true",
                    help="include joint Q and advantage tables")
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap()
        return args.func(args)
    except EnumerationCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (GameValidationError, MisconfigurationError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MpgLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AssertionError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
