"""Game, policy and run-artifact files.

Games are JSON documents with dense nested tables indexed by the
mixed-radix joint-action code (agent 0 most significant).  Congestion
games too large for dense tables are written as their generating spec with
the exact-path-disabled flag; the loader rebuilds the on-demand
representation.  Policies are nested [agent][state][action] arrays.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import GameValidationError
from .game import JointPolicy, TabularMarkovGame, validate_policy
from .instances import CongestionSpec, ImplicitCongestionGame
from .potentials import handle_from_dict

FORMAT = "mpglab-game-v1"


def game_to_dict(game) -> dict:
    if isinstance(game, ImplicitCongestionGame):
        return {
            "format": FORMAT,
            "exact_path": False,
            "implicit_congestion": game.spec.to_dict(),
            "discount": game.discount,
            "meta": _plain(game.meta),
        }
    out = {
        "format": FORMAT,
        "exact_path": True,
        "num_agents": game.num_agents,
        "num_states": game.num_states,
        "action_counts": list(game.action_counts),
        "discount": game.discount,
        "initial_dist": game.initial_dist.tolist(),
        "rewards": game.rewards.tolist(),
        "transitions": game.transitions.tolist(),
        "meta": _plain(game.meta),
    }
    if game.potential is not None:
        out["potential"] = game.potential.to_dict()
    return out


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def game_from_dict(data):
    if data.get("format") != FORMAT:
        raise GameValidationError(f"not a recognized game file: format="
                                  f"{data.get('format')!r}")
    if "implicit_congestion" in data:
        spec = CongestionSpec.from_dict(data["implicit_congestion"])
        return ImplicitCongestionGame(spec, data["discount"])
    game = TabularMarkovGame(
        num_agents=data["num_agents"],
        num_states=data["num_states"],
        action_counts=tuple(data["action_counts"]),
        rewards=np.asarray(data["rewards"], dtype=float),
        transitions=np.asarray(data["transitions"], dtype=float),
        discount=data["discount"],
        initial_dist=np.asarray(data["initial_dist"], dtype=float),
        meta=data.get("meta", {}),
    )
    if "potential" in data:
        game.potential = handle_from_dict(data["potential"])
    return game


def save_game(game, path):
    with open(path, "w") as fh:
        json.dump(game_to_dict(game), fh)


def load_game(path):
    with open(path) as fh:
        return game_from_dict(json.load(fh))


def policy_to_lists(policy: JointPolicy):
    return [p.tolist() for p in policy.probs]


def policy_from_lists(data, game=None) -> JointPolicy:
    policy = JointPolicy([np.asarray(p, dtype=float) for p in data])
    if game is not None:
        problems = validate_policy(policy, game.action_counts, game.num_states)
        if problems:
            raise GameValidationError("; ".join(problems))
    return policy


def save_policy(policy, path):
    with open(path, "w") as fh:
        json.dump(policy_to_lists(policy), fh)


def load_policy(path, game=None) -> JointPolicy:
    with open(path) as fh:
        return policy_from_lists(json.load(fh), game)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
