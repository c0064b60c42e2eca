"""JSON scenario files.

A scenario is one JSON object::

    {
      "model": "motorway",                      # motorway | flow | route_choice | queue
      "network": {"preset": "linear", "C": [3, 2, 1]},
      "traffic": {"rho": [0.9, 0.9, 0.9], "sigma2": 1.0},
      "policy": "pf",
      "mode": "brownian",
      "sim": {"T": 1000.0, "h": 0.001, "seed": 7, "burn_in": 0.2, "replications": 1},
      "n": [1, 1],                              # allocate
      "n0": [1, 1],                             # fluid start
      "queue": {"kind": "mm1", "nu": 0.8, "mu": 1.0},
      "compare": {"policies": ["pf", "upstream", "downstream"]},
      "output": {"dir": "out"}
    }

``network`` is either inline ``{"A": [[...]], "C": [...]}`` or a preset:
``linear`` (``C``), ``tree6`` (optional ``parents`` and ``C``) or
``parallel4`` (``C``).  ``traffic`` gives ``rho`` (with ``mu`` defaulting to
ones) or ``nu`` and ``mu``; ``sigma2`` defaults to 1.  Parsing fills in
defaults, so ``parse(serialize(parse(d)))`` equals ``parse(d)``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ValidationError
from .network import Network, TrafficParams, linear_network, parallel_roads_virtual, tree_network, validate

__all__ = ["Scenario", "load_scenario", "MODELS", "PRESETS"]

MODELS = ("motorway", "flow", "route_choice", "queue")
PRESETS = ("linear", "tree6", "parallel4")
_SIM_DEFAULTS = {"burn_in": 0.2, "replications": 1}
_QUEUE_KINDS = ("mm1", "ps", "rbm")


def _floats(x, what: str) -> list:
    try:
        arr = np.asarray(x, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{what} must be a list of numbers") from exc
    return arr.tolist()


def _normalize_network(spec) -> Optional[dict]:
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise ValidationError("network must be an object")
    if "preset" in spec:
        preset = spec["preset"]
        if preset not in PRESETS:
            raise ValidationError(f"unknown preset {preset!r}; expected one of {PRESETS}")
        out = {"preset": preset}
        if "C" in spec:
            out["C"] = _floats(spec["C"], "C")
        elif preset != "tree6":
            raise ValidationError(f"preset {preset!r} needs capacities C")
        if preset == "tree6" and "parents" in spec:
            out["parents"] = [int(p) for p in spec["parents"]]
        return out
    if "A" not in spec or "C" not in spec:
        raise ValidationError("network needs A and C, or a preset")
    try:
        A = np.asarray(spec["A"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError("A must be a matrix of 0/1 entries") from exc
    if A.ndim != 2:
        raise ValidationError("A must be a 2-D matrix")
    out = {"A": A.astype(int).tolist() if np.all(A == A.astype(int)) else A.tolist(), "C": _floats(spec["C"], "C")}
    if "name" in spec:
        out["name"] = str(spec["name"])
    return out


def _normalize_traffic(spec) -> Optional[dict]:
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise ValidationError("traffic must be an object")
    out = {"sigma2": float(spec.get("sigma2", 1.0))}
    if "rho" in spec:
        rho = _floats(spec["rho"], "rho")
        mu = _floats(spec.get("mu", [1.0] * len(rho)), "mu")
        if len(mu) != len(rho):
            raise ValidationError("rho and mu lengths differ")
        out["nu"] = (np.asarray(rho) * np.asarray(mu)).tolist()
        out["mu"] = mu
    elif "nu" in spec:
        out["nu"] = _floats(spec["nu"], "nu")
        out["mu"] = _floats(spec.get("mu", [1.0] * len(out["nu"])), "mu")
    else:
        raise ValidationError("traffic needs rho or nu")
    return out


@dataclass(frozen=True)
class Scenario:
    """Parsed scenario; :meth:`to_dict` gives the normalized JSON form."""

    model: str = "motorway"
    network: Optional[dict] = None
    traffic: Optional[dict] = None
    policy: str = "pf"
    mode: str = "brownian"
    sim: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if not isinstance(d, dict):
            raise ValidationError("scenario must be a JSON object")
        d = copy.deepcopy(d)
        model = d.pop("model", "motorway")
        if model not in MODELS:
            raise ValidationError(f"unknown model {model!r}; expected one of {MODELS}")
        network = _normalize_network(d.pop("network", None))
        traffic = _normalize_traffic(d.pop("traffic", None))
        policy = str(d.pop("policy", "pf"))
        mode = str(d.pop("mode", "brownian"))
        sim = dict(_SIM_DEFAULTS)
        sim.update(d.pop("sim", {}) or {})
        if sim.get("seed") is not None:
            sim["seed"] = int(sim["seed"])
        sim["replications"] = int(sim["replications"])
        sim["burn_in"] = float(sim["burn_in"])
        q = d.get("queue")
        if q is not None and q.get("kind", "mm1") not in _QUEUE_KINDS:
            raise ValidationError(f"unknown queue kind {q.get('kind')!r}; expected one of {_QUEUE_KINDS}")
        sc = cls(model, network, traffic, policy, mode, sim, d)
        if network is not None:
            net = sc.build_network()
            if traffic is not None and len(traffic["nu"]) != net.I:
                raise ValidationError(f"traffic has {len(traffic['nu'])} routes, network has {net.I}")
        if traffic is not None:
            sc.build_params()
        return sc

    def to_dict(self) -> dict:
        out = {"model": self.model, "policy": self.policy, "mode": self.mode, "sim": dict(self.sim)}
        if self.network is not None:
            out["network"] = copy.deepcopy(self.network)
        if self.traffic is not None:
            out["traffic"] = copy.deepcopy(self.traffic)
        out.update(copy.deepcopy(self.extra))
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def build_network(self) -> Network:
        spec = self.network
        if spec is None:
            raise ValidationError("scenario has no network")
        preset = spec.get("preset")
        if preset == "linear":
            return linear_network(len(spec["C"]), spec["C"])
        if preset == "tree6":
            return tree_network(spec.get("parents"), spec.get("C"))
        if preset == "parallel4":
            return parallel_roads_virtual(spec["C"])[0]
        return validate(spec["A"], spec["C"], name=spec.get("name", "custom"))

    def build_params(self) -> TrafficParams:
        t = self.traffic
        if t is None:
            raise ValidationError("scenario has no traffic block")
        return TrafficParams(nu=t["nu"], mu=t["mu"], sigma2=t["sigma2"])

    def with_overrides(self, **kw) -> "Scenario":
        """Copy with ``policy``, ``mode``, ``seed`` or ``replications`` replaced
        (``None`` values are ignored)."""
        d = self.to_dict()
        for key in ("policy", "mode"):
            if kw.get(key) is not None:
                d[key] = kw[key]
        for key in ("seed", "replications"):
            if kw.get(key) is not None:
                d["sim"][key] = kw[key]
        return Scenario.from_dict(d)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read scenario {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scenario {path} is not valid JSON: {exc}") from exc
    return Scenario.from_dict(data)
