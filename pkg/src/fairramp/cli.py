"""Command-line front end driven by JSON scenario files.

Every command prints a JSON summary on stdout.  With ``--out DIR`` the
summary is also written to ``DIR/summary.json`` together with trajectory
tables (CSV by default, JSON with ``--format json``).  Replication ``k``
uses child ``k`` of ``numpy.random.SeedSequence(seed)``.

Exit codes: 0 success, 1 validation error, 2 runtime or solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .allocation import allocate
from .errors import FairRampError, ValidationError
from .flow import approx_stationary, integrate_fluid, simulate_ctmc
from .motorway import simulate_motorway, stationary_law, trend_statistic
from .queue import WorkDistribution, simulate_mg1_ps, simulate_mm1, rbm1_path, rbm1_stationary_mean
from .rng import spawn_seeds
from .routechoice import simulate_route_choice, zeta_params
from .scenario import Scenario, load_scenario

__all__ = ["main", "build_parser"]

COMMANDS = ("allocate", "stationary", "simulate", "ctmc", "fluid", "queue", "route-choice", "compare")
_SEEDED = {"simulate", "ctmc", "queue", "route-choice", "compare"}


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable, allow_nan=True)


class _Output:
    """Collects tables and the summary; writes them when a directory is set."""

    def __init__(self, out: Optional[str], fmt: str):
        self.dir = Path(out) if out else None
        self.fmt = fmt
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def table(self, name: str, columns: Sequence[str], data) -> None:
        if self.dir is None:
            return
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if self.fmt == "json":
            (self.dir / f"{name}.json").write_text(_dumps({"columns": list(columns), "rows": data}))
        else:
            np.savetxt(
                self.dir / f"{name}.csv", data, fmt="%.17g", delimiter=",", header=",".join(columns), comments=""
            )

    def summary(self, obj: dict) -> None:
        text = _dumps(obj)
        if self.dir is not None:
            (self.dir / "summary.json").write_text(text + "\n")
        print(text)


def _cols(prefix: str, k: int) -> list:
    return [f"{prefix}_{i + 1}" for i in range(k)]


def _sim(sc: Scenario, key: str, default=None, required: bool = False):
    v = sc.sim.get(key, default)
    if v is None and required:
        raise ValidationError(f"scenario sim block needs {key!r}")
    return v


# ---------------------------------------------------------------------------
# commands


def cmd_allocate(sc: Scenario, args, out: _Output) -> None:
    net = sc.build_network()
    n = args.n if args.n is not None else sc.extra.get("n")
    if n is None:
        raise ValidationError("allocate needs occupancies: pass --n 1,1 or put \"n\" in the scenario")
    n = np.asarray(n, dtype=float).reshape(-1)
    if n.size != net.I:
        raise ValidationError(f"n has {n.size} entries, network has {net.I} routes")
    a = allocate(net, n)
    out.summary(
        {"lambda": a.lam, "q": a.q, "d": net.A.T @ a.q, "objective": a.objective, "active": sorted(a.active)}
    )


def cmd_stationary(sc: Scenario, args, out: _Output) -> None:
    params = sc.build_params()
    n_samples = int(_sim(sc, "n_samples", 0))
    seed = _sim(sc, "seed", 0)
    if sc.model == "flow":
        law = approx_stationary(sc.build_network(), params)
        out.table("stationary", ["route", "mean_n", "var_n"], np.column_stack([np.arange(1, law.rho.size + 1), law.mean_n, law.var_n]))
        out.summary({"model": "flow", "rates": law.exp_rates, "mean_q": law.mean_q, "mean_n": law.mean_n, "var_n": law.var_n, "scenario": sc.to_dict()})
        return
    if sc.model == "route_choice" or (sc.network or {}).get("preset") == "parallel4":
        vl = zeta_params(params.rho, sc.network["C"], params.sigma2, n_samples, seed)
        law = vl.law
        model = "route_choice"
    elif sc.model == "motorway":
        law = stationary_law(sc.build_network(), params, n_samples, seed)
        model = "motorway"
    else:
        raise ValidationError(f"stationary is not defined for model {sc.model!r}")
    rows = np.column_stack([np.arange(1, law.rho.size + 1), law.mean_m, law.var_m, law.mean_delay, law.var_delay])
    out.table("stationary", ["line", "mean_m", "var_m", "mean_delay", "var_delay"], rows)
    out.summary(
        {
            "model": model,
            "zeta": law.zeta,
            "mean_q": law.mean_q,
            "mean_m": law.mean_m,
            "var_m": law.var_m,
            "mean_delay": law.mean_delay,
            "var_delay": law.var_delay,
            "quantiles": law.quantiles,
            "scenario": sc.to_dict(),
        }
    )


def _motorway_table(out: _Output, name: str, rec: dict, I: int, J: int) -> None:
    cols = ["time"] + _cols("m", I) + _cols("lambda", I) + _cols("q", J) + _cols("d", I) + _cols("u", J)
    data = np.column_stack([rec["t"], rec["m"], rec["lam"], rec["q"], rec["d"], rec["u"]])
    out.table(name, cols, data)


def _motorway_kwargs(sc: Scenario) -> dict:
    kw = dict(
        T=float(_sim(sc, "T", required=True)),
        h=float(_sim(sc, "h", 1e-3)),
        seed=int(_sim(sc, "seed", required=True)),
        replications=int(sc.sim["replications"]),
        burn_in=float(sc.sim["burn_in"]),
    )
    if _sim(sc, "record_every") is not None:
        kw["record_every"] = int(sc.sim["record_every"])
    return kw


def cmd_simulate(sc: Scenario, args, out: _Output) -> None:
    net = sc.build_network()
    params = sc.build_params()
    kw = _motorway_kwargs(sc)
    if sc.mode in ("jobs", "poisson_jobs"):
        kw.pop("record_every", None)
        kw["record_states"] = True
    res = simulate_motorway(net, params, policy=sc.policy, mode=sc.mode, **kw)
    for k, run in enumerate(res.runs):
        _motorway_table(out, f"simulate_rep{k}", run.records, net.I, net.J)
    summary = res.summary()
    summary["scenario"] = sc.to_dict()
    out.summary(summary)


def cmd_route_choice(sc: Scenario, args, out: _Output) -> None:
    params = sc.build_params()
    if (sc.network or {}).get("preset") != "parallel4":
        raise ValidationError("route-choice needs the parallel4 network preset")
    kw = _motorway_kwargs(sc)
    jobs = sc.mode in ("jobs", "poisson_jobs")
    extra = sc.extra.get("route_choice", {})
    if jobs:
        kw.pop("record_every", None)
    rc = simulate_route_choice(
        params,
        sc.mode,
        C=sc.network["C"],
        choose_by=extra.get("choose_by", "nominal"),
        reflection=extra.get("reflection"),
        **kw,
    )
    I, J = 4, 4
    for k, run in enumerate(rc.result.runs):
        rec = run.records
        if jobs:
            cols = ["time", "source", "chosen_line", "total_m"]
            src = run.events["sources"]
            out.table(f"route_choice_rep{k}", cols, np.column_stack([rec["t"], src + 1, rec["line"] + 1, rec["total"]]))
        else:
            _motorway_table(out, f"route_choice_rep{k}", rec, I, J)
    summary = rc.summary()
    summary["scenario"] = sc.to_dict()
    out.summary(summary)


def cmd_ctmc(sc: Scenario, args, out: _Output) -> None:
    net = sc.build_network()
    params = sc.build_params()
    T_events = int(_sim(sc, "T_events", required=True))
    seed = int(_sim(sc, "seed", required=True))
    reps = []
    for k, ss in enumerate(spawn_seeds(seed, int(sc.sim["replications"]))):
        r = simulate_ctmc(net, params, T_events, ss, n0=sc.extra.get("n0"), burn_in=float(sc.sim["burn_in"]))
        cols = ["time"] + _cols("n", net.I) + _cols("w", net.J) + _cols("lambda", net.I)
        out.table(f"ctmc_rep{k}", cols, np.column_stack([r.times, r.n, r.w, r.lam]))
        s = r.summary()
        s.pop("config")
        reps.append(s)
    law = None
    try:
        law = approx_stationary(net, params).mean_n
    except FairRampError:
        pass
    out.summary(
        {
            "replications": reps,
            "mean_n": np.mean([r["mean_n"] for r in reps], axis=0),
            "approx_mean_n": law,
            "scenario": sc.to_dict(),
        }
    )


def cmd_fluid(sc: Scenario, args, out: _Output) -> None:
    net = sc.build_network()
    params = sc.build_params()
    n0 = sc.extra.get("n0")
    if n0 is None:
        raise ValidationError("fluid needs a start state \"n0\" in the scenario")
    T = float(_sim(sc, "T", required=True))
    h = float(_sim(sc, "h", 1e-3))
    f = integrate_fluid(net, params, n0, T, h, record_every=int(_sim(sc, "record_every", 1)))
    cols = ["time"] + _cols("n", net.I) + _cols("w", net.J) + _cols("lambda", net.I)
    out.table("fluid", cols, np.column_stack([f.times, f.n, f.w, f.lam]))
    out.table("fluid_diagnostics", ["time", "distance", "lyapunov"], np.column_stack([f.times, f.distance, f.lyapunov]))
    dV = np.diff(f.lyapunov)
    out.summary(
        {
            "terminal_n": f.n[-1],
            "terminal_distance": f.terminal_distance,
            "max_lyapunov_increase": float(dV.max()) if dV.size else 0.0,
            "reached_origin": f.reached_origin,
            "end_time": float(f.times[-1]),
            "scenario": sc.to_dict(),
        }
    )


def _work_distribution(spec: dict) -> WorkDistribution:
    kind = spec.get("kind", "exponential")
    if kind == "exponential":
        return WorkDistribution.exponential(float(spec.get("mu", 1.0)))
    if kind == "deterministic":
        return WorkDistribution.deterministic(float(spec.get("mean", 1.0)))
    if kind == "general":
        return WorkDistribution.general(spec["x"], spec["cdf"])
    raise ValidationError(f"unknown work distribution {kind!r}")


def cmd_queue(sc: Scenario, args, out: _Output) -> None:
    q = sc.extra.get("queue")
    if q is None:
        raise ValidationError("queue needs a \"queue\" block in the scenario")
    kind = q.get("kind", "mm1")
    seed = int(_sim(sc, "seed", required=True))
    burn_in = float(sc.sim["burn_in"])
    reps = []
    for k, ss in enumerate(spawn_seeds(seed, int(sc.sim["replications"]))):
        if kind == "mm1":
            r = simulate_mm1(float(q["nu"]), float(q.get("mu", 1.0)), int(_sim(sc, "T_events", required=True)), ss, burn_in=burn_in)
            p = r.path
            W = np.full(p.times.size, np.nan)
            out.table(f"queue_rep{k}", ["time", "W", "N", "U"], np.column_stack([p.times, W, p.N, p.U]))
            reps.append({"mean": r.mean, "std_err": r.std_err, "pmf_head": r.pmf[:11]})
        elif kind == "ps":
            G = _work_distribution(q.get("work", {"kind": "exponential", "mu": 1.0}))
            r = simulate_mg1_ps(float(q["nu"]), G, float(_sim(sc, "T", required=True)), ss, burn_in=burn_in)
            p = r.path
            out.table(f"queue_rep{k}", ["time", "W", "N", "U"], np.column_stack([p.times, p.W, p.N, p.U]))
            reps.append({"mean": r.mean, "pmf_head": r.pmf[:11], "n_residual_samples": int(r.residuals.size)})
        else:
            rho, s2 = float(q["rho"]), float(q.get("sigma2", 1.0))
            r = rbm1_path(rho, s2, float(_sim(sc, "T", required=True)), float(_sim(sc, "h", 1e-3)), ss,
                          burn_in=burn_in, record_every=int(_sim(sc, "record_every", 1000)))
            p = r.path
            N = np.full(p.times.size, np.nan)
            out.table(f"queue_rep{k}", ["time", "W", "N", "U"], np.column_stack([p.times, p.W, N, p.U]))
            reps.append({"time_average": r.time_average, "stationary_mean": rbm1_stationary_mean(rho, s2)})
    mean = float(np.mean([r.get("mean", r.get("time_average")) for r in reps]))
    out.summary({"kind": kind, "replications": reps, "mean": mean, "scenario": sc.to_dict()})


def cmd_compare(sc: Scenario, args, out: _Output) -> None:
    net = sc.build_network()
    params = sc.build_params()
    policies = sc.extra.get("compare", {}).get("policies", ["pf", "upstream", "downstream"])
    kw = _motorway_kwargs(sc)
    kw["replications"] = 1
    jobs = sc.mode in ("jobs", "poisson_jobs")
    if jobs:
        kw.pop("record_every", None)
    series, summary = {}, {}
    t = None
    for pol in policies:
        res = simulate_motorway(net, params, policy=pol, mode=sc.mode, **kw)
        rec = res.runs[0].records
        t = rec["t"]
        total = rec["total"] if jobs else rec["m"].sum(axis=1)
        series[pol] = total
        slope, tstat = trend_statistic(t, total)
        summary[pol] = {"mean_total_m": float(res.mean_m.sum()), "trend_slope": slope, "trend_t": tstat}
    out.table("compare", ["time"] + [f"sum_m_{p}" for p in policies], np.column_stack([t] + [series[p] for p in policies]))
    out.summary({"policies": summary, "scenario": sc.to_dict()})


_HANDLERS = {
    "allocate": cmd_allocate,
    "stationary": cmd_stationary,
    "simulate": cmd_simulate,
    "ctmc": cmd_ctmc,
    "fluid": cmd_fluid,
    "queue": cmd_queue,
    "route-choice": cmd_route_choice,
    "compare": cmd_compare,
}


def _parse_n(text: str):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("--n takes comma-separated numbers") from exc


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors, so they exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairramp", description="Proportionally fair metering and bandwidth sharing.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, metavar="PATH", help="JSON scenario file")
        p.add_argument("--out", metavar="DIR", help="directory for tables and summary.json")
        p.add_argument("--seed", type=int, help="overrides sim.seed")
        p.add_argument("--replications", type=int, help="overrides sim.replications")
        p.add_argument("--policy", choices=["pf", "upstream", "downstream"], help="overrides policy")
        p.add_argument("--mode", choices=["brownian", "jobs", "poisson_jobs"], help="overrides mode")
        p.add_argument("--format", choices=["csv", "json"], default="csv", help="table format")
        if name == "allocate":
            p.add_argument("--n", type=_parse_n, help="occupancies, e.g. 1,1")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        sc = load_scenario(args.scenario).with_overrides(
            policy=args.policy, mode=args.mode, seed=args.seed, replications=args.replications
        )
        if args.command in _SEEDED and sc.sim.get("seed") is None:
            raise ValidationError("simulation commands need a seed (sim.seed or --seed)")
        _HANDLERS[args.command](sc, args, _Output(args.out, args.format))
    except (ValidationError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except FairRampError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
