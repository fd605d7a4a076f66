"""Command-line front end: config-driven pipelines that write data artifacts.

Every subcommand runs a one-stage pipeline; ``run`` executes the stage list
of a config file.  Each emitted file is recorded in ``manifest.json`` with
its SHA-256 and the stage that produced it.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .certificates import gap_certificate
from .cocycles import orbit_cocycle, orbit_consistency, orbit_problem, problem_certificate, problem_cocycle
from .correspondence import BallSampler, empirical_ab_check
from .errors import ConfigInvalid, DichotomyError, GapViolated, HypothesisFailure, StageFailed
from .graphs import (
    Grid,
    SectionSpec,
    dual_certificate,
    dual_cocycle,
    invariant_graph,
    local_stable_graph,
    strong_stable_fiber,
)
from .io import dumps, sha256_file, write_json
from .problems import catalog, instantiate
from .solver import cocycle_correspondence, solve_two_point, verify_mild_solution

SCHEMA = 1
STAGES = ("certify", "solve-bvp", "manifold", "foliation", "nhim", "check")

# allowed per-stage option keys and defaults (None = derived from the problem)
STAGE_OPTIONS: dict[str, dict] = {
    "certify": {"cut": None, "alpha": None, "beta": None, "eps1": 1.0},
    "solve-bvp": {"x1": None, "y2": None, "t1": 0.0, "t2": 2.0, "grid_n": 400},
    "manifold": {"kind": "unstable", "radius": None, "n_nodes": None, "t0": 2.0, "step": 0.5,
                 "steps_per_unit": None, "section": None},
    "foliation": {"start": 0.2, "t0": 1.0, "n_samples": 11, "sigma0": 0.02, "n_nodes": 41, "steps_per_unit": 400},
    "nhim": {"n_samples": 64, "n_theta": 64, "n_normal": 9, "sigma": 0.2, "rho": 0.2, "eps_chart": 0.05,
             "t0": None, "tracking_start": [0.3, 0.1], "horizon": 10.0, "steps_per_unit": 400},
    "check": {"t": 1.0, "n_pairs": 10000, "radius_x": None, "radius_y": None, "grid_n": 200},
}
DEFAULT_TOLERANCES = {
    "picard_tol": 1e-12,
    "graph_tol": 1e-12,
    "cut_tol": 1e-8,
    "margin_tol": 1e-9,
    "gates": {"xi": 0.05, "xi1": 0.05, "xi2": 0.05, "eta": 0.02, "chi": 0.1},
}
TOP_KEYS = {"schema", "problem", "pipeline", "tolerances", "seeds", "output_dir", "options"}


@dataclass
class RunConfig:
    problem: dict = field(default_factory=lambda: {"id": "scalar_saddle", "params": {}})
    pipeline: list = field(default_factory=list)
    tolerances: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_TOLERANCES))
    seeds: dict = field(default_factory=lambda: {"seed": 0})
    output_dir: str = "out"
    options: dict = field(default_factory=dict)
    schema: int = SCHEMA

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "problem": self.problem,
            "pipeline": list(self.pipeline),
            "tolerances": self.tolerances,
            "seeds": self.seeds,
            "output_dir": self.output_dir,
            "options": self.options,
        }

    def dumps(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        validate_config(d)
        tol = copy.deepcopy(DEFAULT_TOLERANCES)
        for k, v in d.get("tolerances", {}).items():
            if k == "gates":
                tol["gates"].update(v)
            else:
                tol[k] = v
        return cls(
            problem={"id": d["problem"]["id"], "params": dict(d["problem"].get("params", {}))},
            pipeline=list(d.get("pipeline", [])),
            tolerances=tol,
            seeds=dict(d.get("seeds", {"seed": 0})),
            output_dir=str(d.get("output_dir", "out")),
            options=copy.deepcopy(d.get("options", {})),
            schema=int(d["schema"]),
        )

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    def stage_options(self, stage: str) -> dict:
        opts = dict(STAGE_OPTIONS[stage])
        opts.update(self.options.get(stage, {}))
        return opts


def _unknown(keys, allowed, where):
    extra = sorted(set(keys) - set(allowed))
    if extra:
        raise ConfigInvalid(f"unknown keys in {where}: {', '.join(extra)}")


def validate_config(d) -> None:
    if not isinstance(d, dict):
        raise ConfigInvalid("config must be a JSON object")
    _unknown(d, TOP_KEYS, "config")
    if d.get("schema") != SCHEMA:
        raise ConfigInvalid(f"schema must be {SCHEMA}, got {d.get('schema')!r}")
    prob = d.get("problem")
    if not isinstance(prob, dict) or "id" not in prob:
        raise ConfigInvalid("problem must be an object with an 'id'")
    _unknown(prob, {"id", "params"}, "problem")
    if not isinstance(prob.get("params", {}), dict):
        raise ConfigInvalid("problem.params must be an object")
    pipe = d.get("pipeline", [])
    if not isinstance(pipe, list) or any(s not in STAGES for s in pipe):
        raise ConfigInvalid(f"pipeline must be a list drawn from {STAGES}")
    tol = d.get("tolerances", {})
    if not isinstance(tol, dict):
        raise ConfigInvalid("tolerances must be an object")
    _unknown(tol, DEFAULT_TOLERANCES, "tolerances")
    _unknown(tol.get("gates", {}), DEFAULT_TOLERANCES["gates"], "tolerances.gates")
    seeds = d.get("seeds", {})
    if not isinstance(seeds, dict):
        raise ConfigInvalid("seeds must be an object")
    _unknown(seeds, {"seed"}, "seeds")
    if "seed" in seeds and not (isinstance(seeds["seed"], int) and 0 <= seeds["seed"] < 2**64):
        raise ConfigInvalid("seed must be an unsigned 64-bit integer")
    opts = d.get("options", {})
    if not isinstance(opts, dict):
        raise ConfigInvalid("options must be an object")
    _unknown(opts, STAGES, "options")
    for st, o in opts.items():
        _unknown(o, STAGE_OPTIONS[st], f"options.{st}")


# ---------------------------------------------------------------------------
# pipeline


class Manifest:
    def __init__(self, out: Path):
        self.out = out
        self.entries: list[dict] = []

    def add(self, path: Path, stage: str) -> None:
        self.entries.append({"file": str(Path(path).relative_to(self.out)), "sha256": sha256_file(path), "stage": stage})

    def write(self) -> Path:
        return write_json(self.out / "manifest.json", self.entries)


@dataclass
class RunResult:
    status: int
    manifest: list
    failures: list
    summaries: dict


def _vec(v, n, default):
    if v is None:
        return np.full(n, default)
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.shape != (n,):
        raise ConfigInvalid(f"expected a vector of length {n}, got {a.tolist()}")
    return a


def _stage_certify(cfg, d, o, out, man, ctx):
    p = d.to_problem(cut=o["cut"])
    s = p.splitting
    es, eu = p.block_eps()
    cert = gap_certificate(s.mu_s, s.mu_u, es, eu, alpha=o["alpha"], beta=o["beta"], eps1=o["eps1"])
    doc = {
        "problem": d.summary(),
        "splitting": {"dim_x": s.dim_x, "dim_y": s.dim_y, "mu_s": s.mu_s, "mu_u": s.mu_u, "c1": s.c1},
        "eps_s": es,
        "eps_u": eu,
        "certificate": cert,
    }
    man.add(write_json(out / "certificate.json", doc), "certify")
    rows = [("mu_s", s.mu_s), ("mu_u", s.mu_u), ("eps_s", es), ("eps_u", eu)] + [
        (k, getattr(cert, k)) for k in ("alpha_min", "beta_min", "alpha", "beta", "lambda_s", "lambda_u", "k_alpha", "k_beta", "gap_sigma")
    ]
    ctx["print"]("\n".join(f"{k:>10}  {v:.17g}" for k, v in rows))
    return {"gap_sigma": cert.gap_sigma}


def _stage_solve(cfg, d, o, out, man, ctx):
    p = d.to_problem()
    s = p.splitting
    x1 = _vec(o["x1"], s.dim_x, 0.1)
    y2 = _vec(o["y2"], s.dim_y, 0.1)
    tr = solve_two_point(p, x1, y2, o["t1"], o["t2"], grid_n=int(o["grid_n"]), tol=cfg.tolerances["picard_tol"])
    res = verify_mild_solution(tr, p)
    man.add(tr.to_csv(out / "trajectory.csv", p), "solve-bvp")
    rep = {**tr.report(), "mild_residual": res}
    man.add(write_json(out / "solver_report.json", rep), "solve-bvp")
    return rep


def _stage_manifold(cfg, d, o, out, man, ctx):
    p = d.to_problem()
    s = p.splitting
    kind = o["kind"]
    if kind not in ("unstable", "stable"):
        raise ConfigInvalid("manifold.kind must be 'unstable' or 'stable'")
    radius = float(o["radius"] if o["radius"] is not None else d.sample_radius)
    dim = s.dim_y if kind == "unstable" else s.dim_x
    n_nodes = int(o["n_nodes"] or (801 if dim == 1 else 9))
    spu = int(o["steps_per_unit"] or (800 if dim == 1 else 200))
    coc = problem_cocycle(p, step=float(o["step"]), steps_per_unit=spu)
    cert = problem_certificate(p)
    certs = [cert] * len(coc.samples)
    tol = cfg.tolerances["graph_tol"]
    t0 = float(o["t0"])
    if kind == "stable":
        fam = local_stable_graph(coc, radius, certs, t0=t0, tol=tol, n_nodes=n_nodes)
        oracle = d.oracle.get("stable_manifold")
    else:
        zero = np.zeros((1, d.generator.shape[0]))
        offset = max(float(np.max(np.abs(d.nonlinearity(w, zero)))) for w in coc.samples)
        mode = o["section"] or ("invariant_zero" if offset == 0.0 else "pseudo_stable")
        grid = Grid.ball(radius, dim, n_nodes)
        fam = invariant_graph(dual_cocycle(coc), SectionSpec(mode), [dual_certificate(c) for c in certs], grid,
                              t0=t0, tol=tol, check_times=[t0])
        oracle = d.oracle.get("unstable_manifold")
    meta = fam.metadata()
    if oracle is not None and dim == 1:
        xs = fam.grid.points()
        meta["oracle_max_deviation"] = float(np.max(np.abs(fam.values[0][:, 0] - oracle(xs[:, 0]))))
    man.add(fam.to_csv(out / f"{kind}_graph.csv"), "manifold")
    man.add(write_json(out / f"{kind}_graph.json", meta), "manifold")
    return {k: meta[k] for k in ("invariance_residual", "lip_estimate", "theta") if k in meta} | (
        {"oracle_max_deviation": meta["oracle_max_deviation"]} if "oracle_max_deviation" in meta else {}
    )


def _stage_foliation(cfg, d, o, out, man, ctx):
    p = d.to_problem()
    s = p.splitting
    if d.base.kind != "point":
        raise ConfigInvalid("foliation runs on equilibrium problems; use the nhim stage for circles")
    t0, n = float(o["t0"]), int(o["n_samples"])
    spu = int(o["steps_per_unit"])
    horizon = t0 * (n - 1) + 4.0
    x1 = _vec(o["start"], s.dim_x, o["start"] if np.isscalar(o["start"]) else 0.0)
    grid_n = int(round(horizon * spu))
    tr = solve_two_point(p, x1, np.zeros(s.dim_y), 0.0, horizon, grid_n=grid_n, tol=cfg.tolerances["picard_tol"])
    z = tr.ambient(p)
    idx = np.rint(np.arange(n) * t0 * spu).astype(int)
    err = orbit_consistency(p, tr.times[idx], tr.x[idx], tr.y[idx], steps_per_unit=spu)
    prel = orbit_problem(p, tr.times, z)
    cert = problem_certificate(prel)
    coc = orbit_cocycle(prel, t0, n, steps_per_unit=spu)
    fib = strong_stable_fiber(coc, lambda: err, float(o["sigma0"]), [cert] * n, t0=t0, n_nodes=int(o["n_nodes"]))
    man.add(fib.family.to_csv(out / "fiber.csv"), "foliation")
    rep = {
        "orbit_consistency": err,
        "lambda_s": cert.lambda_s,
        "fitted_rate": fib.fitted_rate,
        "rate_ratio": fib.fitted_rate / cert.lambda_s,
        "per_point_rates": fib.per_point_rates,
        "times": fib.times,
        "lip_estimate": fib.family.lip_estimate,
    }
    man.add(write_json(out / "fiber.json", rep), "foliation")
    return {"fitted_rate": fib.fitted_rate, "lambda_s": cert.lambda_s}


def _stage_nhim(cfg, d, o, out, man, ctx):
    from .nhim import NHIMParams, build_base, center_stable_persist, tracking_check, trichotomy_persist

    if d.id != "nhim_circle":
        raise ConfigInvalid("the nhim stage needs problem id nhim_circle")
    base = build_base(d, int(o["n_samples"]))
    prm = NHIMParams(
        t0=o["t0"], sigma=float(o["sigma"]), rho=float(o["rho"]), eps_chart=float(o["eps_chart"]),
        n_theta=int(o["n_theta"]), n_normal=int(o["n_normal"]), steps_per_unit=int(o["steps_per_unit"]),
        gates=dict(cfg.tolerances["gates"]), allow_failed=ctx["allow_failed"],
    )
    man.add(base.to_csv(out / "base.csv"), "nhim")
    summary: dict = {}
    if d.params["variant"] == "trichotomy":
        tg = trichotomy_persist(d, base, prm)
        man.add(tg.h_cs.to_csv(out / "h_cs.csv"), "nhim")
        man.add(tg.h_cu.to_csv(out / "h_cu.csv"), "nhim")
        man.add(tg.to_csv(out / "sigma_c.csv"), "nhim")
        th0, rho0 = (float(v) for v in o["tracking_start"])
        start = np.array([th0, rho0, 0.0])
        start[2] = tg.h_cs.graph(0)(start[None, :2])[0, 0]
        trk = tracking_check(d, tg, start, horizon=float(o["horizon"]), steps_per_unit=int(o["steps_per_unit"]))
        oracle = d.oracle["center_z"]
        err = float(np.max(np.abs(tg.sigma_c[:, 1] - oracle(tg.theta))))
        man.add(write_json(out / "tracking.json", trk.to_dict()), "nhim")
        summary = {"center_error": err, "tracking_rate": trk.fitted_rate, "residuals": tg.residuals}
        gates = tg.gates
    else:
        cs = center_stable_persist(d, base, prm)
        man.add(cs.family.to_csv(out / "h_cs.csv"), "nhim")
        gates = cs.gates
        summary = {"lip": cs.lip}
    man.add(write_json(out / "gates.json", {"gates": gates, "base": base.report}), "nhim")
    failed = [k for k, g in gates.items() if not g["passed"]]
    if failed:
        ctx["gate_failures"].extend(failed)
    return summary


def _stage_check(cfg, d, o, out, man, ctx):
    p = d.to_problem()
    s = p.splitting
    cert = problem_certificate(p)
    t = float(o["t"])
    h = cocycle_correspondence(p, t, 0.0, grid_n=int(o["grid_n"]), tol=cfg.tolerances["picard_tol"])
    r = d.sample_radius
    samp = BallSampler(s.dim_x, s.dim_y, float(o["radius_x"] or r), float(o["radius_y"] or r), seed=int(cfg.seeds.get("seed", 0)))
    rep = empirical_ab_check(h, cert.constants(t), samp, int(o["n_pairs"]), tol=cfg.tolerances["margin_tol"], threads=ctx["threads"])
    man.add(write_json(out / "violations.json", rep.to_json()), "check")
    if rep.total:
        ctx["gate_failures"].append("ab_check")
    return {"violations": rep.total}


_RUNNERS = {
    "certify": _stage_certify,
    "solve-bvp": _stage_solve,
    "manifold": _stage_manifold,
    "foliation": _stage_foliation,
    "nhim": _stage_nhim,
    "check": _stage_check,
}

EXIT_OK, EXIT_STAGE, EXIT_GATE, EXIT_CONFIG = 0, 1, 2, 3


def run_pipeline(cfg: RunConfig, out: str | Path | None = None, allow_failed_gates: bool = False,
                 threads: int | None = None, echo=None) -> RunResult:
    """Execute the configured stages; the manifest is always written."""
    out = Path(out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out)
    ctx = {
        "allow_failed": allow_failed_gates,
        "threads": max(1, threads or os.cpu_count() or 1),
        "gate_failures": [],
        "print": echo or (lambda s: None),
    }
    np.random.seed(int(cfg.seeds.get("seed", 0)) % 2**32)
    status = EXIT_OK
    failures: list = []
    summaries: dict = {}
    if cfg.pipeline:
        try:
            d = instantiate(cfg.problem["id"], cfg.problem.get("params", {}))
        except DichotomyError as exc:
            man.write()
            raise ConfigInvalid(str(exc)) from exc
    for stage in cfg.pipeline:
        sub = out / stage
        sub.mkdir(exist_ok=True)
        try:
            summaries[stage] = _RUNNERS[stage](cfg, d, cfg.stage_options(stage), sub, man, ctx)
        except (HypothesisFailure, GapViolated) as exc:
            failures.append({"stage": stage, "error": type(exc).__name__, "message": str(exc)})
            if not allow_failed_gates:
                status = EXIT_GATE
                break
        except ConfigInvalid:
            man.write()
            raise
        except DichotomyError as exc:
            failures.append({"stage": stage, "error": type(exc).__name__, "message": str(exc)})
            status = EXIT_STAGE
            err = StageFailed(stage, exc)
            summaries[stage] = {"error": str(err)}
            break
    if ctx["gate_failures"] and not allow_failed_gates and status == EXIT_OK:
        status = EXIT_GATE
        failures.append({"stage": "gates", "error": "HypothesisFailure", "message": ", ".join(ctx["gate_failures"])})
    man.write()
    return RunResult(status, man.entries, failures, summaries)


# ---------------------------------------------------------------------------
# argument parsing


def _parse_param(text: str):
    if "=" not in text:
        raise ConfigInvalid(f"--param expects key=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        val = json.loads(v)
    except json.JSONDecodeError:
        val = v
    return k, val


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    common.add_argument("--allow-failed-gates", action="store_true", help="report failed hypothesis gates but exit 0")
    common.add_argument("--threads", type=int, default=None, help="task pool size (default: logical cores)")
    common.add_argument("--problem", help="catalog problem id (overrides the config)")
    common.add_argument("--param", action="append", default=[], metavar="KEY=VALUE", help="problem parameter")
    ap = argparse.ArgumentParser(prog="dichotomy", description="Dichotomy certificates, two-point solves and invariant graphs.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for st in STAGES:
        sub.add_parser(st, parents=[common], help=f"run the {st} stage")
    sub.add_parser("run", parents=[common], help="run the pipeline listed in --config")
    pl = sub.add_parser("problems", help="problem catalog")
    pl.add_argument("action", choices=["list"])
    return ap


def _config_from_args(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.loads(Path(args.config).read_text())
    else:
        cfg = RunConfig()
    if args.command != "run":
        cfg.pipeline = [args.command]
    if args.problem:
        cfg.problem = {"id": args.problem, "params": {} if cfg.problem["id"] != args.problem else cfg.problem["params"]}
    for item in args.param:
        k, v = _parse_param(item)
        cfg.problem["params"][k] = v
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigInvalid("seed must be an unsigned 64-bit integer")
        cfg.seeds["seed"] = args.seed
    if args.out:
        cfg.output_dir = args.out
    validate_config(cfg.to_dict())
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "problems":
        for entry in catalog():
            print(f"{entry['id']:<18} {entry['description']}")
        return EXIT_OK
    try:
        cfg = _config_from_args(args)
        res = run_pipeline(cfg, allow_failed_gates=args.allow_failed_gates, threads=args.threads, echo=print)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(dumps({"status": res.status, "summaries": res.summaries, "failures": res.failures}))
    return res.status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
