"""Command-line entry point.

Subcommands: simulate (raw per-replica counts), numerics (renewal grids and
bound constants), limit (limit-functional samples), fdd (full fluctuation
experiments), selfcheck (built-in fast verification).

Exit codes: 0 success, 1 validation/configuration error, 2 selfcheck failure.
All files are written atomically (temp + rename) and existing outputs are
not overwritten unless --force is given.  Reports embed the fully resolved
configuration; timing lives in a separate runinfo file so statistical
outputs are byte-stable across reruns and worker counts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import figures, renewal
from .branching import DEFAULT_CAP, CapacityError, simulate_counts
from .experiments import (ExperimentConfig, ExperimentError, ks_two_sample,
                          resolve_workers, run)
from .models import ModelError, ModelSpec
from .sampling import StreamKey
from .stable import StableError, char_function, limit_samples, stable_samples


class CliError(Exception):
    pass


def _atomic_write(path: str, data: str | bytes, force: bool):
    if os.path.exists(path) and not force:
        raise CliError(f"refusing to overwrite {path}; pass --force to replace it")
    mode = "wb" if isinstance(data, bytes) else "w"
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_rename_into(path: str, render, force: bool):
    """Render a figure to a temp file, then move it into place."""
    if os.path.exists(path) and not force:
        raise CliError(f"refusing to overwrite {path}; pass --force to replace it")
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".png")
    os.close(fd)
    try:
        render(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise CliError(f"config {path} is not valid JSON: {e}") from e


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _require(cfg: dict, field: str, where: str):
    if field not in cfg:
        raise CliError(f"{where} config is missing required field {field!r}")
    return cfg[field]


# --- subcommands --------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    model = ModelSpec.from_dict(_require(cfg, "model", "simulate"))
    t = float(_require(cfg, "t", "simulate"))
    J = int(_require(cfg, "J", "simulate"))
    n = int(cfg.get("replicas", 100))
    cap = int(cfg.get("cap", DEFAULT_CAP))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 1))
    if args.quick:
        n = max(n // 10, 1)
    rows = ["replica_id,j,N_j,t"]
    for r in range(n):
        gc = simulate_counts(model, t, J, StreamKey(seed, r, "tree"), cap=cap)
        for j in range(1, J + 1):
            rows.append(f"{r},{j},{gc.counts[j - 1]},{t:g}")
    out = args.out or "."
    _atomic_write(os.path.join(out, "counts.csv"), "\n".join(rows) + "\n", args.force)
    _atomic_write(os.path.join(out, "simulate_config.json"),
                  _json({"model": model.to_dict(), "t": t, "J": J, "replicas": n,
                         "seed": seed, "cap": cap}), args.force)
    print(f"wrote {n} replicas x {J} generations to {os.path.join(out, 'counts.csv')}")
    return 0


def cmd_numerics(args) -> int:
    cfg = _load_config(args.config)
    model = ModelSpec.from_dict(_require(cfg, "model", "numerics"))
    h = float(cfg.get("h", 0.01))
    t_max = float(_require(cfg, "t_max", "numerics"))
    j_max = int(cfg.get("j_max", 4))
    tabs = renewal.build_tables(model, h, t_max, j_max=j_max)
    consts = renewal.estimate_constants(tabs["V"], model.m, model.gamma, j_max)
    grid = tabs["U"].grid
    header = "t,U,V," + ",".join(f"V_{j}" for j in range(2, j_max + 1))
    cols = [grid, tabs["U"].values, tabs["V"].values] + \
        [tabs["Vj"][j - 1].values for j in range(2, j_max + 1)]
    body = "\n".join(",".join(f"{c[k]:.10g}" for c in cols) for k in range(len(grid)))
    out = args.out or "."
    _atomic_write(os.path.join(out, "numerics.csv"), header + "\n" + body + "\n", args.force)
    _atomic_write(os.path.join(out, "constants.json"),
                  _json({"model": model.to_dict(), "h": h, "t_max": t_max,
                         "j_max": j_max, **consts.to_dict()}), args.force)
    _atomic_rename_into(os.path.join(out, "numerics.png"),
                        lambda p: figures.save_numerics(tabs, p), args.force)
    print(f"wrote numerics grid (K={len(grid) - 1}) and constants to {out}")
    return 0


def cmd_limit(args) -> int:
    cfg = _load_config(args.config)
    alpha = float(_require(cfg, "alpha", "limit"))
    u_points = [float(u) for u in cfg.get("u_points", [1.0])]
    n = int(cfg.get("paths", 5000))
    dy = float(cfg.get("dy", 0.01))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 1))
    if args.quick:
        n = max(n // 10, 100)
    L = limit_samples(alpha, u_points, n, seed, dy=dy)
    rows = ["u,path_id,value"]
    for i, u in enumerate(u_points):
        for p in range(n):
            rows.append(f"{u:g},{p},{L[p, i]:.10g}")
    out = args.out or "."
    _atomic_write(os.path.join(out, "limit_samples.csv"), "\n".join(rows) + "\n", args.force)
    by_u = {u: L[:, i] for i, u in enumerate(u_points)}
    summary = {f"{u:g}": {"mean": float(np.mean(v)), "variance": float(np.var(v))}
               for u, v in by_u.items()}
    _atomic_write(os.path.join(out, "limit_summary.json"),
                  _json({"alpha": alpha, "u_points": u_points, "paths": n, "dy": dy,
                         "seed": seed, "summary": summary}), args.force)
    _atomic_rename_into(os.path.join(out, "limit_ecdf.png"),
                        lambda p: figures.save_limit_distribution(by_u, p), args.force)
    print(f"wrote {n} limit samples per u to {out}")
    return 0


def cmd_fdd(args) -> int:
    cfg = _load_config(args.config)
    config = ExperimentConfig.from_dict(cfg)
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    if args.quick:
        config.replicas = max(config.replicas // 10, 100)
        config.limit_paths = max(config.limit_paths // 10, 100)
    rep = run(config)
    out = args.out or "."
    _atomic_write(os.path.join(out, "report.json"), _json(rep.report), args.force)
    _atomic_write(os.path.join(out, "runinfo.json"), _json(rep.runinfo), args.force)
    rows = ["t,u,replica_id,normalized_value,kind"]
    for (t, u), vals in sorted(rep.samples.items()):
        for r, v in enumerate(vals):
            rows.append(f"{t:g},{u:g},{r},{v:.10g},simulated")
    for u, vals in sorted(rep.limit_values.items()):
        for r, v in enumerate(vals):
            rows.append(f",{u:g},{r},{v:.10g},limit")
    _atomic_write(os.path.join(out, "samples.csv"), "\n".join(rows) + "\n", args.force)
    if rep.samples:
        _atomic_rename_into(
            os.path.join(out, "ecdf.png"),
            lambda p: figures.save_ecdf_overlay(rep.samples, rep.limit_values, p,
                                                title=config.mode), args.force)
    trends = rep.report.get("trends")
    if trends:
        _atomic_rename_into(
            os.path.join(out, "trend.png"),
            lambda p: figures.save_trend(trends, config.t_grid, p), args.force)
    print(f"wrote report, samples and figures to {out}")
    return 0


def cmd_selfcheck(args) -> int:
    failures = []

    def check(name, ok, detail=""):
        print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
        if not ok:
            failures.append(name)

    det = ModelSpec.from_dict({"xi": {"kind": "deterministic", "value": 1},
                               "eta": {"kind": "deterministic", "value": 1},
                               "dependence": "independent", "gamma": 2.0})
    gc = simulate_counts(det, 10.5, 3, StreamKey(1, 0, "tree"))
    check("unit-step counts at t=10.5 are (10, 45, 120)",
          list(gc.counts) == [10, 45, 120], f"got {tuple(int(c) for c in gc.counts)}")

    gc2 = simulate_counts(det, 10.5, 3, StreamKey(1, 0, "tree"))
    check("rerun with the same key is identical", list(gc.counts) == list(gc2.counts))

    F = renewal.cdf_grid(det.xi.cdf, 0.1, 5.0, atomic=True)
    U = renewal.renewal_grid(F)
    check("unit-step renewal function U(2.5) = 3", abs(U(2.5) - 3.0) < 1e-9, f"got {U(2.5):g}")

    if not args.quick:
        me = ModelSpec.from_dict({"xi": {"kind": "exponential", "rate": 1},
                                  "eta": {"kind": "exponential", "rate": 1},
                                  "dependence": "independent", "gamma": 2.0})
        tabs = renewal.build_tables(me, 0.01, 6.0, j_max=2)
        check("exponential model V(5) = 5 within 1%",
              abs(tabs["V"](5.0) / 5.0 - 1.0) < 0.01, f"got {tabs['V'](5.0):.4f}")
        x = stable_samples(1.5, 20000, 123)
        emp = complex(np.mean(np.exp(1j * x)))
        ref = char_function(1.5, 1.0)
        check("stable sampler matches characteristic value at z=1 within 0.03",
              abs(emp - ref) < 0.03, f"|diff| = {abs(emp - ref):.4f}")
        a = StreamKey(1, 0, "tree").state()
        b = StreamKey(1, 1, "tree").state()
        c = StreamKey(1, 0, "aux").state()
        check("streams for distinct replicas/roles differ", len({int(a), int(b), int(c)}) == 3)
        me2 = ModelSpec.from_dict({"xi": {"kind": "exponential", "rate": 1},
                                   "eta": {"kind": "exponential", "rate": 1},
                                   "dependence": "independent", "gamma": 2.0})
        counts = [int(simulate_counts(me2, 5.0, 2, StreamKey(9, r, "tree")).counts[1])
                  for r in range(2000)]
        mean = sum(counts) / len(counts)
        sd = float(np.std(counts))
        check("exponential model mean N_2(5) = 12.5 within 3 sd / sqrt(M)",
              abs(mean - 12.5) <= 3 * sd / len(counts) ** 0.5, f"mean {mean:.3f}")
    return 2 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="prwlab",
        description="Simulation and renewal-numerics laboratory for branching "
                    "populations driven by perturbed random walks.")
    sub = p.add_subparsers(dest="cmd", required=True)
    for name, fn, needs_config in (
            ("simulate", cmd_simulate, True),
            ("numerics", cmd_numerics, True),
            ("limit", cmd_limit, True),
            ("fdd", cmd_fdd, True),
            ("selfcheck", cmd_selfcheck, False)):
        sp = sub.add_parser(name)
        if needs_config:
            sp.add_argument("--config", required=True, help="path to a JSON config")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="seed override")
        sp.add_argument("--workers", type=int, default=None,
                        help="worker count (default: PRWLAB_WORKERS or cpu count)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        sp.add_argument("--quick", action="store_true", help="reduced workload")
        sp.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    if getattr(args, "workers", None) is not None:
        os.environ["PRWLAB_WORKERS"] = str(args.workers)
    try:
        return args.fn(args)
    except (CliError, ModelError, ExperimentError, StableError,
            renewal.GridError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except CapacityError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
