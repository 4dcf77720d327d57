"""Command-line runner: `cone-lab run`, `cone-lab verify-all`, `cone-lab export`.

Exit codes: 0 success, 1 invariant/suite failure, 2 configuration error,
3 solver nonconvergence.  CONE_LAB_SEED overrides the config seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from .models import (ConeModel, ModelError, Point, SuspensionModel,
                     model_from_dict)
from .geometry import GeodesicError

EXIT_OK = 0
EXIT_SUITE_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_NONCONVERGENCE = 3


class ConfigError(ValueError):
    pass


def _parse_point(obj) -> Point:
    if isinstance(obj, dict):
        return Point(tuple(obj["u"]), float(obj["t"]))
    if isinstance(obj, (list, tuple)):
        return Point(tuple(obj[:-1]), float(obj[-1]))
    raise ConfigError(f"cannot parse point from {obj!r}")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Point):
        return {"u": list(x.u), "t": x.t}
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


# -- op registry ------------------------------------------------------------


def _op_distance(model, params, seed):
    from .geometry import distance
    x, y = _parse_point(params["x"]), _parse_point(params["y"])
    v = distance(model, x, y, tol=params.get("tol", 1e-6))
    prov = "ClosedForm" if model.is_homogeneous else "Quadrature"
    return {"value": float(v)}, prov, None


def _op_geodesic(model, params, seed):
    from .geometry import geodesic_connect
    x, y = _parse_point(params["x"]), _parse_point(params["y"])
    path = geodesic_connect(model, x, y,
                            n_samples=int(params.get("n_samples", 513)))
    out = {"length": path.total_length, "residual": path.solver_residual,
           "b_min": float(path.b.min())}
    csv_path = params.get("csv")
    if csv_path:
        path.to_csv(csv_path)
        out["csv"] = csv_path
    return out, "Quadrature", None


def _op_delta(model, params, seed):
    from .gromov import delta_estimate
    rep = delta_estimate(model, n=int(params.get("n", 100)), seed=seed)
    return asdict(rep), "MonteCarlo", rep.cross_ok


def _op_rho(model, params, seed):
    from .hamenstadt import rho
    x, y = _parse_point(params["x"]), _parse_point(params["y"])
    ev = rho(model, x, y)
    return {"value": ev.value, "t_star": ev.t_star,
            "iterations": ev.iterations}, \
        "ClosedForm" if ev.iterations == 0 else "Quadrature", None


def _op_entropy(model, params, seed):
    from .measures import entropy_estimate
    h_est, rep = entropy_estimate(model, s_max=int(params.get("s_max", 8)))
    ok = rep["submult_ok"] and rep["fekete_ok"]
    return {"h_est": h_est, "report": rep}, "ClosedForm", ok


def _op_laplace_G(model, params, seed):
    from .measures import laplace_G
    g = laplace_G(model, float(params["sigma"]),
                  s_max=float(params.get("s_max", 40.0)),
                  mode=params.get("mode", "envelope"))
    return {"G": float(g), "tail_error": g.tail_error,
            "h_est": g.h_est}, "Quadrature", None


def _op_crit_ratio(model, params, seed):
    from .measures import crit_ratio
    x = _parse_point(params.get("x", {"u": [0.0] * model.dim_u, "t": 0.0}))
    v = crit_ratio(model, x, float(params["sigma"]),
                   l=float(params.get("l", 0.0)))
    return {"value": v}, "ClosedForm" if model.is_homogeneous else "Quadrature", None


def _op_ps_renormalize(model, params, seed):
    from .measures import ps_renormalize
    x = _parse_point(params.get("x", {"u": [0.0] * model.dim_u, "t": 0.0}))
    rm = ps_renormalize(model, x, float(params["sigma"]),
                        l=float(params.get("l", 0.0)),
                        boundary_partition_scale=float(params.get("scale", 0.25)))
    interior = {str(T): rm.interior_mass_below_T(T) for T in (1.0, 2.0, 4.0)}
    total = rm.total() + 0.0
    expected = math.exp(rm.sigma * rm.l)
    return {"masses": list(rm.masses), "n_cells": len(rm.partition),
            "total": total, "interior_below": interior}, \
        "ClosedForm" if model.is_homogeneous else "Quadrature", \
        abs(total - expected) < 1e-6 * expected


def _op_ahlfors(model, params, seed):
    from .measures import ahlfors_check, ps_renormalize, entropy_rate
    x = Point((0.0,) * model.dim_u, 0.0)
    rm = ps_renormalize(model, x, float(params.get("sigma",
                                                   entropy_rate(model) + 0.25)))
    rep = ahlfors_check(model, rm,
                        radii=tuple(params.get("radii", (0.5, 0.25, 0.125))),
                        n_centers=int(params.get("n_centers", 20)), seed=seed)
    return rep, "ClosedForm", rep["K"] < 2.0


def _op_margulis(model, params, seed):
    from .measures import margulis_checks
    box = [tuple(b) for b in params.get("box", [(0.0, 1.0), (0.0, 1.0)])]
    rep = margulis_checks(model, box, float(params.get("t", 1.0)))
    ok = rep["scaling_rel_err"] < 1e-3 and rep["flip_discrepancy"] < 1e-6
    return rep, "Quadrature", ok


def _op_holonomy(model, params, seed):
    from .measures import holonomy_invariance_check
    if not isinstance(model, SuspensionModel):
        raise ConfigError("holonomy check needs a suspension model")
    box = tuple(tuple(b) for b in params.get("box", ((0.0, 1.0), (0.0, 0.5))))
    x = tuple(params.get("x", (0.0, 0.0, 0.0)))
    y = tuple(params["y"])
    rep = holonomy_invariance_check(model, box, x, y,
                                    kind=params.get("kind", "s"))
    ok = rep.get("within_band", rep.get("rel_discrepancy", 1.0) <= 0.01)
    return rep, "Quadrature", bool(ok)


def _op_doubling(model, params, seed):
    from .analysis import doubling_check
    rep = doubling_check(model, float(params["sigma"]),
                         n_balls=int(params.get("n_balls", 30)), seed=seed)
    return asdict(rep), "Quadrature", math.isfinite(rep.worst_ratio)


def _op_poincare(model, params, seed):
    from .analysis import poincare_check
    rep = poincare_check(model, float(params["sigma"]), seed=seed)
    return rep, "Quadrature", math.isfinite(rep["C_PI"])


def _op_critical_failure(model, params, seed):
    from .analysis import critical_failure_demo
    rep = critical_failure_demo(model, tuple(params.get("u", (0.0,))),
                                float(params.get("r", 1.0)),
                                sigma=params.get("sigma"))
    return rep, "Quadrature", None


def _op_d_b(model, params, seed):
    from .uniformize import d_b
    x, y = _parse_point(params["x"]), _parse_point(params["y"])
    res = d_b(model, x, y, method=params.get("method"))
    return {"value": res.value, "method": res.method,
            "bounds": list(res.bounds)}, res.method, None


OPS = {
    "distance": _op_distance,
    "geodesic": _op_geodesic,
    "delta_estimate": _op_delta,
    "rho": _op_rho,
    "entropy_estimate": _op_entropy,
    "laplace_G": _op_laplace_G,
    "crit_ratio": _op_crit_ratio,
    "ps_renormalize": _op_ps_renormalize,
    "ahlfors_check": _op_ahlfors,
    "margulis_checks": _op_margulis,
    "holonomy_invariance": _op_holonomy,
    "doubling_check": _op_doubling,
    "poincare_check": _op_poincare,
    "critical_failure_demo": _op_critical_failure,
    "d_b": _op_d_b,
}


# -- config + records -------------------------------------------------------


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    for key in ("model", "op"):
        if key not in cfg:
            raise ConfigError(f"config missing required key {key!r}")
    if cfg["op"] not in OPS:
        raise ConfigError(f"unknown op {cfg['op']!r}; known: {sorted(OPS)}")
    cfg.setdefault("params", {})
    cfg.setdefault("seed", 0)
    cfg.setdefault("workers", 1)
    cfg.setdefault("output", "results.jsonl")
    if not isinstance(cfg["params"], dict):
        raise ConfigError("params must be an object")
    if not isinstance(cfg["seed"], int) or not isinstance(cfg["workers"], int):
        raise ConfigError("seed and workers must be integers")
    env_seed = os.environ.get("CONE_LAB_SEED")
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"CONE_LAB_SEED={env_seed!r} is not an integer")
    return cfg


def _canonical_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def run_config(cfg: dict) -> dict:
    from . import __version__
    try:
        model = model_from_dict(cfg["model"])
    except (ModelError, KeyError) as e:
        raise ConfigError(f"bad model spec: {e}")
    op = OPS[cfg["op"]]
    t0 = time.monotonic()
    outputs, provenance, ok = op(model, cfg["params"], cfg["seed"])
    wall = time.monotonic() - t0
    outputs = _jsonable(outputs)
    config_hash = _canonical_hash({k: cfg[k] for k in
                                   ("model", "op", "params", "seed", "workers")})
    record = {
        "config_hash": config_hash,
        "record_hash": _canonical_hash({"config": config_hash,
                                        "outputs": outputs}),
        "model": cfg["model"],
        "op": cfg["op"],
        "params": cfg["params"],
        "seed": cfg["seed"],
        "workers": cfg["workers"],
        "outputs": outputs,
        "provenance": provenance,
        "ok": ok,
        "wall_time": wall,
        "version": __version__,
        "timestamp": time.time(),
    }
    with open(cfg["output"], "a") as fh:
        fh.write(json.dumps(record) + "\n")
    return record


# -- verify-all battery -----------------------------------------------------


def _suite_models(model):
    from .models import flow
    if isinstance(model, SuspensionModel):
        lam_ok = abs(abs(model.lam * model.lam_s) - 1.0) < 1e-9
        return lam_ok, f"lam={model.lam:.6f}"
    if not (0 < model.a <= model.A):
        return False, f"rates out of order: a={model.a}, A={model.A}"
    x = Point((0.3,) * model.dim_u, -0.7)
    y = flow(model, x, 1.5)
    return abs(y.t - x.t - 1.5) < 1e-12 and y.u == x.u, "flow translates b"


def _suite_geometry(model):
    from .geometry import geodesic_connect, height_profile, busemann_check
    if isinstance(model, SuspensionModel):
        model = model.cover
    x = Point((0.0,) * model.dim_u, 0.0)
    u2 = [0.0] * model.dim_u
    u2[0] = 2.0
    y = Point(tuple(u2), 0.5)
    path = geodesic_connect(model, x, y)
    prof = height_profile(path, a=model.a)
    bus = busemann_check(model, x, y)
    ok = (path.solver_residual < 1e-6 and prof["violations"] == 0
          and bus < 0.05)
    return ok, (f"residual={path.solver_residual:.2e}, "
                f"convexity violations={prof['violations']}, busemann={bus:.3f}")


def _suite_gromov(model, seed):
    from .gromov import delta_estimate
    if isinstance(model, SuspensionModel):
        model = model.cover
    rep = delta_estimate(model, n=100, seed=seed)
    ok = rep.cross_ok and math.isfinite(rep.delta_b) and rep.failures == 0
    return ok, f"delta_b={rep.delta_b:.3f}, cross_ok={rep.cross_ok}"


def _suite_hamenstadt(model, seed):
    from .hamenstadt import scaling_check, comparison_check
    if isinstance(model, SuspensionModel):
        model = model.cover
    rng = np.random.default_rng(seed)
    worst = 0.0
    env_ok = True
    for _ in range(50):
        u = rng.uniform(-3, 3, size=model.dim_u)
        v = rng.uniform(-3, 3, size=model.dim_u)
        t0 = rng.uniform(-1, 1)
        x, y = Point(tuple(u), t0), Point(tuple(v), t0)
        if np.allclose(u, v):
            continue
        worst = max(worst, scaling_check(model, x, y, rng.uniform(-2, 2)))
        env_ok = env_ok and comparison_check(model, x, y)["ok"]
    tol = 1e-5 if model.is_homogeneous else 1e-3
    return worst <= tol and env_ok, f"scaling defect={worst:.2e}, envelopes={env_ok}"


def _suite_uniformize(model, seed):
    from .uniformize import d_b, has_flat_oracle, boundary_distance, ORACLE
    from .geometry import geodesic_connect
    from .uniformize import uniform_curve_check
    if isinstance(model, SuspensionModel):
        model = model.cover
    x = Point((0.0,) * model.dim_u, 0.0)
    u2 = [0.0] * model.dim_u
    u2[0] = 3.0
    y = Point(tuple(u2), 0.0)
    val = d_b(model, x, y).value
    lo, hi = d_b(model, x, y).bounds
    path = geodesic_connect(model, x, y)
    L = uniform_curve_check(model, path)
    ok = lo - 1e-9 <= val <= hi + 1e-9 and 1.0 <= L < 50.0
    return ok, f"d_b={val:.4f}, uniform L={L:.2f}"


def _suite_measures(model, seed):
    from .measures import (separated_count, net_audit, entropy_estimate,
                           laplace_G, crit_ratio, entropy_rate)
    x = Point((0.0,) * (1 if isinstance(model, SuspensionModel)
                        else model.dim_u), 0.0)
    net = separated_count(model, x, 1.0, 0.0)
    if isinstance(model, SuspensionModel):
        from .models import make_halfplane
        audit_model = make_halfplane(model.h)
    else:
        audit_model = model
    audit = net_audit(audit_model, net)
    s_max = 8 if (isinstance(model, SuspensionModel)
                  or model.is_homogeneous) else 6
    h_est, rep = entropy_estimate(model, s_max=s_max)
    h = entropy_rate(model)
    hom = isinstance(model, SuspensionModel) or model.is_homogeneous
    h_ok = abs(h_est - h) <= (0.05 if hom else 0.25)
    G = laplace_G(model, h + 1.0)
    ok = (audit["separation_ok"] and audit["maximality_ok"] and h_ok
          and rep["submult_ok"] and rep["fekete_ok"] and float(G) > 0)
    return ok, f"h_est={h_est:.4f} (target {h:.4f}), G(h+1)={float(G):.3f}"


def _suite_analysis(model, seed):
    from .uniformize import has_flat_oracle
    from .analysis import doubling_check, poincare_check
    if isinstance(model, SuspensionModel):
        model = model.cover
    if not (has_flat_oracle(model) and model.dim_u == 1):
        return None, "skipped: needs the flat d_b oracle"
    h = float(sum(model.rates))
    d = doubling_check(model, h + 1.0, seed=seed)
    p = poincare_check(model, h + 1.0, seed=seed)
    ok = math.isfinite(d.worst_ratio) and math.isfinite(p["C_PI"])
    return ok, f"doubling={d.worst_ratio:.3f}, C_PI={p['C_PI']:.3f}"


def verify_all(model_spec: dict, seed: int = 0) -> tuple:
    """Run the suite battery in dependency order; returns (all_ok, rows)."""
    rows = []
    try:
        model = model_from_dict(model_spec)
    except (ModelError, KeyError) as e:
        rows.append(("models", False, f"construction failed: {e}"))
        return False, rows

    suites = [
        ("models", lambda: _suite_models(model)),
        ("geometry", lambda: _suite_geometry(model)),
        ("gromov", lambda: _suite_gromov(model, seed)),
        ("hamenstadt", lambda: _suite_hamenstadt(model, seed)),
        ("uniformize", lambda: _suite_uniformize(model, seed)),
        ("measures", lambda: _suite_measures(model, seed)),
        ("analysis", lambda: _suite_analysis(model, seed)),
    ]
    all_ok = True
    abort = False
    for name, fn in suites:
        if abort:
            rows.append((name, None, "skipped: earlier suite failed"))
            continue
        try:
            ok, detail = fn()
        except Exception as e:
            ok, detail = False, f"error: {e}"
        rows.append((name, ok, detail))
        if ok is False:
            all_ok = False
            if name == "models":
                abort = True
    return all_ok, rows


# -- entry point ------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cone-lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("config")

    p_ver = sub.add_parser("verify-all", help="run the full suite battery")
    p_ver.add_argument("--model", required=True)
    p_ver.add_argument("--seed", type=int, default=0)

    p_exp = sub.add_parser("export", help="export CSV + figures from the store")
    p_exp.add_argument("--query", required=True)
    p_exp.add_argument("--out", required=True)
    p_exp.add_argument("--store", default="results.jsonl")

    args = parser.parse_args(argv)

    if args.command == "run":
        try:
            cfg = load_config(args.config)
            record = run_config(cfg)
        except ConfigError as e:
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        except GeodesicError as e:
            print(f"solver nonconvergence: {e}", file=sys.stderr)
            return EXIT_NONCONVERGENCE
        print(json.dumps({"record_hash": record["record_hash"],
                          "ok": record["ok"], "op": record["op"]}))
        return EXIT_OK if record["ok"] in (None, True) else EXIT_SUITE_FAILURE

    if args.command == "verify-all":
        try:
            with open(args.model) as fh:
                spec = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        all_ok, rows = verify_all(spec, seed=args.seed)
        width = max(len(r[0]) for r in rows)
        for name, ok, detail in rows:
            status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
            print(f"{name:<{width}}  {status}  {detail}")
        return EXIT_OK if all_ok else EXIT_SUITE_FAILURE

    if args.command == "export":
        from .report import export_plot_data
        try:
            written = export_plot_data(args.store, args.query, args.out)
        except (OSError, ValueError) as e:
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        for path in written:
            print(path)
        return EXIT_OK

    return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
