"""Result-store queries and plot-data export.

Records live in an append-only JSON-lines store.  Export writes one tidy CSV
per matching op and renders a matplotlib figure next to it, so a results
directory is self-contained for plotting and for diffing.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def load_records(store_path: str) -> list:
    records = []
    with open(store_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def parse_query(expr: str) -> dict:
    """'op=laplace_G,kind=halfplane' -> {'op': 'laplace_G', 'kind': 'halfplane'}"""
    out = {}
    for part in expr.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"query term {part!r} is not key=value")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def match_record(rec: dict, query: dict) -> bool:
    for k, v in query.items():
        if k == "op":
            if rec.get("op") != v:
                return False
        elif k == "kind":
            if rec.get("model", {}).get("kind") != v:
                return False
        else:
            hay = rec.get(k, rec.get("params", {}).get(k))
            if str(hay) != v:
                return False
    return True


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _export_entropy(records, out_dir):
    rows = []
    for rec in records:
        rep = rec["outputs"]["report"]
        kind = rec.get("model", {}).get("kind", "?")
        for s, V in zip(rep["s"], rep["V"]):
            rows.append([s, float(np.log(V)), kind])
    csv_path = os.path.join(out_dir, "entropy_estimate.csv")
    _write_csv(csv_path, ["s", "log_V_s", "model"], rows)
    fig, ax = plt.subplots()
    for rec in records:
        rep = rec["outputs"]["report"]
        ax.plot(rep["s"], np.log(rep["V"]), "o-",
                label="%s h=%.3f" % (rec.get("model", {}).get("kind", "?"),
                                     rec["outputs"]["h_est"]))
    ax.set_xlabel("s")
    ax.set_ylabel("log V_s")
    ax.legend()
    png_path = os.path.join(out_dir, "entropy_estimate.png")
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def _export_laplace(records, out_dir):
    rows = [[rec["params"]["sigma"], rec["outputs"]["G"],
             rec["outputs"]["tail_error"]] for rec in records]
    csv_path = os.path.join(out_dir, "laplace_G.csv")
    _write_csv(csv_path, ["sigma", "G", "tail_error"], rows)
    fig, ax = plt.subplots()
    sig = [r[0] for r in rows]
    g = [r[1] for r in rows]
    ax.loglog(sig, g, "o-")
    ax.set_xlabel("sigma")
    ax.set_ylabel("G(sigma)")
    png_path = os.path.join(out_dir, "laplace_G.png")
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def _export_delta(records, out_dir):
    rows = []
    for rec in records:
        kind = rec.get("model", {}).get("kind", "?")
        for n, db in rec["outputs"]["refinement_history"]:
            rows.append([kind, n, db])
    csv_path = os.path.join(out_dir, "delta_refinement.csv")
    _write_csv(csv_path, ["model", "n", "delta_b"], rows)
    fig, ax = plt.subplots()
    for rec in records:
        hist = rec["outputs"]["refinement_history"]
        ax.plot([h[0] for h in hist], [h[1] for h in hist], "o-",
                label=rec.get("model", {}).get("kind", "?"))
    ax.set_xlabel("pool size")
    ax.set_ylabel("delta_b")
    ax.legend()
    png_path = os.path.join(out_dir, "delta_refinement.png")
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def _export_generic(records, out_dir, op):
    rows, keys = [], []
    for rec in records:
        flat = {"op": op, "kind": rec.get("model", {}).get("kind", "?")}
        for k, v in rec.get("params", {}).items():
            flat[f"param_{k}"] = v
        for k, v in rec.get("outputs", {}).items():
            if isinstance(v, (int, float, str, bool)):
                flat[k] = v
        for k in flat:
            if k not in keys:
                keys.append(k)
        rows.append(flat)
    csv_path = os.path.join(out_dir, f"{op}.csv")
    _write_csv(csv_path, keys, [[r.get(k, "") for k in keys] for r in rows])
    numeric = [k for k in keys if all(isinstance(r.get(k), (int, float))
                                      and not isinstance(r.get(k), bool)
                                      for r in rows)]
    written = [csv_path]
    if numeric:
        fig, ax = plt.subplots()
        for k in numeric[:4]:
            ax.plot([r[k] for r in rows], "o-", label=k)
        ax.set_xlabel("record")
        ax.legend()
        png_path = os.path.join(out_dir, f"{op}.png")
        fig.savefig(png_path, dpi=120)
        plt.close(fig)
        written.append(png_path)
    return written


_EXPORTERS = {
    "entropy_estimate": _export_entropy,
    "laplace_G": _export_laplace,
    "delta_estimate": _export_delta,
}


def export_plot_data(store_path: str, query_expr: str, out_dir: str) -> list:
    """Filter the store and write CSV + figure pairs; returns written paths."""
    records = load_records(store_path)
    if not records:
        raise ValueError(f"result store {store_path} is empty")
    query = parse_query(query_expr)
    hits = [r for r in records if match_record(r, query)]
    if not hits:
        raise ValueError(f"no records match query {query_expr!r}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    by_op = {}
    for rec in hits:
        by_op.setdefault(rec.get("op", "unknown"), []).append(rec)
    for op, recs in by_op.items():
        exporter = _EXPORTERS.get(op)
        if exporter is not None:
            written += exporter(recs, out_dir)
        else:
            written += _export_generic(recs, out_dir, op)
    return written
