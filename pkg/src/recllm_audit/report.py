"""Render result tables from a results directory.

Everything is read back from ``manifest.json``, ``config.json``,
``metrics/*.csv`` and ``cost.json``. Rendering twice produces identical bytes.
Any cell without a complete metrics file is shown with ``missing`` markers.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .baselines import NOT_IMPLEMENTED
from .runner import read_metrics_csv, write_text

MISSING = "missing"
NOT_IMPL = "not implemented"
ACCURACY_GROUPS = ("Avg Perf", "Bootstrap Mean", "Bootstrap Conf")
FAIRNESS_COLUMNS = (("gini", "Gini"), ("hhi", "HHI"), ("entropy", "Entropy"), ("coverage", "Coverage"),
                    ("median_year", "Median Year"), ("std_year", "Std Year"))
LABELS = {"ndcg": "NDCG", "recall": "Recall", "hit_rate": "HitRate", "hit_indicator": "Hit",
          "average_rank": "AvgRank"}
BASELINE_LABELS = {"toppop": "TopPop", "itemknn": "ItemKNN", "bpr": "BPR-MF"}


def fmt(x) -> str:
    return MISSING if x is None else f"{x:.6f}"


def fmt_ci(lo, hi) -> str:
    if lo is None or hi is None:
        return MISSING
    return f"({lo:.6f}, {hi:.6f})"


def _read_rows(path: Path):
    return read_metrics_csv(path) if path.exists() else None


def _markdown_table(header, rows) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    line = lambda cells: "| " + " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)) + " |"  # noqa: E731
    out = [line(header), "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    out += [line(r) for r in rows]
    return "\n".join(out)


def collect(out_dir) -> dict:
    """Table contents as a plain dict (the ``tables.json`` document)."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    config = json.loads((out / "config.json").read_text(encoding="utf-8"))
    kind = config["experiment"]["kind"]
    focus = ["ndcg", "recall"] if kind == "topk" else ["hit_rate", "ndcg"]

    rows = []
    for cell_id, entry in manifest["cells"].items():
        metrics = _read_rows(out / "metrics" / f"{cell_id}.csv") if entry["status"] == "complete" else None
        rows.append({"cell": cell_id, "kind": "llm", "status": entry["status"] if metrics else MISSING,
                     "metrics": metrics})
    baselines = config.get("baselines", {}).get("models", [])
    for key in baselines:
        ref = manifest.get("baselines", {}).get(key)
        metrics = _read_rows(out / "metrics" / f"baseline_{key}.csv") if ref else None
        rows.append({"cell": BASELINE_LABELS[key], "kind": "baseline",
                     "status": "complete" if metrics else MISSING, "metrics": metrics})
    if baselines:
        for name in NOT_IMPLEMENTED:
            rows.append({"cell": name, "kind": "baseline", "status": NOT_IMPL, "metrics": None})

    doc = {"rng": manifest.get("rng"), "config_hash": manifest.get("config_hash"), "focus_metrics": focus,
           "accuracy": [], "fairness": [], "stability": []}
    for r in rows:
        m = r["metrics"] or {}
        acc = {"cell": r["cell"], "status": r["status"]}
        for metric in focus:
            row = m.get(metric) or {}
            acc[metric] = {"avg": row.get("avg"), "bootstrap_mean": row.get("bootstrap_mean"),
                           "ci": [row.get("ci_low"), row.get("ci_high")], "n_users": row.get("n_users")}
        doc["accuracy"].append(acc)
        fair = {"cell": r["cell"], "status": r["status"]}
        for metric, _label in FAIRNESS_COLUMNS:
            fair[metric] = (m.get(metric) or {}).get("avg")
        doc["fairness"].append(fair)
        if r["kind"] == "llm" and m:
            for metric in focus:
                row = m.get(metric) or {}
                if len(row.get("per_run") or []) >= 2:
                    doc["stability"].append({"cell": r["cell"], "metric": metric, "per_run": row["per_run"],
                                             "mean": row.get("run_mean"), "std": row.get("run_std"),
                                             "range": row.get("run_range")})
    cost_path = out / "cost.json"
    doc["cost"] = json.loads(cost_path.read_text(encoding="utf-8")) if cost_path.exists() else None
    return doc


def _cells(status, value_fn, n):
    if status == NOT_IMPL:
        return [NOT_IMPL] * n
    if status != "complete":
        return [MISSING] * n
    return value_fn()


def render_markdown(doc: dict) -> str:
    focus = doc["focus_metrics"]
    labels = [LABELS[m] for m in focus]
    header = ["Cell"] + [f"{g} {lab}" for g in ACCURACY_GROUPS for lab in labels]
    rows = []
    for a in doc["accuracy"]:
        def values(a=a):
            v = [fmt(a[m]["avg"]) for m in focus] + [fmt(a[m]["bootstrap_mean"]) for m in focus]
            return v + [fmt_ci(*a[m]["ci"]) for m in focus]
        rows.append([a["cell"]] + _cells(a["status"], values, 3 * len(focus)))
    parts = ["## Accuracy", "", _markdown_table(header, rows), ""]

    header = ["Cell"] + [label for _m, label in FAIRNESS_COLUMNS]
    rows = []
    for f in doc["fairness"]:
        rows.append([f["cell"]] + _cells(f["status"], lambda f=f: [fmt(f[m]) for m, _l in FAIRNESS_COLUMNS],
                                         len(FAIRNESS_COLUMNS)))
    parts += ["## Provider fairness and temporal spread", "", _markdown_table(header, rows), ""]

    if doc["stability"]:
        header = ["Cell", "Metric", "Per-run values", "Mean", "Std", "Range"]
        rows = [[s["cell"], LABELS[s["metric"]], "[" + ", ".join(fmt(v) for v in s["per_run"]) + "]",
                 fmt(s["mean"]), fmt(s["std"]), fmt(s["range"])] for s in doc["stability"]]
        parts += ["## Stability across repetitions", "", _markdown_table(header, rows), ""]

    cost = doc.get("cost")
    if cost:
        rows = [[key, MISSING if value is None else (f"{value:.6f}" if isinstance(value, float) else str(value))]
                for key, value in cost.items()]
        parts += ["## Cost", "", _markdown_table(["Quantity", "Value"], rows), ""]
    parts.append(f"Bootstrap generator: {doc['rng']}")
    return "\n".join(parts) + "\n"


def render_csv(doc: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["table", "cell", "metric", "avg_perf", "bootstrap_mean", "bootstrap_conf", "status"])
    for a in doc["accuracy"]:
        for m in doc["focus_metrics"]:
            v = a[m]
            if a["status"] == "complete":
                w.writerow(["accuracy", a["cell"], m, fmt(v["avg"]), fmt(v["bootstrap_mean"]), fmt_ci(*v["ci"]),
                            a["status"]])
            else:
                marker = NOT_IMPL if a["status"] == NOT_IMPL else MISSING
                w.writerow(["accuracy", a["cell"], m, marker, marker, marker, a["status"]])
    for f in doc["fairness"]:
        for m, _label in FAIRNESS_COLUMNS:
            value = fmt(f[m]) if f["status"] == "complete" else (NOT_IMPL if f["status"] == NOT_IMPL else MISSING)
            w.writerow(["fairness", f["cell"], m, value, "", "", f["status"]])
    return buf.getvalue()


def render_report(out_dir) -> dict:
    """Write ``report/tables.{md,csv,json}``; returns ``{relative path: text}``."""
    out = Path(out_dir)
    doc = collect(out)
    files = {
        "report/tables.md": render_markdown(doc),
        "report/tables.csv": render_csv(doc),
        "report/tables.json": json.dumps(doc, indent=2, sort_keys=True) + "\n",
    }
    for rel, text in files.items():
        write_text(out / rel, text)
    return files
