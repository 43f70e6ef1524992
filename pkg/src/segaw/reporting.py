"""Evaluation reports and their companion figures.

Reports are grep-able ``metric = value`` text; every report/metrics path also
gets matplotlib figures rendered next to it.  PNG metadata is stripped so
re-runs produce byte-identical files.
"""

import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .storage import atomic_write

_PNG_META = {"Software": None}  # drop the version string for reproducible files


def format_report(mapping):
    lines = []
    for key, value in mapping.items():
        if isinstance(value, float):
            lines.append(f"{key} = {value:.6f}")
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_report(path, mapping):
    atomic_write(path, format_report(mapping).encode("utf-8"))


def parse_report(path):
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if "=" in line:
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    return out


def append_metrics(path, records):
    with open(path, "a", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_metrics(path):
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def training_figure(metrics, path, word_rate=None):
    """Learning curves from the iteration metrics records."""
    p1 = [m for m in metrics if m.get("phase") == 1]
    p2 = [m for m in metrics if m.get("phase") == 2]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    ax = axes[0]
    for m in p1:
        losses = m.get("epoch_losses", [m.get("loss")])
        start = sum(len(q.get("epoch_losses", [0])) for q in p1
                    if q["iteration"] < m["iteration"])
        ax.plot(range(start, start + len(losses)), losses, color="tab:blue")
    ax.set_xlabel("phase-1 epoch (cumulative)")
    ax.set_ylabel("reconstruction loss")
    ax.set_title("autoencoder loss")

    ax = axes[1]
    its = [m["iteration"] for m in p2]
    ax.plot(its, [m.get("mean_r") for m in p2], "o-", label="mean reward")
    ax.plot(its, [m.get("mean_r_nt") for m in p2], "s--",
            label="segment-rate term", color="tab:red")
    ax.set_xlabel("outer iteration")
    ax.legend(fontsize=8)
    ax.set_title("gate rewards")

    ax = axes[2]
    ax.plot(its, [m.get("mean_nt") for m in p2], "o-", color="tab:red",
            label="sampled N/T")
    if any("greedy_nt" in m for m in p2):
        ax.plot(its, [m.get("greedy_nt") for m in p2], "^-",
                color="tab:purple", label="greedy N/T")
    if word_rate is not None:
        ax.axhline(word_rate, color="k", ls=":", label="true word rate")
    if any("f1" in m for m in p2):
        ax2 = ax.twinx()
        ax2.plot(its, [m.get("f1") for m in p2], "d-", color="tab:green",
                 label="boundary F1")
        ax2.set_ylabel("F1")
        ax2.set_ylim(0, 1)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("segments per frame")
    ax.legend(fontsize=8)
    ax.set_title("segmentation rate")
    fig.tight_layout()
    _save(fig, path)


def segmentation_figure(report, path):
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    keys = ["precision", "recall", "f1"]
    vals = [float(report[k]) for k in keys]
    ax.bar(keys, vals, color=["tab:blue", "tab:orange", "tab:green"])
    for i, v in enumerate(vals):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=9)
    ax.set_ylim(0, 1.05)
    ax.set_title("boundary detection")
    fig.tight_layout()
    _save(fig, path)


def retrieval_figure(per_query_ap, map_value, path):
    fig, ax = plt.subplots(figsize=(max(4.0, 0.4 * len(per_query_ap)), 3.2))
    qids = sorted(per_query_ap)
    ax.bar(range(len(qids)), [per_query_ap[q] for q in qids], color="tab:blue")
    ax.axhline(map_value, color="tab:red", ls="--",
               label=f"MAP = {map_value:.3f}")
    ax.set_xticks(range(len(qids)))
    ax.set_xticklabels(qids, rotation=60, fontsize=7)
    ax.set_ylabel("average precision")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def figure_path(report_path, suffix=""):
    base, _ = os.path.splitext(str(report_path))
    return f"{base}{suffix}.png"
