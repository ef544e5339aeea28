#!/usr/bin/env python3
"""Plot an aeroswarm metrics.csv (or sweep.csv).

Standalone: needs only numpy and matplotlib.

    python plot_metrics.py [CSV] [OUTDIR]
"""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"gmappo": "tab:blue", "kmeans": "tab:green", "random": "tab:gray"}
STYLES = {"gmappo": "-", "kmeans": "--", "random": ":"}
ROLL = 25


def load(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def series(rows, tag, key):
    sel = [r for r in rows if r["policy_tag"] == tag]
    ep = np.array([int(r["episode"]) for r in sel])
    val = np.array([float(r[key]) for r in sel])
    return ep, val


def rolling(x, w=ROLL):
    if len(x) == 0:
        return x
    c = np.cumsum(np.insert(x, 0, 0.0))
    out = np.empty(len(x))
    for i in range(len(x)):
        lo = max(0, i - w + 1)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def phase_changes(rows):
    seen, marks = None, []
    for r in rows:
        if r["policy_tag"] != "gmappo":
            continue
        if seen is not None and r["phase_id"] != seen:
            marks.append((int(r["episode"]), r["phase_id"]))
        seen = r["phase_id"]
    return marks


def decorate(ax, marks):
    for ep, name in marks:
        ax.axvline(ep, color="k", lw=0.8, alpha=0.5)
        ax.text(ep, ax.get_ylim()[1], " " + name, va="top", fontsize=8)


def plot_training(rows, out):
    tags = [t for t in COLORS if any(r["policy_tag"] == t for r in rows)]
    marks = phase_changes(rows)

    fig, ax = plt.subplots(figsize=(8, 4))
    for t in tags:
        ep, val = series(rows, t, "total_reward")
        _, var = series(rows, t, "reward_variance_window")
        sd = np.sqrt(var)
        ax.plot(ep, rolling(val), STYLES[t], color=COLORS[t], label=t)
        ax.fill_between(ep, rolling(val) - sd, rolling(val) + sd, color=COLORS[t], alpha=0.15)
    ax.set_xlabel("episode")
    ax.set_ylabel("episode reward")
    ax.legend()
    decorate(ax, marks)
    fig.tight_layout()
    fig.savefig(out / "reward.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 4))
    for t in tags:
        ep, val = series(rows, t, "coverage")
        ax.plot(ep, rolling(val), STYLES[t], color=COLORS[t], label=t)
    ax.set_xlabel("episode")
    ax.set_ylabel(f"coverage (rolling {ROLL})")
    ax.set_ylim(0, 1.05)
    ax.legend()
    decorate(ax, marks)
    fig.tight_layout()
    fig.savefig(out / "coverage.png", dpi=120)
    plt.close(fig)

    keys = [("throughput_mbps", "sum rate [Mbps]"), ("jain_rate", "rate fairness"),
            ("min_rate_mbps", "min user rate [Mbps]"), ("load_jfi", "load fairness")]
    fig, axes = plt.subplots(2, 2, figsize=(10, 6), sharex=True)
    for ax, (key, label) in zip(axes.flat, keys):
        for t in tags:
            ep, val = series(rows, t, key)
            ax.plot(ep, rolling(val), STYLES[t], color=COLORS[t], label=t)
        ax.set_ylabel(label)
        decorate(ax, marks)
    axes[0, 0].legend()
    for ax in axes[1]:
        ax.set_xlabel("episode")
    fig.tight_layout()
    fig.savefig(out / "service.png", dpi=120)
    plt.close(fig)


def plot_sweep(rows, out):
    by = defaultdict(lambda: defaultdict(list))
    for r in rows:
        by[r["policy_tag"]][int(r["m_users"])].append(float(r["coverage"]))
    grid = sorted({int(r["m_users"]) for r in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(1, len(by))
    for i, t in enumerate(t for t in COLORS if t in by):
        means = [np.mean(by[t][m]) if by[t][m] else np.nan for m in grid]
        ax.bar(np.arange(len(grid)) + i * width, means, width, color=COLORS[t], label=t)
    ax.set_xticks(np.arange(len(grid)) + width * (len(by) - 1) / 2)
    ax.set_xticklabels([str(m) for m in grid])
    ax.set_xlabel("users per phase")
    ax.set_ylabel("mean coverage")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "sweep_coverage.png", dpi=120)
    plt.close(fig)


def main(argv):
    here = Path(__file__).resolve().parent
    path = Path(argv[1]) if len(argv) > 1 else here / "metrics.csv"
    out = Path(argv[2]) if len(argv) > 2 else path.parent
    out.mkdir(parents=True, exist_ok=True)
    rows = load(path)
    if not rows:
        print(f"{path}: no rows")
        return 1
    if "m_users" in rows[0]:
        plot_sweep(rows, out)
    else:
        plot_training(rows, out)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
