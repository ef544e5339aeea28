"""Evaluation metrics and the metrics.csv schema."""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .channel import LinkReport
from .config import ScenarioConfig
from .reward import jain_index

POLICY_TAGS = ("gmappo", "kmeans", "random")
TAIL_FRACTION = 0.2
VARIANCE_WINDOW = 50


@dataclass
class MetricsRecord:
    episode: int
    phase_id: str
    policy_tag: str
    throughput_mbps: float
    jain_rate: float
    coverage: float
    min_rate_mbps: float
    load_jfi: float
    total_reward: float
    reward_variance_window: float


CSV_COLUMNS = [f.name for f in dataclasses.fields(MetricsRecord)]
FRAGMENT_KEYS = ("throughput_mbps", "jain_rate", "coverage", "min_rate_mbps", "load_jfi")


def compute_metrics(links: LinkReport, world, cfg: ScenarioConfig) -> dict:
    rates = np.asarray(links.rate_bps, dtype=float)
    load = np.bincount(links.serving_node, minlength=cfg.n_nodes)
    return {
        "throughput_mbps": float(rates.sum()) / 1e6,
        "jain_rate": jain_index(rates),
        "coverage": float(np.mean(rates >= cfg.rate_threshold_bps)),
        "min_rate_mbps": float(rates.min()) / 1e6,
        "load_jfi": jain_index(load),
    }


def tail_length(horizon: int) -> int:
    return max(1, math.ceil(TAIL_FRACTION * horizon))


def mean_fragments(fragments: list[dict]) -> dict:
    return {k: float(np.mean([f[k] for f in fragments])) for k in FRAGMENT_KEYS}


class RewardWindow:
    """Rolling population variance of per-episode total reward, per policy tag."""

    def __init__(self, history: dict | None = None):
        self.history = {tag: list(history.get(tag, [])) if history else [] for tag in POLICY_TAGS}

    def push(self, tag: str, value: float) -> float:
        h = self.history[tag]
        h.append(float(value))
        del h[:-VARIANCE_WINDOW]
        return float(np.var(h))


def write_csv(path, records, extra: dict | None = None, append: bool = False) -> None:
    """Write records; ``extra`` prepends constant columns (used by the sweep)."""
    extra = extra or {}
    cols = list(extra) + CSV_COLUMNS
    mode = "a" if append else "w"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append or fh.tell() == 0:
            w.writerow(cols)
        for r in records:
            w.writerow([*extra.values(), *(_fmt(getattr(r, c)) for c in CSV_COLUMNS)])


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def read_csv(path) -> list[MetricsRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(record_from_row(row))
    return out


def record_from_row(row: dict) -> MetricsRecord:
    kwargs = {}
    for f in dataclasses.fields(MetricsRecord):
        raw = row[f.name]
        kwargs[f.name] = int(raw) if f.type in (int, "int") else (
            raw if f.type in (str, "str") else float(raw))
    return MetricsRecord(**kwargs)
