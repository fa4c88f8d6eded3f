"""Per-video average precision, mAP reports and the experiment tables."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .networks import VARIANTS

log = logging.getLogger(__name__)


class NoPositivesError(ValueError):
    pass


def average_precision(scores, labels):
    """Non-interpolated AP of one video's frame ranking.

    Frames are ranked by descending score, ties by ascending frame index.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores for {labels.size} labels")
    positives = int(labels.sum())
    if positives == 0:
        raise NoPositivesError("AP is undefined without positive frames")
    order = np.argsort(-scores, kind="stable")
    rel = labels[order]
    hits = np.cumsum(rel)
    ranks = np.flatnonzero(rel) + 1
    return math.fsum((hits[ranks - 1] / ranks).tolist()) / positives


def expected_random_ap(num_frames, num_positives):
    """Expectation of AP over uniformly random rankings.

    ``E[AP] = (P-1)/(T-1) + H_T (T-P) / (T (T-1))`` with ``H_T`` the T-th
    harmonic number; it exceeds the positive rate ``P/T`` for short videos.
    """
    t, p = num_frames, num_positives
    if not 1 <= p <= t:
        raise ValueError("need 1 <= positives <= frames")
    if t == 1:
        return 1.0
    harmonic = math.fsum(1.0 / k for k in range(1, t + 1))
    return (p - 1) / (t - 1) + harmonic * (t - p) / (t * (t - 1))


@dataclass
class EvalReport:
    per_video_ap: dict
    variant: str = ""
    history_size: str = "full"
    skipped: list = field(default_factory=list)

    @property
    def map(self):
        if not self.per_video_ap:
            return float("nan")
        return math.fsum(self.per_video_ap.values()) / len(self.per_video_ap)

    def to_json(self):
        return json.dumps({
            "variant": self.variant,
            "history_size": self.history_size,
            "map": self.map,
            "num_videos": len(self.per_video_ap),
            "skipped": self.skipped,
            "per_video_ap": self.per_video_ap,
        }, indent=2, sort_keys=True)


def report_from_scores(score_fn, samples, variant="", history_size="full"):
    """Build an :class:`EvalReport` from ``score_fn(sample) -> per-frame scores``."""
    aps, skipped = {}, []
    for s in samples:
        if not s.labels.any():
            log.warning("skipping %s: no positive frames", s.video_id)
            skipped.append(s.video_id)
            continue
        aps[s.video_id] = average_precision(score_fn(s), s.labels)
    return EvalReport(aps, variant, history_size, skipped)


def evaluate(model, samples, variant="", history_size="full"):
    """Eval-mode forward per video; the highlight log-odds ranks the frames."""
    def score(s):
        history = s.history if model.cfg.uses_history else None
        return model.frame_scores(s.video, history)

    return report_from_scores(score, samples, variant, history_size)


def merge_reports(reports):
    merged = {}
    for r in reports:
        merged.update(r.per_video_ap)
    return EvalReport(merged)


# ---------------------------------------------------------------------------
# experiment tables


COMPARISON_VARIANTS = ("fcsn", "h-fcsn", "fcsn-agg", "h-fcsn-agg", "adaptive-attn", "adaptive")

AFFINE_COLUMNS = ("gamma=1, delta=0", "gamma=gamma*, delta=delta*", "gamma=gamma_h, delta=delta_h")
AFFINE_ROWS = {
    # row label -> variant per column (None renders as "-")
    "H-FCSN": ("h-fcsn-fixed", "h-fcsn", None),
    "H-FCSN-aggregate": ("h-fcsn-agg-fixed", "h-fcsn-agg", None),
    "Adaptive-H-FCSN": (None, None, "adaptive"),
}


@dataclass
class Table:
    title: str
    columns: tuple
    rows: dict  # row label -> list of float | None | str

    def render(self):
        header = ["Method", *self.columns]
        body = [[label, *(_cell(v) for v in values)] for label, values in self.rows.items()]
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
        line = "-+-".join("-" * w for w in widths)
        fmt = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths))
        return "\n".join([self.title, fmt(header), line, *(fmt(r) for r in body)]) + "\n"

    def to_json(self):
        return json.dumps({"title": self.title, "columns": list(self.columns), "rows": self.rows},
                          indent=2, sort_keys=True)


def _cell(v):
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    return f"{100 * v:.2f}"


def train_and_evaluate(variant, splits, model_cfg, train_cfg, history_size=None):
    """Train ``variant`` on the train split (validation-selected) and score the test split."""
    from .training import train

    cfg = model_cfg.for_variant(variant)
    tcfg = replace(train_cfg, history_size=history_size)
    result = train(splits["train"], cfg, tcfg, val_samples=splits.get("val"))
    return evaluate(result.model, splits["test"], variant, "full" if history_size is None else str(history_size))


def compare(splits, model_cfg, train_cfg, variants=COMPARISON_VARIANTS):
    """Train and test every comparison variant; returns ``(table, reports)``."""
    reports = {v: train_and_evaluate(v, splits, model_cfg, train_cfg) for v in variants}
    rows = {"Random": [_random_map(splits["test"]), "no"]}
    for v in variants:
        rows[VARIANTS[v].label] = [reports[v].map, "yes" if VARIANTS[v].user_adaptive else "no"]
    table = Table("Highlight detection mAP (%) on the test split", ("mAP (%)", "User-adaptive"), rows)
    return table, reports


def _random_map(samples):
    vals = [expected_random_ap(len(s.labels), int(s.labels.sum())) for s in samples if s.labels.any()]
    return float(np.mean(vals)) if vals else float("nan")


def ablate_affine(splits, model_cfg, train_cfg, rows=AFFINE_ROWS, cache=None):
    """Affine-parameter ablation: fixed, learnable and history-predicted gamma/delta."""
    cache = {} if cache is None else cache
    out = {}
    for label, variants in rows.items():
        cells = []
        for v in variants:
            if v is None:
                cells.append(None)
                continue
            if v not in cache:
                cache[v] = train_and_evaluate(v, splits, model_cfg, train_cfg)
            cells.append(cache[v].map)
        out[label] = cells
    return Table("Effect of affine parameters (mAP %)", AFFINE_COLUMNS, out), cache


def ablate_history_size(splits, model_cfg, train_cfg, sizes=(1, 5, None),
                        variants=("h-fcsn-agg", "adaptive"), include_generic=True):
    """Train with the ``h`` most recent history elements, test with the full history.

    ``None`` in ``sizes`` stands for the full history; the generic H-FCSN fills
    the ``h=0`` column.
    """
    columns = (["h=0"] if include_generic else []) + [f"h={'n' if h is None else h}" for h in sizes]
    rows, reports = {}, {}
    if include_generic:
        reports[("h-fcsn", 0)] = train_and_evaluate("h-fcsn", splits, model_cfg, train_cfg)
        rows[VARIANTS["h-fcsn"].label] = [reports[("h-fcsn", 0)].map] + [None] * len(sizes)
    for v in variants:
        cells = [None] if include_generic else []
        for h in sizes:
            reports[(v, h)] = train_and_evaluate(v, splits, model_cfg, train_cfg, history_size=h)
            cells.append(reports[(v, h)].map)
        rows[VARIANTS[v].label] = cells
    return Table("Effect of training history size (mAP %)", tuple(columns), rows), reports
