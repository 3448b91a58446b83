"""Detection metrics (AUROC, AUPRC, FPR at fixed TPR) and the benchmark runner.

Corrupted is the positive class throughout; a high score means the method
flags the image as low quality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

# shared corruption-kind row order for reports (noise, blur, photometric,
# geometric/compression), mirroring the usual benchmark table layout
KIND_ORDER = (
    "gaussian_noise", "impulse_noise", "shot_noise", "speckle_noise",
    "defocus_blur", "gaussian_blur", "glass_blur", "motion_blur", "zoom_blur",
    "brightness", "contrast", "elastic_transform", "pixelate",
    "jpeg_compression", "saturate",
)


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledScore:
    image_id: str
    score: float
    label: str                    # "clean" | "corrupted"
    method: str = ""
    kind: Optional[str] = None

    def __post_init__(self):
        if self.label not in ("clean", "corrupted"):
            raise MetricError(f"bad label {self.label!r}")
        if not np.isfinite(self.score):
            raise MetricError(f"non-finite score for {self.image_id!r}")


def _split(scores):
    pos = np.array([s.score for s in scores if s.label == "corrupted"], dtype=float)
    neg = np.array([s.score for s in scores if s.label == "clean"], dtype=float)
    return pos, neg


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sval = values[order]
    i = 0
    while i < len(sval):
        j = i
        while j + 1 < len(sval) and sval[j + 1] == sval[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(scores) -> float:
    """P(random corrupted score > random clean score), ties credited 1/2."""
    pos, neg = _split(scores)
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("auroc needs at least one clean and one corrupted entry")
    ranks = _midranks(np.concatenate([pos, neg]))
    u = ranks[:len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def auprc(scores) -> float:
    """Average precision over the corrupted class (no interpolation)."""
    pos, neg = _split(scores)
    if len(pos) == 0:
        raise MetricError("auprc needs at least one corrupted entry")
    all_scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    order = np.argsort(-all_scores, kind="mergesort")
    s = all_scores[order]
    y = labels[order]
    ap = 0.0
    tp = fp = 0
    prev_recall = 0.0
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        tp += int(y[i:j + 1].sum())
        fp += (j - i + 1) - int(y[i:j + 1].sum())
        recall = tp / len(pos)
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(ap)


def fpr_at_tpr(scores, target_tpr: float = 0.8) -> float:
    """FPR at the largest threshold t (classify score >= t) with TPR >= target."""
    pos, neg = _split(scores)
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("fpr_at_tpr needs both classes")
    for t in sorted(set(np.concatenate([pos, neg]).tolist()), reverse=True):
        tpr = np.mean(pos >= t)
        if tpr >= target_tpr:
            return float(np.mean(neg >= t))
    return 1.0


METRICS = {"auroc": auroc, "auprc": auprc, "fpr80": lambda s: fpr_at_tpr(s, 0.8)}


# ------------------------------------------------------------------
# benchmark runner
# ------------------------------------------------------------------

@dataclass
class BenchmarkReport:
    methods: list
    kinds: list
    rows: dict          # method -> kind -> {metric: value} or {"error": msg}
    pooled: dict        # method -> {metric: value}
    average: dict       # method -> {metric: value} (mean over kind rows)
    scores: list        # every LabeledScore produced

    def to_dict(self) -> dict:
        return {
            "methods": list(self.methods),
            "kinds": list(self.kinds),
            "rows": self.rows,
            "pooled": self.pooled,
            "average": self.average,
        }

    def text_table(self) -> str:
        lines = []
        name_w = max([len(k) for k in self.kinds] + [len("average"), len("pooled"), 12])
        for metric in ("auroc", "auprc", "fpr80"):
            lines.append(metric.upper())
            header = " " * name_w + "".join(f"{m:>14}" for m in self.methods)
            lines.append(header)
            for kind in self.kinds:
                cells = []
                for m in self.methods:
                    cell = self.rows[m].get(kind, {})
                    cells.append(f"{cell[metric]*100:14.1f}" if metric in cell
                                 else f"{'err':>14}")
                lines.append(f"{kind:<{name_w}}" + "".join(cells))
            for name, table in (("average", self.average), ("pooled", self.pooled)):
                cells = []
                for m in self.methods:
                    cell = table.get(m, {})
                    cells.append(f"{cell[metric]*100:14.1f}" if metric in cell
                                 else f"{'err':>14}")
                lines.append(f"{name:<{name_w}}" + "".join(cells))
            lines.append("")
        return "\n".join(lines)


def metrics_from_scores(scores) -> dict:
    return {name: fn(scores) for name, fn in METRICS.items()}


def summarize_scores(scores) -> BenchmarkReport:
    """Fold per-image labeled scores into per-kind and pooled metric rows."""
    methods = sorted({s.method for s in scores})
    kinds_present = sorted({s.kind for s in scores if s.kind},
                           key=lambda k: (KIND_ORDER.index(k) if k in KIND_ORDER else 99, k))
    rows = {}
    average = {}
    pooled = {}
    for m in methods:
        mine = [s for s in scores if s.method == m]
        clean = [s for s in mine if s.label == "clean"]
        rows[m] = {}
        for kind in kinds_present:
            subset = clean + [s for s in mine if s.kind == kind]
            try:
                rows[m][kind] = metrics_from_scores(subset)
            except MetricError as e:
                rows[m][kind] = {"error": str(e)}
        try:
            pooled[m] = metrics_from_scores(mine)
        except MetricError as e:
            pooled[m] = {"error": str(e)}
        ok = [rows[m][k] for k in kinds_present if "error" not in rows[m][k]]
        if ok:
            average[m] = {metric: float(np.mean([r[metric] for r in ok]))
                          for metric in METRICS}
        else:
            average[m] = {"error": "no scorable kinds"}
    return BenchmarkReport(methods=methods, kinds=kinds_present, rows=rows,
                           pooled=pooled, average=average, scores=list(scores))


def run_benchmark(checkpoint, items, methods, score_config, llr_k=None) -> BenchmarkReport:
    """Score every benchmark item with every method, then summarize.

    items: corruption BenchmarkItems (image, label, spec). A scoring failure
    marks the affected (method, kind) cells via non-finite filtering rather
    than aborting the run.
    """
    from . import scoring  # local import; scoring depends on this module

    if not methods:
        raise MetricError("methods must be non-empty")
    scores = []
    errors = []
    for method in methods:
        for it in items:
            kind = it.spec.kind if it.spec is not None else None
            try:
                value, _, _ = scoring.score_with_method(
                    checkpoint, it.image, method, score_config,
                    image_id=it.image_id, llr_k=llr_k)
                scores.append(LabeledScore(it.image_id, value, it.label, method, kind))
            except Exception as e:  # cell error marker, not a run abort
                errors.append((method, kind, str(e)))
    report = summarize_scores(scores)
    for method, kind, msg in errors:
        if kind is not None:
            report.rows.setdefault(method, {})[kind] = {"error": msg}
        else:
            report.pooled[method] = {"error": msg}
    return report
