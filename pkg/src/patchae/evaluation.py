"""Image-level AUROC evaluation over a labeled MVTec-style test set."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import EvaluationError, InputError
from .encoder import Encoder, encode
from .memory_bank import MemoryBank, ScoreMap, score_image

LABELS = ("normal", "anomalous")


@dataclass(frozen=True)
class LabeledScore:
    image_id: str
    score: float
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise InputError(f"label must be one of {LABELS}, got {self.label!r}")
        if not np.isfinite(self.score):
            raise InputError(f"score for {self.image_id!r} is not finite")


def auroc(scores: list[LabeledScore]) -> float:
    """Area under the ROC curve via the rank statistic; ties count 1/2.

    Equals the probability that a random anomalous image outscores a random
    normal one, computed from average ranks rather than a threshold sweep.
    """
    if not scores:
        raise EvaluationError("no scores to evaluate")
    values = np.array([s.score for s in scores], dtype=np.float64)
    positive = np.array([s.label == "anomalous" for s in scores], dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError(
            f"need both classes to compute AUROC, got {n_pos} anomalous / {n_neg} normal"
        )
    ranks = rankdata(values)  # average ranks resolve ties
    rank_sum = float(ranks[positive].sum())
    u_stat = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u_stat / (n_pos * n_neg)


@dataclass
class EvalReport:
    class_name: str
    auroc: float
    n_normal: int
    n_anomalous: int
    scores: list[LabeledScore]
    score_maps: dict[str, ScoreMap] = field(default_factory=dict)

    def summary(self) -> dict:
        values = {
            "normal": [s.score for s in self.scores if s.label == "normal"],
            "anomalous": [s.score for s in self.scores if s.label == "anomalous"],
        }
        stats = {}
        for label, vals in values.items():
            arr = np.array(vals, dtype=np.float64)
            stats[label] = {
                "count": int(arr.size),
                "mean": float(arr.mean()),
                "min": float(arr.min()),
                "max": float(arr.max()),
            }
        return {
            "class": self.class_name,
            "auroc": self.auroc,
            "n_images": self.n_normal + self.n_anomalous,
            "score_stats": stats,
        }

    def to_dict(self) -> dict:
        doc = self.summary()
        doc["images"] = [
            {"id": s.image_id, "score": s.score, "label": s.label} for s in self.scores
        ]
        return doc


def evaluate_class(
    encoder: Encoder,
    bank: MemoryBank,
    class_dir: str | Path,
    reweight: bool = False,
    neighborhood: int = 3,
    collect_maps: bool = False,
) -> EvalReport:
    """Score every test image of one MVTec-layout class directory.

    Images under ``test/good`` are labeled normal; every other test subfolder
    is anomalous. Iteration order is sorted, so the report is deterministic.
    """
    from .data import iter_test_images  # local import to avoid a cycle

    class_dir = Path(class_dir)
    scores: list[LabeledScore] = []
    maps: dict[str, ScoreMap] = {}
    for image_id, label, image in iter_test_images(class_dir, encoder.config.input_size):
        features = encode(encoder, image)
        score_map = score_image(features, bank, reweight=reweight, neighborhood=neighborhood)
        scores.append(LabeledScore(image_id=image_id, score=score_map.image_score, label=label))
        if collect_maps:
            maps[image_id] = score_map
    n_anom = sum(1 for s in scores if s.label == "anomalous")
    return EvalReport(
        class_name=class_dir.name,
        auroc=auroc(scores),
        n_normal=len(scores) - n_anom,
        n_anomalous=n_anom,
        scores=scores,
        score_maps=maps,
    )


def format_report_table(reports: list[EvalReport]) -> str:
    """Per-class rows plus an average row, AUROC in percent."""
    width = max([len(r.class_name) for r in reports] + [len("Average")])
    lines = [f"{'Class':<{width}}  {'AUROC':>7}  {'Images':>6}"]
    for r in reports:
        lines.append(
            f"{r.class_name:<{width}}  {100.0 * r.auroc:>7.2f}  {r.n_normal + r.n_anomalous:>6}"
        )
    mean_auroc = float(np.mean([r.auroc for r in reports]))
    lines.append(f"{'Average':<{width}}  {100.0 * mean_auroc:>7.2f}")
    return "\n".join(lines)
