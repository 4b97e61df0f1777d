"""Angular error statistics pooled over all valid pixels."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import angle_deg
from .validation import check_same_shape

THRESHOLDS = (11.25, 22.5, 30.0)
COLUMNS = ("Mean", "Median", "RMSE", "11.25", "22.5", "30")


def angular_error_map(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel angle in degrees and the joint validity mask."""
    check_same_shape("prediction", pred.normals, "ground truth", gt.normals)
    return angle_deg(pred.normals, gt.normals), pred.valid & gt.valid


@dataclass(frozen=True)
class EvalSummary:
    mean_deg: float
    median_deg: float
    rmse_deg: float
    pgp: dict
    pixel_count: int

    def values(self) -> tuple[float, ...]:
        """Mean, median, RMSE in degrees, then pgp percentages."""
        return (self.mean_deg, self.median_deg, self.rmse_deg) + tuple(100.0 * self.pgp[t] for t in sorted(self.pgp))

    def row(self, name: str = "", width: int = 12) -> str:
        cells = "".join(f"{v:>8.1f}" for v in self.values())
        return f"{name:<{width}}{cells}"

    def to_kv(self, name: str = "") -> str:
        prefix = f"{name}." if name else ""
        keys = ("mean", "median", "rmse") + tuple(f"pgp_{t:g}" for t in sorted(self.pgp))
        vals = (self.mean_deg, self.median_deg, self.rmse_deg) + tuple(self.pgp[t] for t in sorted(self.pgp))
        lines = [f"{prefix}{k}={v!r}" for k, v in zip(keys, vals)]
        lines.append(f"{prefix}pixels={self.pixel_count}")
        return "\n".join(lines)


def header(width: int = 12, label: str = "Method") -> str:
    return f"{label:<{width}}" + "".join(f"{c:>8}" for c in COLUMNS)


def summarize(errors, masks=None, thresholds=THRESHOLDS) -> EvalSummary:
    """Pool valid per-pixel errors from one or many images into one summary.

    ``errors`` is an array or a list of arrays; ``masks`` matches it or is None.
    The median of an even-sized population is its lower middle element.
    """
    if isinstance(errors, np.ndarray):
        errors = [errors]
        masks = None if masks is None else [masks]
    parts = []
    for i, e in enumerate(errors):
        e = np.asarray(e, dtype=np.float64)
        if masks is not None and masks[i] is not None:
            e = e[np.asarray(masks[i], bool)]
        parts.append(e.ravel())
    pop = np.concatenate(parts) if parts else np.empty(0)
    n = len(pop)
    if n == 0:
        raise ValueError("no valid pixels to summarize")
    if (pop < 0).any() or not np.isfinite(pop).all():
        raise ValueError("angular errors must be finite and non-negative")
    median = float(np.partition(pop, (n - 1) // 2)[(n - 1) // 2])
    mean = math.fsum(pop) / n
    rmse = math.sqrt(math.fsum(pop * pop) / n)
    pgp = {float(t): int(np.count_nonzero(pop <= t)) / n for t in thresholds}
    return EvalSummary(mean, median, rmse, pgp, n)


def evaluate(preds, gts, thresholds=THRESHOLDS) -> EvalSummary:
    """Summary over paired lists of NormalMaps."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth maps")
    pairs = [angular_error_map(p, g) for p, g in zip(preds, gts)]
    return summarize([e for e, _ in pairs], [m for _, m in pairs], thresholds)


def format_table(rows, width: int = 12) -> str:
    """``rows`` is a sequence of (name, EvalSummary)."""
    return "\n".join([header(width)] + [s.row(name, width) for name, s in rows]) + "\n"
