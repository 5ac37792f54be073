"""Confusion counts and FP / FN / OE / PCC / KC."""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .raster_io import ChangeMap

# order of fields in the single-line record
RECORD_FIELDS = ("tp", "tn", "fp", "fn", "oe", "pcc", "kc")


@dataclass(frozen=True)
class EvalReport:
    tp: int
    tn: int
    fp: int
    fn: int
    oe: int
    pcc: float  # percent
    kc: float  # kappa x 100

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def as_text(self) -> str:
        lines = [f"{k.upper()}: {getattr(self, k)}" for k in ("tp", "tn", "fp", "fn", "oe")]
        lines.append(f"PCC: {round2(self.pcc):.2f}")
        lines.append(f"KC: {round2(self.kc):.2f}")
        return "\n".join(lines)

    def as_record(self) -> str:
        """One JSON object on one line, keys in RECORD_FIELDS order."""
        return json.dumps({k: getattr(self, k) for k in RECORD_FIELDS})


def round2(x: float) -> float:
    """Two decimals, halves rounded away from zero."""
    return float(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def confusion(pred: ChangeMap, truth: ChangeMap) -> tuple[int, int, int, int]:
    """(tp, tn, fp, fn) with 1 = changed as the positive class."""
    if pred.shape != truth.shape:
        raise ValueError(f"map size mismatch: {pred.width}x{pred.height} vs {truth.width}x{truth.height}")
    p = pred.labels.astype(bool)
    t = truth.labels.astype(bool)
    tp = int(np.count_nonzero(p & t))
    tn = int(np.count_nonzero(~p & ~t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return tp, tn, fp, fn


def report(tp: int, tn: int, fp: int, fn: int) -> EvalReport:
    counts = (tp, tn, fp, fn)
    if any(c < 0 for c in counts):
        raise ValueError(f"confusion counts must be non-negative, got {counts}")
    total = sum(counts)
    if total == 0:
        raise ValueError("confusion matrix is empty")
    po = (tp + tn) / total
    pe = ((tp + fp) * (tp + fn) + (tn + fn) * (tn + fp)) / total**2
    if pe == 1.0:
        kc = 100.0 if po == 1.0 else 0.0
    else:
        kc = 100.0 * (po - pe) / (1.0 - pe)
    return EvalReport(tp, tn, fp, fn, fp + fn, 100.0 * po, kc)


def evaluate(pred: ChangeMap, truth: ChangeMap) -> EvalReport:
    return report(*confusion(pred, truth))
