"""Hierarchical fuzzy c-means preclassification of the difference image."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .raster_io import DifferenceImage, RasterImage

UNCHANGED = 0
CHANGED = 1
INTERMEDIATE = 2

# debug-dump intensities per label
LABEL_INTENSITY = {UNCHANGED: 0, INTERMEDIATE: 128, CHANGED: 255}

FUZZIFIER = 2.0
TOL = 1e-5
MAX_ITER = 100
CONFIDENCE = 0.90


class PreclassificationError(ValueError):
    pass


@dataclass
class FcmResult:
    centers: np.ndarray  # ascending
    memberships: np.ndarray  # (n_samples, c), columns follow `centers`
    objective_trace: list[float] = field(default_factory=list)
    n_iter: int = 0

    def labels(self) -> np.ndarray:
        """Index of the winning (argmax-membership) cluster per sample."""
        return np.argmax(self.memberships, axis=1)


@dataclass(frozen=True)
class PseudoLabelMap:
    labels: np.ndarray  # (height, width) int8 of UNCHANGED / CHANGED / INTERMEDIATE

    @property
    def shape(self):
        return self.labels.shape

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def counts(self) -> dict[str, int]:
        return {
            "unchanged": int(np.sum(self.labels == UNCHANGED)),
            "changed": int(np.sum(self.labels == CHANGED)),
            "intermediate": int(np.sum(self.labels == INTERMEDIATE)),
        }

    def to_raster(self) -> RasterImage:
        out = np.zeros(self.labels.shape)
        for lab, val in LABEL_INTENSITY.items():
            out[self.labels == lab] = val
        return RasterImage(out)


def initial_centers(x: np.ndarray, c: int) -> np.ndarray:
    levels = (np.arange(c) + 0.5) / c
    v = np.quantile(x, levels)
    if np.unique(v).size < c:
        # heavy ties at the quantiles: fall back to quantiles of the distinct values
        v = np.quantile(np.unique(x), levels)
    return v


def fcm(
    samples,
    c: int,
    fuzzifier: float = FUZZIFIER,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
    seed: int = 0,
    max_samples: int | None = None,
) -> FcmResult:
    """Fuzzy c-means on scalar samples.

    Initial centers sit at the (k + 0.5) / c quantiles, so the result does not depend
    on `seed` unless `max_samples` asks for a random subsample to fit the centers.
    Returned memberships cover all samples and are computed from the final centers.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if c < 2:
        raise ValueError(f"cluster count must be >= 2, got {c}")
    if not fuzzifier > 1.0:
        raise ValueError(f"fuzzifier must be > 1, got {fuzzifier}")
    if x.size == 0:
        raise ValueError("no samples to cluster")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if np.all(x == x[0]):
        raise PreclassificationError("degenerate clustering input")

    fit = x
    if max_samples is not None and x.size > max_samples:
        rng = np.random.default_rng(seed)
        fit = x[np.sort(rng.choice(x.size, max_samples, replace=False))]

    v = initial_centers(fit, c)
    trace: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        _, v_new, obj = kernels.fcm_step(fit, v, fuzzifier)
        trace.append(obj)
        shift = np.max(np.abs(v_new - v))
        v = v_new
        if shift < tol:
            break

    order = np.argsort(v, kind="stable")
    v = v[order]
    u = kernels.fcm_memberships(x, v, fuzzifier)
    return FcmResult(centers=v, memberships=u, objective_trace=trace, n_iter=it)


def fcm_objective(samples, centers, memberships, fuzzifier: float = FUZZIFIER) -> float:
    x = np.asarray(samples, dtype=np.float64).ravel()
    return float(np.sum(memberships**fuzzifier * (x[:, None] - np.asarray(centers)[None, :]) ** 2))


def hierarchical_fcm(
    di: DifferenceImage,
    fuzzifier: float = FUZZIFIER,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
    confidence: float = CONFIDENCE,
    seed: int = 0,
    max_samples: int | None = None,
) -> PseudoLabelMap:
    """Two-stage FCM: a 2-cluster split sets the threshold, a 5-cluster pass assigns labels.

    The outermost clusters of the 5-cluster pass are taken as-is; the middle three
    are kept only for pixels whose winning membership reaches `confidence`, on the
    side of the threshold their center falls on.  Everything else is INTERMEDIATE.
    """
    x = di.pixels.ravel()
    kw = dict(fuzzifier=fuzzifier, max_iter=max_iter, tol=tol, seed=seed, max_samples=max_samples)
    coarse = fcm(x, 2, **kw)
    threshold = 0.5 * (coarse.centers[0] + coarse.centers[1])

    fine = fcm(x, 5, **kw)
    win = fine.labels()
    conf = fine.memberships[np.arange(x.size), win]
    centers = fine.centers

    lab = np.full(x.size, INTERMEDIATE, dtype=np.int8)
    lab[win == 0] = UNCHANGED
    lab[win == 4] = CHANGED
    middle = (win > 0) & (win < 4)
    sure = middle & (conf >= confidence)
    above = centers[win] > threshold
    below = centers[win] < threshold
    lab[sure & above] = CHANGED
    lab[sure & below] = UNCHANGED

    out = PseudoLabelMap(lab.reshape(di.shape))
    counts = out.counts()
    if counts["changed"] == 0 or counts["unchanged"] == 0:
        raise PreclassificationError("preclassification collapsed")
    return out
