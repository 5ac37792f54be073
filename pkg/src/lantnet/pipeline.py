"""End-to-end detection: difference image -> pseudo-labels -> training -> change map."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .diff_image import log_ratio
from .model import LossWeights, ModelParams, TrainConfig, predict_map, train
from .patches import PatchConfig, build_training_set, inject_label_noise
from .preclassify import PseudoLabelMap, hierarchical_fcm
from .raster_io import ChangeMap, RasterImage

log = logging.getLogger(__name__)

DEFAULT_R = 7
SWEEP_RS = (5, 7, 9, 11, 13, 15)


@dataclass(frozen=True)
class DetectConfig:
    r: int = DEFAULT_R
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    alpha: float = 0.1
    beta: float = 0.9
    seed: int = 0
    max_per_class: int = 20000
    flip_rate: float = 0.0
    attention: bool = True

    def validate(self) -> None:
        """Raise ValueError on any out-of-range parameter (nothing is computed)."""
        PatchConfig(self.r, self.max_per_class, 0)
        self.train_config(0)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=seed,
            loss_weights=LossWeights(self.alpha, self.beta),
            flip_rate=self.flip_rate,
            attention=self.attention,
        )


def stage_seeds(seed: int) -> dict[str, int]:
    """Independent per-stage seeds derived from the single run seed."""
    children = np.random.SeedSequence(seed).spawn(3)
    names = ("sampling", "noise", "training")
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


@dataclass
class DetectResult:
    change_map: ChangeMap
    params: ModelParams
    train_config: TrainConfig
    pseudo_labels: PseudoLabelMap
    difference: RasterImage
    loss_trace: list[float] = field(default_factory=list)
    n_train: int = 0
    seconds: float = 0.0


def detect(i1: RasterImage, i2: RasterImage, cfg: DetectConfig = DetectConfig()) -> DetectResult:
    cfg.validate()
    t0 = time.perf_counter()
    seeds = stage_seeds(cfg.seed)
    di = log_ratio(i1, i2)
    labels = hierarchical_fcm(di)
    log.info("pseudo-labels %s", labels.counts())
    samples = build_training_set(i1, i2, di, labels, PatchConfig(cfg.r, cfg.max_per_class, seeds["sampling"]))
    if cfg.flip_rate > 0:
        samples = inject_label_noise(samples, cfg.flip_rate, seeds["noise"])
    tcfg = cfg.train_config(seeds["training"])
    log.info("training on %d samples (R=%d)", len(samples), cfg.r)
    result = train(samples, tcfg)
    cmap = predict_map(result.params, i1, i2, di, cfg.r, attention=cfg.attention)
    return DetectResult(
        change_map=cmap,
        params=result.params,
        train_config=tcfg,
        pseudo_labels=labels,
        difference=di,
        loss_trace=result.loss_trace,
        n_train=len(samples),
        seconds=time.perf_counter() - t0,
    )
