"""Training loop for scoring heads.

Outlier-exposure objectives (``bce``, ``hsc``, ``deepsad``) train on balanced
batches of normal and OE rows. ``compactness`` and ``autoencoder`` train on
normal rows only. Initialization and batch sampling draw from independent
streams derived from ``TrainConfig.seed``, so a run is reproducible bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from ..errors import ConfigurationError, NumericalError
from ..features.io import FeatureMatrix
from ..features.oe import (
    OeSamplerConfig,
    draw_indices,
    generator_from_state,
    make_rng_state,
    spawn_seeds,
)
from .losses import OBJECTIVES, OE_OBJECTIVES, objective_loss_grad
from .mlp import MlpParams, forward, head_dims, init_mlp
from .optim import SgdState, sgd_step

logger = logging.getLogger(__name__)

OCC_LEARNING_RATE = 1e-2
OCC_GRAD_CLIP_NORM = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings.

    Defaults are the outlier-exposure settings; :meth:`for_objective` swaps in
    the one-class settings for ``compactness``.
    """
    objective: str = "bce"
    learning_rate: float = 5e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32
    steps: int = 10_000
    grad_clip_norm: Optional[float] = None
    seed: int = 0
    occ_learning_rate: float = OCC_LEARNING_RATE
    occ_grad_clip_norm: float = OCC_GRAD_CLIP_NORM
    log_every: int = 1000

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(
                f"Unknown objective '{self.objective}'. Choose from: {', '.join(OBJECTIVES)}"
            )
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigurationError("batch_size must be >= 1 and steps >= 0")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ConfigurationError(f"grad_clip_norm must be > 0, got {self.grad_clip_norm}")

    def for_objective(self, objective: str) -> "TrainConfig":
        """This config retargeted to ``objective``.

        ``compactness`` uses plain SGD at the one-class learning rate with
        gradient clipping; the others keep the current settings.
        """
        if objective == "compactness":
            return replace(self, objective=objective, learning_rate=self.occ_learning_rate,
                           grad_clip_norm=self.occ_grad_clip_norm, momentum=0.0, weight_decay=0.0)
        return replace(self, objective=objective)


@dataclass(frozen=True)
class ModelConfig:
    """Head architecture."""
    hidden_width: int = 128
    embedding_dim: int = 32
    bottleneck_dim: Optional[int] = None


@dataclass
class TrainingPools:
    """Training data: normal rows and optional near/far OE rows."""
    normal: FeatureMatrix
    near: Optional[FeatureMatrix] = None
    far: Optional[FeatureMatrix] = None


@dataclass
class TrainResult:
    """Trained head plus what is needed to score with it."""
    params: MlpParams
    objective: str
    config: TrainConfig
    model_config: ModelConfig = field(default_factory=ModelConfig)
    center: Optional[np.ndarray] = None
    loss_trace: List[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else math.nan


def compute_center(params: MlpParams, rows: np.ndarray, chunk_rows: int = 8192) -> np.ndarray:
    """Mean head embedding of ``rows``."""
    total = np.zeros(params.output_dim)
    for start in range(0, rows.shape[0], chunk_rows):
        total += forward(params, rows[start:start + chunk_rows]).sum(axis=0)
    return total / max(1, rows.shape[0])


def _sampler_config(cfg: TrainConfig, sampler: Optional[OeSamplerConfig]) -> OeSamplerConfig:
    if sampler is None:
        return OeSamplerConfig(batch_size=cfg.batch_size, seed=cfg.seed)
    if sampler.batch_size != cfg.batch_size:
        return replace(sampler, batch_size=cfg.batch_size)
    return sampler


def train(pools: TrainingPools, cfg: TrainConfig, model_cfg: ModelConfig = ModelConfig(),
          sampler: Optional[OeSamplerConfig] = None,
          init_params: Optional[MlpParams] = None) -> TrainResult:
    """Run ``cfg.steps`` SGD steps and return the trained head.

    Raises:
        ConfigurationError: If a required pool is missing or empty.
        NumericalError: If the loss or a gradient becomes non-finite; the
            exception carries the loss trace so far.
    """
    objective = cfg.objective
    normal = pools.normal
    if len(normal) == 0:
        raise ConfigurationError("The normal training pool is empty")
    init_seed, data_seed = spawn_seeds(cfg.seed, 2)

    if init_params is None:
        dims, acts = head_dims(objective, normal.dim, model_cfg.hidden_width,
                               model_cfg.embedding_dim, model_cfg.bottleneck_dim)
        params = init_mlp(dims, acts, generator_from_state(make_rng_state(init_seed)))
    else:
        params = init_params.copy()

    center = None
    if objective in ("deepsad", "compactness"):
        center = compute_center(params, normal.rows.astype(np.float64))

    normal_rows = normal.rows.astype(np.float64)
    if objective in OE_OBJECTIVES:
        sampler_cfg = _sampler_config(cfg, sampler)
        near_rows = (pools.near.rows if pools.near is not None else np.zeros((0, normal.dim))).astype(np.float64)
        far_rows = (pools.far.rows if pools.far is not None else np.zeros((0, normal.dim))).astype(np.float64)
        pool_sizes = (normal_rows.shape[0], near_rows.shape[0], far_rows.shape[0])
        # Validates pool availability before any step runs.
        draw_indices(pool_sizes, sampler_cfg, make_rng_state(data_seed))
    logger.info("Training %s head %s for %d steps", objective,
                [layer["out"] for layer in params.architecture()], cfg.steps)

    state = SgdState.zeros_like(params)
    rng_state = make_rng_state(data_seed)
    trace: List[float] = []
    for step in range(cfg.steps):
        if objective in OE_OBJECTIVES:
            (i_norm, i_near, i_far), rng_state = draw_indices(pool_sizes, sampler_cfg, rng_state)
            x = np.concatenate([normal_rows[i_norm], near_rows[i_near], far_rows[i_far]])
            y = np.concatenate([np.zeros(i_norm.size), np.ones(i_near.size + i_far.size)])
        else:
            gen = generator_from_state(rng_state)
            x = normal_rows[gen.integers(0, normal_rows.shape[0], size=cfg.batch_size)]
            rng_state = gen.bit_generator.state
            y = None
        loss, grads = objective_loss_grad(params, x, y, objective, center)
        trace.append(loss)
        if not math.isfinite(loss):
            raise NumericalError(f"Loss diverged at step {step}", step=step, loss_trace=trace)
        try:
            params, state = sgd_step(params, grads, state, cfg)
        except NumericalError as e:
            raise NumericalError(str(e), step=step, loss_trace=trace) from e
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            logger.info("step %d/%d loss %.6f", step + 1, cfg.steps, loss)

    return TrainResult(params=params, objective=objective, config=cfg, model_config=model_cfg,
                       center=center, loss_trace=trace)
