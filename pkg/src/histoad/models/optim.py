"""SGD with momentum, weight decay and global-norm gradient clipping.

Update rule (PyTorch convention)::

    g <- g * clip / |g|       if clip is set and |g| > clip
    v <- momentum * v + g + weight_decay * w
    w <- w - lr * v
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..errors import NumericalError
from .mlp import DenseLayer, MlpParams


@dataclass
class SgdState:
    """Momentum buffers, one per parameter array."""
    velocity: MlpParams
    step: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "SgdState":
        return cls(velocity=params.zeros_like())


def clip_gradients(grads: MlpParams, max_norm: Optional[float]) -> Tuple[MlpParams, float]:
    """Scale ``grads`` to global L2 norm ``max_norm`` when it is exceeded.

    Returns the (possibly rescaled) gradients and the norm before clipping.
    """
    norm = grads.global_norm()
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return MlpParams([DenseLayer(g.weight * scale, g.bias * scale, g.activation)
                      for g in grads.layers]), norm


def sgd_step(params: MlpParams, grads: MlpParams, state: SgdState, cfg) -> Tuple[MlpParams, SgdState]:
    """Apply one SGD update.

    Args:
        params: Current parameters (not modified).
        grads: Gradients with the same architecture.
        state: Momentum state (not modified).
        cfg: Object with ``learning_rate``, ``momentum``, ``weight_decay`` and
            ``grad_clip_norm`` attributes, normally a ``TrainConfig``.

    Raises:
        NumericalError: If any gradient entry is not finite.
    """
    if not all(np.all(np.isfinite(a)) for a in grads.arrays()):
        raise NumericalError(f"Non-finite gradient at step {state.step}", step=state.step)
    grads, _ = clip_gradients(grads, cfg.grad_clip_norm)
    new_layers, new_velocity = [], []
    for w, g, v in zip(params.layers, grads.layers, state.velocity.layers):
        vw = cfg.momentum * v.weight + g.weight + cfg.weight_decay * w.weight
        vb = cfg.momentum * v.bias + g.bias + cfg.weight_decay * w.bias
        new_velocity.append(DenseLayer(vw, vb, w.activation))
        new_layers.append(DenseLayer(w.weight - cfg.learning_rate * vw,
                                     w.bias - cfg.learning_rate * vb, w.activation))
    return MlpParams(new_layers), SgdState(MlpParams(new_velocity), state.step + 1)
