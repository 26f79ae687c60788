"""Training objectives and their analytic gradients.

Every ``*_loss_grad`` function accepts a single sample (scalar logit or 1-D
embedding) or a batch (1-D logits or 2-D embeddings) and returns per-sample
losses with gradients of matching shape.

Formulas:

* BCE: ``max(z, 0) - z*y + log1p(exp(-|z|))``, gradient ``sigmoid(z) - y``.
* HSC: radius ``s = sqrt(|phi|^2 + 1) - 1``; loss ``s`` for normal samples and
  ``-log(1 - exp(-max(s, 1e-9)))`` for anomalous samples.
* DeepSAD: ``d2 = |phi - c|^2``; loss ``d2`` for normal samples and
  ``1 / max(d2, 1e-6)`` for anomalous samples.
* Compactness: ``|phi - c|^2`` for every sample.
* Autoencoder: ``|decode(encode(x)) - x|^2 / D``.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from ..errors import InvalidInputError
from .mlp import MlpParams, backward, forward_with_cache

HSC_EPSILON = 1e-9
DEEPSAD_EPSILON = 1e-6

OBJECTIVES = ("bce", "hsc", "deepsad", "compactness", "autoencoder")
OE_OBJECTIVES = ("bce", "hsc", "deepsad")


def bce_loss_grad(logit, label):
    """Binary cross-entropy on logits; label 1 marks the anomaly class."""
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    grad = expit(z) - y
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def _as_batch(embedding):
    arr = np.asarray(embedding, dtype=np.float64)
    return (arr[None, :], True) if arr.ndim == 1 else (arr, False)


def _unbatch(loss, grad, single):
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def hsc_radius(embedding) -> np.ndarray:
    """Pseudo-Huber radius ``sqrt(|phi|^2 + 1) - 1`` of each row."""
    phi, _ = _as_batch(embedding)
    sq = np.sum(phi * phi, axis=1)
    root = np.sqrt(sq + 1.0)
    return sq / (root + 1.0)


def hsc_loss_grad(embedding, label):
    phi, single = _as_batch(embedding)
    y = np.broadcast_to(np.asarray(label, dtype=np.float64), (phi.shape[0],))
    sq = np.sum(phi * phi, axis=1)
    root = np.sqrt(sq + 1.0)
    s = sq / (root + 1.0)
    ds_dphi = phi / root[:, None]

    s_clamped = np.maximum(s, HSC_EPSILON)
    anomalous_loss = -np.log(-np.expm1(-s_clamped))
    with np.errstate(divide="ignore", over="ignore"):
        anomalous_dl_ds = np.where(s > HSC_EPSILON, -1.0 / np.expm1(np.maximum(s, HSC_EPSILON)), 0.0)
    loss = np.where(y > 0.5, anomalous_loss, s)
    dl_ds = np.where(y > 0.5, anomalous_dl_ds, 1.0)
    return _unbatch(loss, dl_ds[:, None] * ds_dphi, single)


def _check_center(phi: np.ndarray, center) -> np.ndarray:
    c = np.asarray(center, dtype=np.float64).ravel()
    if c.shape[0] != phi.shape[1]:
        raise InvalidInputError(f"Center width {c.shape[0]} does not match embedding width {phi.shape[1]}")
    return c


def deepsad_loss_grad(embedding, center, label):
    phi, single = _as_batch(embedding)
    diff = phi - _check_center(phi, center)
    y = np.broadcast_to(np.asarray(label, dtype=np.float64), (phi.shape[0],))
    d2 = np.sum(diff * diff, axis=1)
    inv = 1.0 / np.maximum(d2, DEEPSAD_EPSILON)
    loss = np.where(y > 0.5, inv, d2)
    dl_dd2 = np.where(y > 0.5, np.where(d2 > DEEPSAD_EPSILON, -inv * inv, 0.0), 1.0)
    return _unbatch(loss, (2.0 * dl_dd2)[:, None] * diff, single)


def compactness_loss_grad(embedding, center):
    phi, single = _as_batch(embedding)
    diff = phi - _check_center(phi, center)
    return _unbatch(np.sum(diff * diff, axis=1), 2.0 * diff, single)


def center_distance(embedding, center) -> np.ndarray:
    """Squared distance of each row to ``center``."""
    phi, _ = _as_batch(embedding)
    diff = phi - _check_center(phi, center)
    return np.sum(diff * diff, axis=1)


def reconstruction_error(params: MlpParams, x) -> np.ndarray:
    """Per-row mean squared reconstruction error."""
    arr, _ = _as_batch(x)
    out, _ = forward_with_cache(params, arr)
    if out.shape != arr.shape:
        raise InvalidInputError("Autoencoder output width must equal its input width")
    return np.mean((out - arr) ** 2, axis=1)


def autoencoder_loss_grad(params: MlpParams, x) -> Tuple[float, MlpParams]:
    """Mean reconstruction loss over rows of ``x`` and its parameter gradients."""
    arr, _ = _as_batch(x)
    out, cache = forward_with_cache(params, arr)
    if out.shape != arr.shape:
        raise InvalidInputError("Autoencoder output width must equal its input width")
    n, d = arr.shape
    resid = out - arr
    loss = float(np.sum(resid * resid) / (n * d))
    return loss, backward(params, cache, 2.0 * resid / (n * d))


def objective_loss_grad(params: MlpParams, x, labels, objective: str,
                        center: Optional[np.ndarray] = None) -> Tuple[float, MlpParams]:
    """Mean loss of a batch under ``objective`` and the parameter gradients."""
    if objective == "autoencoder":
        return autoencoder_loss_grad(params, x)
    arr, _ = _as_batch(x)
    out, cache = forward_with_cache(params, arr)
    n = arr.shape[0]
    y = np.broadcast_to(np.asarray(labels if labels is not None else 0, dtype=np.float64), (n,))
    if objective == "bce":
        if out.shape[1] != 1:
            raise InvalidInputError("BCE needs a head with a single output")
        loss, g = bce_loss_grad(out[:, 0], y)
        d_out = g[:, None]
    elif objective == "hsc":
        loss, d_out = hsc_loss_grad(out, y)
    elif objective == "deepsad":
        loss, d_out = deepsad_loss_grad(out, center, y)
    elif objective == "compactness":
        loss, d_out = compactness_loss_grad(out, center)
    else:
        raise InvalidInputError(f"Unknown objective '{objective}'")
    return float(np.mean(loss)), backward(params, cache, d_out / n)
