"""Training objective: mask variance regularizer plus symmetric contrastive loss.

The variance term pushes each token position's mask values (pooled over the
batch and the K prototypes) to have standard deviation at least a target
value, so prototypes cannot collapse onto identical token selections.  The
contrastive term is the usual temperature-scaled InfoNCE in both directions
over an in-batch square score matrix.  Both return their gradient alongside
the value; nothing here calls an autodiff engine.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError, ValidationError


@dataclass(frozen=True)
class LossConfig:
    """Objective constants.

    std_target: per-token mask standard deviation the regularizer demands.
    variance_floor: additive floor inside the sqrt, keeps the gradient finite
        at zero variance.
    variance_weight: multiplier on the variance term in the total objective.
    temperature: softmax temperature of the contrastive term.
    """

    std_target: float = 0.75
    variance_floor: float = 1e-4
    variance_weight: float = 5.0
    temperature: float = 0.05

    def __post_init__(self) -> None:
        if self.std_target <= 0:
            raise ValidationError(f"std_target must be > 0, got {self.std_target}")
        if self.variance_floor <= 0:
            raise ValidationError(f"variance_floor must be > 0, got {self.variance_floor}")
        if self.variance_weight < 0:
            raise ValidationError(f"variance_weight must be >= 0, got {self.variance_weight}")
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class LossBreakdown:
    contrastive: float
    variance: float
    total: float


def variance_loss(masks: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Hinge on per-token mask std, averaged over token positions.

    masks has shape (batch, n_tokens, n_prototypes).  For each token
    position the batch*n_prototypes mask values are pooled; their population
    standard deviation (with the variance floor added under the sqrt) is
    pushed up to std_target.  Returns (value, d value / d masks).

    With zero prototypes there is nothing to regularize: returns 0 with an
    all-zero gradient, warning if the configured weight is positive.
    """
    if masks.ndim != 3:
        raise ShapeError(f"masks must be (batch, tokens, prototypes), got {masks.shape}")
    batch, n_tokens, n_protos = masks.shape
    if batch < 1 or n_tokens < 1:
        raise ValidationError(f"masks need at least one video and one token, got {masks.shape}")
    if n_protos == 0:
        if cfg.variance_weight > 0:
            warnings.warn(
                f"variance_weight={cfg.variance_weight} has no effect with 0 prototypes",
                stacklevel=2,
            )
        return 0.0, np.zeros_like(masks)

    pooled = n_protos * batch
    mean = masks.mean(axis=(0, 2), keepdims=True)  # (1, n_tokens, 1)
    centered = masks - mean
    var = np.einsum("ljk,ljk->j", centered, centered) / pooled  # population variance
    std = np.sqrt(var + cfg.variance_floor)
    slack = cfg.std_target - std
    active = slack > 0
    value = float(np.where(active, slack, 0.0).sum() / n_tokens)

    # d value / d m[i,j,k] = -(m[i,j,k] - mean_j) / (n_tokens * pooled * std_j)
    # wherever the hinge is active, 0 elsewhere.
    scale = np.where(active, -1.0 / (n_tokens * pooled * std), 0.0)  # (n_tokens,)
    grad = centered * scale[None, :, None]
    return value, grad


def contrastive_loss(scores: np.ndarray, temperature: float) -> tuple[float, np.ndarray]:
    """Symmetric InfoNCE over a square in-batch score matrix.

    Row i is text i against all videos; the diagonal holds the matched
    pairs.  Value is the mean over pairs of the text-to-video and
    video-to-text cross-entropies.  Returns (value, d value / d scores).
    Log-sum-exp stabilized: exact for any score scale.
    """
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ShapeError(f"in-batch contrastive loss needs a square matrix, got {scores.shape}")
    if temperature <= 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}")
    n = scores.shape[0]
    logits = scores / temperature
    diag = np.diagonal(logits)

    row_max = logits.max(axis=1)
    row_lse = row_max + np.log(np.exp(logits - row_max[:, None]).sum(axis=1))
    col_max = logits.max(axis=0)
    col_lse = col_max + np.log(np.exp(logits - col_max[None, :]).sum(axis=0))
    value = float(((row_lse - diag) + (col_lse - diag)).sum() / n)

    row_softmax = np.exp(logits - row_lse[:, None])
    col_softmax = np.exp(logits - col_lse[None, :])
    grad_logits = (row_softmax + col_softmax - 2.0 * np.eye(n)) / n
    return value, grad_logits / temperature


def total_loss(contrastive: float, variance: float, cfg: LossConfig) -> LossBreakdown:
    """Weighted sum of the two terms, kept itemized for logging."""
    for name, component in (("contrastive", contrastive), ("variance", variance)):
        if not np.isfinite(component):
            raise NumericError(f"{name} loss is non-finite: {component}")
    return LossBreakdown(contrastive, variance, contrastive + cfg.variance_weight * variance)
