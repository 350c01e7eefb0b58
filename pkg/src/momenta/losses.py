"""Focal loss and the masked two-task objective."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
import torch

P_MIN = 1e-7


def focal_loss(probs: Sequence[float], true_class: int, alpha: Optional[Sequence[float]] = None, gamma: float = 2.0) -> float:
    """``-alpha[t] * (1 - p_t)**gamma * log(p_t)`` for one example, with ``p_t`` clipped to [1e-7, 1]."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-5:
        raise ValueError("probs must be a probability distribution")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    a = 1.0 if alpha is None else float(alpha[true_class])
    p_t = min(max(float(p[true_class]), P_MIN), 1.0)
    return -a * (1.0 - p_t) ** gamma * math.log(p_t)


def focal_loss_from_logits(
    logits: torch.Tensor, target: torch.Tensor, alpha: Optional[torch.Tensor] = None, gamma: float = 2.0
) -> torch.Tensor:
    """Per-example focal loss (no reduction) computed stably from logits."""
    log_p = torch.log_softmax(logits, dim=-1)
    log_pt = log_p.gather(-1, target.unsqueeze(-1)).squeeze(-1).clamp(min=math.log(P_MIN))
    pt = log_pt.exp()
    loss = -((1.0 - pt) ** gamma) * log_pt
    if alpha is not None:
        loss = alpha.to(loss.dtype)[target] * loss
    return loss


def multitask_loss(
    logits_harm: torch.Tensor,
    logits_target: torch.Tensor,
    harm: torch.Tensor,
    target: torch.Tensor,
    harmful: torch.Tensor,
    alpha_harm: Optional[torch.Tensor] = None,
    alpha_target: Optional[torch.Tensor] = None,
    gamma: float = 2.0,
    lambda_target: float = 1.0,
) -> torch.Tensor:
    """Batch mean of ``FL_harm + lambda * [harmful] * FL_target``.

    ``target`` entries for harmless rows are ignored (any valid index); those rows
    contribute exactly zero loss and zero gradient to the target head.
    """
    fl_harm = focal_loss_from_logits(logits_harm, harm, alpha_harm, gamma)
    safe_target = torch.where(harmful, target, torch.zeros_like(target))
    fl_target = focal_loss_from_logits(logits_target, safe_target, alpha_target, gamma)
    fl_target = torch.where(harmful, fl_target, torch.zeros_like(fl_target))
    return (fl_harm + lambda_target * fl_target).mean()


def inverse_frequency_alpha(labels: Sequence[int], num_classes: int) -> np.ndarray:
    """Per-class ``1 / frequency`` normalised to mean 1 over present classes; absent classes get 1."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes).astype(np.float64)
    alpha = np.ones(num_classes)
    present = counts > 0
    if present.any():
        inv = 1.0 / counts[present]
        alpha[present] = inv / inv.mean()
    return alpha
