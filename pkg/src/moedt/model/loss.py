"""Masked mean-squared action loss."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..errors import DatasetError


def dt_loss(pred, target_actions: np.ndarray, mask: np.ndarray):
    """Mean squared error over valid (step, action-dim) entries.

    pred: Tensor [B, K, a_max] of segment predictions. target_actions and
    mask are arrays of the same shape (mask broadcastable); masked entries
    contribute exactly zero to loss and gradient.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=pred.data.dtype), pred.data.shape)
    n_valid = float(mask.sum())
    if n_valid == 0:
        raise DatasetError("dt_loss: all action entries masked")
    target = ad.constant(np.asarray(target_actions), pred.data.dtype)
    d = ad.sub(pred, target)
    sq = ad.mul(d, d)
    masked = ad.mul(sq, ad.constant(mask.copy(), pred.data.dtype))
    return ad.scale(ad.sum_all(masked), 1.0 / n_valid)
