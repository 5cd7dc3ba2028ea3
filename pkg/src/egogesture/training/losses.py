"""Joint loss: binary cross-entropy on finger probabilities plus masked MSE on positions."""
from __future__ import annotations

import torch

from ..core import InputError

BCE_CLAMP = 1e-7


def _check_shapes(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise InputError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def probabilistic_loss(p_true: torch.Tensor, p_pred: torch.Tensor, clamp: float = BCE_CLAMP) -> torch.Tensor:
    """Mean binary cross-entropy over all M x N terms."""
    p_true = torch.as_tensor(p_true, dtype=p_pred.dtype)
    _check_shapes(p_true, p_pred, "probabilistic_loss")
    p = p_pred.clamp(clamp, 1.0 - clamp)
    terms = -(p_true * torch.log(p) + (1.0 - p_true) * torch.log(1.0 - p))
    return terms.mean()


def visibility_mask(codes: torch.Tensor, positions_shape: torch.Size) -> torch.Tensor:
    """Broadcast M x N visibility bits over the (x, y) columns of every ensemble row."""
    codes = torch.as_tensor(codes)
    cols = codes.repeat_interleave(2, dim=-1)  # M x 2N
    if len(positions_shape) == 3:
        cols = cols[:, None, :].expand(positions_shape)
    return cols


def positional_loss(x_true: torch.Tensor, x_pred: torch.Tensor, mask: torch.Tensor,
                    renormalize: bool = False) -> torch.Tensor:
    """Masked squared error summed and divided by the number of entries (4N^2 M for 2N x 2N).

    ``mask`` is either the per-sample M x N visibility code or an already
    broadcast mask of ``x_pred``'s shape. With ``renormalize`` the sum is
    divided by the number of visible entries instead.
    """
    x_true = torch.as_tensor(x_true, dtype=x_pred.dtype)
    _check_shapes(x_true, x_pred, "positional_loss")
    mask = torch.as_tensor(mask, dtype=x_pred.dtype)
    if mask.shape != x_pred.shape:
        if mask.ndim != 2 or mask.shape[0] != x_pred.shape[0] or 2 * mask.shape[1] != x_pred.shape[-1]:
            raise InputError(f"positional_loss: mask shape {tuple(mask.shape)} does not fit {tuple(x_pred.shape)}")
        mask = visibility_mask(mask, x_pred.shape)
    # Hidden entries are selected out rather than multiplied, so a non-finite
    # prediction in a hidden column cannot leak into the loss.
    diff = torch.where(mask > 0, x_pred - x_true, torch.zeros_like(x_pred))
    total = (mask * diff ** 2).sum()
    if renormalize:
        return total / mask.sum().clamp_min(1.0)
    return total / x_pred.numel()


def total_loss(l1: torch.Tensor, l2: torch.Tensor) -> torch.Tensor:
    return l1 + l2
