"""Autograd hook-up for PyTorch models.

``count_loss`` plugs any of the four objectives into a torch graph as a
custom differentiable function; probabilities move across the boundary as
detached float64 copies, and the stored probability-space gradient is
replayed in backward.
"""

from __future__ import annotations

import torch

from . import bind_loss_and_grad


class _CountLossFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, probs, kind, label, beta):
        values = probs.detach().cpu().double().numpy()
        loss, grad = bind_loss_and_grad(kind, values, label=label, beta=beta)
        ctx.save_for_backward(torch.from_numpy(grad).to(probs))
        return probs.new_tensor(loss)

    @staticmethod
    def backward(ctx, grad_output):
        (grad,) = ctx.saved_tensors
        return grad_output * grad, None, None, None


def count_loss(probs: torch.Tensor, kind: str, label=None, beta=None) -> torch.Tensor:
    """Differentiable count loss on a 1-D tensor of probabilities in (0, 1)."""
    if probs.dim() != 1:
        raise ValueError("probs must be a 1-D tensor")
    return _CountLossFunction.apply(probs, kind, label, beta)
