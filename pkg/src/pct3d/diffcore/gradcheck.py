"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def grad_errors(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    samples: int = 6,
    seed: int = 0,
) -> list:
    """Per-tensor worst relative error between backward and central differences.

    ``f`` must rebuild the scalar loss from the current values of ``params``
    on every call and be deterministic.  Up to ``samples`` coordinates of each
    tensor are probed; the error at one coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params:
        if p.grad is not None:
            p.grad[...] = 0.0
    loss = f()
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    report = []
    for i, p in enumerate(params):
        flat = p.data.reshape(-1)
        coords = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + eps
                up = f().item()
                flat[c] = orig - eps
                down = f().item()
            flat[c] = orig
            num = (up - down) / (2 * eps)
            ana = analytic[i].reshape(-1)[c]
            worst = max(worst, abs(ana - num) / max(1.0, abs(ana), abs(num)))
        report.append((p.name or f"param{i}", worst))
    return report


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6, samples: int = 6, seed: int = 0) -> float:
    """Maximum relative gradient error over sampled coordinates of ``params``."""
    return max((err for _, err in grad_errors(f, params, eps, samples, seed)), default=0.0)
