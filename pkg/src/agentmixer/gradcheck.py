"""Central finite-difference verification of taped gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np

from agentmixer.autodiff import Tensor, backward


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_leaf: int
    worst_coord: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def check_gradients(
    fn: Callable[[Sequence[Tensor]], Tensor],
    leaves: Sequence[Tensor],
    step: float = 1e-5,
) -> GradCheckResult:
    """Compare taped gradients of ``fn(leaves)`` against central differences.

    ``fn`` must rebuild its forward graph on every call.  The relative error
    of each coordinate uses ``max(|analytic|, |numeric|)`` as the scale, with
    an absolute floor so exact zeros on both sides compare clean.
    """
    for leaf in leaves:
        leaf.grad = None
    loss = fn(leaves)
    backward(loss)
    analytic = [
        np.zeros_like(l.data) if l.grad is None else l.grad.copy() for l in leaves
    ]

    worst = (0.0, -1, -1)
    for li, leaf in enumerate(leaves):
        flat = leaf.data.reshape(-1)
        for ci in range(flat.size):
            orig = flat[ci]
            flat[ci] = orig + step
            up = fn(leaves).item()
            flat[ci] = orig - step
            down = fn(leaves).item()
            flat[ci] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic[li].reshape(-1)[ci]
            diff = abs(a - numeric)
            scale = max(abs(a), abs(numeric))
            rel = 0.0 if diff <= 1e-8 else diff / max(scale, 1e-8)
            if rel > worst[0]:
                worst = (rel, li, ci)
    return GradCheckResult(*worst)
