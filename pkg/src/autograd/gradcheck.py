"""Central finite-difference oracle for backward rules"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class GradCheckResult:
    """Worst elementwise disagreement found for one tensor"""
    name: str
    max_rel_error: float
    max_abs_error: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Dict[str, Tensor],
    h: float = 1e-5,
    max_elements: Optional[int] = 16,
    seed: int = 0,
    floor: float = 1e-6,
) -> Dict[str, GradCheckResult]:
    """Compare analytic gradients of ``loss_fn`` with central differences

    The relative error of an element is ``|a - n| / max(|a|, |n|, floor)``.

    Args:
        loss_fn: Zero-argument closure rebuilding the scalar loss from ``tensors``
        tensors: Named tensors (usually f64) to perturb in place
        h: Finite-difference step
        max_elements: Per-tensor sample of elements to check (None = every element)
        seed: Seed for the element sample
        floor: Denominator floor for near-zero gradients

    Returns:
        One result per tensor name
    """
    for tensor in tensors.values():
        tensor.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in tensors.items()
    }

    rng = np.random.default_rng(seed)
    results: Dict[str, GradCheckResult] = {}
    for name, tensor in tensors.items():
        flat = tensor.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            indices = rng.choice(flat.size, size=max_elements, replace=False)
        worst_rel, worst_abs = 0.0, 0.0
        for index in indices:
            original = flat[index]
            flat[index] = original + h
            plus = float(loss_fn().data)
            flat[index] = original - h
            minus = float(loss_fn().data)
            flat[index] = original
            numeric = (plus - minus) / (2.0 * h)
            exact = float(analytic[name].reshape(-1)[index])
            abs_err = abs(exact - numeric)
            rel_err = abs_err / max(abs(exact), abs(numeric), floor)
            worst_rel = max(worst_rel, rel_err)
            worst_abs = max(worst_abs, abs_err)
        results[name] = GradCheckResult(name, worst_rel, worst_abs, len(indices))
        logger.debug(f"gradcheck {name}: rel={worst_rel:.2e} abs={worst_abs:.2e}")
    return results
