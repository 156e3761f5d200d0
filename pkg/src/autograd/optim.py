"""AdamW with decoupled weight decay"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from ..errors import NonFiniteError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """First/second moments per parameter name, plus step counter and hyperparameters"""
    base_lr: float = 1e-3
    weight_decay: float = 0.0
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip_norm: Optional[float] = None
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)
    no_decay: Tuple[str, ...] = ()

    def hyperparameters(self) -> Dict[str, object]:
        return {
            "base_lr": self.base_lr,
            "weight_decay": self.weight_decay,
            "betas": list(self.betas),
            "eps": self.eps,
            "grad_clip_norm": self.grad_clip_norm,
            "step": self.step,
            "no_decay": list(self.no_decay),
        }

    @classmethod
    def from_hyperparameters(cls, data: Dict[str, object]) -> "OptimizerState":
        return cls(
            base_lr=float(data["base_lr"]),
            weight_decay=float(data["weight_decay"]),
            betas=tuple(data["betas"]),
            eps=float(data["eps"]),
            grad_clip_norm=data.get("grad_clip_norm"),
            step=int(data["step"]),
            no_decay=tuple(data.get("no_decay", ())),
        )

    def arrays(self) -> Dict[str, np.ndarray]:
        """Moment buffers keyed for checkpoint storage"""
        out = {f"exp_avg/{name}": value for name, value in self.exp_avg.items()}
        out.update({f"exp_avg_sq/{name}": value for name, value in self.exp_avg_sq.items()})
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for key, value in arrays.items():
            kind, name = key.split("/", 1)
            target = self.exp_avg if kind == "exp_avg" else self.exp_avg_sq
            target[name] = value.copy()


def clip_grad_norm(params: Dict[str, Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``"""
    total = 0.0
    for tensor in params.values():
        if tensor.grad is not None:
            total += float((tensor.grad.astype(np.float64) ** 2).sum())
    norm = total ** 0.5
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for tensor in params.values():
            if tensor.grad is not None:
                tensor.grad = tensor.grad * tensor.grad.dtype.type(scale)
    return norm


def adamw_step(params: Dict[str, Tensor], state: OptimizerState, lr: float) -> OptimizerState:
    """Apply one AdamW update to every parameter that has a gradient

    Args:
        params: Named trainable parameters (``.grad`` populated by backward)
        state: Optimizer state, updated in place
        lr: Learning rate for this step

    Returns:
        The same state object, with ``step`` incremented
    """
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    for name, tensor in params.items():
        if tensor.grad is None:
            continue
        if tensor.grad.shape != tensor.shape:
            raise ShapeError("adamw_step", [tensor.shape, tensor.grad.shape], f"gradient of {name}")
        if not np.all(np.isfinite(tensor.grad)):
            raise NonFiniteError(f"gradient of {name}", "adamw_step")

    if state.grad_clip_norm:
        clip_grad_norm(params, state.grad_clip_norm)

    state.step += 1
    beta1, beta2 = state.betas
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step

    for name, tensor in params.items():
        grad = tensor.grad
        if grad is None:
            continue
        dtype = tensor.dtype.type
        m = state.exp_avg.get(name)
        v = state.exp_avg_sq.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = dtype(beta1) * m + dtype(1.0 - beta1) * grad
        v = dtype(beta2) * v + dtype(1.0 - beta2) * grad * grad
        state.exp_avg[name] = m
        state.exp_avg_sq[name] = v

        update = (m / dtype(bias1)) / (np.sqrt(v / dtype(bias2)) + dtype(state.eps))
        if state.weight_decay and name not in state.no_decay:
            update = update + dtype(state.weight_decay) * tensor.data
        tensor.data = tensor.data - dtype(lr) * update
    return state


def zero_grad(params: Iterable[Tensor]) -> None:
    for tensor in params:
        tensor.grad = None
