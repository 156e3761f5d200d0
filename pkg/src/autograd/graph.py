"""Explicit compute-graph handle around a forward function

Most training code calls ``loss.backward()`` directly. ``ComputeGraph`` exists
for callers that want named inputs in and a named gradient map out, and for
the forward/backward ordering contract.
"""

import logging
from typing import Callable, Dict, List, Optional

import numpy as np

from ..errors import GraphError
from .tensor import Tensor, run_backward, topological_order

logger = logging.getLogger(__name__)


class ComputeGraph:
    """Records one forward pass of ``fn`` and differentiates it

    Args:
        fn: Callable taking named tensors and returning a Tensor
    """

    def __init__(self, fn: Callable[..., Tensor]):
        self.fn = fn
        self.inputs: Dict[str, Tensor] = {}
        self.output: Optional[Tensor] = None
        self.nodes: List[Tensor] = []

    def forward(self, **inputs: Tensor) -> Tensor:
        self.inputs = dict(inputs)
        self.output = self.fn(**inputs)
        if not isinstance(self.output, Tensor):
            raise GraphError(f"forward function returned {type(self.output).__name__}, not Tensor")
        self.nodes = topological_order(self.output) if self.output.requires_grad else [self.output]
        logger.debug(f"Recorded graph with {len(self.nodes)} nodes")
        return self.output

    def backward(self, loss: Optional[Tensor] = None) -> Dict[str, np.ndarray]:
        """Differentiate the recorded output (or ``loss``) w.r.t. the named inputs

        Returns:
            Gradient per named input that requires grad
        """
        if self.output is None:
            raise GraphError("backward called before forward")
        target = self.output if loss is None else loss
        if target.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {target.shape}")
        leaf_grads = run_backward(target)
        return {
            name: leaf_grads.get(id(tensor), np.zeros_like(tensor.data))
            for name, tensor in self.inputs.items()
            if isinstance(tensor, Tensor) and tensor.requires_grad
        }


def forward(graph: ComputeGraph, inputs: Dict[str, Tensor]) -> Tensor:
    return graph.forward(**inputs)


def backward(graph: ComputeGraph, loss: Optional[Tensor] = None) -> Dict[str, np.ndarray]:
    return graph.backward(loss)
