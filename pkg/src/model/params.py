"""Parameter containers

``Module`` keeps an ordered registry of named parameters and child modules,
so every network in the package exposes the same ``named_parameters`` /
``state_dict`` / ``load_state_dict`` surface and can be hashed, frozen and
checkpointed uniformly.
"""

import hashlib
import logging
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from ..autograd.tensor import Tensor, default_dtype
from ..errors import CheckpointError, ShapeError

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """Learnable leaf tensor"""

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True, name: Optional[str] = None):
        super().__init__(np.asarray(data, dtype=default_dtype()), requires_grad=requires_grad, name=name)


class Module:
    """Base class for everything that owns parameters"""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name: str, value) -> None:
        params: Dict[str, Parameter] = self.__dict__.get("_params")
        children: Dict[str, Module] = self.__dict__.get("_children")
        if params is None:
            raise AttributeError("Module.__init__ must run before attributes are assigned")
        params.pop(name, None)
        children.pop(name, None)
        if isinstance(value, Parameter):
            params[name] = value
        elif isinstance(value, Module):
            children[name] = value
        object.__setattr__(self, name, value)

    def __delattr__(self, name: str) -> None:
        self._params.pop(name, None)
        self._children.pop(name, None)
        object.__delattr__(self, name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._params.items():
            yield prefix + name, param
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(prefix + name + ".")

    def parameters(self) -> Dict[str, Parameter]:
        return dict(self.named_parameters())

    def trainable_parameters(self) -> Dict[str, Parameter]:
        return {name: p for name, p in self.named_parameters() if p.requires_grad}

    def num_parameters(self, trainable_only: bool = False) -> int:
        params = self.trainable_parameters() if trainable_only else self.parameters()
        return int(sum(p.size for p in params.values()))

    def freeze(self) -> "Module":
        for _, param in self.named_parameters():
            param.requires_grad = False
        return self

    def unfreeze(self) -> "Module":
        for _, param in self.named_parameters():
            param.requires_grad = True
        return self

    def zero_grad(self) -> None:
        for _, param in self.named_parameters():
            param.grad = None

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        """Copies of every parameter array, in registration order"""
        return {name: param.data.copy() for name, param in self.named_parameters(prefix)}

    def load_state_dict(
        self,
        state: Mapping[str, np.ndarray],
        prefix: str = "",
        strict: bool = True,
    ) -> List[str]:
        """Copy arrays into parameters whose ``prefix + name`` is present in ``state``

        Args:
            state: Name-to-array mapping (extra keys outside ``prefix`` are ignored)
            prefix: Name prefix under which this module's parameters are stored
            strict: Raise if any parameter of this module is missing from ``state``

        Returns:
            Names (without prefix) that were loaded
        """
        loaded: List[str] = []
        missing: List[str] = []
        for name, param in self.named_parameters():
            key = prefix + name
            if key not in state:
                missing.append(key)
                continue
            value = np.asarray(state[key])
            if value.shape != param.shape:
                raise ShapeError("load_state_dict", [param.shape, value.shape], key)
            param.data = value.astype(param.dtype, copy=True)
            loaded.append(name)
        if missing and strict:
            raise CheckpointError(f"missing parameters: {', '.join(missing[:5])}"
                                  + (" ..." if len(missing) > 5 else ""))
        logger.debug(f"Loaded {len(loaded)} parameters under prefix '{prefix}'")
        return loaded


class ModuleList(Module):
    """Indexable sequence of modules named ``0``, ``1``, ..."""

    def __init__(self, modules=()):
        super().__init__()
        object.__setattr__(self, "_items", [])
        for module in modules:
            self.append(module)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


def parameter_hash(params) -> str:
    """SHA-256 over sorted (name, shape, dtype, bytes) of a module or name->tensor map"""
    if isinstance(params, Module):
        items = params.named_parameters()
    else:
        items = params.items()
    digest = hashlib.sha256()
    for name, value in sorted(items, key=lambda kv: kv[0]):
        array = value.data if isinstance(value, Tensor) else np.asarray(value)
        digest.update(name.encode("utf-8"))
        digest.update(str(array.shape).encode("utf-8"))
        digest.update(array.dtype.str.encode("utf-8"))
        digest.update(np.ascontiguousarray(array).tobytes())
    return digest.hexdigest()


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to two standard deviations"""
    values = rng.standard_normal(shape)
    bad = np.abs(values) > 2.0
    while bad.any():
        values[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(values) > 2.0
    return (values * std).astype(default_dtype())


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(default_dtype())
