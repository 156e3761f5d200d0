"""Exception hierarchy shared by every prism-desk module"""

from typing import Iterable, Optional, Sequence


class PrismError(Exception):
    """Base class for all prism-desk failures"""


class ShapeError(PrismError, ValueError):
    """Raised when an op receives operands with incompatible shapes"""

    def __init__(self, op: str, shapes: Iterable[Sequence[int]], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        rendered = " x ".join(str(s) for s in self.shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class GraphError(PrismError, RuntimeError):
    """Raised on misuse of the compute graph (backward before forward, non-scalar loss)"""


class NonFiniteError(PrismError, FloatingPointError):
    """Raised when a NaN/inf shows up in a named value"""

    def __init__(self, name: str, where: str = ""):
        self.name = name
        message = f"non-finite value in {name}"
        if where:
            message += f" during {where}"
        super().__init__(message)


class TrainingDivergedError(PrismError, FloatingPointError):
    """Raised when a training loss becomes NaN/inf"""

    def __init__(self, step: int, corpus: Optional[str] = None, stage: str = "training"):
        self.step = step
        self.corpus = corpus
        message = f"{stage} diverged at step {step}"
        if corpus:
            message += f" on corpus '{corpus}'"
        super().__init__(message)


class ConfigError(PrismError, ValueError):
    """Raised for unreadable, cyclic or invalid configuration"""


class MaskError(PrismError, ValueError):
    """Raised for invalid or infeasible mask parameters"""


class CorpusError(PrismError, ValueError):
    """Raised for malformed corpus files"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(PrismError, IOError):
    """Raised when a checkpoint fails its version or hash check"""


class FrozenParametersError(PrismError, RuntimeError):
    """Raised when parameters that must stay fixed changed during training"""

    def __init__(self, what: str, stage: str):
        self.what = what
        super().__init__(f"{what} parameters changed during {stage}")
