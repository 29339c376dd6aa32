"""
Exception types for the patch codec.

Every error carries the process exit code the command-line front end
returns for it, so scripts only need a single ``except PatchQuiltError``.
"""

from typing import List, Optional, Tuple


class PatchQuiltError(Exception):
    """Base class for all expected failures."""

    exit_code = 1


class MeshFormatError(PatchQuiltError):
    """A mesh, quad mesh or ground-truth file could not be parsed."""

    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ConfigError(PatchQuiltError):
    exit_code = 2


class DictionaryFormatError(PatchQuiltError):
    """Dictionary, patch-set or encoded-shape file is truncated or invalid."""

    exit_code = 2


class GeometryError(PatchQuiltError):
    exit_code = 3


class NonManifoldError(GeometryError):
    def __init__(self, message: str, edges: List[Tuple[int, int]]):
        shown = ", ".join(f"({a}, {b})" for a, b in edges[:10])
        more = f" and {len(edges) - 10} more" if len(edges) > 10 else ""
        super().__init__(f"{message}: {shown}{more}")
        self.edges = edges


class QuadrangulationError(GeometryError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual={residual:.3g})")
        self.residual = residual


class ReconstructionError(GeometryError):
    def __init__(self, message: str, component: int):
        super().__init__(f"{message} (component {component})")
        self.component = component


class InsufficientDataError(GeometryError):
    """Not enough observed data to learn or reconstruct."""


class DictionaryMismatchError(PatchQuiltError):
    """Encoded shape was produced with a different dictionary."""

    exit_code = 4
