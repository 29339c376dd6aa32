"""
Run configuration for the patch pipeline.

Defaults can be overridden through ``PATCHQUILT_*`` environment variables,
a flat ``key = value`` config file, and command-line flags, in increasing
order of precedence.
"""

import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, TypeVar, Union

from tqdm import tqdm

from errors import ConfigError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# Environment overrides, read once at import
QUAD_LENGTH = float(os.getenv("PATCHQUILT_QUAD_LENGTH", "0.03"))
GRID_RESOLUTION = int(os.getenv("PATCHQUILT_GRID_RESOLUTION", "16"))
OVERLAP_LEVEL = int(os.getenv("PATCHQUILT_OVERLAP_LEVEL", "1"))
SPARSITY = int(os.getenv("PATCHQUILT_SPARSITY", "20"))
ATOM_COUNT = int(os.getenv("PATCHQUILT_ATOM_COUNT", "100"))
SMOOTHING_ITERATIONS = int(os.getenv("PATCHQUILT_SMOOTHING_ITERATIONS", "30"))
TARGET_VERTICES = int(os.getenv("PATCHQUILT_TARGET_VERTICES", "40000"))
SEED = int(os.getenv("PATCHQUILT_SEED", "0"))
THREADS = os.getenv("PATCHQUILT_THREADS")

# radius = quad_length / sqrt(2) * (0.062 / 0.06)
AUTO_RADIUS_FACTOR = 0.73


@dataclass(frozen=True)
class RunConfig:
    quad_length: float = QUAD_LENGTH
    grid_resolution: int = GRID_RESOLUTION
    patch_radius: Union[float, str] = "auto"
    overlap_level: int = OVERLAP_LEVEL
    sparsity: int = SPARSITY
    atom_count: int = ATOM_COUNT
    smoothing_iterations: int = SMOOTHING_ITERATIONS
    ksvd_iterations: int = 30
    ksvd_tolerance: float = 1e-4
    residual_tol: float = 1e-9
    points_per_bin: float = 8.0
    min_observed_fraction: float = 0.25
    subdivision_level: Union[int, str] = "auto"
    target_vertices: int = TARGET_VERTICES
    field_iterations: int = 100
    seed: int = SEED
    threads: Optional[int] = int(THREADS) if THREADS else None
    keep_observed_vertices: bool = False
    progress: bool = True

    def __post_init__(self):
        if not self.quad_length > 0:
            raise ConfigError(f"quad_length must be positive, got {self.quad_length}")
        if self.grid_resolution < 2:
            raise ConfigError(f"grid_resolution must be >= 2, got {self.grid_resolution}")
        if self.patch_radius != "auto" and not float(self.patch_radius) > 0:
            raise ConfigError(f"patch_radius must be positive or 'auto', got {self.patch_radius}")
        if self.overlap_level < 0:
            raise ConfigError("overlap_level must be >= 0")
        if self.sparsity < 1 or self.atom_count < self.sparsity:
            raise ConfigError(
                f"need atom_count >= sparsity >= 1, got atom_count={self.atom_count}, sparsity={self.sparsity}"
            )
        if self.ksvd_iterations < 1:
            raise ConfigError("ksvd_iterations must be >= 1")
        if self.smoothing_iterations < 0:
            raise ConfigError("smoothing_iterations must be >= 0")
        if not 0.0 <= self.min_observed_fraction <= 1.0:
            raise ConfigError("min_observed_fraction must lie in [0, 1]")
        if self.subdivision_level != "auto" and int(self.subdivision_level) < 0:
            raise ConfigError("subdivision_level must be >= 0 or 'auto'")
        if self.points_per_bin <= 0:
            raise ConfigError("points_per_bin must be positive")
        if self.target_vertices < 4:
            raise ConfigError("target_vertices must be >= 4")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def resolved_patch_radius(self) -> float:
        if self.patch_radius == "auto":
            return self.quad_length * AUTO_RADIUS_FACTOR
        return float(self.patch_radius)

    def resolved_subdivision_level(self) -> int:
        """Level whose sub-quads give roughly one donor vertex per bin pair.

        Examples:
            >>> RunConfig(grid_resolution=16).resolved_subdivision_level()
            3
        """
        if self.subdivision_level != "auto":
            return int(self.subdivision_level)
        n = self.grid_resolution
        return max(0, math.ceil(math.log(n * n / 4.0, 4) - 1e-12))

    def sample_density(self) -> float:
        """Surface sampling density (points per unit area) giving ``points_per_bin`` per bin."""
        side = math.sqrt(2.0) * self.resolved_patch_radius()
        bin_area = (side / self.grid_resolution) ** 2
        return self.points_per_bin / bin_area

    def patch_params(self):
        from patch_codec import PatchParams

        return PatchParams(
            patch_radius=self.resolved_patch_radius(),
            grid_resolution=self.grid_resolution,
            overlap_level=self.overlap_level,
        )

    def learn_config(self):
        from sparse_dict import LearnConfig

        return LearnConfig(
            atom_count=self.atom_count,
            sparsity=self.sparsity,
            iterations=self.ksvd_iterations,
            tolerance=self.ksvd_tolerance,
            seed=self.seed,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _coerce(name: str, raw: str) -> Any:
    kinds = {f.name: f.type for f in fields(RunConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key '{name}'")
    value = raw.strip()
    if name in ("patch_radius", "subdivision_level") and value.lower() == "auto":
        return "auto"
    if name in ("keep_observed_vertices", "progress"):
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got '{raw}'")
    if name == "threads" and value.lower() in ("", "none", "auto"):
        return None
    try:
        if name in ("quad_length", "patch_radius", "ksvd_tolerance", "residual_tol",
                    "points_per_bin", "min_observed_fraction"):
            return float(value)
        return int(value)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse '{raw}'") from None


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a flat ``key = value`` configuration file.

    Args:
        path: Config file path. ``#`` starts a comment.

    Returns:
        Mapping of RunConfig field names to coerced values.
    """
    values: Dict[str, Any] = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = text.split("=", 1)
        key = key.strip().replace("-", "_")
        try:
            values[key] = _coerce(key, raw)
        except ConfigError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from None
    return values


def build_config(file_values: Optional[Dict[str, Any]] = None,
                 cli_overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Merge config layers: CLI flag > config file > environment > default."""
    merged: Dict[str, Any] = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (cli_overrides or {}).items() if v is not None})
    unknown = set(merged) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged)


def worker_count(threads: Optional[int] = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: Optional[int] = None) -> List[R]:
    """Ordered map over a thread pool; ``threads=1`` runs inline."""
    workers = worker_count(threads)
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def progress(iterable: Iterable[T], enabled: bool = True, **kwargs) -> Iterable[T]:
    """tqdm progress bar on stderr, silent when disabled or not on a terminal."""
    disable = not enabled or not sys.stderr.isatty()
    return tqdm(iterable, disable=disable, file=sys.stderr, leave=False, **kwargs)


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else (logging.WARNING if quiet else logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[%(levelname)s] %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)
