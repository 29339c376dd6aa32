"""
Sparse coding and dictionary learning over vectorised patches.

OMP stops at k atoms or at the residual tolerance, whichever comes first;
ties between atoms go to the lowest index.
"""

import hashlib
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ConfigError, DictionaryFormatError, InsufficientDataError
from mesh_core import PathLike
from settings import parallel_map, progress

logger = logging.getLogger(__name__)

PDCT_MAGIC = b"PDCT"
PDCT_VERSION = 1
PROVENANCES = ("local", "global", "self-similar")
NORM_TOL = 1e-9
RESTRICTED_NORM_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Unit-norm atoms as the columns of an (N^2, p) matrix."""

    atoms: np.ndarray
    grid_resolution: int
    patch_radius: float
    provenance: str = "local"

    def __post_init__(self):
        A = np.array(self.atoms, dtype=np.float64, copy=True, order="F")
        if A.ndim != 2:
            raise DictionaryFormatError("atoms must form a 2-D matrix")
        if A.shape[0] != self.grid_resolution ** 2:
            raise DictionaryFormatError(f"atom length {A.shape[0]} does not match grid {self.grid_resolution}^2")
        if self.provenance not in PROVENANCES:
            raise DictionaryFormatError(f"unknown provenance '{self.provenance}'")
        if not np.all(np.isfinite(A)):
            raise DictionaryFormatError("dictionary has non-finite entries")
        norms = np.linalg.norm(A, axis=0)
        bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
        if len(bad):
            raise DictionaryFormatError(f"atom {int(bad[0])} has norm {norms[bad[0]]:.12g}, expected 1")
        A.setflags(write=False)
        object.__setattr__(self, "atoms", A)

    @property
    def signal_length(self) -> int:
        return self.atoms.shape[0]

    @property
    def atom_count(self) -> int:
        return self.atoms.shape[1]

    def _header(self) -> bytes:
        return struct.pack("<4sIIIIdB", PDCT_MAGIC, PDCT_VERSION, self.grid_resolution,
                           self.signal_length, self.atom_count, self.patch_radius,
                           PROVENANCES.index(self.provenance))

    def to_bytes(self) -> bytes:
        return self._header() + self.atoms.astype("<f8").tobytes(order="F")

    @property
    def hash(self) -> bytes:
        """SHA-256 of the serialized dictionary."""
        return hashlib.sha256(self.to_bytes()).digest()

    @property
    def hash_hex(self) -> str:
        return self.hash.hex()


@dataclass(frozen=True, eq=False)
class SparseCode:
    support: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        S = np.array(self.support, dtype=np.int64, copy=True).reshape(-1)
        C = np.array(self.coefficients, dtype=np.float64, copy=True).reshape(-1)
        if S.shape != C.shape:
            raise ValueError("support and coefficients differ in length")
        if len(np.unique(S)) != len(S):
            raise ValueError("support indices must be distinct")
        S.setflags(write=False)
        C.setflags(write=False)
        object.__setattr__(self, "support", S)
        object.__setattr__(self, "coefficients", C)

    def __len__(self) -> int:
        return len(self.support)

    @classmethod
    def empty(cls) -> "SparseCode":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))


@dataclass(frozen=True)
class LearnConfig:
    atom_count: int = 100
    sparsity: int = 20
    iterations: int = 30
    tolerance: float = 1e-4
    seed: int = 0
    residual_tol: float = 1e-9

    def __post_init__(self):
        if not self.atom_count >= self.sparsity >= 1:
            raise ConfigError(f"need atom_count >= sparsity >= 1, got p={self.atom_count}, k={self.sparsity}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")


Atoms = Union[Dictionary, np.ndarray]


def _matrix(D: Atoms) -> np.ndarray:
    return D.atoms if isinstance(D, Dictionary) else np.asarray(D, dtype=np.float64)


def _omp(x: np.ndarray, A: np.ndarray, k: int, tol: float) -> Tuple[List[int], np.ndarray, List[float]]:
    """Greedy OMP; returns support, coefficients and the residual norm after each step."""
    support: List[int] = []
    coef = np.zeros(0)
    r = x.copy()
    norm = float(np.linalg.norm(r))
    trace = [norm]
    floor = 1e-12 * max(norm, 1e-300)
    available = np.ones(A.shape[1], dtype=bool)
    while len(support) < min(k, A.shape[1]) and norm > tol:
        corr = np.abs(A.T @ r)
        corr[~available] = -1.0
        j = int(np.argmax(corr))
        if corr[j] <= floor:
            break
        support.append(j)
        available[j] = False
        coef = np.linalg.lstsq(A[:, support], x, rcond=None)[0]
        r = x - A[:, support] @ coef
        norm = float(np.linalg.norm(r))
        trace.append(norm)
    return support, coef, trace


def omp_encode(x: np.ndarray, D: Atoms, k: int, residual_tol: float = 1e-9,
               return_trace: bool = False):
    """
    Orthogonal matching pursuit with at most ``k`` atoms.

    Ties on correlation go to the lowest atom index.

    Examples:
        >>> import numpy as np
        >>> code = omp_encode(3.0 * np.eye(4)[:, 2], np.eye(4), k=1)
        >>> code.support.tolist(), round(float(code.coefficients[0]), 12)
        ([2], 3.0)
    """
    A = _matrix(D)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != A.shape[0]:
        raise ValueError(f"signal length {x.shape[0]} does not match atom length {A.shape[0]}")
    support, coef, trace = _omp(x, A, k, residual_tol)
    code = SparseCode(np.asarray(support, dtype=np.int64), coef)
    return (code, trace) if return_trace else code


def masked_omp_encode(x: np.ndarray, mask: np.ndarray, D: Atoms, k: int,
                      residual_tol: float = 1e-9) -> SparseCode:
    """
    OMP on the observed rows only; the code reconstructs the full signal as D y.

    Atoms whose restricted norm is below 1e-8 cannot be selected.
    """
    A = _matrix(D)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape != x.shape:
        raise ValueError("mask and signal differ in length")
    if not mask.any():
        raise InsufficientDataError("cannot encode a signal with no observed entries")
    if mask.all():
        return omp_encode(x, A, k, residual_tol)
    restricted = A[mask]
    norms = np.linalg.norm(restricted, axis=0)
    usable = np.flatnonzero(norms >= RESTRICTED_NORM_EPS)
    if not len(usable):
        return SparseCode.empty()
    support, coef, _ = _omp(x[mask], restricted[:, usable] / norms[usable], k, residual_tol)
    chosen = usable[support]
    return SparseCode(chosen, coef / norms[chosen])


def reconstruct_signal(D: Atoms, code: SparseCode) -> np.ndarray:
    A = _matrix(D)
    if not len(code):
        return np.zeros(A.shape[0])
    return A[:, code.support] @ code.coefficients


def encode_batch(X: np.ndarray, masks: Optional[np.ndarray], D: Atoms, k: int, residual_tol: float = 1e-9,
                 threads: Optional[int] = None, show_progress: bool = False) -> List[SparseCode]:
    """Encode columns of X; fully observed columns use plain OMP."""
    A = _matrix(D)
    X = np.asarray(X, dtype=np.float64)

    def encode(i: int) -> SparseCode:
        if masks is None or masks[:, i].all():
            return omp_encode(X[:, i], A, k, residual_tol)
        return masked_omp_encode(X[:, i], masks[:, i], A, k, residual_tol)

    columns = list(progress(range(X.shape[1]), enabled=show_progress, desc="sparse coding"))
    return parallel_map(encode, columns, threads)


def _code_matrix(codes: Sequence[SparseCode], p: int) -> np.ndarray:
    Y = np.zeros((p, len(codes)))
    for i, code in enumerate(codes):
        Y[code.support, i] = code.coefficients
    return Y


def sparse_objective(X: np.ndarray, D: Atoms, codes: Sequence[SparseCode]) -> float:
    """Sum over signals of half the squared representation error."""
    A = _matrix(D)
    R = np.asarray(X, dtype=np.float64) - A @ _code_matrix(codes, A.shape[1])
    return 0.5 * float(np.sum(R * R))


def _grid_side(m: int) -> int:
    n = math.isqrt(m)
    if n * n != m:
        raise ValueError(f"signal length {m} is not a square grid")
    return n


def ksvd_learn(X: np.ndarray, config: LearnConfig, patch_radius: float = 1.0, provenance: str = "local",
               threads: Optional[int] = None, show_progress: bool = True) -> Tuple[Dictionary, List[float]]:
    """
    Learn a dictionary with KSVD.

    Each iteration sparse-codes every training column (a new code replaces
    the previous one only if it is no worse), then refits every atom and
    its coefficients by a rank-1 SVD of the residual restricted to the
    signals using it. Unused atoms are replaced by the worst represented
    training signal.

    Args:
        X: Fully observed training signals as columns (m x n).
        config: Atom count, sparsity, iteration cap, early-stop tolerance, seed.
        patch_radius: Recorded in the dictionary metadata.
        provenance: local, global or self-similar.

    Returns:
        (dictionary, objective after each iteration)
    """
    X = np.asarray(X, dtype=np.float64)
    m, n = X.shape
    p, k = config.atom_count, config.sparsity
    if n < p:
        raise InsufficientDataError(f"need at least {p} training signals, got {n}")
    if not np.any(X):
        logger.warning("all training signals are zero; atoms stay at their random start")
    grid = _grid_side(m)

    rng = np.random.default_rng(config.seed)
    D = X[:, rng.choice(n, size=p, replace=False)].copy()
    norms = np.linalg.norm(D, axis=0)
    dead = norms <= 1e-12
    if dead.any():
        D[:, dead] = rng.standard_normal((m, int(dead.sum())))
        norms[dead] = np.linalg.norm(D[:, dead], axis=0)
    D /= norms

    Y = np.zeros((p, n))
    R = X.copy()
    trace: List[float] = []
    for it in progress(range(config.iterations), enabled=show_progress, desc="ksvd"):
        previous_err = np.einsum("ij,ij->j", R, R)
        codes = parallel_map(lambda i: _omp(X[:, i], D, k, config.residual_tol)[:2], list(range(n)), threads)
        Y_new = np.zeros((p, n))
        for i, (support, coef) in enumerate(codes):
            Y_new[support, i] = coef
        R_new = X - D @ Y_new
        better = np.einsum("ij,ij->j", R_new, R_new) <= previous_err
        Y[:, better] = Y_new[:, better]
        R[:, better] = R_new[:, better]

        replaced = set()
        for j in range(p):
            users = np.flatnonzero(Y[j])
            if not len(users):
                err = np.einsum("ij,ij->j", R, R)
                err[list(replaced)] = -1.0
                worst = int(np.argmax(err))
                if err[worst] > 0:
                    D[:, j] = X[:, worst] / np.linalg.norm(X[:, worst])
                    replaced.add(worst)
                continue
            E = R[:, users] + np.outer(D[:, j], Y[j, users])
            U, s, Vt = np.linalg.svd(E, full_matrices=False)
            D[:, j] = U[:, 0]
            Y[j, users] = s[0] * Vt[0]
            R[:, users] = E - np.outer(D[:, j], Y[j, users])

        objective = 0.5 * float(np.sum(R * R))
        trace.append(objective)
        logger.info("ksvd iteration %d: objective %.6g", it + 1, objective)
        if objective <= 0.0:
            break
        if len(trace) > 1 and (trace[-2] - objective) < config.tolerance * trace[-2]:
            break

    D /= np.linalg.norm(D, axis=0)
    return Dictionary(D, grid, patch_radius, provenance), trace


# ---- PDCT files --------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIdB")


def dict_save(D: Dictionary, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(D.to_bytes())


def dict_load(path: PathLike) -> Dictionary:
    """Read a PDCT file and re-validate atom norms."""
    path = Path(path)
    if not path.exists():
        raise DictionaryFormatError(f"dictionary file not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise DictionaryFormatError(f"{path}: truncated dictionary header")
    magic, version, n, m, p, radius, provenance = _HEADER.unpack_from(data)
    if magic != PDCT_MAGIC:
        raise DictionaryFormatError(f"{path}: not a dictionary file")
    if version != PDCT_VERSION:
        raise DictionaryFormatError(f"{path}: unsupported dictionary version {version}")
    if provenance >= len(PROVENANCES):
        raise DictionaryFormatError(f"{path}: unknown provenance code {provenance}")
    if len(data) != _HEADER.size + 8 * m * p:
        raise DictionaryFormatError(f"{path}: expected {m * p} atom entries")
    atoms = np.frombuffer(data, "<f8", m * p, _HEADER.size).reshape((m, p), order="F")
    try:
        return Dictionary(atoms, n, radius, PROVENANCES[provenance])
    except DictionaryFormatError as e:
        raise DictionaryFormatError(f"{path}: {e}") from None
