"""
Evaluation studies: error tables swept over one study variable.

Every study returns a DataFrame (one row per configuration) and, when an
output path is given, writes it as CSV.
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from errors import InsufficientDataError
from fixtures import bumpy_noise
from mesh_core import Mesh
from mesh_metrics import global_reconstruction_error, psnr, punch_holes
from pipeline import (
    ShapeAnalysis,
    analyze_shape,
    clean_signals,
    decode_shape,
    denoise,
    encode_analysis,
    evaluate_hole_fill,
    fill_holes,
    laplacian_denoise_baseline,
)
from settings import RunConfig, parallel_map
from sparse_dict import Dictionary, ksvd_learn
from utils_io import write_report_csv

logger = logging.getLogger(__name__)

STUDIES = ("atoms-curve", "local-vs-global", "dataset-size", "holesize-curve", "holefill-scopes", "denoise")
DEFAULT_ATOMS = (5, 10, 25, 50, 100)
DEFAULT_RATIOS = (0.3, 0.5, 0.8)


def _learn(X: np.ndarray, atoms: int, config: RunConfig, scope: str) -> Dictionary:
    """KSVD with the atom count capped at the number of clean signals."""
    used = min(atoms, X.shape[1])
    if used < 1:
        raise InsufficientDataError("no fully observed patches to learn from")
    if used < atoms:
        logger.warning("only %d clean patches, learning %d atoms instead of %d", X.shape[1], used, atoms)
    cfg = replace(config, atom_count=used, sparsity=min(config.sparsity, used))
    D, _ = ksvd_learn(X, cfg.learn_config(), patch_radius=cfg.resolved_patch_radius(), provenance=scope,
                      threads=cfg.threads, show_progress=cfg.progress)
    return D


def _roundtrip(mesh: Mesh, analysis: ShapeAnalysis, D: Dictionary, config: RunConfig) -> Dict[str, float]:
    cfg = replace(config, sparsity=min(config.sparsity, D.atom_count))
    enc = encode_analysis(analysis, D, cfg)
    decoded = decode_shape(enc, D, threads=cfg.threads)
    return {"error": global_reconstruction_error(decoded, mesh), "psnr_db": psnr(decoded, mesh)}


def _analyses(corpus: Dict[str, Mesh], config: RunConfig) -> Dict[str, ShapeAnalysis]:
    names = list(corpus)
    results = parallel_map(lambda name: analyze_shape(corpus[name], config, for_encoding=True), names, config.threads)
    return dict(zip(names, results))


def atoms_curve(corpus: Dict[str, Mesh], config: RunConfig, atoms: Sequence[int] = DEFAULT_ATOMS) -> pd.DataFrame:
    """Decode error of local dictionaries as the atom count grows."""
    rows = []
    for name, analysis in _analyses(corpus, config).items():
        X = clean_signals([analysis.patches])
        for p in atoms:
            D = _learn(X, p, config, "local")
            rows.append({"mesh": name, "atoms": p, "atoms_used": D.atom_count,
                         **_roundtrip(corpus[name], analysis, D, config)})
            logger.info("atoms-curve %s p=%d error=%.4g", name, p, rows[-1]["error"])
    return pd.DataFrame(rows)


def local_vs_global(corpus: Dict[str, Mesh], config: RunConfig, atoms: Optional[int] = None) -> pd.DataFrame:
    """Each shape decoded with its own dictionary and with one learned on the whole corpus."""
    if len(corpus) < 2:
        raise ValueError("local-vs-global needs at least two meshes")
    p = atoms or config.atom_count
    analyses = _analyses(corpus, config)
    D_global = _learn(clean_signals([a.patches for a in analyses.values()]), p, config, "global")
    rows = []
    for name, analysis in analyses.items():
        D_local = _learn(clean_signals([analysis.patches]), p, config, "local")
        for scope, D in (("local", D_local), ("global", D_global)):
            rows.append({"mesh": name, "scope": scope, "atoms_used": D.atom_count,
                         **_roundtrip(corpus[name], analysis, D, config)})
    return pd.DataFrame(rows)


def dataset_size(corpus: Dict[str, Mesh], config: RunConfig, atoms: Optional[int] = None) -> pd.DataFrame:
    """Mean decode error over the first s shapes with a dictionary learned on those s shapes."""
    p = atoms or config.atom_count
    analyses = _analyses(corpus, config)
    names = list(analyses)
    rows = []
    for s in range(1, len(names) + 1):
        subset = names[:s]
        D = _learn(clean_signals([analyses[n].patches for n in subset]), p, config, "global" if s > 1 else "local")
        errors = [_roundtrip(corpus[n], analyses[n], D, config)["error"] for n in subset]
        rows.append({"shapes": s, "atoms_used": D.atom_count, "error": float(np.mean(errors))})
    return pd.DataFrame(rows)


def _damage(mesh: Mesh, ratio: float, config: RunConfig) -> Mesh:
    side = config.patch_params().grid_length
    damaged, _ = punch_holes(mesh, ratio * side, spacing=4.0 * side, seed=config.seed, patch_length=side)
    return damaged


def holesize_curve(corpus: Dict[str, Mesh], config: RunConfig, ratios: Sequence[float] = DEFAULT_RATIOS,
                   atoms: Optional[int] = None) -> pd.DataFrame:
    """Hole-fill error of the dictionary and of the triangulation baseline vs hole-to-patch size ratio."""
    name, mesh = next(iter(corpus.items()))
    p = atoms or config.atom_count
    D = _learn(clean_signals([analyze_shape(mesh, config).patches]), p, config, "local")
    rows = []
    for ratio in ratios:
        result = fill_holes(_damage(mesh, ratio, config), D, config)
        report = evaluate_hole_fill(result, mesh)
        rows.append({"mesh": name, "hole_ratio": ratio, "error": report.mean_distance,
                     "baseline_error": report.extra["baseline_mean_distance"],
                     "baseline_ratio": report.extra["baseline_ratio"], "holes": report.extra["holes"]})
    return pd.DataFrame(rows)


def holefill_scopes(corpus: Dict[str, Mesh], config: RunConfig, ratio: float = 0.5,
                    atoms: Optional[int] = None) -> pd.DataFrame:
    """Same damaged shape filled with local, global and self-similar dictionaries."""
    name, mesh = next(iter(corpus.items()))
    p = atoms or config.atom_count
    damaged = _damage(mesh, ratio, config)
    analyses = _analyses(corpus, config)
    dictionaries = {
        "local": _learn(clean_signals([analyses[name].patches]), p, config, "local"),
        "global": _learn(clean_signals([a.patches for a in analyses.values()]), p, config, "global"),
        "self-similar": _learn(clean_signals([analyze_shape(damaged, config).patches]), p, config, "self-similar"),
    }
    rows = []
    for scope, D in dictionaries.items():
        report = evaluate_hole_fill(fill_holes(damaged, D, config), mesh)
        rows.append({"mesh": name, "scope": scope, "atoms_used": D.atom_count, "error": report.mean_distance,
                     "baseline_error": report.extra["baseline_mean_distance"]})
    return pd.DataFrame(rows)


def denoise_study(corpus: Dict[str, Mesh], config: RunConfig, sigma: float = 0.005,
                  atoms: Optional[int] = None) -> pd.DataFrame:
    """Error to the clean shape of the noisy input, the dictionary output and Laplacian smoothing."""
    name, mesh = next(iter(corpus.items()))
    p = atoms or config.atom_count
    D = _learn(clean_signals([analyze_shape(mesh, config).patches]), p, config, "local")
    noisy = bumpy_noise(mesh, sigma, seed=config.seed)
    outputs = {
        "noisy": noisy,
        "dictionary": denoise(noisy, D, config),
        "laplacian": laplacian_denoise_baseline(noisy),
    }
    return pd.DataFrame([{"mesh": name, "method": method, "sigma": sigma,
                          "error": global_reconstruction_error(out, mesh)} for method, out in outputs.items()])


def run_study(study: str, corpus: Dict[str, Mesh], config: RunConfig,
              out_csv: Optional[Union[str, Path]] = None, **options) -> pd.DataFrame:
    """
    Run one study and optionally write its table.

    Args:
        study: One of ``STUDIES``.
        corpus: Named meshes; single-shape studies use the first entry.
        config: Run configuration.
        out_csv: Optional CSV output path.
        **options: ``atoms`` (list for atoms-curve, int otherwise),
            ``ratios``, ``ratio`` or ``sigma`` for the studies that take them.

    Returns:
        Study table with a leading ``study`` column.
    """
    if not corpus:
        raise ValueError("study corpus is empty")
    runners = {
        "atoms-curve": atoms_curve,
        "local-vs-global": local_vs_global,
        "dataset-size": dataset_size,
        "holesize-curve": holesize_curve,
        "holefill-scopes": holefill_scopes,
        "denoise": denoise_study,
    }
    if study not in runners:
        raise ValueError(f"unknown study '{study}', expected one of {STUDIES}")
    table = runners[study](corpus, config, **options)
    table.insert(0, "study", study)
    if out_csv is not None:
        write_report_csv(table, out_csv)
        logger.info("wrote %s (%d rows)", out_csv, len(table))
    return table
