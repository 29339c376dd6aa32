"""
Command-line front end for the patch dictionary codec.

Every subcommand writes its artifacts to the given paths and prints a
short summary (or JSON with --json) on stdout; logs go to stderr.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))

from errors import PatchQuiltError  # noqa: E402
from fixtures import FIXTURES, build_fixture, synthetic_corpus  # noqa: E402
from mesh_core import (  # noqa: E402
    NormalizationRecord,
    invert_normalization,
    load_mesh,
    normalize_unit_cube,
    resample_to_resolution,
    save_mesh,
)
from mesh_metrics import global_reconstruction_error, mark_missing_vertices, punch_holes  # noqa: E402
from pipeline import (  # noqa: E402
    SCOPES,
    compression_stats,
    decode_shape,
    denoise,
    encode_shape,
    evaluate_hole_fill,
    fill_holes,
    laplacian_denoise_baseline,
    learn_dictionary,
    load_encoded_shape,
    recover_missing_vertices,
    save_encoded_shape,
)
from settings import RunConfig, build_config, configure_logging, load_config_file  # noqa: E402
from sparse_dict import dict_load, dict_save  # noqa: E402
from studies import STUDIES, run_study  # noqa: E402
from utils_io import atoms_figure, study_figure, to_excel_bytes  # noqa: E402

logger = logging.getLogger("patchquilt")

# global flag -> RunConfig field
CONFIG_FLAGS = {
    "quad_length": float,
    "grid_resolution": int,
    "patch_radius": str,
    "overlap_level": int,
    "sparsity": int,
    "atom_count": int,
    "smoothing_iterations": int,
    "ksvd_iterations": int,
    "subdivision_level": str,
    "min_observed_fraction": float,
}


def _emit(result: Dict[str, Any], as_json: bool) -> None:
    if as_json:
        print(json.dumps(result, sort_keys=True, default=str))
        return
    for key, value in result.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"{key}: {value}")


def _config(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    overrides: Dict[str, Any] = {name: getattr(args, name) for name in CONFIG_FLAGS}
    for name in ("patch_radius", "subdivision_level"):
        value = overrides[name]
        if value is not None and value != "auto":
            overrides[name] = float(value) if name == "patch_radius" else int(value)
    overrides["seed"] = args.seed
    overrides["threads"] = args.threads
    if args.no_progress:
        overrides["progress"] = False
    if args.keep_observed:
        overrides["keep_observed_vertices"] = True
    return build_config(file_values, overrides)


# ---- subcommands --------------------------------------------------------

def cmd_normalize(args, config: RunConfig) -> Dict[str, Any]:
    mesh = load_mesh(args.input)
    if args.denormalize:
        record = NormalizationRecord.load(args.denormalize)
        restored = invert_normalization(mesh, record)
        save_mesh(restored, args.output)
        return {"output": args.output, "vertices": restored.n_vertices}
    normalized, record = normalize_unit_cube(mesh)
    target = args.target_vertices or config.target_vertices
    normalized = resample_to_resolution(normalized, target, show_progress=config.progress)
    save_mesh(normalized, args.output)
    sidecar = args.record or str(Path(args.output).with_suffix(".norm.json"))
    record.save(sidecar)
    return {"output": args.output, "record": sidecar, "vertices": normalized.n_vertices,
            "faces": normalized.n_faces, "scale": record.scale}


def cmd_learn(args, config: RunConfig) -> Dict[str, Any]:
    meshes = [load_mesh(p) for p in args.inputs]
    D, trace = learn_dictionary(meshes, args.scope, config, return_trace=True)
    dict_save(D, args.out)
    result = {"output": args.out, "scope": D.provenance, "atoms": D.atom_count,
              "grid_resolution": D.grid_resolution, "patch_radius": D.patch_radius,
              "iterations": len(trace), "objective": trace[-1], "hash": D.hash_hex}
    if args.preview:
        atoms_figure(D).write_html(args.preview)
        result["preview"] = args.preview
    return result


def cmd_encode(args, config: RunConfig) -> Dict[str, Any]:
    mesh = load_mesh(args.input)
    D = dict_load(args.dict)
    enc = encode_shape(mesh, D, config)
    save_encoded_shape(enc, args.out)
    return {"output": args.out, "quads": enc.quad_mesh.n_quads, "patches": len(enc.codes),
            "dictionary": D.hash_hex}


def cmd_decode(args, config: RunConfig) -> Dict[str, Any]:
    enc = load_encoded_shape(args.input)
    D = dict_load(args.dict)
    mesh = decode_shape(enc, D, threads=config.threads)
    save_mesh(mesh, args.out)
    return {"output": args.out, "vertices": mesh.n_vertices, "faces": mesh.n_faces}


def cmd_fill(args, config: RunConfig) -> Dict[str, Any]:
    mesh = load_mesh(args.input)
    D = dict_load(args.dict)
    result = fill_holes(mesh, D, config, exclude_border=args.keep_border)
    save_mesh(result.mesh, args.out)
    row: Dict[str, Any] = {"output": args.out, "holes": len(result.holes),
                           "inserted_vertices": len(result.inserted)}
    if args.baseline_out:
        save_mesh(result.baseline, args.baseline_out)
        row["baseline_output"] = args.baseline_out
    if args.truth and len(result.new_faces):
        report = evaluate_hole_fill(result, load_mesh(args.truth))
        row.update(report.to_dict())
    return row


def cmd_recover(args, config: RunConfig) -> Dict[str, Any]:
    mesh = load_mesh(args.input)
    D = dict_load(args.dict)
    truth = load_mesh(args.truth).vertices if args.truth else None
    result = recover_missing_vertices(mesh, D, config, truth=truth)
    save_mesh(result.mesh, args.out)
    return {"output": args.out, "missing": len(result.missing), "rmse": result.rmse}


def cmd_denoise(args, config: RunConfig) -> Dict[str, Any]:
    noisy = load_mesh(args.input)
    D = dict_load(args.dict)
    out = denoise(noisy, D, config)
    save_mesh(out, args.out)
    row: Dict[str, Any] = {"output": args.out, "vertices": out.n_vertices}
    if args.clean:
        clean = load_mesh(args.clean)
        row["input_error"] = global_reconstruction_error(noisy, clean)
        row["error"] = global_reconstruction_error(out, clean)
        row["laplacian_error"] = global_reconstruction_error(laplacian_denoise_baseline(noisy), clean)
    return row


def cmd_study(args, config: RunConfig) -> Dict[str, Any]:
    if args.corpus:
        corpus = {Path(p).stem: load_mesh(p) for p in args.corpus}
    else:
        corpus = synthetic_corpus()
    options: Dict[str, Any] = {}
    if args.atoms:
        options["atoms"] = args.atoms if args.study == "atoms-curve" else args.atoms[0]
    if args.ratios:
        if args.study == "holefill-scopes":
            options["ratio"] = args.ratios[0]
        elif args.study == "holesize-curve":
            options["ratios"] = args.ratios
    if args.sigma is not None and args.study == "denoise":
        options["sigma"] = args.sigma
    table = run_study(args.study, corpus, config, out_csv=args.out, **options)
    result: Dict[str, Any] = {"study": args.study, "output": args.out, "rows": len(table)}
    if args.xlsx:
        Path(args.xlsx).write_bytes(to_excel_bytes({args.study: table}))
        result["xlsx"] = args.xlsx
    if args.plot:
        study_figure(table, args.study).write_html(args.plot)
        result["plot"] = args.plot
    if args.json:
        result["table"] = table.to_dict(orient="records")
    return result


def cmd_stats(args, config: RunConfig) -> Dict[str, Any]:
    mesh = load_mesh(args.input)
    D = dict_load(args.dict)
    enc = load_encoded_shape(args.encoded) if args.encoded else encode_shape(mesh, D, config)
    decoded = decode_shape(enc, D, threads=config.threads)
    return compression_stats(mesh, enc, decoded).to_dict()


def cmd_punch(args, config: RunConfig) -> Dict[str, Any]:
    mesh = load_mesh(args.input)
    if args.missing is not None:
        damaged = mark_missing_vertices(mesh, args.missing, seed=config.seed)
        save_mesh(damaged, args.out)
        return {"output": args.out, "missing": int((~damaged.valid).sum())}
    if args.diameter is None:
        raise ValueError("punch needs --diameter or --missing")
    side = config.patch_params().grid_length
    spacing = args.spacing or 4.0 * side
    damaged, truth = punch_holes(mesh, args.diameter, spacing, seed=config.seed, patch_length=side)
    save_mesh(damaged, args.out)
    row: Dict[str, Any] = {"output": args.out, "holes": len(truth.centers), "removed": len(truth.indices)}
    if args.truth_out:
        truth.save(args.truth_out)
        row["truth"] = args.truth_out
    return row


def cmd_fixture(args, config: RunConfig) -> Dict[str, Any]:
    mesh = build_fixture(args.name)
    save_mesh(mesh, args.out)
    return {"output": args.out, "vertices": mesh.n_vertices, "faces": mesh.n_faces}


# ---- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchquilt", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--no-progress", action="store_true")
    parser.add_argument("--keep-observed", action="store_true",
                        help="pin observed vertices to their input positions in recover and fill")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    for name, kind in CONFIG_FLAGS.items():
        parser.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalize", help="fit into the unit cube and resample")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--target-vertices", type=int)
    p.add_argument("--record", help="normalization sidecar path (default OUTPUT.norm.json)")
    p.add_argument("--denormalize", metavar="RECORD", help="undo a previous normalization instead")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("learn", help="learn a patch dictionary")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--scope", choices=SCOPES, default="local")
    p.add_argument("--out", required=True)
    p.add_argument("--preview", help="write an HTML preview of the atoms")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("encode", help="compress a mesh to sparse codes")
    p.add_argument("input")
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="rebuild a mesh from sparse codes")
    p.add_argument("input")
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("fill", help="fill holes")
    p.add_argument("input")
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="undamaged mesh for the error report")
    p.add_argument("--baseline-out", help="also write the triangulation-only result")
    p.add_argument("--keep-border", action="store_true", help="leave the outer border of an open sheet open")
    p.set_defaults(func=cmd_fill)

    p = sub.add_parser("recover", help="recover vertices flagged invalid")
    p.add_argument("input")
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="mesh with the true vertex positions for the RMSE")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("denoise", help="denoise with a clean dictionary")
    p.add_argument("input")
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clean", help="clean mesh for the error report")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("study", help="run an evaluation study")
    p.add_argument("study", choices=STUDIES)
    p.add_argument("--corpus", nargs="*", help="meshes (default: built-in synthetic corpus)")
    p.add_argument("--out", required=True, help="CSV report")
    p.add_argument("--atoms", type=int, nargs="*")
    p.add_argument("--ratios", type=float, nargs="*")
    p.add_argument("--sigma", type=float)
    p.add_argument("--xlsx", help="also write an Excel workbook")
    p.add_argument("--plot", help="also write an HTML chart")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("stats", help="compression statistics")
    p.add_argument("input")
    p.add_argument("--dict", required=True)
    p.add_argument("--encoded", help="existing encoded shape (default: encode now)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("punch", help="damage a mesh with holes or missing vertices")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--diameter", type=float)
    p.add_argument("--spacing", type=float)
    p.add_argument("--missing", type=float, help="fraction of vertices to flag invalid")
    p.add_argument("--truth-out", help="write removed vertices as 'index x y z'")
    p.set_defaults(func=cmd_punch)

    p = sub.add_parser("fixture", help="write a synthetic mesh")
    p.add_argument("name", choices=sorted(FIXTURES))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    configure_logging(verbose=args.verbose, quiet=args.quiet)
    try:
        config = _config(args)
        result = args.func(args, config)
    except PatchQuiltError as e:
        logger.error("%s", e)
        return e.exit_code
    except (FileNotFoundError, ValueError) as e:
        logger.error("%s", e)
        return 2
    except Exception:
        logger.exception("unexpected failure")
        return 1
    _emit(result, args.json)
    return 0


if __name__ == "__main__":
    sys.exit(main())
