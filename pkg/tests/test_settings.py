import pytest

from errors import (
    ConfigError,
    DictionaryFormatError,
    DictionaryMismatchError,
    GeometryError,
    InsufficientDataError,
    MeshFormatError,
    NonManifoldError,
    PatchQuiltError,
    QuadrangulationError,
    ReconstructionError,
)
from settings import RunConfig, build_config, load_config_file, parallel_map, worker_count


def test_exit_codes():
    assert PatchQuiltError("x").exit_code == 1
    assert MeshFormatError("bad", "a.obj", 3).exit_code == 2
    assert ConfigError("x").exit_code == 2
    assert DictionaryFormatError("x").exit_code == 2
    assert GeometryError("x").exit_code == 3
    assert InsufficientDataError("x").exit_code == 3
    assert DictionaryMismatchError("x").exit_code == 4


def test_error_payloads():
    e = MeshFormatError("bad face index", "mesh.obj", 12)
    assert str(e) == "mesh.obj:12: bad face index"
    assert (e.path, e.line) == ("mesh.obj", 12)
    assert NonManifoldError("bad", [(1, 2)]).edges == [(1, 2)]
    assert QuadrangulationError("stuck", 0.5).residual == 0.5
    assert ReconstructionError("lost", 3).component == 3
    assert isinstance(NonManifoldError("x", []), GeometryError)


def test_defaults_and_derived_values():
    cfg = RunConfig(quad_length=0.03, grid_resolution=16)
    assert cfg.resolved_patch_radius() == pytest.approx(0.03 * 0.73)
    assert cfg.resolved_subdivision_level() == 3
    params = cfg.patch_params()
    assert params.grid_resolution == 16
    assert params.grid_length == pytest.approx(2 ** 0.5 * 0.03 * 0.73)
    assert cfg.learn_config().atom_count == cfg.atom_count
    bin_area = (params.grid_length / 16) ** 2
    assert cfg.sample_density() * bin_area == pytest.approx(cfg.points_per_bin)


def test_explicit_radius_and_level():
    cfg = RunConfig(patch_radius=0.05, subdivision_level=1)
    assert cfg.resolved_patch_radius() == 0.05
    assert cfg.resolved_subdivision_level() == 1


@pytest.mark.parametrize("overrides", [
    {"quad_length": 0.0},
    {"grid_resolution": 1},
    {"sparsity": 0},
    {"atom_count": 4, "sparsity": 5},
    {"min_observed_fraction": 1.5},
    {"patch_radius": -1.0},
    {"threads": 0},
])
def test_invalid_config_rejected(overrides):
    with pytest.raises(ConfigError):
        RunConfig(**overrides)


def test_config_file_and_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# coarse run\n"
        "quad_length = 0.05\n"
        "\n"
        "grid-resolution = 12   # per side\n"
        "patch_radius = auto\n"
        "keep_observed_vertices = no\n"
    )
    values = load_config_file(path)
    assert values == {"quad_length": 0.05, "grid_resolution": 12, "patch_radius": "auto",
                      "keep_observed_vertices": False}
    cfg = build_config(values, {"grid_resolution": 10, "sparsity": None})
    assert cfg.grid_resolution == 10
    assert cfg.quad_length == 0.05
    assert cfg.keep_observed_vertices is False


def test_config_file_errors(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("quad_length = 0.05\nunknown_key = 3\n")
    with pytest.raises(ConfigError, match=":2:"):
        load_config_file(path)
    path.write_text("sparsity = many\n")
    with pytest.raises(ConfigError):
        load_config_file(path)
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        build_config({}, {"no_such_field": 1})


def test_parallel_map_keeps_order():
    items = list(range(50))
    assert parallel_map(lambda x: x * x, items, threads=4) == [x * x for x in items]
    assert parallel_map(lambda x: -x, items, threads=1) == [-x for x in items]
    assert worker_count(3) == 3
    assert worker_count(None) >= 1
