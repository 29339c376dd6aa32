import pandas as pd
import pytest

from fixtures import cube_surface, displaced_sphere, grid_plane
from studies import STUDIES, local_vs_global, run_study


def test_unknown_study_and_empty_corpus(small_config, plane):
    with pytest.raises(ValueError):
        run_study("atoms", {"plane": plane}, small_config)
    with pytest.raises(ValueError):
        run_study("atoms-curve", {}, small_config)
    assert "denoise" in STUDIES


def test_local_vs_global_needs_two_meshes(small_config, plane):
    with pytest.raises(ValueError):
        local_vs_global({"plane": plane}, small_config)


@pytest.mark.slow
def test_atoms_curve_writes_table(tmp_path, small_config):
    out = tmp_path / "reports" / "atoms.csv"
    table = run_study("atoms-curve", {"plane": grid_plane(41, 1.0)}, small_config, out_csv=out, atoms=[2, 4])
    assert list(table.columns[:3]) == ["study", "mesh", "atoms"]
    assert table["atoms"].tolist() == [2, 4]
    assert table["atoms_used"].tolist() == [2, 4]
    assert (table["error"] < 0.01).all()
    saved = pd.read_csv(out)
    assert len(saved) == 2
    assert set(saved["study"]) == {"atoms-curve"}


@pytest.mark.slow
def test_denoise_study_rows(small_config):
    table = run_study("denoise", {"plane": grid_plane(41, 1.0)}, small_config, sigma=0.005, atoms=4)
    assert table["method"].tolist() == ["noisy", "dictionary", "laplacian"]
    errors = dict(zip(table["method"], table["error"]))
    assert errors["laplacian"] < errors["noisy"]


@pytest.fixture(scope="module")
def corpus():
    return {"bumps": displaced_sphere(subdivisions=4), "cube": cube_surface(17, 0.8)}


@pytest.mark.slow
def test_atoms_curve_error_falls_with_more_atoms(small_config, corpus):
    table = run_study("atoms-curve", {"bumps": corpus["bumps"]}, small_config, atoms=[2, 8, 24])
    assert table["atoms_used"].tolist() == [2, 8, 24]
    errors = table["error"].tolist()
    assert errors[-1] <= errors[0]
    assert all(b <= a * 1.05 for a, b in zip(errors, errors[1:]))


@pytest.mark.slow
def test_local_vs_global_rows(small_config, corpus):
    table = run_study("local-vs-global", corpus, small_config, atoms=8)
    assert table["mesh"].tolist() == ["bumps", "bumps", "cube", "cube"]
    assert table["scope"].tolist() == ["local", "global"] * 2
    assert (table["atoms_used"] == 8).all()
    assert (table["error"] < 0.02).all()


@pytest.mark.slow
def test_dataset_size_rows(small_config, corpus):
    table = run_study("dataset-size", corpus, small_config, atoms=8)
    assert table["shapes"].tolist() == [1, 2]
    assert (table["atoms_used"] == 8).all()
    assert (table["error"] < 0.02).all()


@pytest.mark.slow
def test_holesize_curve_rows(tmp_path, small_config, corpus):
    out = tmp_path / "holes.csv"
    table = run_study("holesize-curve", corpus, small_config, out_csv=out, ratios=[0.5, 0.8], atoms=8)
    assert table["hole_ratio"].tolist() == [0.5, 0.8]
    assert set(table["mesh"]) == {"bumps"}
    assert (table["holes"] >= 1).all()
    assert (table[["error", "baseline_error"]] < 0.01).all().all()
    assert len(pd.read_csv(out)) == 2


@pytest.mark.slow
def test_holefill_scopes_rows(small_config, corpus):
    table = run_study("holefill-scopes", corpus, small_config, ratio=0.5, atoms=8)
    assert table["scope"].tolist() == ["local", "global", "self-similar"]
    assert (table["error"] < 0.01).all()
    assert (table["baseline_error"] == table["baseline_error"].iloc[0]).all()
