import io
import zipfile

import numpy as np
import pandas as pd

from sparse_dict import Dictionary
from utils_io import atoms_figure, study_figure, to_excel_bytes, write_report_csv


def _atoms_table():
    return pd.DataFrame({
        "study": ["atoms-curve"] * 4,
        "mesh": ["a", "a", "b", "b"],
        "atoms": [5, 10, 5, 10],
        "error": [0.02, 0.01, 0.03, 0.015],
    })


def test_excel_bytes_is_a_workbook():
    data = to_excel_bytes({"atoms-curve": _atoms_table(), "a" * 40: pd.DataFrame()})
    assert data[:2] == b"PK"
    with zipfile.ZipFile(io.BytesIO(data)) as book:
        workbook = book.read("xl/workbook.xml").decode()
        assert len([n for n in book.namelist() if n.startswith("xl/worksheets/sheet")]) == 2
    assert 'name="atoms-curve"' in workbook
    assert 'name="' + "a" * 31 + '"' in workbook


def test_write_report_csv(tmp_path):
    path = write_report_csv(_atoms_table(), tmp_path / "out" / "t.csv")
    assert path.exists()
    assert pd.read_csv(path)["atoms"].tolist() == [5, 10, 5, 10]


def test_study_figures():
    fig = study_figure(_atoms_table(), "atoms-curve")
    assert len(fig.data) == 2
    assert fig.layout.title.text == "atoms-curve"
    holes = pd.DataFrame({"hole_ratio": [0.3, 0.5], "error": [0.01, 0.02], "baseline_error": [0.02, 0.04]})
    assert len(study_figure(holes, "holesize-curve").data) == 2
    scopes = pd.DataFrame({"scope": ["local", "global", "self-similar"], "error": [0.01, 0.02, 0.015]})
    assert study_figure(scopes, "holefill-scopes").data[0].type == "bar"


def test_atoms_figure():
    D = Dictionary(np.eye(16)[:, :6], grid_resolution=4, patch_radius=0.1)
    fig = atoms_figure(D)
    assert len(fig.data) == 6
    assert fig.data[0].z.shape == (4, 4)
    assert len(atoms_figure(D, max_atoms=2).data) == 2
