import io
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from sparse_dict import Dictionary

# x column and y columns plotted for each study table
STUDY_AXES = {
    "atoms-curve": ("atoms", ["error"]),
    "local-vs-global": ("mesh", ["error"]),
    "dataset-size": ("shapes", ["error"]),
    "holesize-curve": ("hole_ratio", ["error", "baseline_error"]),
    "holefill-scopes": ("scope", ["error"]),
    "denoise": ("method", ["error"]),
}


def to_excel_bytes(sheets: Dict[str, pd.DataFrame]) -> bytes:
    """
    Build an in-memory Excel workbook with one sheet per DataFrame.

    Args:
        sheets: Mapping of sheet_name -> DataFrame

    Returns:
        Bytes of the XLSX file, written by ``study --xlsx``.
    """
    output = io.BytesIO()
    with pd.ExcelWriter(output, engine="xlsxwriter") as writer:
        for name, df in sheets.items():
            safe_name = (name or "Sheet").strip()[:31]
            df.to_excel(writer, index=False, sheet_name=safe_name)
            ws = writer.sheets[safe_name]
            for i, col in enumerate(df.columns):
                longest = df[col].astype(str).map(len).max() if len(df) else 0
                width = max(10, min(40, int(max(longest, len(str(col))))))
                ws.set_column(i, i, width)
    return output.getvalue()


def write_report_csv(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return path


def study_figure(df: pd.DataFrame, study: str) -> go.Figure:
    """Line chart (or bars for categorical studies) of one study table."""
    x, ys = STUDY_AXES.get(study, (df.columns[0], ["error"]))
    ys = [y for y in ys if y in df.columns]
    long = df.melt(id_vars=[c for c in df.columns if c not in ys], value_vars=ys,
                   var_name="series", value_name="value")
    color = "mesh" if "mesh" in df.columns and x != "mesh" and df["mesh"].nunique() > 1 else "series"
    if pd.api.types.is_numeric_dtype(df[x]):
        fig = px.line(long, x=x, y="value", color=color, markers=True, title=study,
                      labels={"value": "mean distance"},
                      color_discrete_sequence=px.colors.qualitative.Set2)
        fig.update_traces(line=dict(width=3))
    else:
        group = "scope" if "scope" in df.columns and x != "scope" else "series"
        fig = px.bar(long, x=x, y="value", color=group, barmode="group", title=study,
                     labels={"value": "mean distance"},
                     color_discrete_sequence=px.colors.qualitative.Set2)
    fig.update_layout(
        plot_bgcolor="rgba(0,0,0,0)",
        paper_bgcolor="rgba(0,0,0,0)",
        font=dict(size=12),
        legend=dict(orientation="h", yanchor="bottom", y=1.02, xanchor="right", x=1),
    )
    return fig


def atoms_figure(D: Dictionary, max_atoms: int = 25) -> go.Figure:
    """Grid of atom height maps, the first ``max_atoms`` columns of D."""
    count = min(max_atoms, D.atom_count)
    cols = int(np.ceil(np.sqrt(count)))
    rows = int(np.ceil(count / cols)) if count else 1
    n = D.grid_resolution
    fig = make_subplots(rows=rows, cols=cols, subplot_titles=[f"atom {j}" for j in range(count)])
    limit = float(np.abs(D.atoms[:, :count]).max()) if count else 1.0
    for j in range(count):
        fig.add_trace(
            go.Heatmap(z=D.atoms[:, j].reshape(n, n), zmin=-limit, zmax=limit,
                       colorscale="RdBu", showscale=(j == 0)),
            row=j // cols + 1, col=j % cols + 1,
        )
    fig.update_xaxes(showticklabels=False)
    fig.update_yaxes(showticklabels=False)
    fig.update_layout(title=f"{D.provenance} dictionary, {D.atom_count} atoms", height=180 * rows)
    return fig
