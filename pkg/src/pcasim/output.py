"""Deterministic file output: the time-series CSV and legacy VTK snapshots.

Floating-point values are written with 17 significant digits, "." decimal
separator and "\\n" line endings, so reruns with identical configuration are
byte-identical.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

__all__ = ["TimeseriesRow", "TIMESERIES_HEADER", "write_timeseries", "write_snapshot"]

TIMESERIES_HEADER = ("t_day,V_c_mm2,V_c_frac,V_h_mm2,P_s_raw,P_s_mean,u,s,"
                     "min_phi,max_phi,min_sigma,min_p,newton_iters,gmres_iters")


@dataclass(frozen=True)
class TimeseriesRow:
    t_day: float
    V_c_mm2: float
    V_c_frac: float
    V_h_mm2: float
    P_s_raw: float
    P_s_mean: float
    u: float
    s: float
    min_phi: float
    max_phi: float
    min_sigma: float
    min_p: float
    newton_iters: int
    gmres_iters: int


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_timeseries(rows, path):
    """One CSV row per observation; header and formatting are fixed."""
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(TIMESERIES_HEADER + "\n")
            for r in rows:
                fh.write(",".join(_fmt(getattr(r, name))
                                  for name in TimeseriesRow.__dataclass_fields__) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write time series to {path}: {exc}") from exc


def snapshot_filename(t, fieldset="fields"):
    return f"{fieldset}_t{int(round(t)):04d}.vtk"


def write_snapshot(space, state, t, directory, fieldset="fields"):
    """Legacy VTK structured-points file with phi, sigma and p point data.

    Fields are evaluated (not raw coefficients) on a uniform lattice of
    (2*n_el + 1) points per side with origin (0, 0) and spacing
    L / (2*n_el); points run x-fastest as the format requires.
    """
    npts = 2 * space.n_el + 1
    grid = np.linspace(0.0, space.L, npts)
    spacing = space.L / (2 * space.n_el)
    path = os.path.join(directory, snapshot_filename(t, fieldset))
    fields = [("phi", state.phi), ("sigma", state.sigma), ("p", state.p)]
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write(f"pcasim fields at t={_fmt(t)} day\n")
            fh.write("ASCII\n")
            fh.write("DATASET STRUCTURED_POINTS\n")
            fh.write(f"DIMENSIONS {npts} {npts} 1\n")
            fh.write("ORIGIN 0 0 0\n")
            fh.write(f"SPACING {_fmt(spacing)} {_fmt(spacing)} 1\n")
            fh.write(f"POINT_DATA {npts * npts}\n")
            for name, coefs in fields:
                F = space.evaluate_grid(coefs, grid, grid)
                fh.write(f"SCALARS {name} double 1\n")
                fh.write("LOOKUP_TABLE default\n")
                for j in range(npts):          # y slowest
                    fh.write(" ".join(_fmt(F[i, j]) for i in range(npts)) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write snapshot to {path}: {exc}") from exc
    return path
