"""Plain-text writers and readers for fields, histories, matrices and factor snapshots."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .grid import Grid2D

LAYOUT = "N_x rows x N_y columns, row i is x index i, column j is y index j, flat k = i*N_y + j (0-based)"


def _fmt(v) -> str:
    # shortest string that round-trips exactly
    return repr(float(v))


def grid_header(grid: Grid2D, name: str) -> list[str]:
    return [
        f"# field: {name}",
        f"# N_x: {grid.nx}",
        f"# N_y: {grid.ny}",
        f"# dx: {_fmt(grid.dx)}",
        f"# dy: {_fmt(grid.dy)}",
        f"# origin: {_fmt(grid.x0)} {_fmt(grid.y0)}",
        f"# layout: {LAYOUT}",
    ]


def write_field_csv(path, grid: Grid2D, values, name: str = "value") -> Path:
    """Cell field as an ``N_x x N_y`` comma-separated block under a ``#`` header."""
    field = grid.as_field(values)
    lines = grid_header(grid, name)
    lines += [",".join(_fmt(v) for v in row) for row in field]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_field_csv(path) -> tuple[np.ndarray, dict]:
    """Inverse of :func:`write_field_csv`; returns ``(field[i, j], header)``."""
    meta: dict = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = val.strip()
        elif line.strip():
            rows.append([float(v) for v in line.split(",")])
    field = np.array(rows, dtype=float)
    if "N_x" in meta and field.shape != (int(meta["N_x"]), int(meta["N_y"])):
        raise ValueError(f"{path}: header says {meta['N_x']}x{meta['N_y']}, "
                         f"data is {field.shape[0]}x{field.shape[1]}")
    return field, meta


def write_rows_csv(path, columns, rows, comments=()) -> Path:
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_matrix_csv(path, matrix, comments=()) -> Path:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = [f"# {c}" for c in comments]
    lines.append(f"# shape: {matrix.shape[0]} {matrix.shape[1]}")
    lines += [",".join(_fmt(v) for v in row) for row in matrix]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def write_coo(path, matrix, name: str = "matrix") -> Path:
    """Sparse matrix as ``row col value`` lines (0-based), sorted by row then column."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"# {name}", f"# shape: {coo.shape[0]} {coo.shape[1]}", f"# nnz: {coo.nnz}",
             "# row col value (0-based)"]
    lines += [f"{coo.row[k]} {coo.col[k]} {_fmt(coo.data[k])}" for k in order]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_quadrature_csv(path, quadrature) -> Path:
    rows = [(_fmt(p[0]), _fmt(p[1]), _fmt(p[2]), _fmt(w))
            for p, w in zip(quadrature.points, quadrature.weights)]
    return write_rows_csv(path, ["omega_x", "omega_y", "omega_z", "weight"], rows,
                          [f"n_q: {quadrature.n_q}"])


def write_operators(folder, problem) -> list[Path]:
    """Stencils as COO text, flux/Roe matrices and the quadrature as CSV."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    st, b = problem.stencils, problem.basis
    paths = [write_coo(folder / f"{name}.coo", getattr(st, name), name)
             for name in ("T1x", "T1y", "T2x", "T2y", "L1x", "L1y", "L2x", "L2y")]
    for name in ("A_x", "A_y", "absA_x", "absA_y"):
        paths.append(write_matrix_csv(folder / f"{name}.csv", getattr(b, name),
                                      [f"{name}, P_{b.N}, m = {b.m}"]))
    paths.append(write_quadrature_csv(folder / "quadrature.csv", problem.quadrature))
    paths.append(write_matrix_csv(folder / "T_M.csv", problem.quadrature.T_M,
                                  ["moments = psi @ T_M, rows = ordinates, columns = harmonics"]))
    return paths


def write_factors(folder, factors, meta: dict) -> list[Path]:
    """``X.csv``, ``S.csv``, ``W.csv`` and ``meta.json`` for one low-rank component."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    paths = [write_matrix_csv(folder / f"{name}.csv", getattr(factors, name))
             for name in ("X", "S", "W")]
    meta = dict(meta, rank=factors.rank)
    mpath = folder / "meta.json"
    mpath.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths + [mpath]


def read_factors(folder):
    from .dlra import LowRankFactors

    folder = Path(folder)
    meta = json.loads((folder / "meta.json").read_text())
    X, S, W = (read_matrix_csv(folder / f"{n}.csv") for n in ("X", "S", "W"))
    return LowRankFactors(X, S, W), meta


def write_vtk(path, grid: Grid2D, fields: dict) -> Path:
    """Legacy ASCII VTK structured points with one cell-data scalar per field."""
    lines = ["# vtk DataFile Version 3.0", "csdlra output", "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} 1",
             f"ORIGIN {_fmt(grid.x0)} {_fmt(grid.y0)} 0",
             f"SPACING {_fmt(grid.dx)} {_fmt(grid.dy)} 1",
             f"CELL_DATA {grid.n_cells}"]
    for name, values in fields.items():
        # VTK runs x fastest
        data = grid.as_field(values).T.ravel()
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in data]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(folder, paths, meta: dict | None = None) -> Path:
    folder = Path(folder)
    entries = []
    for p in sorted({Path(p) for p in paths}):
        entries.append({"file": str(p.relative_to(folder)), "sha256": sha256(p),
                        "bytes": p.stat().st_size})
    doc = {"artifacts": entries}
    if meta:
        doc["meta"] = meta
    mpath = folder / "manifest.json"
    mpath.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return mpath


def write_report(report, folder, figures: bool = True, vtk: bool = False,
                 factors: bool = True, extra_fields: dict | None = None,
                 extra_paths=()) -> list[Path]:
    """Write every artifact of a run plus ``manifest.json``; returns the paths written.

    ``extra_paths`` are files already written below ``folder`` that the
    manifest should list too.
    """
    folder = Path(folder)
    try:
        folder.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {folder}: {exc}") from exc
    grid = report.grid
    paths = [
        write_field_csv(folder / "dose.csv", grid, report.dose, "dose"),
        write_field_csv(folder / "flux.csv", grid, report.scalar_flux, "scalar_flux"),
        write_rows_csv(folder / "ranks.csv", ["step", "t", "component", "stage", "rank"],
                       report.rank_rows(), [f"solver: {report.tag}"]),
        write_rows_csv(folder / "norms.csv", ["step", "t", "component", "frobenius_norm"],
                       report.norm_rows(), [f"solver: {report.tag}"]),
        write_rows_csv(folder / "steps.csv",
                       ["step", "t", "dt", "total_norm", "relative_norm_increase"],
                       [(r.step, r.t, r.dt, r.total_norm, r.norm_increase)
                        for r in report.records],
                       [f"solver: {report.tag}"]),
    ]
    # wall-clock data stays out of the CSVs so they are reproducible byte for byte
    timing = folder / "timing.json"
    timing.write_text(json.dumps({"wall_seconds": report.wall_time,
                                  "step_wall_seconds": [r.wall for r in report.records]},
                                 indent=2) + "\n")
    paths.append(timing)
    for name, values in (extra_fields or {}).items():
        paths.append(write_field_csv(folder / f"{name}.csv", grid, values, name))
    if factors and hasattr(report.final_state, "levels"):
        for name, f in report.final_state.components():
            meta = {"component": name, "step": report.final_state.step_index,
                    "t": report.final_state.t, "N_x": grid.nx, "N_y": grid.ny,
                    "dx": grid.dx, "dy": grid.dy, "origin": [grid.x0, grid.y0]}
            paths += write_factors(folder / "factors" / name, f, meta)
    if vtk:
        fields = {"dose": report.dose, "scalar_flux": report.scalar_flux}
        fields.update(extra_fields or {})
        paths.append(write_vtk(folder / "fields.vtk", grid, fields))
    if figures:
        from . import plotting

        paths += plotting.report_figures(report, folder)
    meta = {"solver": report.tag, "problem": report.problem_name,
            "steps": len(report.records)}
    paths.append(write_manifest(folder, list(paths) + list(extra_paths), meta))
    return paths
