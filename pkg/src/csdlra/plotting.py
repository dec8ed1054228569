"""PNG figures for run reports, stability sweeps and dominant modes.

Uses the object-oriented Agg canvas so nothing touches pyplot's global state.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .angular import sh_matrix

STYLE = {"dpi": 120}


def _new(nrows=1, ncols=1, size=(6.0, 4.5)):
    fig = Figure(figsize=size, layout="constrained")
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, ncols, squeeze=False)
    return fig, axes


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=STYLE["dpi"], metadata={"Software": None})
    return path


def _extent(grid):
    return (grid.x0, grid.x0 + grid.nx * grid.dx, grid.y0, grid.y0 + grid.ny * grid.dy)


def plot_field(grid, values, path, title="", label="", cmap="viridis", log=False):
    """Cell field as an image with ``x`` to the right and ``y`` up."""
    data = grid.as_field(values).T
    if log:
        floor = max(np.abs(data).max(), 1e-300) * 1e-6
        data = np.log10(np.maximum(data, floor))
        label = f"log10 {label}".strip()
    fig, ax = _new()
    im = ax[0, 0].imshow(data, origin="lower", extent=_extent(grid), cmap=cmap, aspect="equal")
    ax[0, 0].set_xlabel("x [cm]")
    ax[0, 0].set_ylabel("y [cm]")
    ax[0, 0].set_title(title)
    fig.colorbar(im, ax=ax[0, 0], label=label)
    return _save(fig, path)


def plot_rank_history(report, path):
    fig, ax = _new()
    ax = ax[0, 0]
    per_comp: dict[str, tuple[list, list]] = {}
    for step, t, comp, stage, rank in report.rank_rows():
        if stage != "final":
            continue
        ts, rs = per_comp.setdefault(comp, ([], []))
        ts.append(t)
        rs.append(rank)
    for comp, (ts, rs) in per_comp.items():
        ax.step(ts, rs, where="post", label=comp)
    ax.set_xlabel("pseudo-time t")
    ax.set_ylabel("rank")
    if per_comp:
        ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_norm_history(report, path):
    fig, ax = _new()
    ax = ax[0, 0]
    per_comp: dict[str, tuple[list, list]] = {}
    for step, t, comp, val in report.norm_rows():
        ts, vs = per_comp.setdefault(comp, ([], []))
        ts.append(t)
        vs.append(val)
    for comp, (ts, vs) in per_comp.items():
        ax.semilogy(ts, np.maximum(vs, 1e-300), label=comp, lw=2 if comp == "total" else 1)
    ax.set_xlabel("pseudo-time t")
    ax.set_ylabel("Frobenius norm")
    ax.legend(fontsize="small")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def report_figures(report, folder) -> list[Path]:
    folder = Path(folder)
    grid = report.grid
    return [
        plot_field(grid, report.dose, folder / "dose.png", f"dose ({report.tag})", "dose"),
        plot_field(grid, report.scalar_flux, folder / "flux.png",
                   f"scalar flux ({report.tag})", "scalar flux"),
        plot_rank_history(report, folder / "ranks.png"),
        plot_norm_history(report, folder / "norms.png"),
    ]


def plot_amplification(nus, moduli, path):
    fig, ax = _new()
    ax = ax[0, 0]
    ax.plot(nus, moduli, "o-")
    ax.axhline(1.0, color="k", lw=0.8, ls="--")
    ax.set_xlabel("CFL number nu")
    ax.set_ylabel("max amplification modulus")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_norm_sweep(rows, path):
    """``rows`` of ``(nu, seed, step, norm)``; one curve per run, normalised to its start."""
    fig, ax = _new()
    ax = ax[0, 0]
    runs: dict[tuple, list] = {}
    for nu, seed, step, val in rows:
        runs.setdefault((nu, seed), []).append(val)
    colors = {}
    for (nu, seed), vals in runs.items():
        vals = np.asarray(vals)
        color = colors.setdefault(nu, f"C{len(colors) % 10}")
        ax.semilogy(vals / max(vals[0], 1e-300), color=color, lw=0.8,
                    label=f"nu={nu:g}" if seed == min(s for n, s in runs if n == nu) else None)
    ax.set_xlabel("step")
    ax.set_ylabel("||S|| / ||S_0||")
    ax.legend(fontsize="small")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_spatial_modes(grid, modes, path):
    k = modes.shape[1]
    ncols = min(k, 2)
    nrows = int(np.ceil(k / ncols))
    fig, axes = _new(nrows, ncols, size=(4.0 * ncols, 3.2 * nrows))
    for idx in range(nrows * ncols):
        ax = axes.flat[idx]
        if idx >= k:
            ax.set_axis_off()
            continue
        im = ax.imshow(grid.as_field(modes[:, idx]).T, origin="lower", extent=_extent(grid),
                       cmap="RdBu_r")
        ax.set_title(f"spatial mode {idx + 1}")
        fig.colorbar(im, ax=ax)
    return _save(fig, path)


def plot_directional_modes(N, modes, path, n_mu=61, n_phi=121):
    """Directional modes (moment vectors) evaluated on a ``(phi, mu)`` grid."""
    mu = np.linspace(-1, 1, n_mu)
    phi = np.linspace(-np.pi, np.pi, n_phi)
    mg, pg = np.meshgrid(mu, phi, indexing="ij")
    Y = sh_matrix(N, mg.ravel(), pg.ravel())
    k = modes.shape[1]
    ncols = min(k, 2)
    nrows = int(np.ceil(k / ncols))
    fig, axes = _new(nrows, ncols, size=(4.0 * ncols, 3.2 * nrows))
    for idx in range(nrows * ncols):
        ax = axes.flat[idx]
        if idx >= k:
            ax.set_axis_off()
            continue
        vals = (Y @ modes[:, idx]).reshape(n_mu, n_phi)
        im = ax.imshow(vals, origin="lower", extent=(-180, 180, -1, 1), aspect="auto",
                       cmap="RdBu_r")
        ax.set_xlabel("azimuth phi [deg]")
        ax.set_ylabel("mu")
        ax.set_title(f"directional mode {idx + 1}")
        fig.colorbar(im, ax=ax)
    return _save(fig, path)
