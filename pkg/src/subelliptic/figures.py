"""Matplotlib renderings of report tables and fields, written next to the CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grids import GridFunction

_PNG_META = {"Software": None}  # keep emitted PNGs free of tool banners


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=130, bbox_inches="tight", metadata=_PNG_META)
    plt.close(fig)
    return path


def render_convergence(path, epsilons, deviations, ylabel="sup deviation") -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    eps = np.asarray(epsilons, dtype=float)
    dev = np.asarray(deviations, dtype=float)
    ok = np.isfinite(dev) & (dev > 0)
    if ok.any():
        ax.loglog(eps[ok], dev[ok], "o-", color="tab:blue")
    ax.set_xlabel("epsilon")
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, Path(path))


def render_matrix(path, M, title="translation maxima") -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(np.asarray(M, dtype=float), origin="lower", cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xlabel("l index")
    ax.set_ylabel("h index")
    ax.set_title(title)
    return _save(fig, Path(path))


def render_field_slice(path, gf: GridFunction, title="field") -> Path:
    vals = gf.values
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    if gf.grid.n == 1:
        ax.plot(gf.grid.axes()[0], vals)
        ax.set_xlabel("x1")
    else:
        sl = [slice(None), slice(None)] + [s // 2 for s in gf.grid.shape[2:]]
        plane = vals[tuple(sl)]
        extent = (gf.grid.box.lo[1], gf.grid.box.hi[1],
                  gf.grid.box.lo[0], gf.grid.box.hi[0])
        im = ax.imshow(plane, origin="lower", extent=extent, cmap="RdBu_r",
                       aspect="auto")
        fig.colorbar(im, ax=ax, shrink=0.85)
        ax.set_xlabel("x2")
        ax.set_ylabel("x1")
    ax.set_title(title)
    return _save(fig, Path(path))


def render_loglog_fit(path, x, y, slope=None, xlabel="|h - l|",
                      ylabel="distance") -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ax.loglog(x, y, ".", alpha=0.5, color="tab:blue")
    if slope is not None and x.size:
        anchor = np.exp(np.mean(np.log(y)) - slope * np.mean(np.log(x)))
        xs = np.array([x.min(), x.max()])
        ax.loglog(xs, anchor * xs ** slope, "-", color="tab:red",
                  label=f"slope {slope:.3f}")
        ax.legend()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, Path(path))


def render_report_figures(report, outdir) -> list:
    """Figures for the standard report tables; returns the written paths."""
    outdir = Path(outdir)
    written = []
    if "envelope" in report.tables:
        header, rows = report.tables["envelope"]
        eps = [r[0] for r in rows]
        dev = [r[1] for r in rows]
        written.append(render_convergence(outdir / "envelope_convergence.png",
                                          eps, dev))
    if "mtable" in report.tables:
        header, rows = report.tables["mtable"]
        m_col = header.index("M")
        h_cols = [i for i, name in enumerate(header) if name.startswith("h")]
        hs = sorted({tuple(r[i] for i in h_cols) for r in rows})
        K = len(hs)
        L = max(1, len(rows) // max(K, 1))
        M = np.full((K, L), np.nan)
        index = {h: i for i, h in enumerate(hs)}
        counters = {h: 0 for h in hs}
        for r in rows:
            h = tuple(r[i] for i in h_cols)
            M[index[h], counters[h] % L] = r[m_col]
            counters[h] += 1
        written.append(render_matrix(outdir / "mtable.png", M))
    return written
