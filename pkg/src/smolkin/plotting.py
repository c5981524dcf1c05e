"""Figures for the report. Each function reads result objects and writes one file."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {"figure.figsize": (5.5, 4.0), "axes.grid": True, "grid.alpha": 0.3,
         "savefig.dpi": 150, "font.size": 9}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def survival_curves(tc, path):
    """Ensemble survival per N with the recipe and naive predictions."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        tt = np.linspace(0, max(tc.times), 200)
        ax.plot(tt, tc.h_recipe(tt), "k-", lw=1.2, label=r"$1/(1+\beta t)$, recipe")
        ax.plot(tt, tc.h_naive(tt), "k--", lw=1.0, label=r"$1/(1+\beta t)$, naive")
        for N, lv in sorted(tc.levels.items()):
            c = lv.curve
            ax.errorbar(c.t, c.h, yerr=2 * c.stderr, fmt="o", ms=3, capsize=2, label=f"N={N}")
        ax.set_xlabel("t")
        ax.set_ylabel("surviving fraction")
        ax.set_title(f"torus, alpha={tc.alpha:g}")
        ax.legend(frameon=False)
        return _save(fig, path)


def stosszahlansatz_trend(tc, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        Ns = sorted(tc.levels)
        r = [tc.levels[N].sza_ratio for N in Ns]
        e = [tc.levels[N].sza_stderr for N in Ns]
        ax.errorbar(Ns, r, yerr=2 * np.asarray(e), fmt="o-", capsize=3)
        ax.axhline(1.0, color="k", lw=0.8)
        ax.axhspan(0.8, 1.2, color="0.9", zorder=0)
        ax.set_xscale("log")
        ax.set_xlabel("N")
        ax.set_ylabel("collision propensity / (beta * density product)")
        return _save(fig, path)


def pair_correlation(prof, u_field, path):
    """Measured g(r) against the repulsion profile ``1 - u``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        r = 0.5 * (prof.edges[:-1] + prof.edges[1:])
        ax.errorbar(r, prof.g, yerr=2 * prof.stderr, fmt="o", ms=3, capsize=2, label="simulation")
        if u_field is not None:
            rr = np.linspace(0, r.max(), 300)
            ax.plot(rr, 1 - u_field(rr), "k-", lw=1.2, label="1 - u")
        ax.axhline(1.0, color="0.5", lw=0.8)
        ax.set_xlabel(r"separation / $\epsilon$")
        ax.set_ylabel("g(r)")
        ax.legend(frameon=False)
        return _save(fig, path)


def ode_spectrum(traj, path, n_show: int = 8):
    """Concentrations of the first masses over time, plus the total mass."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for n in range(min(n_show, traj.f.shape[1])):
            ax.plot(traj.t, traj.f[:, n], lw=1.0, label=f"n={n + 1}")
        ax.plot(traj.t, traj.total_mass() + traj.leakage, "k:", lw=1.0, label="mass + leak")
        ax.set_xlabel("t")
        ax.set_ylabel("concentration")
        ax.legend(frameon=False, ncol=2)
        return _save(fig, path)


def pde_profile(states, path, species: int = 0):
    """Mid-plane line cut of one species across saved PDE states."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for s in states:
            f = s.f[species]
            idx = tuple(k // 2 for k in f.shape[1:])
            ax.plot(s.grid.coords()[0][(slice(None),) + idx], f[(slice(None),) + idx],
                    lw=1.0, label=f"t={s.t:.3g}")
        ax.set_xlabel("x")
        ax.set_ylabel(f"f_{species + 1}")
        ax.legend(frameon=False)
        return _save(fig, path)


def kernel_table(table, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        im = ax.imshow(table.beta, origin="lower", extent=(0.5, table.M + 0.5, 0.5, table.M + 0.5))
        fig.colorbar(im, ax=ax, label="beta(n, m)")
        ax.set_xlabel("m")
        ax.set_ylabel("n")
        return _save(fig, path)
