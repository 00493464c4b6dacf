"""Figures written next to the CSV/JSON outputs of the command line tools."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# strip volatile metadata so repeated runs produce identical files
_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_trajectory(traj, path, max_atoms=200):
    """First coordinate of (a subsample of) the atoms against time, one colour per species."""
    fig, ax = plt.subplots(figsize=(6, 4))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, P in enumerate(traj.positions):
        n = P.shape[1]
        pick = np.linspace(0, n - 1, min(n, max_atoms)).astype(int) if n else []
        for j, a in enumerate(pick):
            ax.plot(traj.times, P[:, a, 0], color=colors[i % len(colors)], lw=0.6,
                    label=f"species {i}" if j == 0 else None)
    ax.set_xlabel("t")
    ax.set_ylabel("x_1")
    if traj.k:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_certificate(report, path):
    """Q_zeta, cloud sup distance and the running Bihari bound."""
    fig, ax = plt.subplots(figsize=(6, 4))
    t = report.times
    series = [(report.Q, "Q_zeta"), (report.sup_dist, "sup distance"), (report.omega_running, "Omega(t)")]
    positive = all(np.all(s[1:] > 0) for s, _ in series) and len(t) > 1
    for s, lab in series:
        if positive:
            ax.semilogy(t[1:], s[1:], label=lab)
        else:
            ax.plot(t, s, label=lab)
    ax.set_xlabel("t")
    ax.set_title(f"verdict {report.verdict}, a = {report.a:g}")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_osgood(verdict, path):
    """Partial sums of the dyadic shell integrals."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, verdict.shells + 1), verdict.partial_sums)
    ax.axhline(verdict.threshold, color="grey", ls="--", lw=0.8)
    ax.set_xlabel("dyadic shell")
    ax.set_ylabel("partial sum of 1/omega")
    ax.set_title("Osgood" if verdict.is_osgood else "not Osgood")
    fig.tight_layout()
    _save(fig, path)


def plot_ladder(steps, residuals, path, xlabel="dt", ylabel="|residual|"):
    """Log-log refinement ladder, one line per series."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, vals in residuals.items():
        vals = np.maximum(np.asarray(vals, dtype=float), 1e-300)
        ax.loglog(steps, vals, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
