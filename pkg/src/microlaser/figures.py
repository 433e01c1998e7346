"""Rendering helpers: every scan or measurement that the CLI can emit as
a table has a matching plot-to-file routine here.

Figures are written with fixed dpi and with the PNG timestamp stripped
so repeated runs of a seeded experiment produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE = dict(dpi=120, metadata={"Date": None})


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_trace(trace: dict, path) -> str:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.plot(trace["n_mean"], trace["q_qmt"], "C0.-", lw=1, ms=3,
            label="linearized")
    ax.plot(trace["n_mean"], trace["q0"], "C3.-", lw=1, ms=3,
            label="corrected")
    ax.set_xscale("log")
    ax.axhline(0.0, color="0.6", lw=0.6)
    ax.set_xlabel("mean photon number")
    ax.set_ylabel("Mandel Q")
    ax.legend(frameon=False, fontsize=8)
    return _finish(fig, path)


def plot_surface(surface: dict, path) -> str:
    fig, ax = plt.subplots(figsize=(5.6, 3.8))
    v = surface["v0"]
    n = surface["n_mean"]
    q0 = surface["q0"]
    # grid is rectangular in (v0, atom number); show against photon number
    pc = ax.pcolormesh(n, v[:, None] * np.ones_like(n), q0,
                       shading="nearest", cmap="viridis")
    ax.plot(surface["valley"]["n_mean"], surface["valley"]["v0"],
            "w.-", lw=1, ms=3)
    ax.set_xscale("log")
    ax.set_xlabel("mean photon number")
    ax.set_ylabel("most probable speed (m/s)")
    fig.colorbar(pc, ax=ax, label="corrected Q")
    return _finish(fig, path)


def plot_valley(valley: dict, path) -> str:
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(7.4, 3.2))
    ax0.plot(valley["v0"], valley["q0"], "C0.-", lw=1, ms=4)
    ax0.set_xlabel("most probable speed (m/s)")
    ax0.set_ylabel("valley corrected Q")
    ax1.plot(valley["n_mean"], valley["q0"], "C3.-", lw=1, ms=4)
    ax1.set_xscale("log")
    ax1.set_xlabel("mean photon number")
    return _finish(fig, path)


def plot_slope_scan(points: list[dict], fit: dict, path) -> str:
    x = np.array([p["gamma_c_t_int"] for p in points])
    y = np.array([p["mandel_q"] for p in points])
    e = np.array([p["q_err"] for p in points])
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.errorbar(x, y, yerr=e, fmt="C0o", ms=4, capsize=2)
    xs = np.linspace(0.0, x.max() * 1.05, 50)
    ax.plot(xs, fit["q_intercept"] + fit["alpha"] * xs, "C3-", lw=1)
    ax.set_xlabel("cavity decay per transit")
    ax.set_ylabel("Mandel Q")
    return _finish(fig, path)


def plot_alpha_curves(curves: list[dict], path) -> str:
    """Each entry: {'q':..., 'alpha':..., 'label':...} plus optional
    'quadratic' overlay."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for i, c in enumerate(curves):
        ax.plot(c["q"], c["alpha"], f"C{i}-", lw=1.2, label=c["label"])
        if "quadratic" in c:
            ax.plot(c["q"], c["quadratic"], f"C{i}--", lw=0.8)
    ax.set_xlabel("linearized Q")
    ax.set_ylabel("alpha")
    ax.legend(frameon=False, fontsize=8)
    return _finish(fig, path)


def plot_io_curve(curve, path, raw_points=None) -> str:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(curve.atom_numbers, np.maximum(curve.photon_numbers, 1e-3),
            "C0.-", lw=1, ms=3)
    if raw_points is not None:
        ax.plot(raw_points[:, 0], raw_points[:, 1], "C3x", ms=4)
    for j in curve.jump_locations:
        ax.axvline(j, color="0.7", lw=0.7, ls=":")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("mean atom number")
    ax.set_ylabel("mean photon number")
    return _finish(fig, path)


def plot_g2(curve, fit=None, path="g2.png") -> str:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.errorbar(curve.tau, curve.g2, yerr=curve.err, fmt="C0.", ms=3,
                lw=0.8)
    if fit is not None:
        xs = np.linspace(0.0, curve.tau.max(), 120)
        ax.plot(xs, 1.0 + fit.q_over_n * np.exp(-xs / fit.tau), "C3-",
                lw=1.2)
    ax.axhline(1.0, color="0.6", lw=0.6)
    ax.set_xlabel("delay (s)")
    ax.set_ylabel("g2")
    return _finish(fig, path)


def plot_distribution(stats, path) -> str:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    n = np.arange(stats.p.size)
    ax.bar(n, stats.p, width=1.0, color="C0", alpha=0.8)
    ax.set_xlabel("photon number")
    ax.set_ylabel("probability")
    return _finish(fig, path)


def plot_moments(record, path) -> str:
    fig, ax = plt.subplots(figsize=(5.6, 3.2))
    ax.plot(record.sample_times, record.n_expect, "C0-", lw=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("photon number expectation")
    return _finish(fig, path)
