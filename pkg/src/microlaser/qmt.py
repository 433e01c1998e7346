"""Quantum micromaser theory: gain, steady state, and photon statistics.

The single-atom gain is G(n) = r * <P(n, v)>_v with emission probability
P(n, v) = sin^2(sqrt(n+1) * g * t_int(v)).  The photon-number rate
equation ndot = G(n) - gamma_c * n has (possibly several) fixed points;
the steady-state distribution follows from detailed balance,

    p_n / p_{n-1} = N_ex * <P(n-1, v)>_v / n,      N_ex = r / gamma_c,

accumulated in log space so deeply sub-unity weights cannot underflow.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .params import MicrolaserParams, VelocityDistribution


class TruncationError(RuntimeError):
    """Fock-space cutoff could not contain the distribution tail."""


class NoStableBranchError(RuntimeError):
    """No stable fixed point of the gain-loss balance was found."""


# ---------------------------------------------------------------------------
# emission probability and gain

def emission_probability(params: MicrolaserParams, n, v: float | None = None):
    """P(n, v) = sin^2(sqrt(n+1) * g * t_int(v)) for a single speed.

    Continuous in n for n >= -1 (the linearization differentiates it).
    """
    t = params.t_int(v)
    x = np.sqrt(np.asarray(n, dtype=float) + 1.0) * params.g * t
    out = np.sin(x) ** 2
    return float(out) if np.ndim(n) == 0 else out


def mean_emission_probability(params: MicrolaserParams,
                              dist: VelocityDistribution | None, n):
    """Velocity-averaged emission probability <P(n, v)>_v."""
    if dist is None:
        dist = params.distribution()
    v, wts = dist.nodes()
    t = math.sqrt(math.pi) * params.w0 / v
    narr = np.atleast_1d(np.asarray(n, dtype=float))
    x = np.sqrt(narr[:, None] + 1.0) * (params.g * t)[None, :]
    avg = np.sin(x) ** 2 @ wts
    return float(avg[0]) if np.ndim(n) == 0 else avg


def gain(params: MicrolaserParams, dist: VelocityDistribution | None, n):
    """Photon gain rate G(n) = r * <P(n, v)>_v."""
    return params.r * mean_emission_probability(params, dist, n)


def conventional_gain(n, g0: float, n_sat: float):
    """Saturable gain of a conventional laser, for comparison plots."""
    n = np.asarray(n, dtype=float)
    out = g0 * (n / n_sat) / (1.0 + n / n_sat)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# steady state

@dataclass(frozen=True)
class PhotonStatistics:
    """Steady-state photon number distribution and its moments."""

    n_max: int
    p: np.ndarray
    n_mean: float
    variance: float
    mandel_q: float

    @staticmethod
    def from_p(p: np.ndarray) -> "PhotonStatistics":
        total = p.sum()
        if not np.isfinite(total) or total <= 0:
            raise TruncationError("distribution weights degenerate")
        p = p / total
        n = np.arange(p.size, dtype=float)
        mean = float(n @ p)
        var = float((n - mean) ** 2 @ p)
        q = var / mean - 1.0 if mean > 0 else 0.0
        return PhotonStatistics(n_max=p.size - 1, p=p, n_mean=mean,
                                variance=var, mandel_q=q)

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("n,p_n\n")
            for i, pi in enumerate(self.p):
                f.write(f"{i},{pi:.12e}\n")

    def summary(self) -> dict:
        return {
            "n_max": self.n_max,
            "n_mean": self.n_mean,
            "variance": self.variance,
            "mandel_q": self.mandel_q,
        }

    def summary_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)
            f.write("\n")


def _log_weights(params: MicrolaserParams, dist: VelocityDistribution | None,
                 n_max: int) -> np.ndarray:
    """Unnormalized log p_n for n = 0..n_max via detailed balance."""
    k = np.arange(1, n_max + 1, dtype=float)
    p_k = mean_emission_probability(params, dist, k - 1.0)
    with np.errstate(divide="ignore"):
        logratio = np.log(params.n_ex) + np.log(p_k) - np.log(k)
    logp = np.concatenate([[0.0], np.cumsum(logratio)])
    return logp - logp.max()


_TAIL = 1e-10
_N_MAX_CAP = 4_000_000


def steady_state_distribution(params: MicrolaserParams,
                              dist: VelocityDistribution | None = None,
                              n_max: int | None = None) -> PhotonStatistics:
    """Detailed-balance steady state, truncated so the tail is < 1e-10.

    With n_max=None the cutoff grows automatically; a distribution whose
    gain balances at n0 never extends far beyond N_ex since <P> <= 1.
    """
    if params.r <= 0:
        raise ValueError("steady state needs a positive injection rate")
    auto = n_max is None
    if auto:
        n_ex = params.n_ex
        n_max = int(n_ex + 12.0 * math.sqrt(n_ex + 1.0)) + 64
    while True:
        logp = _log_weights(params, dist, n_max)
        p = np.exp(logp)
        p /= p.sum()
        if p[-1] < _TAIL:
            return PhotonStatistics.from_p(p)
        if not auto or n_max >= _N_MAX_CAP:
            raise TruncationError(
                f"tail p[{n_max}] = {p[-1]:.3e} >= {_TAIL:g}")
        n_max = min(2 * n_max, _N_MAX_CAP)


# ---------------------------------------------------------------------------
# fixed points and linearized statistics

@dataclass(frozen=True)
class FixedPointBranch:
    """A root of G(n) = gamma_c * n."""

    n0: float
    stable: bool
    restoring_rate: float   # gamma_c - dG/dn at n0; positive when stable


def _balance(params: MicrolaserParams, dist, n):
    # f(n) = N_ex * <P(n)> - n; fixed points are its zeros
    return params.n_ex * mean_emission_probability(params, dist, n) - np.asarray(n, dtype=float)


def _bisect_root(params, dist, lo, hi, tol=1e-6):
    flo = _balance(params, dist, lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            return mid
        fmid = _balance(params, dist, mid)
        if (flo <= 0) == (fmid <= 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def p_derivatives(params: MicrolaserParams, dist, n0: float):
    """(<P>, d<P>/dn, d2<P>/dn2) at n0 by central differences.

    Step max(1, n0*1e-4): unit step below n ~ 1e4 keeps the stencil on
    the scale the birth-death chain actually resolves.
    """
    dn = max(1.0, n0 * 1e-4)
    pm = mean_emission_probability(params, dist, max(n0 - dn, -1.0))
    p0 = mean_emission_probability(params, dist, n0)
    pp = mean_emission_probability(params, dist, n0 + dn)
    d1 = (pp - pm) / (2.0 * dn)
    d2 = (pp - 2.0 * p0 + pm) / dn ** 2
    return p0, d1, d2


def fixed_point_branches(params: MicrolaserParams,
                         dist: VelocityDistribution | None = None
                         ) -> list[FixedPointBranch]:
    """All fixed points of ndot = G(n) - gamma_c*n, in ascending n0.

    Zeros are bracketed on an integer grid (f(n) < 0 for n > N_ex, so
    the grid is finite) and polished by bisection to 1e-6.
    """
    n_cap = int(params.n_ex) + 2
    grid = np.arange(0, n_cap + 1, dtype=float)
    f = _balance(params, dist, grid)
    branches = []
    for i in range(len(grid) - 1):
        if f[i] == 0.0 and grid[i] == 0.0:
            # n = 0 root only counts when gain actually vanishes there
            if mean_emission_probability(params, dist, 0.0) == 0.0:
                branches.append(grid[i])
            continue
        if (f[i] > 0) != (f[i + 1] > 0):
            branches.append(_bisect_root(params, dist, grid[i], grid[i + 1]))
    out = []
    for n0 in branches:
        _, d1, _ = p_derivatives(params, dist, n0)
        rate = params.gamma_c * (1.0 - params.n_ex * d1)
        out.append(FixedPointBranch(n0=n0, stable=rate > 0, restoring_rate=rate))
    return out


def selected_branch(params: MicrolaserParams,
                    dist: VelocityDistribution | None = None,
                    stats: PhotonStatistics | None = None) -> FixedPointBranch:
    """The operating branch: stable fixed point at the global maximum of
    the steady-state distribution."""
    if stats is None:
        stats = steady_state_distribution(params, dist)
    n_star = float(np.argmax(stats.p))
    branches = [b for b in fixed_point_branches(params, dist) if b.stable]
    if not branches:
        raise NoStableBranchError(
            f"no stable gain-loss balance for N_ex={params.n_ex:.3g}")
    return min(branches, key=lambda b: abs(b.n0 - n_star))


def restoring_rate(params: MicrolaserParams,
                   dist: VelocityDistribution | None, n0: float) -> float:
    """1/tau = gamma_c - dG/dn at n0; the photon-number relaxation rate."""
    _, d1, _ = p_derivatives(params, dist, n0)
    return params.gamma_c * (1.0 - params.n_ex * d1)


def mandel_q_linearized(params: MicrolaserParams,
                        dist: VelocityDistribution | None = None,
                        branch: FixedPointBranch | None = None) -> float:
    """Q of the linearized theory, [1 - N_ex * P'(n0)]^-1 - 1.

    Equivalently gamma_c / restoring_rate - 1 on the selected branch.
    """
    if branch is None:
        branch = selected_branch(params, dist)
    return params.gamma_c / branch.restoring_rate - 1.0


def output_flux(params: MicrolaserParams, n_mean: float) -> float:
    """Photon emission rate out of the cavity, gamma_c * <n>."""
    if n_mean < 0:
        raise ValueError("n_mean must be >= 0")
    return params.gamma_c * n_mean
