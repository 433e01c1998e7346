"""Input-output curve prediction and two-channel count calibration.

The mean photon number versus mean atom number follows the selected
stable branch of the gain-loss balance and jumps discontinuously where
the globally dominant branch switches.  Measured fluorescence counts
(one per atom, unknown scale) and output counts (one per photon,
unknown scale) are calibrated by fitting both scale factors so the
scaled data lie on that predicted curve.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .params import MicrolaserParams, VelocityDistribution
from . import qmt


class NonIdentifiableError(RuntimeError):
    """Data carry no curvature or jump information to pin the scales."""


@dataclass(frozen=True)
class IOCurve:
    atom_numbers: np.ndarray      # <N> grid
    photon_numbers: np.ndarray    # selected-branch <n> per point
    branch_index: np.ndarray      # which stable branch (ascending order)
    jump_locations: np.ndarray    # <N> values where the branch switches
    params: MicrolaserParams

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("N,n,branch\n")
            for N, n, b in zip(self.atom_numbers, self.photon_numbers,
                               self.branch_index):
                f.write(f"{N:.12e},{n:.12e},{int(b)}\n")

    def interp(self, atom_number):
        """Piecewise-linear read of the curve in log-log coordinates,
        where the between-jump segments are nearly straight; jumps stay
        sharp to grid resolution."""
        x = np.log(np.maximum(np.asarray(atom_number, dtype=float), 1e-300))
        xs = np.log(self.atom_numbers)
        ys = np.log(np.maximum(self.photon_numbers, 1e-300))
        return np.exp(np.interp(x, xs, ys))


@dataclass(frozen=True)
class CalibrationFit:
    scale_atoms: float       # atoms per fluorescence count
    scale_photons: float     # photons per output count
    residual_norm: float
    covariance: np.ndarray

    def __post_init__(self):
        if self.scale_atoms <= 0 or self.scale_photons <= 0:
            raise ValueError("scales must be positive")

    def summary(self) -> dict:
        return {
            "scale_atoms": self.scale_atoms,
            "scale_photons": self.scale_photons,
            "residual_norm": self.residual_norm,
            "scale_atoms_err": float(math.sqrt(abs(self.covariance[0, 0]))),
            "scale_photons_err": float(math.sqrt(abs(self.covariance[1, 1]))),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)
            f.write("\n")


# ---------------------------------------------------------------------------

def _branch_point(params: MicrolaserParams, dist) -> tuple[float, int]:
    """Selected-branch <n> and its index among the stable branches."""
    stats = qmt.steady_state_distribution(params, dist)
    stable = [b for b in qmt.fixed_point_branches(params, dist) if b.stable]
    if not stable:
        return 0.0, -1
    n_star = float(np.argmax(stats.p))
    idx = int(np.argmin([abs(b.n0 - n_star) for b in stable]))
    return stable[idx].n0, idx


def predict_io_curve(params_template: MicrolaserParams,
                     dist: VelocityDistribution | None,
                     atom_numbers) -> IOCurve:
    """Branch-selected steady-state <n> over an ascending <N> grid,
    with the branch-switch locations refined by bisection between the
    bracketing grid points."""
    grid = np.asarray(atom_numbers, dtype=float)
    if grid.size < 1 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("atom-number grid must be positive ascending")
    ns = np.empty(grid.size)
    bi = np.empty(grid.size, dtype=int)
    for i, N in enumerate(grid):
        p = params_template.with_atom_number(N)
        ns[i], bi[i] = _branch_point(p, dist)
    jumps = []
    for i in range(grid.size - 1):
        lo_n, hi_n = ns[i], ns[i + 1]
        if abs(hi_n - lo_n) > max(10.0, 0.2 * max(lo_n, 1.0)):
            jumps.append(_refine_jump(params_template, dist,
                                      grid[i], grid[i + 1], lo_n, hi_n))
    return IOCurve(atom_numbers=grid, photon_numbers=ns, branch_index=bi,
                   jump_locations=np.array(jumps), params=params_template)


def _refine_jump(template, dist, n_lo, n_hi, y_lo, y_hi,
                 iters: int = 40) -> float:
    for _ in range(iters):
        mid = 0.5 * (n_lo + n_hi)
        if (n_hi - n_lo) < 1e-9 * mid:
            break
        y_mid, _ = _branch_point(template.with_atom_number(mid), dist)
        if abs(y_mid - y_lo) < abs(y_mid - y_hi):
            n_lo, y_lo = mid, y_mid
        else:
            n_hi, y_hi = mid, y_mid
    return 0.5 * (n_lo + n_hi)


# ---------------------------------------------------------------------------

_JUMP_WINDOW = 0.02    # fractional <N> window down-weighted around jumps
_JUMP_WEIGHT = 0.01


def _load_curve_for_fit(template, dist, n_hi) -> IOCurve:
    grid = np.geomspace(max(n_hi * 1e-3, 1.0), n_hi, 220)
    return predict_io_curve(template, dist, grid)


def fit_calibration(raw_points, params_template: MicrolaserParams,
                    dist: VelocityDistribution | None = None
                    ) -> CalibrationFit:
    """Two positive scale factors mapping (fluorescence, output) counts
    onto the predicted input-output curve by vertical least squares on
    log(photons).  Log residuals keep the fit scale-equivariant; absolute
    ones reward collapsing all data toward the origin.

    Points within 2% of a predicted jump are down-weighted: branch
    assignment is ambiguous there.
    """
    pts = np.asarray([(float(a), float(b)) for a, b in raw_points])
    if pts.shape[0] < 20:
        raise ValueError("need at least 20 points")
    f, c = pts[:, 0], pts[:, 1]
    if np.ptp(f) == 0.0 or np.ptp(c) == 0.0:
        raise NonIdentifiableError("points are degenerate (no spread)")
    if np.any(f <= 0) or np.any(c < 0):
        raise ValueError("counts must be positive")

    # template curve out to a bit beyond any plausible scaled maximum
    n_hi_guess = 1500.0
    curve = _load_curve_for_fit(params_template, dist, n_hi_guess)
    n_max_curve = curve.atom_numbers[-1]
    s_a0 = n_max_curve / (2.0 * f.max())

    def weights(scaled_n):
        w = np.ones_like(scaled_n)
        for j in curve.jump_locations:
            w[np.abs(scaled_n - j) < _JUMP_WINDOW * j] = _JUMP_WEIGHT
        return w

    n_usable = int(np.count_nonzero(c > 0))

    def _masked(log_sa):
        sa = math.exp(log_sa)
        scaled = sa * f
        use = ((scaled >= curve.atom_numbers[0]) & (scaled <= n_max_curve)
               & (c > 0))
        if int(use.sum()) < max(10, int(0.8 * n_usable)):
            return None
        pred = curve.interp(scaled[use])
        if np.any(pred <= 0):
            return None
        return sa, use, pred

    def objective(log_sa):
        m = _masked(log_sa)
        if m is None:
            return 1e30
        sa, use, pred = m
        w = weights(sa * f[use])
        lr = np.log(pred) - np.log(c[use])
        log_sp = float(w @ lr) / float(w.sum())
        r = lr - log_sp
        return float(w @ (r * r)) / float(w.sum())

    # coarse log-spaced scan, then bounded refinement around the best cell
    grid_log = np.log(s_a0) + np.linspace(-np.log(16.0), np.log(16.0), 121)
    vals = np.array([objective(x) for x in grid_log])
    k = int(np.argmin(vals))
    lo = grid_log[max(k - 1, 0)]
    hi = grid_log[min(k + 1, grid_log.size - 1)]
    res = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    log_sa = float(res.x) if res.fun <= vals[k] else float(grid_log[k])
    m = _masked(log_sa)
    if m is None:
        raise NonIdentifiableError("no scale maps enough points onto the curve")
    sa, use, pred = m
    scaled = sa * f
    w = weights(scaled[use])
    lr = np.log(pred) - np.log(c[use])
    log_sp = float(w @ lr) / float(w.sum())
    sp = math.exp(log_sp)
    resid = lr - log_sp
    rss = float(w @ (resid * resid))

    # identifiability: the data must see curvature or a jump
    in_range = (curve.atom_numbers >= scaled.min()) & \
               (curve.atom_numbers <= scaled.max())
    seg = curve.photon_numbers[in_range]
    has_jump = any(scaled.min() <= j <= scaled.max()
                   for j in curve.jump_locations)
    if not has_jump and seg.size >= 3:
        x = curve.atom_numbers[in_range]
        lin = np.polyval(np.polyfit(x, seg, 1), x)
        if np.max(np.abs(seg - lin)) < 1e-3 * max(np.ptp(seg), 1e-12):
            raise NonIdentifiableError(
                "scaled data cover no jump and the curve is locally linear")

    # Gauss-Newton covariance in (log sa, log sp), mapped back by the scales
    delta = 1e-6
    shifted = curve.interp(sa * math.exp(delta) * f[use])
    dlogpred = (np.log(np.maximum(shifted, 1e-300)) - np.log(pred)) / delta
    jac = np.column_stack([-dlogpred, np.ones(pred.size)])
    jw = jac * w[:, None]
    gram = jw.T @ jac
    dof = max(int(use.sum()) - 2, 1)
    try:
        cov_log = np.linalg.inv(gram) * (rss / dof)
        scale = np.diag([sa, sp])
        cov = scale @ cov_log @ scale
    except np.linalg.LinAlgError:
        cov = np.full((2, 2), np.nan)
    return CalibrationFit(scale_atoms=sa, scale_photons=sp,
                          residual_norm=math.sqrt(rss), covariance=cov)


def load_raw_points_csv(path) -> list[tuple[float, float]]:
    """Rows of (fluorescence_counts, output_counts); header tolerated."""
    out = []
    with open(path) as fh:
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) < 2:
                continue
            try:
                out.append((float(parts[0]), float(parts[1])))
            except ValueError:
                continue
    return out
