"""Finite-transit correction to the micromaser photon statistics.

The linearized theory underestimates the variance when the cavity decays
appreciably during one transit.  The correction enters through a single
dimensionless slope alpha,

    Q0 = Q_lin + alpha * gamma_c * t_int,

with alpha = eta * N_ex^2 * Var(n) * Var(P) / n0^2 evaluated on the
unextended steady state; eta is a fit factor calibrated against
trajectory simulations.  In the many-atom limit alpha collapses onto the
quadratic law alpha = eta * Q_lin^2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .params import MicrolaserParams, VelocityDistribution
from . import qmt

# below this |Q| the first-derivative term of Var(P) vanishes with P'
# and the second-order term takes over
_Q_NEAR_ZERO = 0.05

POLY_DEGREE = 8


@dataclass(frozen=True)
class AlphaModel:
    """Calibrated alpha(Q) relation: scale factor eta plus a polynomial
    representation of alpha(x)/eta with no constant term."""

    eta: float
    eta_err: float
    poly_coeffs: tuple  # c_1..c_8 of alpha(x)/eta
    dv_over_v0: float | None = None
    n_ex: float | None = None

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if len(self.poly_coeffs) != POLY_DEGREE:
            raise ValueError(f"expected {POLY_DEGREE} polynomial coefficients")

    def alpha(self, q_qmt):
        """alpha at the given linearized Q; exactly 0 at Q = 0."""
        q = np.asarray(q_qmt, dtype=float)
        acc = np.zeros_like(q)
        for c in reversed(self.poly_coeffs):
            acc = (acc + c) * q
        out = self.eta * acc
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "eta_err": self.eta_err,
            "poly_coeffs": list(self.poly_coeffs),
            "dv_over_v0": self.dv_over_v0,
            "n_ex": self.n_ex,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def from_json(path) -> "AlphaModel":
        with open(path) as f:
            d = json.load(f)
        return AlphaModel(eta=d["eta"], eta_err=d["eta_err"],
                          poly_coeffs=tuple(d["poly_coeffs"]),
                          dv_over_v0=d.get("dv_over_v0"), n_ex=d.get("n_ex"))


@dataclass(frozen=True)
class CorrectionInput:
    """One evaluation point of the transit correction."""

    q_qmt: float
    gamma_c_t_int: float
    alpha: float

    def __post_init__(self):
        if self.gamma_c_t_int < 0:
            raise ValueError("gamma_c_t_int must be >= 0")


# ---------------------------------------------------------------------------
# variance dynamics

def variance_rhs_taylor(r: float, gamma_c: float, t_int: float,
                        n_mean: float, variance: float,
                        p: float, dp: float, d2p: float,
                        eta: float) -> float:
    """dVar/dt with P-moments closed by a second-order expansion about
    n_mean: <P> = P + P''V/2, <P (n - <n>)> = P'V, Var(P) = P'^2 V + P''^2 V^2 / 2.

    The last source term, 2 r^2 Var(P) eta t_int, is the finite-transit
    memory of the gain; eta = 0 recovers the memoryless theory.
    """
    v = variance
    mean_p = p + 0.5 * d2p * v
    cov_pn = dp * v
    var_p = dp * dp * v + 0.5 * d2p * d2p * v * v
    return (r * mean_p + 2.0 * r * cov_pn
            - 2.0 * gamma_c * v + gamma_c * n_mean
            + 2.0 * r * r * var_p * eta * t_int)


def variance_ode_rhs(n_mean: float, variance: float,
                     params: MicrolaserParams,
                     dist: VelocityDistribution | None = None,
                     eta: float = 0.0) -> float:
    """Photon-number variance rate of change at (n_mean, variance)."""
    if n_mean <= 0:
        raise ValueError("n_mean must be positive")
    if variance < 0:
        raise ValueError("variance must be >= 0")
    p, dp, d2p = qmt.p_derivatives(params, dist, n_mean)
    return variance_rhs_taylor(params.r, params.gamma_c, params.t_int(),
                               n_mean, variance, p, dp, d2p, eta)


def steady_state_variance(params: MicrolaserParams,
                          dist: VelocityDistribution | None = None,
                          eta: float = 0.0,
                          n0: float | None = None) -> float:
    """Variance solving dVar/dt = 0 at the operating point n0.

    The closed rhs is quadratic in V; the root continuously connected to
    the linearized solution is returned.
    """
    if n0 is None:
        n0 = qmt.selected_branch(params, dist).n0
    r, gc, t = params.r, params.gamma_c, params.t_int()
    p, dp, d2p = qmt.p_derivatives(params, dist, n0)
    a = 0.5 * r * r * d2p * d2p * eta * t * 2.0
    b = (0.5 * r * d2p + 2.0 * r * dp - 2.0 * gc
         + 2.0 * r * r * dp * dp * eta * t)
    c = r * p + gc * n0
    if a == 0.0:
        if b >= 0:
            raise qmt.NoStableBranchError("variance dynamics not damped")
        return -c / b
    disc = b * b - 4.0 * a * c
    if disc < 0:
        raise qmt.NoStableBranchError("no real steady-state variance")
    root = math.sqrt(disc)
    # b < 0 on a damped branch; the physical root is the smaller one
    v = (-b - root) / (2.0 * a)
    if v < 0:
        v = (-b + root) / (2.0 * a)
    return v


# ---------------------------------------------------------------------------
# alpha

def alpha_bracket(params: MicrolaserParams,
                  dist: VelocityDistribution | None = None,
                  branch: qmt.FixedPointBranch | None = None,
                  stats: qmt.PhotonStatistics | None = None) -> tuple[float, float]:
    """(q_qmt, bracket) with bracket = N_ex^2 * Var(n) * Var(P) / n0^2
    on the unextended steady state; alpha = eta * bracket.

    Var(P) uses P'(n0)^2 * Var(n) away from the gain extremum and picks
    up the second-order term where P' vanishes (Q near 0).
    """
    if stats is None:
        stats = qmt.steady_state_distribution(params, dist)
    if branch is None:
        branch = qmt.selected_branch(params, dist, stats=stats)
    n0 = branch.n0
    q = qmt.mandel_q_linearized(params, dist, branch=branch)
    var_n = stats.variance
    _, dp, d2p = qmt.p_derivatives(params, dist, n0)
    var_p = dp * dp * var_n
    if abs(q) < _Q_NEAR_ZERO:
        var_p += 0.5 * d2p * d2p * var_n * var_n
    n_ex = params.n_ex
    return q, n_ex * n_ex * var_n * var_p / (n0 * n0)


def alpha_exact(params: MicrolaserParams,
                dist: VelocityDistribution | None = None,
                eta: float = 1.0) -> float:
    """alpha evaluated from the unextended steady state at this operating
    point, scaled by eta."""
    _, bracket = alpha_bracket(params, dist)
    return eta * bracket


def alpha_quadratic(q_qmt: float, eta: float) -> float:
    """Large-N_ex limit alpha = eta * q_qmt^2."""
    if not -1.0 < q_qmt <= 0.0:
        raise ValueError("q_qmt must lie in (-1, 0]")
    return eta * q_qmt * q_qmt


def corrected_q(q_qmt: float, alpha: float, gamma_c_t_int: float) -> float:
    """First-order transit correction Q0 = Q_lin + alpha * gamma_c * t_int."""
    if gamma_c_t_int < 0:
        raise ValueError("gamma_c_t_int must be >= 0")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return q_qmt + alpha * gamma_c_t_int


# ---------------------------------------------------------------------------
# eta calibration

def fit_eta(alpha_points, bracket_values,
            dv_over_v0: float | None = None,
            n_ex: float | None = None) -> AlphaModel:
    """Least-squares eta scaling the bracket curve onto measured alpha points.

    alpha_points: (q_qmt, alpha) or (q_qmt, alpha, err) tuples from
    trajectory slope scans. bracket_values: (q_qmt, bracket) pairs from
    alpha_bracket over the same operating curve; interpolated onto the
    measurement q's when the grids differ. Also fits the degree-8
    zero-intercept polynomial of bracket vs q used by AlphaModel.
    """
    ap = np.asarray([tuple(map(float, p)) for p in alpha_points], dtype=float)
    bv = np.asarray([(float(q), float(b)) for q, b in bracket_values], dtype=float)
    if ap.shape[0] < 5:
        raise ValueError("need at least 5 alpha points")
    if np.ptp(ap[:, 0]) == 0.0:
        raise ValueError("degenerate fit: all q_qmt identical")
    q_meas, a_meas = ap[:, 0], ap[:, 1]
    w = 1.0 / ap[:, 2] ** 2 if ap.shape[1] > 2 else np.ones_like(a_meas)

    order = np.argsort(bv[:, 0])
    bq, bb = bv[order, 0], bv[order, 1]
    if (ap.shape[0] == bv.shape[0]
            and np.allclose(np.sort(q_meas), bq, atol=1e-9)):
        idx = np.argsort(q_meas)
        b_at = np.empty_like(a_meas)
        b_at[idx] = bb
    else:
        b_at = np.interp(q_meas, bq, bb)

    denom = float(w @ (b_at * b_at))
    if denom == 0.0:
        raise ValueError("degenerate fit: bracket values all zero")
    eta = float(w @ (b_at * a_meas)) / denom
    resid = a_meas - eta * b_at
    dof = max(len(a_meas) - 1, 1)
    chi2 = float(w @ resid ** 2)
    eta_err = math.sqrt(max(chi2 / dof, 0.0) / denom)

    # polynomial representation of bracket(q), no constant term
    basis = np.vander(bq, POLY_DEGREE + 1, increasing=True)[:, 1:]
    coeffs, *_ = np.linalg.lstsq(basis, bb, rcond=None)
    return AlphaModel(eta=eta, eta_err=eta_err, poly_coeffs=tuple(coeffs),
                      dv_over_v0=dv_over_v0, n_ex=n_ex)


def bracket_curve(n_ex: float, dv_over_v0: float,
                  theta_grid=None) -> list[tuple[float, float]]:
    """(q_qmt, bracket) along the first gain lobe at fixed N_ex.

    Walks theta upward until Q turns back up, so the returned curve is
    the single-valued descending branch that calibration fits use.
    """
    if theta_grid is None:
        theta_grid = np.linspace(0.25, 3.5, 66)
    out = []
    q_min = 0.0
    for theta in theta_grid:
        p = MicrolaserParams.for_dimensionless(n_ex, float(theta), 0.05,
                                               dv_over_v0=dv_over_v0)
        try:
            q, b = alpha_bracket(p)
        except qmt.NoStableBranchError:
            continue
        if q > 0.0:
            continue   # sub-threshold points are outside the model domain
        if q > q_min + 1e-3 and q_min < -0.2:
            break   # past the lobe minimum; curve would fold back
        q_min = min(q_min, q)
        out.append((q, b))
    return out


def build_alpha_model(eta: float, eta_err: float = 0.0,
                      dv_over_v0: float = 0.0,
                      n_ex: float = 1000.0) -> AlphaModel:
    """AlphaModel with the polynomial taken from the analytic bracket
    curve at the given N_ex and spread, and eta supplied externally."""
    curve = bracket_curve(n_ex, dv_over_v0)
    q = np.array([c[0] for c in curve])
    b = np.array([c[1] for c in curve])
    basis = np.vander(q, POLY_DEGREE + 1, increasing=True)[:, 1:]
    coeffs, *_ = np.linalg.lstsq(basis, b, rcond=None)
    return AlphaModel(eta=eta, eta_err=eta_err, poly_coeffs=tuple(coeffs),
                      dv_over_v0=dv_over_v0, n_ex=n_ex)


def load_alpha_points_csv(path) -> list[tuple[float, float]]:
    """Read (q_qmt, alpha) rows, skipping a header line if present."""
    pts = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                pts.append((float(parts[0]), float(parts[1])))
            except ValueError:
                continue   # header
    return pts
