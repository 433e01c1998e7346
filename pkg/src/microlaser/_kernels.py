"""Compiled inner loops for the trajectory engine.

The propagator applies exp(-i H dt) by fixed-order Taylor summation with
the step bounded by the spectral radius estimate, so each step's
truncation error sits near machine precision.  Between quantum jumps the
squared norm of the unnormalized state decays monotonically; a jump
fires where it crosses the pre-drawn uniform target, and the crossing
time is refined inside the step by a bracketed secant on the log norm.
"""

import numba
import numpy as np

TAYLOR_ORDER = 18
TAYLOR_RADIUS = 2.0   # max |H| dt per step; 2.0^19/19! ~ 2e-11


@numba.njit(cache=True)
def _csr_mv(data, indices, indptr, x, out):
    for i in range(out.size):
        acc = 0.0 + 0.0j
        for jj in range(indptr[i], indptr[i + 1]):
            acc += data[jj] * x[indices[jj]]
        out[i] = acc


@numba.njit(cache=True)
def _norm2(x):
    acc = 0.0
    for i in range(x.size):
        acc += x[i].real * x[i].real + x[i].imag * x[i].imag
    return acc


@numba.njit(cache=True)
def _taylor_inplace(data, indices, indptr, y, dt, term, hterm):
    # y <- exp(-i H dt) y, truncated Taylor series
    for i in range(y.size):
        term[i] = y[i]
    for k in range(1, TAYLOR_ORDER + 1):
        _csr_mv(data, indices, indptr, term, hterm)
        c = -1j * dt / k
        for i in range(y.size):
            term[i] = c * hterm[i]
            y[i] += term[i]


@numba.njit(cache=True)
def _refine_crossing(data, indices, indptr, psi0, dt, u_target,
                     term, hterm, out):
    """Crossing time delta in (0, dt] where the squared norm of
    exp(-i H delta) psi0 equals u_target; out receives that state."""
    lo = 0.0
    glo = np.log(_norm2(psi0) / u_target)   # >= 0 by construction
    hi = dt
    for i in range(psi0.size):
        out[i] = psi0[i]
    _taylor_inplace(data, indices, indptr, out, dt, term, hterm)
    ghi = np.log(_norm2(out) / u_target)    # < 0: crossing bracketed
    delta = dt * glo / (glo - ghi)
    for _ in range(80):
        if hi - lo <= 1e-13 * dt:
            break
        for i in range(psi0.size):
            out[i] = psi0[i]
        _taylor_inplace(data, indices, indptr, out, delta, term, hterm)
        g = np.log(_norm2(out) / u_target)
        if abs(g) < 1e-12:
            return delta
        if g > 0.0:
            lo, glo = delta, g
        else:
            hi, ghi = delta, g
        # secant through the bracket ends, bisection fallback
        d = lo + (hi - lo) * glo / (glo - ghi)
        if d <= lo or d >= hi:
            d = 0.5 * (lo + hi)
        delta = d
    for i in range(psi0.size):
        out[i] = psi0[i]
    _taylor_inplace(data, indices, indptr, out, delta, term, hterm)
    return delta


@numba.njit(cache=True)
def greedy_deadtime_mask(times, deadtime, keep):
    """keep[i] = event i survives a greedy deadtime of the given length."""
    last = -1.0e300
    for i in range(times.size):
        if times[i] - last >= deadtime:
            keep[i] = True
            last = times[i]
        else:
            keep[i] = False


@numba.njit(cache=True)
def pair_delay_counts(t1, t2, bin_width, n_bins, same, counts):
    """Folded histogram of |t2[j] - t1[i]| over all pairs within
    n_bins*bin_width, skipping i == j when both arrays are one stream."""
    max_lag = n_bins * bin_width
    j_lo = 0
    j_hi = 0
    n2 = t2.size
    for i in range(t1.size):
        ti = t1[i]
        while j_lo < n2 and t2[j_lo] < ti - max_lag:
            j_lo += 1
        if j_hi < j_lo:
            j_hi = j_lo
        while j_hi < n2 and t2[j_hi] <= ti + max_lag:
            j_hi += 1
        for j in range(j_lo, j_hi):
            if same and j == i:
                continue
            d = t2[j] - ti
            if d < 0.0:
                d = -d
            idx = int(d / bin_width)
            if idx < n_bins:
                counts[idx] += 1


@numba.njit(cache=True)
def evolve_to(data, indices, indptr, rho, psi, t_total, u_target,
              term, hterm, psi0):
    """Advance psi under exp(-i H t) for up to t_total.

    Returns (t_evolved, crossed): crossed means the squared norm hit
    u_target at t_evolved and psi holds the pre-jump state there;
    otherwise psi is the state at t_total.
    """
    if t_total <= 0.0:
        return 0.0, False
    step = TAYLOR_RADIUS / rho
    t = 0.0
    while t < t_total:
        dt = step
        if t + dt >= t_total:
            dt = t_total - t
        for i in range(psi.size):
            psi0[i] = psi[i]
        _taylor_inplace(data, indices, indptr, psi, dt, term, hterm)
        if _norm2(psi) < u_target:
            delta = _refine_crossing(data, indices, indptr, psi0, dt,
                                     u_target, term, hterm, psi)
            return t + delta, True
        t += dt
    return t_total, False
