"""Intensity-correlation measurement chain on photon timestamp streams.

Streams are split at a beamsplitter, degraded by detector efficiency and
deadtime, and correlated with every pairwise delay (multi-start
multi-stop).  g2(tau) = 1 + (Q/<n>) exp(-tau/tau_c) is fitted to the
folded histogram, and a quadratic fit of g2(0) against imposed deadtime
recovers the deadtime-free value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from . import _kernels


class EmptyStreamError(RuntimeError):
    pass


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimestampStream:
    """Detection times of one detector over [0, span] seconds."""

    detector_id: str
    times: np.ndarray
    span: float
    applied_deadtime: float = 0.0
    efficiency: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if t.size and (np.any(np.diff(t) <= 0)):
            raise ValueError("times must be strictly increasing")
        if t.size and (t[0] < 0 or t[-1] > self.span):
            raise ValueError("times must lie in [0, span]")
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must be in [0, 1]")

    @property
    def rate(self) -> float:
        return self.times.size / self.span if self.span > 0 else 0.0

    def save(self, path) -> None:
        with open(path, "w") as f:
            for t in self.times:
                f.write(f"{t:.12e}\n")

    @staticmethod
    def load(path, span: float, detector_id: str = "d") -> "TimestampStream":
        times = np.loadtxt(path, ndmin=1, dtype=float)
        return TimestampStream(detector_id=detector_id, times=times,
                               span=span)


@dataclass(frozen=True)
class CorrelationCurve:
    tau: np.ndarray        # bin centers, s
    g2: np.ndarray
    err: np.ndarray
    bin_width: float
    counts: np.ndarray     # raw pair counts per bin

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("tau,g2,err\n")
            for t, g, e in zip(self.tau, self.g2, self.err):
                f.write(f"{t:.12e},{g:.12e},{e:.12e}\n")


@dataclass(frozen=True)
class G2Fit:
    g2_zero: float
    tau: float
    q_over_n: float
    mandel_q: float | None
    covariance: np.ndarray   # over (q_over_n, tau)

    def summary(self) -> dict:
        return {
            "g2_zero": self.g2_zero,
            "tau": self.tau,
            "q_over_n": self.q_over_n,
            "mandel_q": self.mandel_q,
            "q_over_n_err": float(math.sqrt(abs(self.covariance[0, 0]))),
            "tau_err": float(math.sqrt(abs(self.covariance[1, 1]))),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)
            f.write("\n")


# ---------------------------------------------------------------------------
# stream operations

def split_stream(source: TimestampStream, efficiency_1: float,
                 efficiency_2: float, rng: np.random.Generator
                 ) -> tuple[TimestampStream, TimestampStream]:
    """Independently route each event to detector 1, detector 2, or the
    discard port; ordering within each output is inherited."""
    if not (0 <= efficiency_1 <= 1 and 0 <= efficiency_2 <= 1
            and efficiency_1 + efficiency_2 <= 1 + 1e-12):
        raise ValueError("efficiencies must be in [0,1] with sum <= 1")
    u = rng.random(source.times.size)
    to_1 = u < efficiency_1
    to_2 = (~to_1) & (u < efficiency_1 + efficiency_2)
    s1 = TimestampStream("d1", source.times[to_1], source.span,
                         efficiency=efficiency_1)
    s2 = TimestampStream("d2", source.times[to_2], source.span,
                         efficiency=efficiency_2)
    return s1, s2


def impose_deadtime(stream: TimestampStream,
                    deadtime: float) -> TimestampStream:
    """Greedy deadtime: keep an event iff it falls at least `deadtime`
    after the previously kept one."""
    if deadtime < 0:
        raise ValueError("deadtime must be >= 0")
    if deadtime == 0.0 or stream.times.size == 0:
        return TimestampStream(stream.detector_id, stream.times.copy(),
                               stream.span, applied_deadtime=deadtime,
                               efficiency=stream.efficiency)
    t = stream.times
    keep = np.empty(t.size, dtype=np.bool_)
    _kernels.greedy_deadtime_mask(t, deadtime, keep)
    return TimestampStream(stream.detector_id, t[keep], stream.span,
                           applied_deadtime=deadtime,
                           efficiency=stream.efficiency)


# ---------------------------------------------------------------------------
# correlation estimation

def _pair_counts(t1: np.ndarray, t2: np.ndarray, bin_width: float,
                 n_bins: int, same: bool) -> np.ndarray:
    counts = np.zeros(n_bins, dtype=np.int64)
    _kernels.pair_delay_counts(np.ascontiguousarray(t1),
                               np.ascontiguousarray(t2),
                               bin_width, n_bins, same, counts)
    return counts


def correlate(s1: TimestampStream, s2: TimestampStream, bin_width: float,
              max_lag: float) -> CorrelationCurve:
    """Multi-start multi-stop estimate of g2(tau).

    All pairwise delays within +-max_lag enter a folded histogram;
    normalization uses the measured rates over the overlapping span, so
    efficiency and deadtime losses cancel.  Errors are Poissonian.
    """
    if bin_width <= 0 or max_lag <= 0:
        raise ValueError("bin_width and max_lag must be positive")
    span = min(s1.span, s2.span)
    if span <= 0 or max_lag > 0.1 * span:
        raise ValueError("max_lag must be well inside the stream span")
    t1 = s1.times[s1.times <= span]
    t2 = s2.times[s2.times <= span]
    if t1.size == 0 or t2.size == 0:
        raise EmptyStreamError("cannot correlate an empty stream")
    same = t1.size == t2.size and (t1 is t2 or np.array_equal(t1, t2))
    n_bins = int(np.ceil(max_lag / bin_width))
    counts = _pair_counts(t1, t2, bin_width, n_bins, same)
    centers = (np.arange(n_bins) + 0.5) * bin_width
    n_pairs = t1.size * (t1.size - 1) if same else t1.size * t2.size
    expected = n_pairs * 2.0 * bin_width * (span - centers) / span ** 2
    g2 = counts / expected
    err = np.sqrt(np.maximum(counts, 1)) / expected
    return CorrelationCurve(tau=centers, g2=g2, err=err,
                            bin_width=bin_width, counts=counts)


def pooled_correlate(stream_pairs, bin_width: float,
                     max_lag: float) -> CorrelationCurve:
    """Correlation pooled over an ensemble of stream pairs: counts and
    pair expectations add before normalizing, weighting each realization
    by its own statistics."""
    total_counts = None
    total_expected = None
    centers = None
    for s1, s2 in stream_pairs:
        c = correlate(s1, s2, bin_width, max_lag)
        span = min(s1.span, s2.span)
        t1n = np.count_nonzero(s1.times <= span)
        t2n = np.count_nonzero(s2.times <= span)
        same = t1n == t2n and np.array_equal(s1.times, s2.times)
        n_pairs = t1n * (t1n - 1) if same else t1n * t2n
        expected = n_pairs * 2.0 * bin_width * (span - c.tau) / span ** 2
        if total_counts is None:
            total_counts = c.counts.astype(float)
            total_expected = expected
            centers = c.tau
        else:
            total_counts += c.counts
            total_expected += expected
    if total_counts is None:
        raise EmptyStreamError("no stream pairs supplied")
    g2 = total_counts / total_expected
    err = np.sqrt(np.maximum(total_counts, 1)) / total_expected
    return CorrelationCurve(tau=centers, g2=g2, err=err,
                            bin_width=bin_width,
                            counts=total_counts.astype(np.int64))


# ---------------------------------------------------------------------------
# fits

def fit_g2(curve: CorrelationCurve, n_mean: float | None = None) -> G2Fit:
    """Weighted fit of 1 + A exp(-tau/tau_c); A = Q/<n> at zero delay.

    Pass the mean photon number to convert the amplitude into a Mandel Q;
    without it mandel_q is left unset."""
    if curve.tau.size < 10:
        raise FitError("need at least 10 bins for the exponential fit")

    def model(tau, a, tau_c):
        return 1.0 + a * np.exp(-tau / tau_c)

    a0 = float(curve.g2[0] - 1.0)
    tau0 = float(curve.tau[curve.tau.size // 3])
    try:
        popt, pcov = curve_fit(
            model, curve.tau, curve.g2, p0=[a0 if a0 != 0 else -1e-3, tau0],
            sigma=curve.err, absolute_sigma=True,
            bounds=([-1.0, curve.bin_width * 1e-6],
                    [np.inf, curve.tau[-1] * 1e3]),
            maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"exponential fit failed: {exc}") from exc
    a, tau_c = float(popt[0]), float(popt[1])
    return G2Fit(g2_zero=1.0 + a, tau=tau_c, q_over_n=a,
                 mandel_q=a * n_mean if n_mean is not None else None,
                 covariance=np.asarray(pcov))


def extrapolate_deadtime_free(points) -> dict:
    """Quadratic-in-deadtime extrapolation of g2(0) to zero deadtime.

    points: (deadtime, g2_zero, err) triples, >= 4 distinct deadtimes
    including small ones. Returns the weighted-fit intercept and its
    standard error.
    """
    pts = np.asarray([tuple(map(float, p)) for p in points], dtype=float)
    if pts.shape[0] < 4 or np.unique(pts[:, 0]).size < 4:
        raise ValueError("need at least 4 distinct deadtime points")
    d, y, e = pts[:, 0], pts[:, 1], pts[:, 2]
    if np.any(e <= 0):
        raise ValueError("errors must be positive")
    d_ref = float(d.max())   # condition the Vandermonde on d/d_max
    x = np.vander(d / d_ref, 3, increasing=True)
    w = 1.0 / e
    xw = x * w[:, None]
    yw = y * w
    gram = xw.T @ xw
    if np.linalg.cond(gram) > 1e12:
        raise FitError("deadtime extrapolation is ill-conditioned")
    coef = np.linalg.solve(gram, xw.T @ yw)
    cov = np.linalg.inv(gram)
    scale = np.array([1.0, 1.0 / d_ref, 1.0 / d_ref ** 2])
    return {"g2_zero_free": float(coef[0]),
            "err": float(math.sqrt(cov[0, 0])),
            "coefficients": [float(c * s) for c, s in zip(coef, scale)]}


def deadtime_grid(tau_corr: float, n_points: int = 6) -> np.ndarray:
    """Default imposed-deadtime sweep: log-spaced over [0.02, 1]*tau_corr."""
    return tau_corr * np.geomspace(0.02, 1.0, n_points)


def poisson_stream(rate: float, span: float, rng: np.random.Generator,
                   detector_id: str = "src") -> TimestampStream:
    """Homogeneous Poisson timestamps on [0, span]; the coherent-source
    reference for calibration checks."""
    if rate <= 0 or span <= 0:
        raise ValueError("rate and span must be positive")
    n = rng.poisson(rate * span)
    times = np.sort(rng.random(n)) * span
    # strict monotonicity: collapse duplicate draws (measure zero, but
    # float grids make them possible)
    times = np.unique(times)
    return TimestampStream(detector_id=detector_id, times=times, span=span)
