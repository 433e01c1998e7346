"""Shared parameter containers and the velocity-average machinery.

Every module in the package funnels through these two types: a
:class:`MicrolaserParams` snapshot of the cavity/beam numbers and a
:class:`VelocityDistribution` describing the spread of atomic speeds.
The transit time through the Gaussian cavity mode is ``t_int(v) =
sqrt(pi) * w0 / v``, so all velocity averages reduce to quadrature over
a fixed node/weight table built once per distribution.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Iterable

import numpy as np

TWO_PI = 2.0 * math.pi

# Gaussian speed spread: FWHM -> sigma.
_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class VelocityDistribution:
    """Atomic speed distribution entering the cavity.

    shape "delta" collapses to the single speed v0; "gaussian" uses a
    truncated Gaussian with the given fractional FWHM.
    """

    v0: float
    dv_over_v0: float = 0.0
    shape: str = "gaussian"
    truncation_fwhm: float = 3.0   # +- this many FWHM around v0
    n_nodes: int = 33

    def __post_init__(self):
        if self.v0 <= 0:
            raise ValueError("v0 must be positive")
        if self.dv_over_v0 < 0:
            raise ValueError("dv_over_v0 must be >= 0")
        if self.shape not in ("delta", "gaussian"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")

    @property
    def fwhm(self) -> float:
        return self.dv_over_v0 * self.v0

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature speeds and normalized weights.

        Delta (or zero-width) distributions return a single node. The
        Gaussian case integrates over +-truncation_fwhm FWHM with
        Gauss-Legendre nodes; the lower bound is clipped away from zero
        so 1/v stays finite.
        """
        if self.shape == "delta" or self.dv_over_v0 == 0.0:
            return np.array([self.v0]), np.array([1.0])
        sigma = self.fwhm * _FWHM_TO_SIGMA
        lo = max(self.v0 - self.truncation_fwhm * self.fwhm, 1e-6 * self.v0)
        hi = self.v0 + self.truncation_fwhm * self.fwhm
        x, w = np.polynomial.legendre.leggauss(self.n_nodes)
        v = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        wts = w * np.exp(-0.5 * ((v - self.v0) / sigma) ** 2)
        wts /= wts.sum()
        return v, wts

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw speeds; used by the trajectory engine."""
        if self.shape == "delta" or self.dv_over_v0 == 0.0:
            if size is None:
                return self.v0
            return np.full(size, self.v0)
        sigma = self.fwhm * _FWHM_TO_SIGMA
        lo = max(self.v0 - self.truncation_fwhm * self.fwhm, 1e-6 * self.v0)
        hi = self.v0 + self.truncation_fwhm * self.fwhm
        n = 1 if size is None else size
        out = np.empty(n)
        filled = 0
        while filled < n:
            draw = rng.normal(self.v0, sigma, size=2 * (n - filled) + 8)
            draw = draw[(draw >= lo) & (draw <= hi)]
            take = min(draw.size, n - filled)
            out[filled:filled + take] = draw[:take]
            filled += take
        return out[0] if size is None else out


@dataclass(frozen=True)
class MicrolaserParams:
    """Cavity and beam parameters, all angular frequencies in rad/s.

    r is the atom injection rate (atoms/s). The conventional knobs are
    the dimensionless pair (N_ex, Theta); see `n_ex`, `theta` and
    `for_dimensionless`.
    """

    g: float                 # atom-cavity coupling, rad/s
    gamma_c: float           # cavity decay rate, rad/s
    gamma_a: float = 0.0     # atomic decay rate (recorded, not modeled)
    w0: float = 41e-6        # cavity mode waist, m
    v0: float = 780.0        # most probable speed, m/s
    dv_over_v0: float = 0.0
    r: float = 1.0e6         # injection rate, atoms/s

    def __post_init__(self):
        if self.g <= 0 or self.gamma_c <= 0:
            raise ValueError("g and gamma_c must be positive")
        if self.r < 0:
            raise ValueError("r must be >= 0")
        if self.w0 <= 0 or self.v0 <= 0:
            raise ValueError("w0 and v0 must be positive")

    # -- derived quantities ------------------------------------------------

    def t_int(self, v: float | np.ndarray | None = None):
        """Effective interaction time sqrt(pi)*w0/v for speed v (default v0)."""
        if v is None:
            v = self.v0
        return math.sqrt(math.pi) * self.w0 / np.asarray(v, dtype=float) \
            if np.ndim(v) else math.sqrt(math.pi) * self.w0 / float(v)

    @property
    def n_ex(self) -> float:
        """Injection rate in cavity-decay units, r/gamma_c."""
        return self.r / self.gamma_c

    @property
    def theta(self) -> float:
        """Pump parameter sqrt(N_ex)*g*t_int(v0)."""
        return math.sqrt(self.n_ex) * self.g * self.t_int()

    @property
    def mean_atom_number(self) -> float:
        """<N> = r * t_int(v0): mean number of atoms in the mode."""
        return self.r * self.t_int()

    def distribution(self) -> VelocityDistribution:
        shape = "delta" if self.dv_over_v0 == 0.0 else "gaussian"
        return VelocityDistribution(self.v0, self.dv_over_v0, shape=shape)

    # -- constructors ------------------------------------------------------

    def with_atom_number(self, n_atoms: float) -> "MicrolaserParams":
        """Copy with r chosen so <N> = r*t_int(v0) equals n_atoms."""
        return self.replace(r=n_atoms / self.t_int())

    def replace(self, **kw) -> "MicrolaserParams":
        d = asdict(self)
        d.update(kw)
        return MicrolaserParams(**d)

    @staticmethod
    def for_dimensionless(n_ex: float, theta: float,
                          gamma_c_t_int: float,
                          gamma_c: float = 1.0e6,
                          dv_over_v0: float = 0.0) -> "MicrolaserParams":
        """Build params realizing (N_ex, Theta, gamma_c*t_int) exactly.

        Fixes gamma_c, derives t_int and thence g and r. The physical
        (w0, v0) split is arbitrary at fixed t_int; v0 is kept at a
        lab-scale value.
        """
        if n_ex <= 0 or theta <= 0 or gamma_c_t_int <= 0:
            raise ValueError("dimensionless inputs must be positive")
        t_int = gamma_c_t_int / gamma_c
        v0 = 780.0
        w0 = t_int * v0 / math.sqrt(math.pi)
        g = theta / (math.sqrt(n_ex) * t_int)
        return MicrolaserParams(g=g, gamma_c=gamma_c, w0=w0, v0=v0,
                                dv_over_v0=dv_over_v0, r=n_ex * gamma_c)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "MicrolaserParams":
        return MicrolaserParams(**d)

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def from_json(path) -> "MicrolaserParams":
        with open(path) as f:
            return MicrolaserParams.from_dict(json.load(f))


def baseline_params(mean_atom_number: float = 100.0,
                    v0: float = 780.0,
                    dv_over_v0: float = 0.0) -> MicrolaserParams:
    """The experimental working point: g/2pi = 190 kHz, gamma_c/2pi = 170 kHz,
    gamma_a/2pi = 50 kHz, w0 = 41 um, tuned to the requested atom number."""
    p = MicrolaserParams(
        g=TWO_PI * 190e3,
        gamma_c=TWO_PI * 170e3,
        gamma_a=TWO_PI * 50e3,
        w0=41e-6,
        v0=v0,
        dv_over_v0=dv_over_v0,
        r=1.0,
    )
    return p.with_atom_number(mean_atom_number)
