"""Stochastic wave-function simulation of the pumped cavity.

Atoms arrive as a Poisson stream, enter excited, couple to the cavity
mode while inside it, and are measured and discarded when they leave
after their own transit time.  Cavity decay stays on throughout.  Decay
jumps are generated by the norm-target scheme: draw u ~ U(0,1), evolve
the unnormalized state under the non-Hermitian Hamiltonian until its
squared norm reaches u, emit a photon there, renormalize, redraw.  Jump
time statistics are exact in this scheme regardless of the integrator
step, which only has to keep the propagator itself accurate.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .params import MicrolaserParams, VelocityDistribution
from . import qmt


class TruncationBreachError(RuntimeError):
    """Fock cutoff reached with non-negligible probability."""


class InsufficientDataError(RuntimeError):
    """Post-burn-in span too short for meaningful statistics."""


# population of the top Fock level that counts as touching the cutoff
_TRUNC_SOFT = 1e-8
# population that aborts the run
_TRUNC_HARD = 1e-5


@dataclass(frozen=True)
class TrajectoryConfig:
    params: MicrolaserParams
    dist: VelocityDistribution | None = None
    n_max: int = 32
    max_simultaneous_atoms: int = 3
    duration: float = 1e-3
    burn_in: float = 0.0
    seed: int = 0
    include_atomic_decay: bool = False
    initial_fock: int = 0
    sample_dt: float | None = None   # default 0.1/gamma_c

    def __post_init__(self):
        if not self.duration > self.burn_in >= 0:
            raise ValueError("need duration > burn_in >= 0")
        if self.max_simultaneous_atoms < 1:
            raise ValueError("max_simultaneous_atoms must be >= 1")
        if self.n_max < 1 or self.initial_fock > self.n_max:
            raise ValueError("bad Fock truncation")

    def resolved_dist(self) -> VelocityDistribution:
        return self.dist if self.dist is not None else self.params.distribution()

    def resolved_sample_dt(self) -> float:
        return self.sample_dt if self.sample_dt else 0.1 / self.params.gamma_c

    def to_dict(self) -> dict:
        d = {
            "params": self.params.to_dict(),
            "dist": asdict(self.resolved_dist()),
            "n_max": self.n_max,
            "max_simultaneous_atoms": self.max_simultaneous_atoms,
            "duration": self.duration,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "include_atomic_decay": self.include_atomic_decay,
            "initial_fock": self.initial_fock,
            "sample_dt": self.resolved_sample_dt(),
        }
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **kw) -> "TrajectoryConfig":
        d = {
            "params": self.params, "dist": self.dist, "n_max": self.n_max,
            "max_simultaneous_atoms": self.max_simultaneous_atoms,
            "duration": self.duration, "burn_in": self.burn_in,
            "seed": self.seed,
            "include_atomic_decay": self.include_atomic_decay,
            "initial_fock": self.initial_fock, "sample_dt": self.sample_dt,
        }
        d.update(kw)
        return TrajectoryConfig(**d)


@dataclass
class TrajectoryRecord:
    sample_times: np.ndarray
    n_expect: np.ndarray
    n2_expect: np.ndarray
    emission_timestamps: np.ndarray
    atoms_injected: int
    truncation_hits: int
    seed: int
    queued_atoms: int = 0
    gamma_c: float = 0.0
    config_hash: str = ""
    occupation: np.ndarray | None = None   # time-averaged p_n past burn-in

    def save(self, prefix: str) -> None:
        """Write <prefix>.moments.csv and <prefix>.emissions.txt."""
        head = (f"# config_hash={self.config_hash} seed={self.seed}"
                f" gamma_c={self.gamma_c!r} atoms_injected={self.atoms_injected}"
                f" truncation_hits={self.truncation_hits}"
                f" queued_atoms={self.queued_atoms}\n")
        with open(f"{prefix}.moments.csv", "w") as f:
            f.write(head)
            f.write("t,n_mean,n2_mean\n")
            for t, m1, m2 in zip(self.sample_times, self.n_expect,
                                 self.n2_expect):
                f.write(f"{t:.12e},{m1:.12e},{m2:.12e}\n")
        with open(f"{prefix}.emissions.txt", "w") as f:
            for t in self.emission_timestamps:
                f.write(f"{t:.12e}\n")

    @staticmethod
    def load(prefix: str) -> "TrajectoryRecord":
        meta = {}
        rows = []
        with open(f"{prefix}.moments.csv") as f:
            for line in f:
                line = line.strip()
                if line.startswith("#"):
                    for tok in line[1:].split():
                        if "=" in tok:
                            k, v = tok.split("=", 1)
                            meta[k] = v
                elif line and not line.startswith("t,"):
                    rows.append([float(x) for x in line.split(",")])
        arr = np.array(rows) if rows else np.zeros((0, 3))
        em = np.loadtxt(f"{prefix}.emissions.txt", ndmin=1) \
            if _nonempty(f"{prefix}.emissions.txt") else np.zeros(0)
        return TrajectoryRecord(
            sample_times=arr[:, 0], n_expect=arr[:, 1], n2_expect=arr[:, 2],
            emission_timestamps=np.asarray(em, dtype=float),
            atoms_injected=int(meta.get("atoms_injected", 0)),
            truncation_hits=int(meta.get("truncation_hits", 0)),
            seed=int(meta.get("seed", 0)),
            queued_atoms=int(meta.get("queued_atoms", 0)),
            gamma_c=float(meta.get("gamma_c", 0.0)),
            config_hash=meta.get("config_hash", ""))


def _nonempty(path) -> bool:
    try:
        with open(path) as f:
            return bool(f.readline().strip())
    except OSError:
        return False


def sample_velocity(dist: VelocityDistribution, rng: np.random.Generator):
    """One transit speed drawn from the configured distribution."""
    return dist.sample(rng)


def suggested_n_max(params: MicrolaserParams,
                    dist: VelocityDistribution | None = None) -> int:
    """Fock cutoff with headroom: 4x the predicted mean (and never below
    a small floor so sparse distributions keep room to fluctuate)."""
    if params.r <= 0 or params.g <= 0:
        return 16
    stats = qmt.steady_state_distribution(params, dist)
    return max(int(4.0 * stats.n_mean) + 8, 16)


# ---------------------------------------------------------------------------
# operator construction

def _build_h_eff(mask: int, n_max: int, n_slots: int, g: float,
                 gamma_c: float, gamma_a: float):
    """CSR parts and a spectral-radius bound of the non-Hermitian
    Hamiltonian with the masked atoms present."""
    nb = n_max + 1
    n_state = 1 << n_slots
    a_op = sp.diags(np.sqrt(np.arange(1, nb)), 1, format="csr")
    id_at = sp.identity(n_state, format="csr")
    num = sp.diags(np.arange(nb, dtype=float), 0, format="csr")
    h = sp.kron(num, id_at, format="csr") * (-0.5j * gamma_c)
    for i in range(n_slots):
        bit = 1 << i
        if not mask & bit:
            continue
        rows, cols = [], []
        for b in range(n_state):
            if b & bit:
                rows.append(b & ~bit)
                cols.append(b)
        sm = sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                           shape=(n_state, n_state))
        h = h + g * (sp.kron(a_op.T, sm, format="csr")
                     + sp.kron(a_op, sm.T, format="csr"))
        if gamma_a > 0:
            ne = sp.csr_matrix((np.ones(len(cols)), (cols, cols)),
                               shape=(n_state, n_state))
            h = h + (-0.5j * gamma_a) * sp.kron(sp.identity(nb, format="csr"),
                                                ne, format="csr")
    h = h.tocsr()
    h.sort_indices()
    rho = _spectral_bound(h)
    return (h.data.astype(np.complex128), h.indices.astype(np.int64),
            h.indptr.astype(np.int64), rho)


def _spectral_bound(h: sp.csr_matrix) -> float:
    """Power-iteration estimate of the largest singular value, padded."""
    n = h.shape[0]
    x = np.ones(n, dtype=np.complex128) / math.sqrt(n)
    hh = h.conj().T.tocsr()
    s = 1.0
    for _ in range(30):
        y = h @ x
        y = hh @ y
        s = math.sqrt(np.linalg.norm(y))
        if s == 0.0:
            return 1.0
        x = y / np.linalg.norm(y)
    return 1.10 * s + 1e-30


# ---------------------------------------------------------------------------
# single trajectory

class _Engine:
    """Mutable per-run state; the public entry point is run_trajectory."""

    def __init__(self, config: TrajectoryConfig, traj_index: int):
        self.cfg = config
        p = config.params
        self.p = p
        self.dist = config.resolved_dist()
        self.n_slots = config.max_simultaneous_atoms
        self.nb = config.n_max + 1
        self.n_state = 1 << self.n_slots
        dim = self.nb * self.n_state
        self.rng = np.random.default_rng(
            np.random.SeedSequence([int(config.seed) & (2**63 - 1),
                                    int(traj_index)]))
        self.psi = np.zeros(dim, dtype=np.complex128)
        self.psi[config.initial_fock * self.n_state] = 1.0
        self.term = np.empty(dim, dtype=np.complex128)
        self.hterm = np.empty(dim, dtype=np.complex128)
        self.psi0 = np.empty(dim, dtype=np.complex128)
        self.mask = 0
        self.departures = np.full(self.n_slots, np.inf)
        self.queue = 0
        self.h_cache: dict[int, tuple] = {}
        self.n_diag = np.repeat(np.arange(self.nb, dtype=float), self.n_state)
        self.gamma_a = p.gamma_a if config.include_atomic_decay else 0.0
        self.u = self.rng.random()
        self.emissions: list[float] = []
        self.atoms_injected = 0
        self.queued_atoms = 0
        self.truncation_hits = 0
        self.occ_sum = np.zeros(self.nb)
        self.occ_count = 0

    # -- state helpers ----------------------------------------------------

    def _view(self):
        return self.psi.reshape(self.nb, self.n_state)

    def _norm2(self) -> float:
        return float(np.vdot(self.psi, self.psi).real)

    def _h(self, mask: int):
        ent = self.h_cache.get(mask)
        if ent is None:
            ent = _build_h_eff(mask, self.cfg.n_max, self.n_slots,
                               self.p.g, self.p.gamma_c, self.gamma_a)
            self.h_cache[mask] = ent
        return ent

    def _check_truncation(self, t: float):
        v = self._view()
        top = float(np.sum(np.abs(v[-1, :]) ** 2)) / self._norm2()
        if top > _TRUNC_SOFT:
            self.truncation_hits += 1
        if top > _TRUNC_HARD:
            raise TruncationBreachError(
                f"top Fock level population {top:.2e} at t={t:.3e}s "
                f"(n_max={self.cfg.n_max}, mask={self.mask:b})")

    # -- events -------------------------------------------------------------

    def _enter_atom(self, t: float):
        slot = next(i for i in range(self.n_slots)
                    if not self.mask & (1 << i))
        bit = 1 << slot
        v = sample_velocity(self.dist, self.rng)
        self.departures[slot] = t + math.sqrt(math.pi) * self.p.w0 / v
        view = self._view()
        src = [b for b in range(self.n_state) if not b & bit]
        dst = [b | bit for b in src]
        view[:, dst] = view[:, src]
        view[:, src] = 0.0
        self.mask |= bit

    def _depart_atom(self, slot: int):
        bit = 1 << slot
        view = self._view()
        exc = [b for b in range(self.n_state) if b & bit]
        gnd = [b & ~bit for b in exc]
        n2 = self._norm2()
        p_exc = float(np.sum(np.abs(view[:, exc]) ** 2)) / n2
        if self.rng.random() < p_exc:
            view[:, gnd] = view[:, exc]
        view[:, exc] = 0.0
        n2_after = self._norm2()
        if n2_after > 0:
            self.psi *= math.sqrt(n2 / n2_after)
        self.mask &= ~bit
        self.departures[slot] = np.inf

    def _cavity_jump(self, t: float):
        view = self._view()
        out = np.zeros_like(view)
        w = np.sqrt(np.arange(1, self.nb))[:, None]
        out[:-1, :] = w * view[1:, :]
        if self.gamma_a > 0 and self.mask:
            w_cav = self.p.gamma_c * float(np.sum(np.abs(out) ** 2))
            weights = [("cavity", w_cav)]
            for i in range(self.n_slots):
                bit = 1 << i
                if self.mask & bit:
                    exc = [b for b in range(self.n_state) if b & bit]
                    w_at = self.gamma_a * float(
                        np.sum(np.abs(view[:, exc]) ** 2))
                    weights.append((i, w_at))
            tot = sum(w for _, w in weights)
            pick = self.rng.random() * tot
            acc = 0.0
            chosen = weights[-1][0]
            for key, w_ in weights:
                acc += w_
                if pick < acc:
                    chosen = key
                    break
            if chosen != "cavity":
                bit = 1 << chosen
                exc = [b for b in range(self.n_state) if b & bit]
                gnd = [b & ~bit for b in exc]
                view[:, gnd] = view[:, exc]
                view[:, exc] = 0.0
                nrm = math.sqrt(self._norm2())
                self.psi /= nrm
                self.u = self.rng.random()
                return
        nrm = float(np.sqrt(np.sum(np.abs(out) ** 2)))
        if nrm == 0.0:
            raise RuntimeError("decay jump from vacuum state")
        self._view()[:, :] = out / nrm
        self.emissions.append(t)
        self.u = self.rng.random()

    def _sample(self, t: float):
        n2 = self._norm2()
        view = self._view()
        pn = np.sum(np.abs(view) ** 2, axis=1) / n2
        m1 = float(np.arange(self.nb) @ pn)
        m2 = float((np.arange(self.nb) ** 2) @ pn)
        if t >= self.cfg.burn_in:
            self.occ_sum += pn
            self.occ_count += 1
        # renormalize and rescale the jump target so the crossing
        # condition is untouched
        self.psi /= math.sqrt(n2)
        self.u /= n2
        self._check_truncation(t)
        return m1, m2

    # -- propagation ---------------------------------------------------------

    def _evolve(self, t: float, t_stop: float):
        """Advance to t_stop, firing any decay jumps on the way."""
        while t < t_stop:
            if self.mask == 0:
                t = self._evolve_empty(t, t_stop)
            else:
                data, idx, ptr, rho = self._h(self.mask)
                dt, crossed = _kernels.evolve_to(
                    data, idx, ptr, rho, self.psi, t_stop - t, self.u,
                    self.term, self.hterm, self.psi0)
                t += dt
                if crossed:
                    self._cavity_jump(t)
                else:
                    return
        return

    def _evolve_empty(self, t: float, t_stop: float) -> float:
        """Closed-form decay when no atoms are inside: amplitudes pick up
        exp(-gamma_c n tau / 2) and the norm crossing solves directly."""
        view = self._view()
        pn = np.sum(np.abs(view) ** 2, axis=1)
        occupied = np.nonzero(pn)[0]
        gc = self.p.gamma_c
        tau_max = t_stop - t

        def log_norm2(tau):
            return math.log(float(pn[occupied]
                                   @ np.exp(-gc * occupied * tau)))

        target = math.log(self.u)
        if log_norm2(tau_max) >= target:
            fac = np.exp(-0.5 * gc * np.arange(self.nb) * tau_max)
            view *= fac[:, None]
            return t_stop
        lo, hi = 0.0, tau_max
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if hi - lo < 1e-14 * max(tau_max, 1e-300):
                break
            if log_norm2(mid) >= target:
                lo = mid
            else:
                hi = mid
        tau = 0.5 * (lo + hi)
        fac = np.exp(-0.5 * gc * np.arange(self.nb) * tau)
        view *= fac[:, None]
        self._cavity_jump(t + tau)
        return t + tau

    # -- main loop ------------------------------------------------------------

    def run(self) -> TrajectoryRecord:
        cfg = self.cfg
        r = self.p.r
        dt_s = cfg.resolved_sample_dt()
        next_arrival = (self.rng.exponential(1.0 / r) if r > 0 else math.inf)
        sample_times, m1s, m2s = [], [], []
        t = 0.0
        next_sample = 0.0
        while True:
            t_dep = float(self.departures.min())
            t_next = min(next_arrival, t_dep, next_sample, cfg.duration)
            self._evolve(t, t_next)
            t = t_next
            if t >= cfg.duration and next_sample > cfg.duration:
                break
            if t == next_sample:
                m1, m2 = self._sample(t)
                sample_times.append(t)
                m1s.append(m1)
                m2s.append(m2)
                next_sample += dt_s
                if next_sample > cfg.duration and t >= cfg.duration:
                    break
                continue
            if t == t_dep:
                self._depart_atom(int(np.argmin(self.departures)))
                if self.queue > 0:
                    self.queue -= 1
                    self.atoms_injected += 1
                    self._enter_atom(t)
                continue
            if t == next_arrival:
                next_arrival = t + self.rng.exponential(1.0 / r)
                if bin(self.mask).count("1") < self.n_slots:
                    self.atoms_injected += 1
                    self._enter_atom(t)
                else:
                    self.queue += 1
                    self.queued_atoms += 1
                continue
            if t >= cfg.duration:
                break
        occ = (self.occ_sum / self.occ_count if self.occ_count else None)
        return TrajectoryRecord(
            sample_times=np.array(sample_times),
            n_expect=np.array(m1s),
            n2_expect=np.array(m2s),
            emission_timestamps=np.array(self.emissions),
            atoms_injected=self.atoms_injected,
            truncation_hits=self.truncation_hits,
            seed=cfg.seed,
            queued_atoms=self.queued_atoms,
            gamma_c=self.p.gamma_c,
            config_hash=cfg.config_hash(),
            occupation=occ,
        )


def run_trajectory(config: TrajectoryConfig,
                   traj_index: int = 0) -> TrajectoryRecord:
    """One stochastic realization; bit-reproducible given (config, index)."""
    return _Engine(config, traj_index).run()


def _run_indexed(args):
    cfg, idx = args
    return run_trajectory(cfg, idx)


def run_ensemble(config: TrajectoryConfig, n_trajectories: int,
                 threads: int = 1) -> list[TrajectoryRecord]:
    """Independent trajectories indexed 0..n-1; order is deterministic
    regardless of worker count."""
    jobs = [(config, i) for i in range(n_trajectories)]
    if threads <= 1:
        return [_run_indexed(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(_run_indexed, jobs))


# ---------------------------------------------------------------------------
# reduction

@dataclass(frozen=True)
class EnsembleStatistics:
    n_mean: float
    variance: float
    mandel_q: float
    n_mean_err: float
    q_err: float
    status: str
    n_records: int
    span: float


def ensemble_statistics(records: list[TrajectoryRecord],
                        burn_in: float) -> EnsembleStatistics:
    """Time-and-ensemble averaged moments past burn_in.

    Q = variance/mean - 1 from pooled first and second moments; errors
    by jackknife over trajectories, which treats each trajectory as one
    block of correlated samples.
    """
    if not records:
        raise InsufficientDataError("no records")
    gc = records[0].gamma_c
    span = float(records[0].sample_times[-1]) - burn_in if \
        records[0].sample_times.size else 0.0
    if gc > 0 and span < 50.0 / gc:
        raise InsufficientDataError(
            f"post-burn-in span {span:.3e}s < 50/gamma_c = {50.0 / gc:.3e}s")
    m1 = np.empty(len(records))
    m2 = np.empty(len(records))
    for i, rec in enumerate(records):
        sel = rec.sample_times >= burn_in
        if not np.any(sel):
            raise InsufficientDataError("a record has no post-burn-in samples")
        m1[i] = float(np.mean(rec.n_expect[sel]))
        m2[i] = float(np.mean(rec.n2_expect[sel]))

    def reduce(m1v, m2v):
        mean = float(np.mean(m1v))
        var = float(np.mean(m2v)) - mean * mean
        q = var / mean - 1.0 if mean > 0 else math.nan
        return mean, var, q

    mean, var, q = reduce(m1, m2)
    n = len(records)
    if mean == 0.0 or not math.isfinite(q):
        return EnsembleStatistics(mean, var, math.nan, 0.0, math.nan,
                                  "degenerate", n, span)
    if n < 2:
        return EnsembleStatistics(mean, var, q, math.nan, math.nan,
                                  "single-record", n, span)
    jk = np.array([reduce(np.delete(m1, i), np.delete(m2, i))
                   for i in range(n)])
    fac = (n - 1) / n
    mean_err = math.sqrt(max(fac * np.sum((jk[:, 0] - jk[:, 0].mean()) ** 2),
                             0.0))
    q_err = math.sqrt(max(fac * np.sum((jk[:, 2] - jk[:, 2].mean()) ** 2),
                          0.0))
    return EnsembleStatistics(mean, var, q, mean_err, q_err, "ok", n, span)


def weighted_line_fit(x, y, err=None) -> dict:
    """Weighted least squares y = intercept + slope*x with parameter errors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if err is None else 1.0 / np.asarray(err, float) ** 2
    sw = w.sum()
    sx = (w * x).sum()
    sy = (w * y).sum()
    sxx = (w * x * x).sum()
    sxy = (w * x * y).sum()
    d = sw * sxx - sx * sx
    if d <= 0:
        raise ValueError("degenerate abscissae")
    slope = (sw * sxy - sx * sy) / d
    intercept = (sxx * sy - sx * sxy) / d
    resid = y - intercept - slope * x
    chi2 = float(w @ resid ** 2)
    dof = max(x.size - 2, 1)
    scale = chi2 / dof if err is None else 1.0
    slope_err = math.sqrt(scale * sw / d)
    intercept_err = math.sqrt(scale * sxx / d)
    ss_tot = float(w @ (y - sy / sw) ** 2)
    r2 = 1.0 - chi2 / ss_tot if ss_tot > 0 else 1.0
    return {"slope": slope, "intercept": intercept,
            "slope_err": slope_err, "intercept_err": intercept_err,
            "chi2": chi2, "r_squared": r2}


def alpha_slope_scan(base_config: TrajectoryConfig,
                     gamma_c_t_int_values,
                     n_trajectories: int = 8,
                     threads: int = 1) -> dict:
    """Q versus gamma_c*t_int at fixed (N_ex, Theta, dv): the slope is a
    trajectory measurement of alpha and the intercept estimates the
    zero-transit Q.

    The scan varies g, t_int, and r together so the dimensionless triple
    stays put.
    """
    vals = sorted(float(v) for v in gamma_c_t_int_values)
    if len(vals) < 3:
        raise ValueError("need at least 3 scan values")
    if len(set(vals)) != len(vals):
        raise ValueError("scan values must be distinct")
    p0 = base_config.params
    n_ex, theta = p0.n_ex, p0.theta
    dv = base_config.resolved_dist().dv_over_v0
    qs, errs, means = [], [], []
    for gct in vals:
        p = MicrolaserParams.for_dimensionless(
            n_ex, theta, gct, gamma_c=p0.gamma_c, dv_over_v0=dv)
        cfg = base_config.replace(params=p, dist=None)
        recs = run_ensemble(cfg, n_trajectories, threads=threads)
        st = ensemble_statistics(recs, cfg.burn_in)
        if st.status != "ok":
            raise InsufficientDataError(f"degenerate point at {gct}")
        qs.append(st.mandel_q)
        errs.append(st.q_err)
        means.append(st.n_mean)
    fit = weighted_line_fit(vals, qs, errs)
    return {
        "alpha": fit["slope"], "alpha_err": fit["slope_err"],
        "q_intercept": fit["intercept"],
        "q_intercept_err": fit["intercept_err"],
        "r_squared": fit["r_squared"],
        "points": [
            {"gamma_c_t_int": v, "mandel_q": q, "q_err": e, "n_mean": m}
            for v, q, e, m in zip(vals, qs, errs, means)
        ],
    }
