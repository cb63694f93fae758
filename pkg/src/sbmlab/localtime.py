"""Occupation-density estimation, decomposition identities, renormalized
statistics, and the atomic-initial-measure blow-up experiments.

All functions here are pure transforms over immutable PathRecords; pairing
across probe radii on the same path is the caller's responsibility and is what
the stabilization / rate reports rely on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .constants import LOG_COEF_D2, POLE_COEF_D3, gaussian_normalizer
from .kernels import POS_INFINITE, as_point, is_infinite
from .particles import PathRecord, functional_at, occupation_integral


@dataclass(frozen=True)
class LocalTimeEstimate:
    x: tuple
    t: float
    eps: float
    value: float
    replicate: int


@dataclass(frozen=True)
class TanakaDecomposition:
    dim: int
    x: tuple
    t: float
    local_time: float
    terminal_term: float      # X_t(phi_x) in d=3, X_t(g_x) in d=2
    martingale: float         # recovered from the rearranged identity
    statistic: float          # Z in d=3, additive residual in d=2
    quadratic_variation: float | None = None


@dataclass(frozen=True)
class AtomicMeasure:
    """Finite atomic measure; its atom set is exactly the bad set of the
    pole potential in d=3."""

    atoms: tuple  # ((mass, point), ...)

    def __post_init__(self):
        checked = []
        for mass, point in self.atoms:
            if mass <= 0:
                raise ValueError("atom masses must be positive")
            checked.append((float(mass), tuple(float(c) for c in point)))
        object.__setattr__(self, "atoms", tuple(checked))

    @property
    def total_mass(self) -> float:
        return sum(m for m, _ in self.atoms)

    def is_atom(self, x) -> bool:
        xa = np.asarray(x, dtype=float)
        return any(np.allclose(xa, np.asarray(p)) for _, p in self.atoms)

    def pole_potential(self, x):
        """mu(phi_x) = sum a_i * POLE_COEF / |y_i - x|; POS_INFINITE at atoms."""
        xa = np.asarray(x, dtype=float)
        total = 0.0
        for mass, point in self.atoms:
            r = float(np.linalg.norm(np.asarray(point) - xa))
            if r == 0.0:
                return POS_INFINITE
            total += mass * POLE_COEF_D3 / r
        return total

    def log_plus_potential(self, x):
        """Lambda(x) = sum a_i log+(1/|y_i - x|); POS_INFINITE at atoms."""
        xa = np.asarray(x, dtype=float)
        total = 0.0
        for mass, point in self.atoms:
            r = float(np.linalg.norm(np.asarray(point) - xa))
            if r == 0.0:
                return POS_INFINITE
            total += mass * max(math.log(1.0 / r), 0.0)
        return total


def mollified_kernel_id(x_norm: float, eps: float) -> str:
    return f"lt_x{x_norm:g}_eps{eps:g}"


def default_bandwidth(n_init: int, dim: int, dt: float) -> float:
    """Bandwidth floor keeping O(1) kernel mass per occupied cell; validated
    by the eps-sweep bias test rather than asserted theoretically."""
    return max(0.5 * n_init ** (-1.0 / (dim + 2)), 2.0 * math.sqrt(dt))


def estimate_local_time(path: PathRecord, kernel_id: str, x, eps: float,
                        t: float | None = None) -> LocalTimeEstimate:
    """Occupation integral of the bandwidth-eps Gaussian at x, read off a path.

    t=0 is identically zero; otherwise t must be a report time of the record.
    """
    xa = tuple(float(c) for c in np.atleast_1d(np.asarray(x, dtype=float)))
    if t is not None and t == 0.0:
        value = 0.0
        t_out = 0.0
    else:
        value = occupation_integral(path, kernel_id, t)
        t_out = float(path.report_times[-1]) if t is None else t
    return LocalTimeEstimate(x=xa, t=t_out, eps=eps, value=value,
                             replicate=path.replicate)


def expected_local_time(dim: int, x, t: float, eps: float,
                        t_cap: float | None = None) -> float:
    """Quadrature/closed-form mean of the bandwidth-eps estimate under a unit
    point mass at the origin (the unbiasedness oracle)."""
    return kernels.mollified_occupation_mean(dim, t, x, eps, t_cap=t_cap)


def renorm_stat_d3(local_time: float, x) -> float:
    """Gaussian-limit statistic (L - POLE_COEF/|x|) / normalizer, 0 < |x| < 1."""
    r = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if not 0.0 < r < 1.0:
        raise ValueError("statistic defined for 0 < |x| < 1")
    return (local_time - POLE_COEF_D3 / r) / gaussian_normalizer(r)


def renorm_stat_d2(local_time: float, x) -> float:
    """Additive residual L - LOG_COEF * log(1/|x|), 0 < |x| < 1."""
    r = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if not 0.0 < r < 1.0:
        raise ValueError("residual defined for 0 < |x| < 1")
    return local_time - LOG_COEF_D2 * math.log(1.0 / r)


def tanaka_decompose(path: PathRecord, x, t: float, dim: int, *,
                     lt_kernel: str, terminal_kernel: str,
                     invsq_kernel: str | None = None,
                     initial_potential: float | None = None) -> TanakaDecomposition:
    """Rearranged decomposition of the occupation density at x.

    d=3: martingale = L + X_t(phi_x) - mu(phi_x), with quadratic-variation
    companion POLE_COEF^2 * int_0^t X_s(|y-x|^-2) ds when invsq_kernel is given.
    d=2: martingale = X_t(g_x) - pi L + log(1/|x|).
    The d=3 identity L - mu(phi_x) = M - X_t(phi_x) is exact by construction.
    """
    r = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if r <= 0:
        raise ValueError("x must be away from the origin")
    lhat = occupation_integral(path, lt_kernel, t)
    terminal = functional_at(path, terminal_kernel, t)
    if dim == 3:
        mu_phi = initial_potential if initial_potential is not None else POLE_COEF_D3 / r
        martingale = lhat + terminal - mu_phi
        stat = renorm_stat_d3(lhat, np.asarray(x)) if 0 < r < 1 else float("nan")
        qv = None
        if invsq_kernel is not None:
            qv = POLE_COEF_D3**2 * occupation_integral(path, invsq_kernel, t)
        return TanakaDecomposition(dim=3, x=tuple(np.atleast_1d(x).astype(float)),
                                   t=t, local_time=lhat, terminal_term=terminal,
                                   martingale=martingale, statistic=stat,
                                   quadratic_variation=qv)
    if dim == 2:
        martingale = terminal - math.pi * lhat + math.log(1.0 / r)
        stat = renorm_stat_d2(lhat, np.asarray(x)) if 0 < r < 1 else float("nan")
        return TanakaDecomposition(dim=2, x=tuple(np.atleast_1d(x).astype(float)),
                                   t=t, local_time=lhat, terminal_term=terminal,
                                   martingale=martingale, statistic=stat)
    raise ValueError("dim must be 2 or 3")


@dataclass
class RateReport:
    alpha: float
    x_norms: np.ndarray
    sequences: np.ndarray        # (paths, levels): |x_n|^alpha (L_n - c/|x_n|)
    envelopes: np.ndarray        # (paths, levels): max over m >= n of |seq|
    decreasing_fraction: float   # strict envelope decrease first -> last level


def rate_experiment(paths: list[PathRecord], alpha: float, x_norms, kernel_ids,
                    t: float | None = None) -> RateReport:
    """Per-path polynomial-damping sequences along a decreasing radius list."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    x_norms = np.asarray(x_norms, dtype=float)
    if not np.all(np.diff(x_norms) < 0):
        raise ValueError("x-sequence must be strictly decreasing")
    seq = np.empty((len(paths), x_norms.size))
    for i, path in enumerate(paths):
        for j, (r, kid) in enumerate(zip(x_norms, kernel_ids)):
            lhat = occupation_integral(path, kid, t)
            seq[i, j] = r**alpha * (lhat - POLE_COEF_D3 / r)
    env = np.maximum.accumulate(np.abs(seq)[:, ::-1], axis=1)[:, ::-1]
    dec = float(np.mean(env[:, 0] > env[:, -1]))
    return RateReport(alpha=alpha, x_norms=x_norms, sequences=seq,
                      envelopes=env, decreasing_fraction=dec)


@dataclass
class BadPointReport:
    x_norm_seq: np.ndarray
    pole_potentials: np.ndarray
    log_potentials: np.ndarray
    below_half_freq: np.ndarray   # P-hat(L < mu(phi_x)/2) per level
    statistics: np.ndarray        # (paths, levels) part-(a) normalized values


def bad_point_experiment(mu: AtomicMeasure, x0, probes, paths: list[PathRecord],
                         kernel_ids, t: float | None = None) -> BadPointReport:
    """Blow-up report near an atom of mu along probe points outside the atom set.

    probes approach x0; each needs the matching registered bandwidth kernel.
    """
    if not mu.is_atom(x0):
        raise ValueError("x0 must be an atom of mu")
    probes = [np.asarray(p, dtype=float) for p in probes]
    for p in probes:
        if mu.is_atom(p):
            raise ValueError("probe points must avoid the atom set")
    mu_phi = np.array([mu.pole_potential(p) for p in probes])
    lam = np.array([mu.log_plus_potential(p) for p in probes])
    n_lvl = len(probes)
    lhat = np.empty((len(paths), n_lvl))
    for i, path in enumerate(paths):
        for j, kid in enumerate(kernel_ids):
            lhat[i, j] = occupation_integral(path, kid, t)
    below = (lhat < 0.5 * mu_phi[None, :]).mean(axis=0)
    denom = np.sqrt(2.0 * POLE_COEF_D3**2 * lam)
    stats = (lhat - mu_phi[None, :]) / denom[None, :]
    x0a = np.asarray(x0, dtype=float)
    dists = np.array([float(np.linalg.norm(p - x0a)) for p in probes])
    return BadPointReport(x_norm_seq=dists, pole_potentials=mu_phi,
                          log_potentials=lam, below_half_freq=below,
                          statistics=stats)
