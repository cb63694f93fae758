"""Radial solver for the singular semilinear profile in d=3.

The positive solution of  (1/2) Lap V = (1/2) V^2  away from the origin with a
point source of strength lambda behaves like lambda/(2 pi r) at the pole. The
substitution W = r V removes the pole:  W'' = W^2 / r  on (r_min, r_max), with
the exact pole coefficient W(r_min) = lambda/(2 pi) as the inner condition and
harmonic far-field closure W'(r_max) = 0. The grid is log-spaced; in
xi = log r the equation reads  W_xixi - W_xi = e^xi W^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .constants import POLE_COEF_D3, SECOND_ORDER_SCALE


class NewtonError(RuntimeError):
    def __init__(self, message: str, residual_trace: list[float]):
        super().__init__(message)
        self.residual_trace = residual_trace


@dataclass
class RadialSolution:
    lam: float
    r: np.ndarray
    v: np.ndarray
    w: np.ndarray
    residual_norm: float
    r_min: float
    r_max: float
    newton_iters: int

    def v_at(self, radii) -> np.ndarray:
        """Log-log interpolation of V (V is positive and power-law-like)."""
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        return np.exp(np.interp(np.log(radii), np.log(self.r), np.log(self.v)))


def _residual(w: np.ndarray, xi: np.ndarray, h: float, lam: float) -> np.ndarray:
    f = np.empty_like(w)
    f[0] = w[0] - lam * POLE_COEF_D3
    interior = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / h**2 \
        - (w[2:] - w[:-2]) / (2.0 * h) - np.exp(xi[1:-1]) * w[1:-1] ** 2
    f[1:-1] = interior
    f[-1] = (3.0 * w[-1] - 4.0 * w[-2] + w[-3]) / (2.0 * h)
    return f


def _jacobian_banded(w: np.ndarray, xi: np.ndarray, h: float) -> np.ndarray:
    # bands for solve_banded with (l, u) = (2, 1)
    n = w.size
    ab = np.zeros((4, n))
    ab[1, 0] = 1.0                                   # d f0 / d w0
    ab[0, 2:] = 1.0 / h**2 - 1.0 / (2.0 * h)          # super: d fi / d w_{i+1}
    ab[1, 1:-1] = -2.0 / h**2 - 2.0 * np.exp(xi[1:-1]) * w[1:-1]
    ab[2, 0:-2] = 1.0 / h**2 + 1.0 / (2.0 * h)        # sub: d fi / d w_{i-1}
    ab[1, -1] = 3.0 / (2.0 * h)
    ab[2, -2] = -4.0 / (2.0 * h)
    ab[3, -3] = 1.0 / (2.0 * h)
    return ab


def solve_radial(lam: float, r_min: float = 1e-6, r_max: float = 10.0,
                 m: int = 2000, tol: float = 1e-11, max_newton: int = 60,
                 max_damping: int = 30) -> RadialSolution:
    """Damped Newton solve of the W-form boundary value problem."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    if not 0 < r_min < r_max:
        raise ValueError("need 0 < r_min < r_max")
    if m < 200:
        raise ValueError("m must be >= 200")
    xi = np.linspace(math.log(r_min), math.log(r_max), m)
    h = xi[1] - xi[0]
    r = np.exp(xi)
    w = lam * POLE_COEF_D3 * (1.0 + r_min) / (1.0 + r)

    trace: list[float] = []
    f = _residual(w, xi, h, lam)
    norm = float(np.max(np.abs(f)))
    iters = 0
    # residual scale: dominant balance of the equation at the pole
    scale = max(1.0, (lam * POLE_COEF_D3) ** 2 / r_min, 1.0 / h**2)
    for iters in range(1, max_newton + 1):
        trace.append(norm)
        if norm <= tol * scale:
            break
        ab = _jacobian_banded(w, xi, h)
        step = solve_banded((2, 1), ab, -f)
        lam_damp = 1.0
        for _ in range(max_damping):
            cand = w + lam_damp * step
            if np.all(cand > 0.0):
                f_cand = _residual(cand, xi, h, lam)
                cand_norm = float(np.max(np.abs(f_cand)))
                if cand_norm < norm or norm <= 10.0 * tol * scale:
                    w, f, norm = cand, f_cand, cand_norm
                    break
            lam_damp *= 0.5
        else:
            raise NewtonError("damping failed to find a positive decreasing step",
                              trace)
    else:
        raise NewtonError(f"no convergence in {max_newton} iterations", trace)

    # report the residual of W'' - W^2/r in its natural scale
    wpp = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / h**2 - (w[2:] - w[:-2]) / (2.0 * h)
    res = wpp * np.exp(-2.0 * xi[1:-1]) - w[1:-1] ** 2 / r[1:-1]
    res_scale = float(np.max(np.abs(w**2 / r)))
    return RadialSolution(lam=lam, r=r, v=w / r, w=w,
                          residual_norm=float(np.max(np.abs(res))) / res_scale,
                          r_min=r_min, r_max=r_max, newton_iters=iters)


def first_order_ratio(sol: RadialSolution, radius: float) -> float:
    """V(r) * 2 pi r / lambda, which tends to 1 at the pole."""
    v = float(sol.v_at(radius)[0])
    return v * radius / (sol.lam * POLE_COEF_D3)


def second_order_ratio(sol: RadialSolution, radii=None):
    """(V - lam/(2 pi r)) / (lam^2 log(1/r)/(4 pi^2)) on small radii.

    The limit at the pole is -1; convergence is logarithmic, so callers gate
    bracketing and monotone trends rather than the limit itself.
    """
    if radii is None:
        lo, hi = 10.0 * sol.r_min, 1e-2
        mask = (sol.r >= lo) & (sol.r <= hi)
        radii = sol.r[mask]
        w = sol.w[mask]
        v = w / radii
    else:
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        v = sol.v_at(radii)
    top = v - sol.lam * POLE_COEF_D3 / radii
    bottom = sol.lam**2 * np.log(1.0 / radii) * SECOND_ORDER_SCALE
    return radii, top / bottom


@dataclass
class LaplaceCheckRow:
    x_norm: float
    lam: float
    mc_value: float        # -log mean exp(-lam Lhat)
    pde_value: float       # V(|x|)
    se: float
    censored_fraction: float

    @property
    def z(self) -> float:
        return (self.mc_value - self.pde_value) / self.se if self.se > 0 else math.inf

    @property
    def warning(self) -> str | None:
        if self.censored_fraction > 0.10:
            return f"censored fraction {self.censored_fraction:.1%} exceeds 10%"
        return None


def laplace_crosscheck(sol: RadialSolution, x_norm: float,
                       local_times: np.ndarray,
                       censored_fraction: float) -> LaplaceCheckRow:
    """Compare -log E exp(-lam * L_inf^x) from run-to-extinction estimates
    against the solver value V(|x|), with a delta-method standard error."""
    lam = sol.lam
    y = np.exp(-lam * np.asarray(local_times, dtype=float))
    mean = float(y.mean())
    se_mean = float(y.std(ddof=1) / math.sqrt(y.size))
    return LaplaceCheckRow(
        x_norm=x_norm, lam=lam, mc_value=-math.log(mean),
        pde_value=float(sol.v_at(x_norm)[0]), se=se_mean / mean,
        censored_fraction=censored_fraction)
