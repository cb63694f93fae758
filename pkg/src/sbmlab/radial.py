"""1D radial reductions of Gaussian integrals in d=2 and d=3.

Everything in this package that integrates a radial function against a heat
kernel goes through the distance density of |B_t - x|: in d=3 the exact
image-charge formula, in d=2 the Bessel-I0 (Rice) density. Quadrature is
Gauss-Legendre on a union of log-spaced panels (to resolve integrable
singularities at the origin) and linear panels across the Gaussian bump.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import i0e

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


@lru_cache(maxsize=64)
def _gl_rule(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def panel_quadrature(edges: np.ndarray, order: int = 24):
    """Gauss-Legendre nodes/weights on consecutive panels [e_i, e_{i+1}]."""
    x, w = _gl_rule(order)
    lo = edges[:-1, None]
    hi = edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = lo + half * (x[None, :] + 1.0)
    weights = half * w[None, :]
    return nodes.ravel(), weights.ravel()


def distance_density(dim: int, t: float, a: float, rho: np.ndarray) -> np.ndarray:
    """Density of |B_t - x| at rho, for |x| = a and B Brownian in R^dim.

    Stable for all a >= 0: the d=3 two-exponential difference is computed in
    sinh form when the exponent gap is small.
    """
    rho = np.asarray(rho, dtype=float)
    if t <= 0.0:
        raise ValueError("t must be positive")
    if a < 0.0:
        raise ValueError("a must be nonnegative")
    if dim == 3:
        if a == 0.0:
            return _SQRT_2_OVER_PI * rho**2 * t**-1.5 * np.exp(-(rho**2) / (2.0 * t))
        z = a * rho / t
        out = np.empty_like(rho)
        small = z < 30.0
        pref = rho / (a * np.sqrt(2.0 * np.pi * t))
        out[small] = (
            2.0
            * pref[small]
            * np.exp(-(rho[small] ** 2 + a**2) / (2.0 * t))
            * np.sinh(z[small])
        )
        big = ~small
        out[big] = pref[big] * (
            np.exp(-((rho[big] - a) ** 2) / (2.0 * t))
            - np.exp(-((rho[big] + a) ** 2) / (2.0 * t))
        )
        return out
    if dim == 2:
        # (rho/t) * exp(-(rho^2+a^2)/(2t)) * I0(a rho / t), via the scaled i0e.
        z = a * rho / t
        return (rho / t) * i0e(z) * np.exp(-((rho - a) ** 2) / (2.0 * t))
    raise ValueError(f"dim must be 2 or 3, got {dim}")


def _edges(dim: int, t: float, a: float, r_min: float, sigmas: float,
           n_log: int, n_lin: int) -> np.ndarray:
    r_hi = a + sigmas * np.sqrt(t)
    pieces = [np.geomspace(r_min, r_hi, n_log)]
    lo = max(r_min, a - sigmas * np.sqrt(t))
    pieces.append(np.linspace(lo, r_hi, n_lin))
    edges = np.unique(np.concatenate(pieces))
    return edges


def expect_distance(dim: int, t: float, a: float, f, *, r_min: float = 1e-10,
                    sigmas: float = 12.0, n_log: int = 48, n_lin: int = 24,
                    order: int = 24) -> float:
    """E[f(|B_t - x|)] with |x| = a, for radial f integrable against the density.

    f must accept a vector of radii. Handles f with an integrable singularity
    at 0 (the density vanishes like rho^{dim-1} there).
    """
    nodes, weights = panel_quadrature(_edges(dim, t, a, r_min, sigmas, n_log, n_lin), order)
    dens = distance_density(dim, t, a, nodes)
    return float(np.dot(weights, dens * f(nodes)))


def time_expect_distance(dim: int, t: float, a: float, f, *, s_min_frac: float = 1e-12,
                         n_s_panels: int = 36, s_order: int = 12, **kw) -> float:
    """Integral over s in (0, t] of E[f(|B_s - x|)].

    Log-spaced panels in s down to t*s_min_frac handle the s^{-1/2}-type
    behavior that appears when a = 0 and f is singular at the origin.
    """
    if t == 0.0:
        return 0.0
    edges = np.geomspace(t * s_min_frac, t, n_s_panels)
    s_nodes, s_weights = panel_quadrature(edges, s_order)
    vals = np.array([expect_distance(dim, s, a, f, **kw) for s in s_nodes])
    return float(np.dot(s_weights, vals))


class RadialGrid:
    """Fixed radial quadrature grid shared by convolution tables.

    Holds sorted nodes with quadrature weights so that radial functions can be
    both tabulated at the nodes and integrated against distance densities.
    """

    def __init__(self, r_min: float = 1e-6, r_max: float = 16.0,
                 n_log: int = 28, order: int = 8):
        edges = np.geomspace(r_min, r_max, n_log)
        self.nodes, self.weights = panel_quadrature(edges, order)
        self.r_min = r_min
        self.r_max = r_max

    @property
    def size(self) -> int:
        return self.nodes.size

    def heat_matrix(self, dim: int, tau: float) -> np.ndarray:
        """Matrix K with (K v)_i ~ E[v(|B_tau - u_i e1|)] for v given at nodes."""
        out = np.empty((self.size, self.size))
        for i, u in enumerate(self.nodes):
            out[i] = self.weights * distance_density(dim, tau, float(u), self.nodes)
        return out

    def interp(self, values: np.ndarray, radii: np.ndarray) -> np.ndarray:
        """Linear interpolation of node values, flat below r_min / above r_max."""
        return np.interp(radii, self.nodes, values)
