"""Semi-analytic reference states and error metrics.

Kuramoto states are ``exp(a cos(2 k x)) / (pi I0(a))`` with ``a`` the
nontrivial root of ``a = sqrt(2/pi) kappa I1(a)/I0(a)``.  Cucker-Smale states
are parametrised by the mean velocity ``ubar`` solving a scalar
self-consistency equation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .grid import Field, GridSpec, norm, upsample
from .kernels import SQRT_2PI
from .models import CS, cs_grid, cs_potential

log = logging.getLogger(__name__)

# trapezoid on a periodic analytic integrand converges geometrically; 256
# nodes on [0, pi] give full double precision for a <= 50
_BESSEL_NODES = 256
_BESSEL_MAX_ARG = 700.0


def bessel_I(n: int, a: float) -> float:
    """Modified Bessel function ``I_n(a)`` for ``n`` in {0, 1} and ``a >= 0``.

    Uses ``I_n(a) = (1/pi) int_0^pi exp(a cos t) cos(n t) dt``; the integrand
    extends to an even 2pi-periodic function, so the trapezoid rule is
    spectrally accurate.
    """
    if n not in (0, 1):
        raise ValueError("only I_0 and I_1 are provided")
    if a < 0:
        raise ValueError("argument must be non-negative")
    if a > _BESSEL_MAX_ARG:
        raise OverflowError(f"I_{n}({a}) overflows double precision")
    t = np.linspace(0.0, np.pi, _BESSEL_NODES + 1)
    f = np.exp(a * np.cos(t)) * np.cos(n * t)
    w = np.full(t.size, 1.0)
    w[[0, -1]] = 0.5
    return float(np.sum(w * f) / _BESSEL_NODES)


def bessel_ratio(a: float) -> float:
    """``I1(a) / I0(a)`` evaluated with a common scaling to avoid overflow."""
    if a < 0:
        raise ValueError("argument must be non-negative")
    t = np.linspace(0.0, np.pi, _BESSEL_NODES + 1)
    e = np.exp(a * (np.cos(t) - 1.0))
    w = np.full(t.size, 1.0)
    w[[0, -1]] = 0.5
    return float(np.sum(w * e * np.cos(t)) / np.sum(w * e))


@dataclass
class KuramotoReference:
    field: Field
    a: float
    nontrivial: bool
    residual: float


def kuramoto_amplitude(kappa: float, tol: float = 1e-15, max_iter: int = 100) -> tuple[float, bool]:
    """Nontrivial root of ``a = M(a, kappa)``; ``(0, False)`` when only ``a = 0`` exists.

    ``g(a) = c I1/I0 - a`` is positive just above zero and negative at
    ``a = c``, so the root is bracketed and found with Brent's method, then
    polished by Newton.
    """
    from scipy.optimize import brentq

    c = math.sqrt(2.0 / math.pi) * kappa
    if kappa <= SQRT_2PI:
        return 0.0, False

    def g(a):
        return c * bessel_ratio(a) - a

    def dg(a):
        # d/da (I1/I0) = 1 - r/a - r^2
        r = bessel_ratio(a)
        return c * (1.0 - r / a - r * r) - 1.0

    lo = min(1.0, 0.5 * c)
    for _ in range(200):
        if g(lo) > 0:
            break
        lo *= 0.5
    else:
        raise RuntimeError(f"could not bracket the nontrivial root at kappa = {kappa}")
    a = brentq(g, lo, c, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=max_iter)
    for _ in range(3):
        if abs(g(a)) <= tol:
            break
        a -= g(a) / dg(a)
    return float(a), True


def kuramoto_reference(kappa: float, k: int, grid: GridSpec) -> KuramotoReference:
    """Analytic Kuramoto state ``exp(a cos(2 k x)) / (pi I0(a))`` on ``grid``."""
    if grid.dim != 1 or not grid.periodic[0]:
        raise ValueError("Kuramoto reference needs a periodic 1D grid")
    a, nontrivial = kuramoto_amplitude(kappa)
    x = grid.x
    if not nontrivial:
        return KuramotoReference(Field(grid, np.full(x.size, 1.0 / grid.volume)), 0.0, False, 0.0)
    # exp(a cos) / I0(a) with the exp(a) factor cancelled
    t = np.linspace(0.0, np.pi, _BESSEL_NODES + 1)
    w = np.full(t.size, 1.0)
    w[[0, -1]] = 0.5
    i0_scaled = float(np.sum(w * np.exp(a * (np.cos(t) - 1.0))) / _BESSEL_NODES)
    u = np.exp(a * (np.cos(2 * k * x) - 1.0)) / (np.pi * i0_scaled)
    res = abs(math.sqrt(2.0 / math.pi) * kappa * bessel_ratio(a) - a)
    return KuramotoReference(Field(grid, u), a, True, res)


# -- Cucker-Smale ------------------------------------------------------------


def cs_velocity_map(alpha: float, sigma: float, X: float = 6.0, n: int = 2001) -> CS:
    return CS(alpha, sigma, cs_grid(n, X))


def cs_self_consistency(problem: CS, ubar: float) -> float:
    """``g(ubar) = int x T[ubar](x) dx - ubar``."""
    return problem.mean_velocity(problem.T_of_velocity(ubar)) - ubar


def cs_truncation(alpha: float, sigma: float, decay_tol: float = 1e-16, X0: float = 6.0) -> float:
    """Smallest ``X >= X0`` (doubling) whose tail weight is below ``decay_tol``."""
    X = X0
    for _ in range(20):
        v = cs_potential(np.array([X]), alpha)[0]
        vmin = float(cs_potential(np.linspace(0, X, 4001), alpha).min())
        if math.exp(-(v - vmin) / sigma) <= decay_tol:
            return X
        X *= 1.5
    raise ValueError(f"no truncation found for alpha={alpha}, sigma={sigma}")


def cs_reference_velocity(
    alpha: float,
    sigma: float,
    X: float | None = None,
    sign_hint: int = 1,
    n: int = 2001,
    scan_max: float | None = None,
    scan_points: int = 400,
) -> tuple[float, bool]:
    """Root of the scalar Cucker-Smale equation with the requested sign.

    Returns ``(ubar, found)``.  ``sign_hint = 0`` gives the symmetric root.
    Nonzero roots are bracketed by a geometric sign scan of ``g`` on ``(0, scan_max]``
    and refined with Brent's method; the largest-magnitude bracket is used.
    """
    if sign_hint == 0:
        return 0.0, True
    if sign_hint not in (-1, 1):
        raise ValueError("sign_hint must be -1, 0 or +1")
    from scipy.optimize import brentq

    X = cs_truncation(alpha, sigma) if X is None else X
    problem = CS(alpha, sigma, cs_grid(n, X))
    top = scan_max if scan_max is not None else 0.9 * X
    # geometric spacing resolves the small roots born at a pitchfork
    grid_u = np.geomspace(1e-6 * top, top, scan_points)
    g = np.array([cs_self_consistency(problem, s) for s in grid_u])
    idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]
    if idx.size == 0:
        return 0.0, False
    i = idx[-1]
    root = brentq(lambda s: cs_self_consistency(problem, s), grid_u[i], grid_u[i + 1], xtol=1e-15, rtol=1e-15)
    return float(sign_hint * root), True


def cs_has_nonzero_root(alpha: float, sigma: float, n: int = 1001, scan_points: int = 400) -> bool:
    """Whether ``g(ubar) = 0`` has a positive root (sign scan)."""
    _, found = cs_reference_velocity(alpha, sigma, sign_hint=1, n=n, scan_points=scan_points)
    return found


def cs_reference_profile(alpha: float, sigma: float, grid: GridSpec, sign_hint: int = 1) -> Field:
    X = grid.axes[0].upper
    ubar, found = cs_reference_velocity(alpha, sigma, X=X, sign_hint=sign_hint, n=grid.shape[0])
    if not found:
        raise ValueError(f"no root with sign {sign_hint:+d} at alpha={alpha}, sigma={sigma}")
    return Field(grid, CS(alpha, sigma, grid).T_of_velocity(ubar))


# -- error metrics -------------------------------------------------------------


def error_vs_reference(u_n: Field, u_ref: Field, p: float = np.inf) -> float:
    """``|u_ref - upsample(u_n)|_p`` on the reference grid."""
    up = upsample(u_n, u_ref.grid)
    return norm(up.values - u_ref.values, p)


def solution_difference(u_af: Field, u_df: Field, fine: GridSpec, p: float = np.inf) -> float:
    """``R~_p``: distance between two solutions after upsampling both to ``fine``."""
    return norm(upsample(u_af, fine).values - upsample(u_df, fine).values, p)
