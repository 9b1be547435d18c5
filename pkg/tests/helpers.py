"""Shared oracles for the test modules."""

import numpy as np

from nlfp.grid import GridSpec
from nlfp.kernels import CosineNFP, Sum2D, TopHat, Triangle
from nlfp.models import CS, MV1D, MV2D, NFP, SmoothedReLU, cs_grid, nfp_grid
from nlfp.solver import central_difference_jvp

H_GRID = np.geomspace(1e-6, 1e-2, 9)

# Directions are scaled so that |DT[u] phi|_inf = DIRECTION_GAIN * |T u|_inf.
# With O(1) directions the central difference is rounding-dominated below
# h ~ 1e-4 (error ~ eps / h), which would flatten the fitted slope; at this
# gain the whole window 1e-6..1e-2 sits in the truncation-dominated regime.
DIRECTION_GAIN = 30.0


def frechet_variants(rng):
    """``(name, problem, sample_u)`` for the four map variants at desk-scale resolution."""
    g1 = GridSpec.torus(129)
    yield "MV1D", MV1D(7.0, Triangle(np.pi / 12), g1), lambda: np.abs(1 / np.pi + 0.1 * rng.standard_normal(129))
    g2 = GridSpec.torus2d(33)
    k2 = Sum2D(TopHat(np.pi / 12), TopHat(np.pi / 12))
    yield "MV2D", MV2D(10.0, k2, g2), lambda: np.abs(1 / np.pi**2 * (1 + 0.3 * rng.standard_normal((33, 33))))
    gc = cs_grid(201, 6.0)
    yield "CS", CS(1.0, 0.2, gc), lambda: np.exp(-((gc.x - rng.uniform(-1, 1)) ** 2) / 2) * (1 + 0.3 * rng.random(201))
    gn = nfp_grid(33, 201)
    p = NFP(0.44, 3.0, CosineNFP(((0.5, 0.0), (1.0, 2.0), (0.5, 8.0))), SmoothedReLU(), gn)
    yield "NFP", p, lambda: p.homogeneous_guess() * (1 + 0.3 * rng.random(gn.shape))


def frechet_errors(problem, u, phi, hs=H_GRID, gain=DIRECTION_GAIN):
    """Relative max-norm gap between the analytic and central-difference JVPs for each ``h``."""
    Tu = problem.T(u)
    af = problem.dT(u, Tu, phi)
    phi = phi * (gain * np.max(np.abs(Tu)) / np.max(np.abs(af)))
    af = problem.dT(u, Tu, phi)
    scale = np.max(np.abs(af))
    errs = np.array([np.max(np.abs(central_difference_jvp(problem.T, u, phi, h) - af)) / scale for h in hs])
    return errs, af


def loglog_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
