"""Fixed-point maps ``T`` and their Frechet-derivative actions.

Stationary states of each model are the fixed points ``T u = u``.  Every map
shifts its exponent by its maximum before exponentiating; the normalisation
absorbs the shift, so the result is unchanged but large interaction strengths
cannot overflow.

Four variants are provided:

* :class:`MV1D`, :class:`MV2D` - McKean-Vlasov on the torus,
  ``T u = exp(-kappa/sigma W*u) / Z(u)``.
* :class:`CS` - Cucker-Smale on a truncated line, parametrised by the mean
  velocity ``ubar = int x u dx``.
* :class:`NFP` - neural Fokker-Planck on torus x [0, y_max], a per-angle
  Gaussian in the activity variable centred at ``F(W*ubar + B)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .convolution import ConvPlan
from .grid import Field, GridSpec, integrate
from .kernels import Kernel, sample


class NonFiniteError(FloatingPointError):
    """A map produced a non-finite value."""


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


# -- (H')^{-1} catalogue ----------------------------------------------------


@dataclass(frozen=True)
class Linear:
    sigma: float = 1.0

    def __call__(self, s):
        return np.exp(np.asarray(s, dtype=float) / self.sigma)


@dataclass(frozen=True)
class PorousFast:
    """``H = nu u^m``: porous medium for ``m > 1``, fast diffusion for ``0 < m < 1``."""

    nu: float = 1.0
    m: float = 2.0

    def __post_init__(self):
        if self.m <= 0 or self.m == 1 or self.nu <= 0:
            raise ValueError("PorousFast needs nu > 0 and m in (0, 1) or m > 1")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0):
            raise ValueError("(H')^{-1} for nu u^m is only defined for positive arguments")
        return (s / (self.nu * self.m)) ** (1.0 / (self.m - 1.0))


@dataclass(frozen=True)
class FermiDirac:
    def __call__(self, s):
        return 1.0 / (1.0 + np.exp(-np.asarray(s, dtype=float)))


@dataclass(frozen=True)
class BoseEinstein:
    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s >= 0):
            raise ValueError("(H')^{-1} for Bose-Einstein is only defined for negative arguments")
        return -1.0 / (1.0 - np.exp(-s))


DiffusionInverse = Linear | PorousFast | FermiDirac | BoseEinstein


def invert_h_prime(d: DiffusionInverse, s: float) -> float:
    """Scalar value of ``(H')^{-1}(s)`` for one of the diffusion variants."""
    return float(d(s))


# -- activations for the neural model --------------------------------------


@dataclass(frozen=True)
class Identity:
    def __call__(self, z):
        return np.asarray(z, dtype=float)

    def derivative(self, z):
        return np.ones_like(np.asarray(z, dtype=float))

    def to_dict(self):
        return {"type": "identity"}


@dataclass(frozen=True)
class SmoothedReLU:
    """``F(z) = z max(0, z / sqrt(z^2 + eps))``, i.e. ``z^2/sqrt(z^2+eps)`` for ``z >= 0``."""

    eps: float = 0.1

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        zp = np.maximum(z, 0.0)
        return zp * zp / np.sqrt(zp * zp + self.eps)

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        zp = np.maximum(z, 0.0)
        r = zp * zp + self.eps
        return zp * (zp * zp + 2 * self.eps) / r**1.5

    def to_dict(self):
        return {"type": "smoothed_relu", "eps": self.eps}


@dataclass(frozen=True)
class Sigmoid:
    gain: float = 1.0

    def __call__(self, z):
        return 1.0 / (1.0 + np.exp(-self.gain * np.asarray(z, dtype=float)))

    def derivative(self, z):
        s = self(z)
        return self.gain * s * (1.0 - s)

    def to_dict(self):
        return {"type": "sigmoid", "gain": self.gain}


def activation_from_dict(d: dict) -> Identity | SmoothedReLU | Sigmoid:
    kind = d.get("type")
    if kind == "identity":
        return Identity()
    if kind == "smoothed_relu":
        return SmoothedReLU(float(d.get("eps", 0.1)))
    if kind == "sigmoid":
        return Sigmoid(float(d.get("gain", 1.0)))
    raise ValueError(f"unknown activation type {kind!r}")


# -- problems ---------------------------------------------------------------


def _normalised_exp(expo: np.ndarray, weights: np.ndarray) -> np.ndarray:
    _check_finite(expo, "map exponent")
    num = np.exp(expo - expo.max())
    z = float(np.sum(weights * num))
    if not (np.isfinite(z) and z > 0):
        raise NonFiniteError("normalisation constant is not a positive finite number")
    return num / z


def _log_density(u: np.ndarray, support: np.ndarray | None = None) -> np.ndarray:
    if support is None:
        if np.any(u <= 0):
            raise ValueError("steady-state condition needs a strictly positive density")
        return np.log(u)
    return np.log(np.where(support, u, np.nan))


@dataclass
class McKeanVlasov:
    """McKean-Vlasov map on a periodic 1D or 2D grid."""

    kappa: float
    kernel: Kernel
    grid: GridSpec
    sigma: float = 1.0
    _plan: ConvPlan | None = field(default=None, init=False, repr=False, compare=False)
    _kernel_values: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    variant = "MV"

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not all(self.grid.periodic):
            raise ValueError("McKean-Vlasov grids must be periodic")
        if self.kernel.dim != self.grid.dim:
            raise ValueError(f"{self.kernel.dim}D kernel on a {self.grid.dim}D grid")

    @property
    def plan(self) -> ConvPlan:
        if self._plan is None:
            self._kernel_values = sample(self.kernel, self.grid).values
            self._plan = ConvPlan(self.grid).set_kernel(self._kernel_values)
        return self._plan

    @property
    def kernel_values(self) -> np.ndarray:
        self.plan
        return self._kernel_values

    def with_kappa(self, kappa: float) -> McKeanVlasov:
        new = type(self)(kappa, self.kernel, self.grid, self.sigma)
        new._plan, new._kernel_values = self.plan, self._kernel_values
        return new

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grid.shape

    def homogeneous(self) -> np.ndarray:
        return np.full(self.grid.shape, 1.0 / self.grid.volume)

    def convolve(self, u: np.ndarray) -> np.ndarray:
        return self.plan.convolve_kernel(np.reshape(u, self.grid.shape))

    def T(self, u: np.ndarray) -> np.ndarray:
        conv = self.convolve(u)
        return _normalised_exp(-(self.kappa / self.sigma) * conv, self.grid.weights())

    def dT(self, u: np.ndarray, Tu: np.ndarray, phi: np.ndarray) -> np.ndarray:
        Tu = np.reshape(Tu, self.grid.shape)
        wphi = self.convolve(phi)
        avg = float(np.sum(self.grid.weights() * Tu * wphi))
        return -(self.kappa / self.sigma) * Tu * (wphi - avg)

    def xi(self, u: np.ndarray) -> np.ndarray:
        """``sigma log u + kappa W*u``, constant on stationary states."""
        u = np.reshape(u, self.grid.shape)
        return self.sigma * _log_density(u) + self.kappa * self.convolve(u)

    def to_dict(self) -> dict:
        return {
            "variant": "MV1D" if self.grid.dim == 1 else "MV2D",
            "kappa": self.kappa,
            "sigma": self.sigma,
            "kernel": self.kernel.to_dict(),
            "grid": self.grid.to_dict(),
        }


class MV1D(McKeanVlasov):
    def __post_init__(self):
        if self.grid.dim != 1:
            raise ValueError("MV1D needs a 1D grid")
        super().__post_init__()


class MV2D(McKeanVlasov):
    def __post_init__(self):
        if self.grid.dim != 2:
            raise ValueError("MV2D needs a 2D grid")
        super().__post_init__()


def cs_potential(x: np.ndarray, alpha: float) -> np.ndarray:
    """Confinement plus the ``x^2/2`` part of the quadratic interaction."""
    return alpha * x**4 / 4 + (1 - alpha) * x**2 / 2


@dataclass
class CS:
    """Cucker-Smale map on the truncated line [-X, X]."""

    alpha: float
    sigma: float
    grid: GridSpec
    decay_tol: float = 1e-16

    variant = "CS"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        ax = self.grid.axes[0]
        if self.grid.dim != 1 or ax.periodic:
            raise ValueError("CS needs a truncated 1D grid")
        if not math.isclose(ax.lower, -ax.upper):
            raise ValueError("CS grid must be symmetric about 0")
        v = cs_potential(self.grid.x, self.alpha)
        tail = np.exp(-(v[[0, -1]] - v.min()) / self.sigma)
        if np.any(tail > self.decay_tol):
            raise ValueError(
                f"truncation X = {ax.upper} too small: exp(-V(X)/sigma) = {tail.max():.3g} > {self.decay_tol:g}"
            )
        self._x = self.grid.x
        self._v = v

    @property
    def shape(self):
        return self.grid.shape

    def mean_velocity(self, u: np.ndarray) -> float:
        return float(np.sum(self.grid.weights() * self._x * np.reshape(u, self.grid.shape)))

    def T(self, u: np.ndarray) -> np.ndarray:
        ubar = self.mean_velocity(u)
        return _normalised_exp(-(self._v - ubar * self._x) / self.sigma, self.grid.weights())

    def T_of_velocity(self, ubar: float) -> np.ndarray:
        return _normalised_exp(-(self._v - ubar * self._x) / self.sigma, self.grid.weights())

    def dT(self, u: np.ndarray, Tu: np.ndarray, phi: np.ndarray) -> np.ndarray:
        w = self.grid.weights()
        Tu = np.reshape(Tu, self.grid.shape)
        dubar = float(np.sum(w * self._x * np.reshape(phi, self.grid.shape)))
        first = float(np.sum(w * self._x * Tu))
        return (dubar / self.sigma) * Tu * (self._x - first)

    def xi(self, u: np.ndarray, support: np.ndarray | None = None) -> np.ndarray:
        """``sigma log u + V - ubar x``; ``nan`` outside ``support``."""
        u = np.reshape(u, self.grid.shape)
        return self.sigma * _log_density(u, support) + self._v - self.mean_velocity(u) * self._x

    def to_dict(self) -> dict:
        return {"variant": "CS", "alpha": self.alpha, "sigma": self.sigma, "grid": self.grid.to_dict()}


def cs_grid(n: int, X: float = 6.0) -> GridSpec:
    return GridSpec.interval(n, -X, X)


@dataclass
class NFP:
    """Neural Fokker-Planck map on (angle, activity) in torus x [0, y_max]."""

    sigma: float
    B: float
    kernel: Kernel
    activation: Callable
    grid: GridSpec
    _plan: ConvPlan | None = field(default=None, init=False, repr=False, compare=False)

    variant = "NFP"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.grid.dim != 2:
            raise ValueError("NFP needs a 2D (angle, activity) grid")
        ax, ay = self.grid.axes
        if not ax.periodic or ay.periodic:
            raise ValueError("NFP grid must be periodic in angle and truncated in activity")
        if ay.lower < 0:
            raise ValueError("activity axis must start at y >= 0")
        self.angle_grid = GridSpec((ax,))
        self._y = ay.nodes
        self._wy = ay.simpson_weights()
        self._wx = ax.simpson_weights()
        self.L = ax.length

    @property
    def plan(self) -> ConvPlan:
        if self._plan is None:
            self._plan = ConvPlan(self.angle_grid).set_kernel(sample(self.kernel, self.angle_grid).values)
        return self._plan

    @property
    def shape(self):
        return self.grid.shape

    def first_moment(self, u: np.ndarray) -> np.ndarray:
        return np.reshape(u, self.grid.shape) @ (self._wy * self._y)

    def drive(self, u: np.ndarray) -> np.ndarray:
        """``W * ubar + B`` as a function of angle."""
        return self.plan.convolve_kernel(self.first_moment(u)) + self.B

    def profile(self, F0: np.ndarray) -> np.ndarray:
        """Per-angle Gaussians centred at ``F0`` with mass ``1/L`` on each angle."""
        F0 = _check_finite(np.asarray(F0, dtype=float), "activation output")
        expo = -((self._y[None, :] - F0[:, None]) ** 2) / (2 * self.sigma)
        expo -= expo.max(axis=1, keepdims=True)
        g = np.exp(expo)
        z = self.L * (g @ self._wy)
        if not np.all(np.isfinite(z) & (z > 0)):
            raise NonFiniteError("per-angle normalisation failed")
        return g / z[:, None]

    def T(self, u: np.ndarray) -> np.ndarray:
        try:
            F0 = self.activation(self.drive(u))
        except (ValueError, ArithmeticError) as exc:
            raise NonFiniteError(f"activation evaluation failed: {exc}") from exc
        return self.profile(F0)

    def dT(self, u: np.ndarray, Tu: np.ndarray, phi: np.ndarray) -> np.ndarray:
        Tu = np.reshape(Tu, self.grid.shape)
        drive = self.drive(u)
        F0 = self.activation(drive)
        dF0 = self.activation.derivative(drive) * self.plan.convolve_kernel(self.first_moment(phi))
        centred = (self._y[None, :] - F0[:, None]) / self.sigma
        m = self.L * ((centred * Tu) @ self._wy)
        return Tu * dF0[:, None] * (centred - m[:, None])

    def xi(self, u: np.ndarray, support: np.ndarray | None = None) -> np.ndarray:
        """``sigma log u + (y - F0)^2 / 2``; ``nan`` outside ``support``."""
        u = np.reshape(u, self.grid.shape)
        F0 = self.activation(self.drive(u))
        return self.sigma * _log_density(u, support) + 0.5 * (self._y[None, :] - F0[:, None]) ** 2

    def homogeneous_guess(self, center: float | None = None) -> np.ndarray:
        """Angle-independent truncated Gaussian; centred at ``B`` unless given."""
        c = self.B if center is None else center
        return self.profile(np.full(self.grid.shape[0], c))

    def to_dict(self) -> dict:
        return {
            "variant": "NFP",
            "sigma": self.sigma,
            "B": self.B,
            "kernel": self.kernel.to_dict(),
            "activation": self.activation.to_dict(),
            "grid": self.grid.to_dict(),
        }


def nfp_grid(nx: int, ny: int, y_max: float = 35.0, length: float = np.pi) -> GridSpec:
    from .grid import Axis

    return GridSpec((Axis(nx, -length / 2, length / 2, True), Axis(ny, 0.0, y_max, False)))


Problem = McKeanVlasov | CS | NFP


# -- Field-level entry points -----------------------------------------------


def _field_args(p, u: Field) -> np.ndarray:
    if u.grid != p.grid:
        raise ValueError("field grid does not match the problem grid")
    return u.values


def apply_T_mv(p: McKeanVlasov, u: Field) -> Field:
    return Field(p.grid, p.T(_field_args(p, u)))


def frechet_T_mv(p: McKeanVlasov, u: Field, Tu: Field, phi: Field) -> Field:
    for f in (Tu, phi):
        _field_args(p, f)
    return Field(p.grid, p.dT(_field_args(p, u), Tu.values, phi.values))


def apply_T_cs(p: CS, u: Field) -> Field:
    return Field(p.grid, p.T(_field_args(p, u)))


def frechet_T_cs(p: CS, u: Field, Tu: Field, phi: Field) -> Field:
    for f in (Tu, phi):
        _field_args(p, f)
    return Field(p.grid, p.dT(_field_args(p, u), Tu.values, phi.values))


def apply_T_nfp(p: NFP, u: Field) -> Field:
    return Field(p.grid, p.T(_field_args(p, u)))


def frechet_T_nfp(p: NFP, u: Field, Tu: Field, phi: Field) -> Field:
    for f in (Tu, phi):
        _field_args(p, f)
    return Field(p.grid, p.dT(_field_args(p, u), Tu.values, phi.values))


def total_mass(p, u: np.ndarray) -> float:
    return integrate(np.reshape(u, p.grid.shape), p.grid)
