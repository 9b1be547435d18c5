"""Interaction kernels: pointwise samples, cosine modes and critical strengths.

Torus kernels live on (-L/2, L/2] with L = pi and are expanded in the
orthonormal even basis ``w_k(x) = sqrt(2/pi) cos(2 k x)`` (``w_0 = 1/sqrt(pi)``).
A negative mode ``W~(k)`` destabilises the homogeneous state at
``kappa*_k = -sqrt(2 pi) / W~(k)`` (sigma = 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .grid import Field, GridSpec, integrate

SQRT_2PI = float(np.sqrt(2.0 * np.pi))


def basis(k: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal even cosine basis on the torus of length pi."""
    x = np.asarray(x, dtype=float)
    if k == 0:
        return np.full_like(x, 1.0 / np.sqrt(np.pi))
    return np.sqrt(2.0 / np.pi) * np.cos(2 * k * x)


class Kernel:
    """Base class; subclasses implement ``__call__`` on coordinate arrays."""

    dim = 1
    periodic = True

    def __call__(self, *coords: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class CosineModes(Kernel):
    """``W = -sum_i a_i w_{k_i}``; the Kuramoto kernel is ``CosineModes(((1.0, 1),))``."""

    terms: tuple[tuple[float, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((float(a), int(k)) for a, k in self.terms))

    def __call__(self, x):
        out = np.zeros_like(np.asarray(x, dtype=float))
        for a, k in self.terms:
            out -= a * basis(k, x)
        return out

    def to_dict(self):
        return {"type": "cosine_modes", "terms": [list(t) for t in self.terms]}


@dataclass(frozen=True)
class TopHat(Kernel):
    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("TopHat needs R > 0")

    def __call__(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        return np.where(x <= self.R, -1.0 / (2 * self.R), 0.0)

    def to_dict(self):
        return {"type": "tophat", "R": self.R}


@dataclass(frozen=True)
class Triangle(Kernel):
    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("Triangle needs R > 0")

    def __call__(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        return np.where(x <= self.R, -(1.0 - x / self.R) / (2 * self.R), 0.0)

    def to_dict(self):
        return {"type": "triangle", "R": self.R}


@dataclass(frozen=True)
class AttRepTopHat(Kernel):
    """Attractive core of radius R inside a repulsive ring R < |x| <= 2R."""

    R: float
    L: float = np.pi

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("AttRepTopHat needs R > 0")
        if 2 * self.R > self.L / 2:
            raise ValueError(f"support 2R = {2 * self.R} does not fit on a torus of length {self.L}")

    def __call__(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        return np.where(x <= self.R, -1.0 / (2 * self.R), np.where(x <= 2 * self.R, 1.0 / self.R, 0.0))

    def to_dict(self):
        return {"type": "att_rep_tophat", "R": self.R}


@dataclass(frozen=True)
class Quadratic(Kernel):
    """``W = |x|^2 / 2``; the Cucker-Smale map expands it analytically."""

    periodic = False

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x * x

    def to_dict(self):
        return {"type": "quadratic"}


@dataclass(frozen=True)
class TanhNFP(Kernel):
    """``W = scale * (1 + tanh(offset - steepness |x|))``."""

    scale: float = -0.005 * 2**14
    steepness: float = 50.0
    offset: float = 10.0

    def __call__(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        return self.scale * (1.0 + np.tanh(self.offset - self.steepness * x))

    def to_dict(self):
        return {"type": "tanh_nfp", "scale": self.scale, "steepness": self.steepness, "offset": self.offset}


@dataclass(frozen=True)
class CosineNFP(Kernel):
    """``W = sum_i c_i cos(f_i x)`` with raw angular frequencies ``f_i`` (0 gives a constant)."""

    terms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((float(c), float(f)) for c, f in self.terms))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c, f in self.terms:
            out += c * np.cos(f * x)
        return out

    def to_dict(self):
        return {"type": "cosine_nfp", "terms": [list(t) for t in self.terms]}


@dataclass(frozen=True)
class Sum2D(Kernel):
    """``W(x1, x2) = A(x1) + B(x2)``."""

    x: Kernel
    y: Kernel
    dim = 2

    def __call__(self, x1, x2):
        return self.x(x1) + self.y(x2)

    def to_dict(self):
        return {"type": "sum2d", "x": self.x.to_dict(), "y": self.y.to_dict()}


@dataclass(frozen=True)
class Product2D(Kernel):
    """``W(x1, x2) = sum_i c_i w_{k_i}(x1) w_{j_i}(x2)`` over basis elements."""

    terms: tuple[tuple[float, int, int], ...]
    dim = 2

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((float(c), int(k), int(j)) for c, k, j in self.terms))

    def __call__(self, x1, x2):
        out = np.zeros(np.broadcast(x1, x2).shape)
        for c, k, j in self.terms:
            out += c * basis(k, x1) * basis(j, x2)
        return out

    def to_dict(self):
        return {"type": "product2d", "terms": [list(t) for t in self.terms]}


@dataclass(frozen=True)
class SumOf(Kernel):
    """Sum of 2D kernels (e.g. a ``Sum2D`` plus a ``Product2D``)."""

    parts: tuple[Kernel, ...]
    dim = 2

    def __call__(self, x1, x2):
        return sum(p(x1, x2) for p in self.parts)

    def to_dict(self):
        return {"type": "sum", "parts": [p.to_dict() for p in self.parts]}


_REGISTRY = {
    "cosine_modes": lambda d: CosineModes(tuple(tuple(t) for t in d["terms"])),
    "kuramoto": lambda d: CosineModes(((1.0, int(d.get("k", 1))),)),
    "two_mode": lambda d: CosineModes(((d["a1"], d["k1"]), (d["a2"], d["k2"]))),
    "tophat": lambda d: TopHat(float(d["R"])),
    "triangle": lambda d: Triangle(float(d["R"])),
    "att_rep_tophat": lambda d: AttRepTopHat(float(d["R"])),
    "quadratic": lambda d: Quadratic(),
    "tanh_nfp": lambda d: TanhNFP(**{k: float(v) for k, v in d.items() if k != "type"}),
    "cosine_nfp": lambda d: CosineNFP(tuple(tuple(t) for t in d["terms"])),
    "sum2d": lambda d: Sum2D(kernel_from_dict(d["x"]), kernel_from_dict(d["y"])),
    "product2d": lambda d: Product2D(tuple(tuple(t) for t in d["terms"])),
    "sum": lambda d: SumOf(tuple(kernel_from_dict(p) for p in d["parts"])),
}


def kernel_from_dict(d: dict[str, Any]) -> Kernel:
    try:
        kind = d["type"]
    except (KeyError, TypeError):
        raise ValueError("kernel block needs a 'type' key") from None
    if kind not in _REGISTRY:
        raise ValueError(f"unknown kernel type {kind!r}; expected one of {sorted(_REGISTRY)}")
    try:
        return _REGISTRY[kind](d)
    except KeyError as exc:
        raise ValueError(f"kernel {kind!r} is missing parameter {exc.args[0]!r}") from None


def sample(spec: Kernel, grid: GridSpec) -> Field:
    """Pointwise kernel samples on ``grid`` (closed conditions ``|x| <= R`` at nodes)."""
    if spec.dim != grid.dim:
        raise ValueError(f"{type(spec).__name__} is {spec.dim}D but the grid is {grid.dim}D")
    if spec.periodic and not all(grid.periodic):
        raise ValueError(f"{type(spec).__name__} is a torus kernel; the grid is not periodic")
    return Field(grid, spec(*grid.coords()))


def fourier_mode(spec: Kernel, k: int, grid: GridSpec) -> float:
    """``W~(k) = int W w_k dx`` by Simpson quadrature on the sampled kernel."""
    if k < 0:
        raise ValueError("mode index must be non-negative")
    w = sample(spec, grid)
    return integrate(Field(grid, w.values * basis(k, grid.x)))


def critical_kappas(
    spec: Kernel, grid: GridSpec, k_max: int, zero_tol: float = 1e-10
) -> list[tuple[int, float]]:
    """``(k, kappa*_k)`` for every ``1 <= k <= k_max`` with a negative mode, ascending in kappa.

    Modes within ``zero_tol`` of zero are treated as vanishing.
    """
    out = []
    w = sample(spec, grid).values
    for k in range(1, k_max + 1):
        mode = integrate(Field(grid, w * basis(k, grid.x)))
        if mode < -zero_tol:
            out.append((k, -SQRT_2PI / mode))
    return sorted(out, key=lambda t: t[1])
