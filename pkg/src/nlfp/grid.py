"""Uniform grids, composite Simpson quadrature, norms and spline upsampling.

Periodic axes store both endpoints: the last node duplicates the first, so a
periodic axis with ``n`` nodes carries ``n - 1`` independent samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline


@dataclass(frozen=True)
class Axis:
    n: int
    lower: float
    upper: float
    periodic: bool = True

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"axis needs at least 3 nodes, got n={self.n}")
        if not self.upper > self.lower:
            raise ValueError(f"axis bounds must satisfy lower < upper, got [{self.lower}, {self.upper}]")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.n)

    @property
    def n_independent(self) -> int:
        return self.n - 1 if self.periodic else self.n

    @property
    def is_symmetric(self) -> bool:
        # lower == -upper up to one spacing
        return abs(self.lower + self.upper) < self.spacing

    def simpson_weights(self) -> np.ndarray:
        if self.n % 2 == 0:
            raise ValueError(f"composite Simpson needs an odd number of nodes, axis has n={self.n}")
        w = np.ones(self.n)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * (self.spacing / 3.0)


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid of one or two uniform axes."""

    axes: tuple[Axis, ...]
    _weights: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if len(self.axes) not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")

    @classmethod
    def torus(cls, n: int, length: float = np.pi) -> GridSpec:
        """Periodic 1D grid on (-length/2, length/2]."""
        return cls((Axis(n, -length / 2, length / 2, True),))

    @classmethod
    def torus2d(cls, n1: int, n2: int | None = None, length: float = np.pi) -> GridSpec:
        n2 = n1 if n2 is None else n2
        return cls((Axis(n1, -length / 2, length / 2, True), Axis(n2, -length / 2, length / 2, True)))

    @classmethod
    def interval(cls, n: int, lower: float, upper: float) -> GridSpec:
        return cls((Axis(n, lower, upper, False),))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.n for ax in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(ax.spacing for ax in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod([ax.length for ax in self.axes]))

    @property
    def periodic(self) -> tuple[bool, ...]:
        return tuple(ax.periodic for ax in self.axes)

    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays broadcast to the grid shape (``indexing='ij'``)."""
        return tuple(np.meshgrid(*(ax.nodes for ax in self.axes), indexing="ij"))

    @property
    def x(self) -> np.ndarray:
        return self.axes[0].nodes

    def weights(self) -> np.ndarray:
        """Simpson weights with the grid's shape (tensor product in 2D)."""
        w = self._weights.get("simpson")
        if w is None:
            for i, ax in enumerate(self.axes):
                if ax.n % 2 == 0:
                    raise ValueError(
                        f"composite Simpson needs an odd number of nodes; axis {i} has n={ax.n}"
                    )
            parts = [ax.simpson_weights() for ax in self.axes]
            w = parts[0] if self.dim == 1 else np.multiply.outer(parts[0], parts[1])
            w.flags.writeable = False
            self._weights["simpson"] = w
        return w

    def same_domain(self, other: GridSpec) -> bool:
        if self.dim != other.dim:
            return False
        return all(
            np.isclose(a.lower, b.lower) and np.isclose(a.upper, b.upper) and a.periodic == b.periodic
            for a, b in zip(self.axes, other.axes)
        )

    def wrap(self, values: np.ndarray) -> np.ndarray:
        """Copy of ``values`` with periodic duplicate nodes set from the first node."""
        v = np.array(values, dtype=float, copy=True).reshape(self.shape)
        for i, ax in enumerate(self.axes):
            if ax.periodic:
                idx_last = [slice(None)] * self.dim
                idx_first = [slice(None)] * self.dim
                idx_last[i] = -1
                idx_first[i] = 0
                v[tuple(idx_last)] = v[tuple(idx_first)]
        return v

    def independent(self, values: np.ndarray) -> np.ndarray:
        """View of the independent block (periodic duplicates dropped)."""
        sl = tuple(slice(0, ax.n - 1) if ax.periodic else slice(None) for ax in self.axes)
        return np.asarray(values).reshape(self.shape)[sl]

    def to_dict(self) -> dict:
        return {
            "axes": [
                {"n": ax.n, "lower": ax.lower, "upper": ax.upper, "periodic": ax.periodic}
                for ax in self.axes
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> GridSpec:
        return cls(tuple(Axis(int(a["n"]), float(a["lower"]), float(a["upper"]), bool(a["periodic"])) for a in d["axes"]))


@dataclass
class Field:
    """Samples of a density on a grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    def like(self, values: np.ndarray) -> Field:
        return Field(self.grid, values)

    def copy(self) -> Field:
        return Field(self.grid, self.values.copy())

    @property
    def mass(self) -> float:
        return integrate(self)


def integrate(f: Field | np.ndarray, grid: GridSpec | None = None) -> float:
    """Composite Simpson 1/3 approximation of the integral of ``f``."""
    if isinstance(f, Field):
        grid, values = f.grid, f.values
    else:
        if grid is None:
            raise TypeError("a grid is required when integrating a raw array")
        values = np.asarray(f).reshape(grid.shape)
    return float(np.sum(grid.weights() * values))


def upsample(f: Field, target: GridSpec) -> Field:
    """Cubic-spline interpolant of ``f`` sampled on ``target``.

    Periodic axes use periodic end conditions (after wrapping the duplicate
    node); truncated axes use not-a-knot.
    """
    src = f.grid
    if not src.same_domain(target):
        raise ValueError("upsample target must cover the same domain with the same topology")
    if any(ax.n < 4 for ax in src.axes):
        raise ValueError("upsampling needs at least 4 nodes per axis")
    if target == src:
        return f.copy()
    values = src.wrap(f.values)
    for i, (ax_src, ax_tgt) in enumerate(zip(src.axes, target.axes)):
        if ax_src.n == ax_tgt.n:
            continue
        bc = "periodic" if ax_src.periodic else "not-a-knot"
        spline = CubicSpline(ax_src.nodes, values, axis=i, bc_type=bc)
        values = spline(ax_tgt.nodes)
    out = Field(target, values)
    if any(target.periodic):
        out.values = target.wrap(out.values)
    return out


def norm(f: Field | np.ndarray, p: float = 2, weighted: bool = False, spacing: float | None = None) -> float:
    """l2 or l-infinity norm of a sample vector.

    With ``weighted`` the l2 norm is scaled by ``sqrt(dx)`` (``dx`` taken from
    the field's grid, or ``spacing`` for raw arrays).
    """
    values = f.values if isinstance(f, Field) else np.asarray(f, dtype=float)
    values = values.ravel()
    if p == np.inf or p == "inf":
        return float(np.max(np.abs(values))) if values.size else 0.0
    if p != 2:
        raise ValueError(f"unsupported norm exponent {p!r}")
    out = float(np.linalg.norm(values))
    if weighted:
        if isinstance(f, Field):
            dx = f.grid.cell_volume
        elif spacing is not None:
            dx = spacing
        else:
            raise TypeError("weighted norm of a raw array needs a spacing")
        out *= np.sqrt(dx)
    return out
