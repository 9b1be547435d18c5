"""Discrete periodic convolution on endpoint-inclusive grids.

The FFT path drops the duplicated last node on each periodic axis, multiplies
spectra of the independent blocks, undoes the origin offset of the kernel
samples (a half-period ``fftshift`` on intervals centred at zero), restores the
duplicate node and rescales by the cell volume.
"""

from __future__ import annotations

import numpy as np

from .grid import Field, GridSpec


def _rolls(grid: GridSpec) -> tuple[int, ...]:
    # Circular shift applied after the inverse transform on each axis.
    # Symmetric intervals: fftshift (roll by floor(m/2)); otherwise undo the
    # index of the origin node.
    rolls = []
    for ax in grid.axes:
        m = ax.n - 1
        if ax.is_symmetric:
            rolls.append(m // 2)
            continue
        k = -ax.lower / ax.spacing
        if abs(k - round(k)) > 1e-8:
            raise ValueError(
                f"no grid node sits at the origin (mod period) on axis [{ax.lower}, {ax.upper}]"
            )
        rolls.append(-int(round(k)) % m)
    return tuple(rolls)


class ConvPlan:
    """FFT convolution workspace for one fully periodic grid.

    A kernel registered with :meth:`set_kernel` keeps its spectrum, so repeated
    ``W * u`` products inside a Newton solve only transform ``u``.  Plans hold
    no per-call scratch state and can be shared.
    """

    def __init__(self, grid: GridSpec):
        if not all(grid.periodic):
            raise ValueError("periodic convolution requires every axis to be periodic")
        self.grid = grid
        self.axes = tuple(range(grid.dim))
        self.rolls = _rolls(grid)
        self.scale = grid.cell_volume
        self.block_shape = tuple(ax.n - 1 for ax in grid.axes)
        self._kernel_hat: np.ndarray | None = None

    @property
    def symmetric(self) -> tuple[bool, ...]:
        return tuple(ax.is_symmetric for ax in self.grid.axes)

    def _spectrum(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float).reshape(self.grid.shape)
        return np.fft.rfftn(self.grid.independent(v), axes=self.axes)

    def _finish(self, spec: np.ndarray) -> np.ndarray:
        h = np.fft.irfftn(spec, s=self.block_shape, axes=self.axes)
        h = np.roll(h, self.rolls, axis=self.axes)
        out = np.empty(self.grid.shape)
        out[tuple(slice(0, m) for m in self.block_shape)] = h
        return self.grid.wrap(out) * self.scale

    def set_kernel(self, kernel_values: np.ndarray) -> ConvPlan:
        self._kernel_hat = self._spectrum(kernel_values)
        return self

    @property
    def has_kernel(self) -> bool:
        return self._kernel_hat is not None

    def convolve_kernel(self, values: np.ndarray) -> np.ndarray:
        """``W * values`` for the registered kernel, on raw arrays."""
        if self._kernel_hat is None:
            raise RuntimeError("no kernel registered on this plan")
        return self._finish(self._kernel_hat * self._spectrum(values))

    def convolve(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        return self._finish(self._spectrum(f) * self._spectrum(g))


def _check_pair(plan: ConvPlan | None, f: Field, g: Field, dim: int) -> GridSpec:
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    if plan is not None and plan.grid != f.grid:
        raise ValueError("convolution plan was built for a different grid")
    if f.grid.dim != dim:
        raise ValueError(f"expected a {dim}D grid, got {f.grid.dim}D")
    if not all(f.grid.periodic):
        raise ValueError("periodic convolution requires periodic axes")
    return f.grid


def periodic_convolve(plan: ConvPlan, f: Field, g: Field) -> Field:
    """FFT approximation of the periodic convolution ``f * g`` on a 1D torus."""
    grid = _check_pair(plan, f, g, 1)
    return Field(grid, plan.convolve(f.values, g.values))


def periodic_convolve_2d(plan: ConvPlan, f: Field, g: Field) -> Field:
    grid = _check_pair(plan, f, g, 2)
    return Field(grid, plan.convolve(f.values, g.values))


def brute_convolve(f: Field, g: Field) -> Field:
    """Direct O(N^2) circular sum with the same conventions as the FFT path."""
    grid = _check_pair(None, f, g, 1)
    m = grid.axes[0].n - 1
    (roll,) = _rolls(grid)
    fb, gb = f.values[:m], g.values[:m]
    i = np.arange(m)
    idx = (i[:, None] - i[None, :] - roll) % m
    out = np.empty(m + 1)
    out[:m] = (fb[idx] * gb[None, :]).sum(axis=1) * grid.axes[0].spacing
    out[m] = out[0]
    return Field(grid, out)


def brute_convolve_2d(f: Field, g: Field) -> Field:
    """Direct O(N^4) circular sum in 2D (oracle only; keep grids small)."""
    grid = _check_pair(None, f, g, 2)
    m1, m2 = grid.axes[0].n - 1, grid.axes[1].n - 1
    r1, r2 = _rolls(grid)
    fb, gb = f.values[:m1, :m2], g.values[:m1, :m2]
    i1, i2 = np.arange(m1), np.arange(m2)
    out = np.empty(grid.shape)
    for a in range(m1):
        fa = fb[(a - i1 - r1) % m1]
        for b in range(m2):
            cols = (b - i2 - r2) % m2
            out[a, b] = np.sum(fa[:, cols] * gb)
    out *= grid.cell_volume
    return Field(grid, grid.wrap(out))
