"""Perturb-and-evolve stability probe for 1D McKean-Vlasov states.

The evolution ``u_t = (sigma u_x + u (kappa W*u)_x)_x`` is advanced with a
linearly implicit finite-volume scheme: the interaction potential is lagged
by one step and the cell fluxes are of Scharfetter-Gummel type,

    J_{j+1/2} = -(sigma/dx) [B(-d) u_{j+1} - B(d) u_j],   B(z) = z / (e^z - 1),

with ``d`` the jump of ``kappa W*u / sigma`` across the face.  The update
matrix is an M-matrix with zero column sums, so each step preserves
positivity and mass, and a density proportional to ``exp(-kappa W*u/sigma)``
has exactly zero flux: stationary states of the fixed-point map are discrete
equilibria of the scheme.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .grid import Field
from .models import McKeanVlasov
from .solver import NewtonConfig, newton_solve

log = logging.getLogger(__name__)

NOISE_TIERS = {"large": 1e-2, "moderate": 1e-3, "moderate_low": 1e-4, "small": 1e-5, "tiny": 1e-8}


class SchemeViolation(RuntimeError):
    """Positivity or mass conservation broke down."""


@dataclass(frozen=True)
class EvolveConfig:
    dt: float = 0.1
    T_final: float = 14.0
    noise_level: float = 1e-3
    departure_factor: float = 10.0
    seed: int = 0
    noise_modes: int = 16
    negativity_tol: float = 1e-12
    mass_tol: float = 1e-10

    def __post_init__(self):
        if self.dt <= 0 or self.T_final <= 0:
            raise ValueError("dt and T_final must be positive")
        if self.noise_level < 0:
            raise ValueError("noise level must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(round(self.T_final / self.dt))

    @property
    def departure_threshold(self) -> float:
        return self.departure_factor * self.noise_level


@dataclass
class Trajectory:
    final: Field
    times: np.ndarray
    distance: np.ndarray  # relative l2 distance to the reference profile
    mass_drift: np.ndarray  # per-step relative change of mass
    min_density: np.ndarray
    energy: np.ndarray

    @property
    def max_mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass_drift))) if self.mass_drift.size else 0.0


def _bernoulli(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-8
    zs = z[small]
    out[small] = 1.0 - zs / 2 + zs * zs / 12
    zb = z[~small]
    out[~small] = zb / np.expm1(zb)
    return out


def _step_matrix(phi: np.ndarray, sigma: float, dx: float, dt: float):
    """``I - dt * div(J)`` on the periodic independent block, plus the face weights."""
    m = phi.size
    d = np.roll(phi, -1) - phi  # jump across face j+1/2
    bp, bm = _bernoulli(d), _bernoulli(-d)
    c = sigma * dt / dx**2
    j = np.arange(m)
    jp, jm = (j + 1) % m, (j - 1) % m
    # (u_new - u)/dt = -(J_{j+1/2} - J_{j-1/2})/dx
    #   J_{j+1/2} = -(sigma/dx)(bm_j u_{j+1} - bp_j u_j)
    diag = 1.0 + c * (bp + np.roll(bm, 1))
    upper = -c * bm  # coefficient of u_{j+1}
    lower = -c * np.roll(bp, 1)  # coefficient of u_{j-1}
    rows = np.concatenate([j, j, j])
    cols = np.concatenate([j, jp, jm])
    vals = np.concatenate([diag, upper, lower])
    return csc_matrix((vals, (rows, cols)), shape=(m, m)), bp, bm


def free_energy(problem: McKeanVlasov, u: np.ndarray) -> float:
    w = problem.grid.weights()
    u = np.reshape(u, problem.grid.shape)
    safe = np.where(u > 0, u, 1.0)
    return float(np.sum(w * (problem.sigma * u * np.log(safe) + 0.5 * problem.kappa * u * problem.convolve(u))))


def relative_l2(u: np.ndarray, ref: np.ndarray) -> float:
    return float(np.linalg.norm(u - ref) / np.linalg.norm(ref))


def evolve(problem: McKeanVlasov, u0: Field | np.ndarray, cfg: EvolveConfig = EvolveConfig(),
           reference: np.ndarray | None = None) -> Trajectory:
    """Advance ``u0`` to ``T_final``; distances are measured to ``reference`` (default ``u0``)."""
    grid = problem.grid
    if grid.dim != 1:
        raise ValueError("the evolution probe is one-dimensional")
    u_full = np.array(u0.values if isinstance(u0, Field) else u0, dtype=float).reshape(grid.shape)
    if np.any(u_full < -cfg.negativity_tol):
        raise ValueError("initial density must be non-negative")
    ref_full = u_full.copy() if reference is None else np.reshape(reference, grid.shape)
    m = grid.shape[0] - 1
    dx = grid.spacing[0]
    u = u_full[:m].copy()
    ref = ref_full[:m]
    n = cfg.n_steps
    times = np.arange(n + 1) * cfg.dt
    dist = np.empty(n + 1)
    drift = np.empty(n)
    mins = np.empty(n + 1)
    energy = np.empty(n + 1)
    dist[0], mins[0] = relative_l2(u, ref), u.min()
    energy[0] = free_energy(problem, grid.wrap(np.append(u, u[0])))
    for s in range(n):
        full = np.append(u, u[0])
        phi = (problem.kappa / problem.sigma) * problem.convolve(full)[:m]
        A, bp, bm = _step_matrix(phi, problem.sigma, dx, cfg.dt)
        mass0 = u.sum()
        u_star = splu(A).solve(u)
        # rebuild the update in conservative form from the implicit fluxes:
        # the matrix entries are O(dt/dx^2), so the solve alone loses mass at
        # the 1e-12 level, while telescoping flux differences do not
        flux = -(problem.sigma / dx) * (bm * np.roll(u_star, -1) - bp * u_star)
        u_new = u - (cfg.dt / dx) * (flux - np.roll(flux, 1))
        drift[s] = (u_new.sum() - mass0) / mass0
        if abs(drift[s]) > cfg.mass_tol:
            raise SchemeViolation(f"mass drift {drift[s]:.3e} at step {s}")
        if u_new.min() < -cfg.negativity_tol:
            raise SchemeViolation(f"negative density {u_new.min():.3e} at step {s}")
        u = u_new
        dist[s + 1], mins[s + 1] = relative_l2(u, ref), u.min()
        energy[s + 1] = free_energy(problem, np.append(u, u[0]))
        if energy[s + 1] > energy[s] + 1e-12 * max(1.0, abs(energy[s])):
            log.debug("free energy increased at step %d: %.3e -> %.3e", s, energy[s], energy[s + 1])
    return Trajectory(Field(grid, np.append(u, u[0])), times, dist, drift, mins, energy)


def mass_preserving_noise(grid, level: float, profile: np.ndarray, rng: np.random.Generator,
                          modes: int = 16) -> np.ndarray:
    """Random low-mode perturbation with zero mean and relative l2 size ``level``."""
    m = grid.shape[0] - 1
    x = grid.x[:m]
    L = grid.axes[0].length
    eta = np.zeros(m)
    for k in range(1, modes + 1):
        a, b = rng.standard_normal(2)
        eta += a * np.cos(2 * np.pi * k * x / L) + b * np.sin(2 * np.pi * k * x / L)
    eta -= eta.mean()
    ref = np.reshape(profile, grid.shape)[:m]
    eta *= level * np.linalg.norm(ref) / np.linalg.norm(eta)
    return np.append(eta, eta[0])


@dataclass
class StabilityLabel:
    kappa: float
    tier: str
    noise_level: float
    final_distance: float
    stable: bool
    nearest: int | None = None
    nearest_distance: float | None = None


@dataclass
class StabilityReport:
    labels: list[StabilityLabel] = field(default_factory=list)

    def by_kappa(self) -> dict[float, dict[str, bool]]:
        out: dict[float, dict[str, bool]] = {}
        for lab in self.labels:
            out.setdefault(lab.kappa, {})[lab.tier] = lab.stable
        return out


def probe_state(problem: McKeanVlasov, profile: np.ndarray, level: float, cfg: EvolveConfig,
                rng: np.random.Generator) -> tuple[Trajectory, bool]:
    """Perturb ``profile`` by ``level``, evolve, and compare with the departure threshold."""
    noise = mass_preserving_noise(problem.grid, level, profile, rng, cfg.noise_modes)
    u0 = np.reshape(profile, problem.grid.shape) + noise
    traj = evolve(problem, u0, cfg, reference=profile)
    threshold = cfg.departure_factor * level
    return traj, bool(traj.distance[-1] <= threshold)


def classify_stability(problem: McKeanVlasov, states: Sequence[tuple[float, np.ndarray]],
                       tiers: dict[str, float] | None = None, cfg: EvolveConfig = EvolveConfig(),
                       catalogue: Sequence[tuple[float, np.ndarray]] | None = None,
                       newton: NewtonConfig = NewtonConfig()) -> StabilityReport:
    """Label each ``(kappa, profile)`` stable or unstable per noise tier.

    Profiles are first polished by Newton at their kappa.  ``catalogue``
    entries ``(kappa, profile)`` (e.g. other branches at the same kappa) are
    used to report which state an escaped trajectory ends closest to.
    """
    tiers = tiers or {"large": 1e-2, "moderate": 1e-3, "small": 1e-5}
    rng = np.random.default_rng(cfg.seed)
    report = StabilityReport()
    for kappa, prof in states:
        p = problem.with_kappa(float(kappa))
        r = newton_solve(p, prof, newton)
        base = r.solution.values if r.converged else np.reshape(prof, p.grid.shape)
        for tier, level in tiers.items():
            traj, stable = probe_state(p, base, level, cfg, rng)
            lab = StabilityLabel(float(kappa), tier, level, float(traj.distance[-1]), stable)
            if not stable and catalogue:
                from .continuation import shift_distance

                cands = [(i, c) for i, (k, c) in enumerate(catalogue) if np.isclose(k, kappa)]
                if cands:
                    d = [shift_distance(traj.final.values, c, p.grid, reflections=True) for _, c in cands]
                    j = int(np.argmin(d))
                    lab.nearest, lab.nearest_distance = cands[j][0], float(d[j])
            report.labels.append(lab)
    return report


def linear_growth_rate(problem: McKeanVlasov, k: int) -> float:
    """Growth rate of mode ``cos(2 k x)`` about ``u_inf`` for the continuous linearisation."""
    from .kernels import SQRT_2PI, fourier_mode

    wk = fourier_mode(problem.kernel, k, problem.grid)
    return -4.0 * k * k * (problem.sigma + problem.kappa * wk / SQRT_2PI)
