"""Guess sweeps, natural continuation in kappa, duplicate filtering and scans.

States are compared up to circular shifts (and, by default, the reflection
``x -> -x``) with :func:`shift_distance`.  A state is homogeneous when
``|u - u_inf|_inf <= HOMOGENEITY_TOL``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grid import Field, GridSpec, norm
from .models import NFP, McKeanVlasov
from .solver import NewtonConfig, newton_solve

log = logging.getLogger(__name__)

HOMOGENEITY_TOL = 1e-4
DEDUP_TOL = 1e-4
# relative density floors for the steady-state check on truncated domains
SUPPORT_TOL = 1e-8
NEGATIVITY_TOL = 1e-10
WORKERS_ENV = "NLFP_WORKERS"


# -- guesses -----------------------------------------------------------------


@dataclass(frozen=True)
class CosineFamily:
    """``1/L + b cos(2 pi k x / L)`` for every ``(k, b)`` pair."""

    wavenumbers: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)
    amplitudes: tuple[float, ...] = (0.5,)

    def generate(self, grid: GridSpec) -> list[tuple[str, np.ndarray]]:
        out = []
        for k in self.wavenumbers:
            for b in self.amplitudes:
                out.append((f"cos(k={k:g},b={b:g})", cosine_guess(grid, k, b)))
        return out


@dataclass(frozen=True)
class LegacySweep:
    """``1/pi + 0.5 cos((1 + 0.1 z) x)`` for ``z`` in ``zs`` (default 0..90)."""

    zs: tuple[float, ...] = tuple(range(91))

    def generate(self, grid: GridSpec) -> list[tuple[str, np.ndarray]]:
        x = grid.coords()[0]
        return [(f"legacy(z={z:g})", 1.0 / np.pi + 0.5 * np.cos((1 + 0.1 * z) * x)) for z in self.zs]


@dataclass(frozen=True)
class Gaussian:
    """``exp(-s^2/2)`` in the last coordinate (velocity or activity)."""

    def generate(self, grid: GridSpec) -> list[tuple[str, np.ndarray]]:
        s = grid.coords()[-1]
        return [("gaussian", np.exp(-s * s / 2))]


@dataclass(frozen=True)
class GuessSuite:
    families: tuple = (CosineFamily(),)
    include_homogeneous: bool = True

    def generate(self, problem) -> list[tuple[str, np.ndarray]]:
        out = []
        if self.include_homogeneous and isinstance(problem, McKeanVlasov):
            out.append(("homogeneous", problem.homogeneous()))
        for fam in self.families:
            out.extend(fam.generate(problem.grid))
        for label, g in out:
            if not np.all(np.isfinite(g)):
                raise ValueError(f"guess {label} is not finite")
        return out


def cosine_guess(grid: GridSpec, k: float, b: float) -> np.ndarray:
    """``f_{k,b}(x) = 1/L + b cos(2 pi k x / L)`` (first axis; constant in others)."""
    x = grid.coords()[0]
    L = grid.axes[0].length
    return np.full(grid.shape, 1.0 / grid.volume) + b * np.cos(2 * np.pi * k * x / L)


def nfp_mode_guess(problem: NFP, k: float, b: float = 1e-3, cfg: NewtonConfig = NewtonConfig()) -> np.ndarray:
    """``u_inf(y) + b cos(2 pi k x / L)`` with ``u_inf`` the angle-independent state.

    ``u_inf`` is obtained by Newton from the Gaussian centred at ``B``.
    """
    r = newton_solve(problem, problem.homogeneous_guess(), cfg)
    if not r.converged:
        raise RuntimeError(f"angle-independent state did not converge ({r.status})")
    x = problem.grid.coords()[0]
    return r.solution.values + b * np.cos(2 * np.pi * k * x / problem.L)


# -- distances ---------------------------------------------------------------


def _block(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    return grid.independent(np.reshape(values, grid.shape))


def _reflect(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    # x -> -x on a symmetric endpoint-inclusive axis reverses the full node list
    v = np.reshape(values, grid.shape)
    return v[tuple(slice(None, None, -1) for _ in grid.axes)]


def _min_shift_1d(a: np.ndarray, b: np.ndarray, stop_below: float = -1.0) -> float:
    best = np.inf
    for s in range(a.size):
        d = float(np.max(np.abs(a - np.roll(b, s))))
        if d < best:
            best = d
            if best <= stop_below:
                break
    return best


def _min_shift_2d(a: np.ndarray, b: np.ndarray, candidates: int = 8) -> float:
    # exact l2-optimal shifts from the cross-correlation; l-inf checked on the
    # best few candidates
    corr = np.fft.irfftn(np.fft.rfftn(a) * np.conj(np.fft.rfftn(b)), s=a.shape)
    idx = np.argsort(corr, axis=None)[::-1][:candidates]
    best = np.inf
    for flat in idx:
        s = np.unravel_index(flat, a.shape)
        best = min(best, float(np.max(np.abs(a - np.roll(b, s, axis=(0, 1))))))
    return best


def shift_distance(u: Field | np.ndarray, v: Field | np.ndarray, grid: GridSpec | None = None,
                   reflections: bool = False, stop_below: float = -1.0) -> float:
    """``min_s |u - shift(v, s)|_inf`` over circular shifts of the independent block.

    With ``reflections`` the reflected ``v`` is also tried.  2D grids search
    the shifts maximising the cross-correlation (the l2-optimal ones).
    ``stop_below`` allows an early exit once a shift closer than it is found.
    """
    if isinstance(u, Field):
        grid = u.grid
        u = u.values
    if isinstance(v, Field):
        if grid is not None and v.grid != grid:
            raise ValueError("fields live on different grids")
        grid = v.grid
        v = v.values
    if grid is None:
        raise TypeError("a grid is required for raw arrays")
    if not all(grid.periodic):
        return float(np.max(np.abs(np.reshape(u, grid.shape) - np.reshape(v, grid.shape))))
    a = _block(grid, u)
    cands = [v] + ([_reflect(grid, v)] if reflections else [])
    best = np.inf
    for c in cands:
        b = _block(grid, c)
        if grid.dim == 1:
            d = _min_shift_1d(a, b, stop_below)
        else:
            d = _min_shift_2d(a, b)
        best = min(best, d)
        if best <= stop_below:
            break
    return best


def _fractional_shift(b: np.ndarray, t: float) -> np.ndarray:
    """Trigonometric-interpolant shift of a periodic 1D block by ``t`` nodes."""
    f = np.fft.rfftfreq(b.size)
    return np.fft.irfft(np.fft.rfft(b) * np.exp(-2j * np.pi * f * t), n=b.size)


def subgrid_shift_distance(u: np.ndarray, v: np.ndarray, grid: GridSpec, reflections: bool = False) -> float:
    """Like :func:`shift_distance` but refines the best grid shift continuously.

    Two copies of one pattern whose offset is not a whole number of nodes
    (e.g. a half period of an odd-length block) are at grid-shift distance of
    order ``|u'| dx``; the trigonometric interpolant removes that.  1D only.
    """
    from scipy.optimize import minimize_scalar

    if grid.dim != 1 or not grid.periodic[0]:
        return shift_distance(u, v, grid, reflections)
    a = _block(grid, u)
    best = np.inf
    for c in [v] + ([_reflect(grid, v)] if reflections else []):
        b = _block(grid, c)
        d = [float(np.max(np.abs(a - np.roll(b, s)))) for s in range(a.size)]
        s0 = int(np.argmin(d))
        res = minimize_scalar(
            lambda t: float(np.max(np.abs(a - _fractional_shift(b, t)))),
            bounds=(s0 - 1.0, s0 + 1.0),
            method="bounded",
            options={"xatol": 1e-6},
        )
        best = min(best, d[s0], float(res.fun))
    return best


def same_state(u, v, grid: GridSpec, tol: float = DEDUP_TOL, reflections: bool = True,
               subgrid: bool = True) -> bool:
    """Equality up to shifts (and reflection) within ``tol`` in the max norm."""
    ua, va = np.reshape(u, grid.shape), np.reshape(v, grid.shape)
    # shift-invariant lower bounds first
    if abs(ua.max() - va.max()) > tol or abs(ua.min() - va.min()) > tol:
        return False
    if shift_distance(ua, va, grid, reflections, stop_below=tol) <= tol:
        return True
    return subgrid and grid.dim == 1 and subgrid_shift_distance(ua, va, grid, reflections) <= tol


def dedup(states: Sequence[np.ndarray], grid: GridSpec, tol: float = DEDUP_TOL,
          reflections: bool = True) -> list[int]:
    """Indices of the first representative of each shift-equivalence class."""
    keep: list[int] = []
    for i, s in enumerate(states):
        if not any(same_state(states[j], s, grid, tol, reflections) for j in keep):
            keep.append(i)
    return keep


# -- residual diagnostics ----------------------------------------------------


def distance_to_homogeneous(problem, u: np.ndarray) -> tuple[float, float]:
    """``(|u - u_inf|_2 weighted, |u - u_inf|_inf)``."""
    d = np.reshape(u, problem.grid.shape) - problem.homogeneous()
    return norm(d, 2, weighted=True, spacing=problem.grid.cell_volume), norm(d, np.inf)


def steady_state_residual(problem, u: Field | np.ndarray, support_tol: float = SUPPORT_TOL) -> float:
    """``max |xi - mean(xi)|`` with ``xi`` the variant's steady-state potential.

    McKean-Vlasov uses the quadrature average over the torus.  On truncated
    domains the density decays to rounding level in the tails, where ``log u``
    carries no information; the condition is checked where
    ``u > support_tol * max u``, and for the neural model per angle since the
    activity Gaussians are normalised angle by angle.
    """
    vals = u.values if isinstance(u, Field) else np.reshape(u, problem.grid.shape)
    top = float(np.max(vals))
    if top <= 0 or np.min(vals) < -NEGATIVITY_TOL * top:
        raise ValueError("steady-state condition needs a non-negative density")
    if isinstance(problem, McKeanVlasov):
        xi = problem.xi(vals)
        w = problem.grid.weights()
        return float(np.max(np.abs(xi - np.sum(w * xi) / problem.grid.volume)))
    support = vals > support_tol * top
    xi = problem.xi(vals, support)
    if isinstance(problem, NFP):
        out = 0.0
        for row, mask in zip(xi, support):
            if mask.any():
                r = row[mask]
                out = max(out, float(np.max(np.abs(r - r.mean()))))
        return out
    r = xi[support]
    return float(np.max(np.abs(r - r.mean())))


# -- sweeps ------------------------------------------------------------------


def _workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else 1
    return max(1, int(workers))


def _solve_task(args):
    problem, guess, cfg = args
    r = newton_solve(problem, guess, cfg)
    return r.converged, r.solution.values, r.final_residual, r.status


def _map(fn, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


@dataclass
class SweepResult:
    states: list[np.ndarray]
    labels: list[str]
    residuals: list[float]
    n_failed: int
    n_converged: int


def sweep_guesses(problem, suite: GuessSuite, cfg: NewtonConfig = NewtonConfig(),
                  tol: float = DEDUP_TOL, reflections: bool = True,
                  workers: int | None = None) -> SweepResult:
    """Newton from every guess; distinct converged states in guess order."""
    guesses = suite.generate(problem)
    results = _map(_solve_task, [(problem, g, cfg) for _, g in guesses], _workers(workers))
    conv = [(lab, r) for (lab, _), r in zip(guesses, results) if r[0]]
    n_failed = len(guesses) - len(conv)
    states = [r[1] for _, r in conv]
    keep = dedup(states, problem.grid, tol, reflections)
    return SweepResult(
        [states[i] for i in keep],
        [conv[i][0] for i in keep],
        [conv[i][1][2] for i in keep],
        n_failed,
        len(conv),
    )


# -- branches ----------------------------------------------------------------


@dataclass
class BranchRecord:
    kappa: float
    index: int
    l2: float
    linf: float
    residual: float
    ss_residual: float
    profile: np.ndarray | None = None


@dataclass
class Branch:
    records: list[BranchRecord] = field(default_factory=list)
    homogeneous: bool = False
    low_end: str = ""
    high_end: str = ""
    onset: float | None = None
    seed_kappa: float | None = None
    label: str = ""
    branch_id: int = -1

    def sort(self) -> None:
        self.records.sort(key=lambda r: r.index)

    @property
    def kappas(self) -> np.ndarray:
        return np.array([r.kappa for r in self.records])

    @property
    def linf(self) -> np.ndarray:
        return np.array([r.linf for r in self.records])

    @property
    def l2(self) -> np.ndarray:
        return np.array([r.l2 for r in self.records])

    @property
    def max_linf(self) -> float:
        return float(self.linf.max()) if self.records else 0.0

    @property
    def kappa_min(self) -> float:
        return float(self.kappas.min())

    @property
    def kappa_max(self) -> float:
        return float(self.kappas.max())

    def record_at(self, index: int) -> BranchRecord | None:
        for r in self.records:
            if r.index == index:
                return r
        return None

    def profile_records(self) -> list[BranchRecord]:
        return [r for r in self.records if r.profile is not None]

    def snapshot(self) -> BranchRecord:
        """Profile at the largest stored kappa (interior one for folded branches)."""
        recs = self.profile_records()
        if not recs:
            raise ValueError("branch stores no profiles")
        top = max(recs, key=lambda r: r.kappa)
        if self.high_end == "range_end" or len(recs) < 3:
            return top
        return recs[len(recs) // 2]

    def to_rows(self) -> list[dict]:
        return [
            {"kappa": r.kappa, "l2": r.l2, "linf": r.linf, "residual": r.residual, "ss_residual": r.ss_residual}
            for r in self.records
        ]


@dataclass
class TraceConfig:
    """Natural-continuation controls."""

    homogeneity_tol: float = HOMOGENEITY_TOL
    jump_factor: float = 0.5
    jump_ratio: float = 10.0
    store_every: int = 10
    check_steady_state: bool = True


def kappa_grid(kmin: float, kmax: float, n: int = 2001) -> np.ndarray:
    if not kmax > kmin:
        raise ValueError("kappa range must satisfy kmin < kmax")
    return np.linspace(kmin, kmax, n)


def _record(problem, kappa, index, u, residual, tcfg: TraceConfig, keep_profile: bool) -> BranchRecord:
    l2, linf = distance_to_homogeneous(problem, u)
    ss = steady_state_residual(problem, u) if tcfg.check_steady_state else float("nan")
    return BranchRecord(float(kappa), int(index), l2, linf, residual, ss, u.copy() if keep_profile else None)


def _march(problem, kappas, start, u0, step, cfg, tcfg, records) -> tuple[str, float | None]:
    """Continue from ``kappas[start]`` in direction ``step``; returns (end reason, onset).

    The last accepted record always keeps its profile so branch ends can be
    compared with other branches.
    """
    n0 = len(records)
    state = {"u": u0}
    out = _march_steps(problem, kappas, start, u0, step, cfg, tcfg, records, state)
    if len(records) > n0 and records[-1].profile is None:
        records[-1].profile = state["u"].copy()
    return out


def _march_steps(problem, kappas, start, u0, step, cfg, tcfg, records, state):
    u_prev = u0
    amp_prev = distance_to_homogeneous(problem, u0)[1]
    incr_prev = None
    floor = 10 * tcfg.homogeneity_tol
    i = start + step
    while 0 <= i < len(kappas):
        p = problem.with_kappa(float(kappas[i]))
        r = newton_solve(p, u_prev, cfg)
        if not r.converged:
            log.debug("branch truncated at kappa=%.6g: %s", kappas[i], r.message)
            return f"newton_{r.status}", None
        u = r.solution.values
        amp = distance_to_homogeneous(p, u)[1]
        incr = float(np.max(np.abs(u - u_prev)))
        # a smooth branch changes by O(dkappa) per step; switching to another
        # branch (including falling onto u_inf past a fold) shows up as an
        # increment far above the previous one
        limit = tcfg.jump_factor * amp_prev if incr_prev is None else tcfg.jump_ratio * incr_prev
        if incr > max(limit, floor):
            log.debug("jump of %.3g at kappa=%.6g (amplitude %.3g)", incr, kappas[i], amp_prev)
            return "jump", None
        if amp <= tcfg.homogeneity_tol:
            return "homogeneous", 0.5 * (kappas[i] + kappas[i - step])
        keep = i % tcfg.store_every == 0 or i in (0, len(kappas) - 1)
        records.append(_record(p, kappas[i], i, u, r.final_residual, tcfg, keep))
        u_prev, amp_prev, incr_prev = u, amp, incr
        state["u"] = u
        i += step
    return "range_end", None


def trace_branch(problem: McKeanVlasov, seed_index: int, seed: np.ndarray, kappas: np.ndarray,
                 cfg: NewtonConfig = NewtonConfig(), tcfg: TraceConfig = TraceConfig(),
                 directions: Iterable[int] = (-1, 1)) -> Branch:
    """Warm-started continuation from a converged ``seed`` at ``kappas[seed_index]``.

    Marches down and up the kappa grid.  A direction stops when the state
    becomes homogeneous (the onset kappa is recorded), when Newton fails, or
    when the profile jumps: the first step may not exceed ``jump_factor``
    times the amplitude, later steps ``jump_ratio`` times the previous step.
    """
    p0 = problem.with_kappa(float(kappas[seed_index]))
    r0 = newton_solve(p0, seed, cfg)
    br = Branch(seed_kappa=float(kappas[seed_index]))
    if not r0.converged:
        br.low_end = br.high_end = f"seed_{r0.status}"
        return br
    u0 = r0.solution.values
    if distance_to_homogeneous(p0, u0)[1] <= tcfg.homogeneity_tol:
        br.homogeneous = True
    br.records.append(_record(p0, kappas[seed_index], seed_index, u0, r0.final_residual, tcfg, True))
    for step in directions:
        reason, onset = _march(problem, kappas, seed_index, u0, step, cfg, tcfg, br.records)
        if step < 0:
            br.low_end = reason
        else:
            br.high_end = reason
        if onset is not None:
            br.onset = onset if br.onset is None else min(br.onset, onset)
    br.sort()
    return br


def homogeneous_branch(problem: McKeanVlasov, kappas: np.ndarray, tcfg: TraceConfig = TraceConfig()) -> Branch:
    """``u_inf`` is a fixed point for every kappa; residuals are evaluated, not solved."""
    u = problem.homogeneous()
    br = Branch(homogeneous=True, low_end="range_end", high_end="range_end", label="homogeneous")
    for i, k in enumerate(kappas):
        p = problem.with_kappa(float(k))
        res = float(np.max(np.abs(p.T(u) - u)))
        keep = i % tcfg.store_every == 0 or i == len(kappas) - 1
        br.records.append(_record(p, k, i, u, res, tcfg, keep))
    return br


def _trace_task(args):
    problem, idx, seed, kappas, cfg, tcfg, label = args
    br = trace_branch(problem, idx, seed, kappas, cfg, tcfg)
    br.label = label
    return br


def covered(branches: Sequence[Branch], index: int, u: np.ndarray, grid: GridSpec,
            tol: float = DEDUP_TOL, reflections: bool = True) -> bool:
    for br in branches:
        rec = br.record_at(index)
        if rec is not None and rec.profile is not None and same_state(rec.profile, u, grid, tol, reflections):
            return True
    return False


def _trim(br: Branch, owners: Sequence[Branch], grid: GridSpec, tol: float, reflections: bool,
          dkappa: float) -> Branch:
    """Drop records of ``br`` that duplicate a state already owned by ``owners``.

    Duplicates are decided at records carrying profiles; a record in between
    is a duplicate when the stored records bracketing it both are.  Natural
    continuation may follow a secondary branch through its branch point onto
    the primary one; trimming keeps both curves without repeating states.
    """
    index_maps = [{r.index: r for r in o.profile_records()} for o in owners]
    prof = br.profile_records()
    if not prof or not owners:
        return br
    dup = {}
    for r in prof:
        dup[r.index] = any(
            (m.get(r.index) is not None and same_state(m[r.index].profile, r.profile, grid, tol, reflections))
            for m in index_maps
        )
    if not any(dup.values()):
        return br
    pidx = np.array(sorted(dup))
    keep = []
    for r in br.records:
        j = int(np.searchsorted(pidx, r.index))
        hi = pidx[min(j, len(pidx) - 1)]
        lo = pidx[j] if j < len(pidx) and pidx[j] == r.index else pidx[max(j - 1, 0)]
        if not (dup[int(lo)] and dup[int(hi)]):
            keep.append(r)
    low_before, high_before = br.kappa_min, br.kappa_max
    br.records = keep
    if not keep:
        return br
    if br.kappa_min > low_before:
        br.low_end = "joins_other_branch"
    if br.kappa_max < high_before:
        br.high_end = "joins_other_branch"
    if br.onset is not None and min(abs(br.kappa_min - br.onset), abs(br.kappa_max - br.onset)) > 1.5 * dkappa:
        br.onset = None
    return br


@dataclass
class Diagram:
    branches: list[Branch]
    kappas: np.ndarray
    problem: dict
    dedup_tol: float
    reflections: bool
    seeds: list[dict] = field(default_factory=list)
    near_pairs: list[dict] = field(default_factory=list)

    def inhomogeneous(self) -> list[Branch]:
        return [b for b in self.branches if not b.homogeneous]

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "kappa_min": float(self.kappas[0]),
            "kappa_max": float(self.kappas[-1]),
            "n_kappa": int(len(self.kappas)),
            "dedup_tol": self.dedup_tol,
            "reflections": self.reflections,
            "seeds": self.seeds,
            "near_threshold_pairs": self.near_pairs,
            "branches": [
                {
                    "id": b.branch_id,
                    "label": b.label,
                    "homogeneous": b.homogeneous,
                    "n_records": len(b.records),
                    "kappa_min": b.kappa_min,
                    "kappa_max": b.kappa_max,
                    "max_linf": b.max_linf,
                    "onset": b.onset,
                    "low_end": b.low_end,
                    "high_end": b.high_end,
                    "seed_kappa": b.seed_kappa,
                }
                for b in self.branches
            ],
        }


def build_diagram(problem: McKeanVlasov, kappa_range: tuple[float, float], suite: GuessSuite,
                  seed_kappas: Sequence[float] | None = None, n_kappa: int = 2001,
                  cfg: NewtonConfig = NewtonConfig(), tcfg: TraceConfig = TraceConfig(),
                  tol: float = DEDUP_TOL, reflections: bool = True,
                  workers: int | None = None) -> Diagram:
    """Bifurcation diagram in kappa.

    Seeds come from guess sweeps at ``kappa_max`` (default) or at every value
    of ``seed_kappas`` (snapped to the kappa grid).  Seeds already lying on a
    traced branch are skipped; the rest are traced in both directions.
    Records repeating a state of an earlier branch are trimmed, the homogeneous
    branch is added, and branches are ordered by ``max |u - u_inf|_inf``.
    """
    kappas = kappa_grid(*kappa_range, n_kappa)
    grid = problem.grid
    nw = _workers(workers)
    if seed_kappas is None:
        seed_idx = [n_kappa - 1]
    else:
        # snap to indices that store profiles so seeds can be matched against traced branches
        se = tcfg.store_every
        seed_idx = sorted(
            {min(int(round(np.argmin(np.abs(kappas - k)) / se)) * se, n_kappa - 1) for k in seed_kappas},
            reverse=True,
        )
    branches: list[Branch] = []
    seeds_meta = []
    for idx in seed_idx:
        p = problem.with_kappa(float(kappas[idx]))
        sw = sweep_guesses(p, suite, cfg, tol, reflections, nw)
        todo = []
        for lab, s in zip(sw.labels, sw.states):
            if distance_to_homogeneous(p, s)[1] <= tcfg.homogeneity_tol:
                continue
            if covered(branches, idx, s, grid, tol, reflections):
                continue
            todo.append((problem, idx, s, kappas, cfg, tcfg, lab))
        seeds_meta.append({"kappa": float(kappas[idx]), "distinct": len(sw.states), "new": len(todo),
                           "failed_guesses": sw.n_failed})
        # seeds at one kappa are distinct there; tracing them in parallel is safe
        traced = _map(_trace_task, todo, nw)
        for br in traced:
            if len(br.records) == 0:
                continue
            branches.append(br)
    # global reduction: merge branches that share a state at a common kappa
    merged: list[Branch] = []
    dk = float(kappas[1] - kappas[0])
    for br in branches:
        br = _trim(br, merged, grid, tol, reflections, dk)
        if br.records:
            merged.append(br)
    merged.append(homogeneous_branch(problem, kappas, tcfg))
    merged.sort(key=lambda b: (-b.max_linf, b.kappa_min))
    for i, b in enumerate(merged):
        b.branch_id = i + 1
    near = _near_pairs(merged, grid, tol, reflections)
    return Diagram(merged, kappas, problem.to_dict(), tol, reflections, seeds_meta, near)


def _near_pairs(branches: Sequence[Branch], grid: GridSpec, tol: float, reflections: bool) -> list[dict]:
    """Pairs of distinct branches closer than ``10 tol`` at some common kappa."""
    out = []
    for i, a in enumerate(branches):
        for b in branches[i + 1:]:
            idx_b = {r.index: r for r in b.profile_records()}
            for r in a.profile_records():
                s = idx_b.get(r.index)
                if s is None:
                    continue
                if same_state(r.profile, s.profile, grid, 10 * tol, reflections):
                    d = shift_distance(r.profile, s.profile, grid, reflections)
                    out.append({"branches": [a.branch_id, b.branch_id], "kappa": r.kappa, "distance": d})
                    break
    return out


# -- critical threshold ------------------------------------------------------


def find_critical_kappa(problem: McKeanVlasov, kappa_lo: float, kappa_hi: float, guess: np.ndarray,
                        tol_kappa: float = 1e-6, cfg: NewtonConfig = NewtonConfig(),
                        homogeneity_tol: float = HOMOGENEITY_TOL) -> float:
    """Bisection on "Newton from ``guess`` converges to an inhomogeneous state"."""

    def predicate(k):
        r = newton_solve(problem.with_kappa(k), guess, cfg)
        amp = distance_to_homogeneous(problem, r.solution.values)[1]
        return r.converged and amp > homogeneity_tol, r.status, amp

    lo_ok, lo_status, lo_amp = predicate(kappa_lo)
    hi_ok, hi_status, hi_amp = predicate(kappa_hi)
    if lo_ok or not hi_ok:
        raise ValueError(
            f"bracket [{kappa_lo}, {kappa_hi}] does not straddle the threshold: "
            f"lo -> ({lo_status}, |u-u_inf|={lo_amp:.3g}), hi -> ({hi_status}, |u-u_inf|={hi_amp:.3g})"
        )
    lo, hi = kappa_lo, kappa_hi
    while hi - lo > tol_kappa:
        mid = 0.5 * (lo + hi)
        if predicate(mid)[0]:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# -- basins ------------------------------------------------------------------


@dataclass
class BasinScan:
    ks: np.ndarray
    bs: np.ndarray
    labels: np.ndarray
    catalogue_size: int
    new_states: list[np.ndarray]


def _basin_task(args):
    problem, k, b, cfg = args
    r = newton_solve(problem, cosine_guess(problem.grid, k, b), cfg)
    return r.converged, r.solution.values


def basin_scan(problem: McKeanVlasov, ks: Sequence[float], bs: Sequence[float],
               catalogue: Sequence[np.ndarray], cfg: NewtonConfig = NewtonConfig(),
               tol: float = DEDUP_TOL, reflections: bool = True,
               workers: int | None = None) -> BasinScan:
    """Label each ``(k, b)`` guess by the catalogue state Newton converges to.

    Labels index ``catalogue`` (0-based); unmatched converged states get fresh
    labels after the catalogue; non-convergence is ``-1``.
    """
    ks, bs = np.asarray(ks, float), np.asarray(bs, float)
    tasks = [(problem, k, b, cfg) for k in ks for b in bs]
    results = _map(_basin_task, tasks, _workers(workers))
    labels = np.full(len(tasks), -1, dtype=int)
    known = [np.asarray(c) for c in catalogue]
    extra: list[np.ndarray] = []
    for t, (ok, u) in enumerate(results):
        if not ok:
            continue
        dists = [shift_distance(u, c, problem.grid, reflections, stop_below=tol) for c in known + extra]
        if dists and min(dists) <= tol:
            labels[t] = int(np.argmin(dists))
        else:
            extra.append(u)
            labels[t] = len(known) + len(extra) - 1
    return BasinScan(ks, bs, labels.reshape(len(ks), len(bs)), len(known), extra)


# -- Cucker-Smale region -------------------------------------------------------


@dataclass
class RegionScan:
    alphas: np.ndarray
    sigma_c: np.ndarray
    exponent: float
    prefactor: float
    fit: str
    fit_alphas: np.ndarray


CS_SIGMA_LIMIT = 1.0 / 3.0  # alpha -> 0+ limit of the first-bifurcation boundary


def cs_critical_sigma(alpha: float, sigma_lo: float = 0.05, sigma_hi: float = 2.0, tol: float = 1e-7,
                      n: int = 1001, scan_points: int = 400) -> float:
    """Bisection in sigma on "a nonzero-velocity root exists"."""
    from .reference import cs_has_nonzero_root

    def pred(s):
        return cs_has_nonzero_root(alpha, s, n=n, scan_points=scan_points)

    if not pred(sigma_lo) or pred(sigma_hi):
        raise ValueError(f"sigma bracket [{sigma_lo}, {sigma_hi}] does not straddle the boundary at alpha={alpha}")
    lo, hi = sigma_lo, sigma_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _critical_sigma_task(args):
    alpha, n, tol = args
    return cs_critical_sigma(alpha, n=n, tol=tol)


def cs_region_scan(alphas: Sequence[float], n: int = 1001, tol: float = 1e-7, fit: str = "small_sigma",
                   fit_count: int | None = None, workers: int | None = None) -> RegionScan:
    """First-bifurcation boundary ``sigma_c(alpha)`` and a power-law fit.

    ``fit="small_sigma"`` regresses ``log(sigma_c - 1/3)`` on ``log alpha``
    over the smallest alphas (where the boundary approaches its lowest
    sigma); ``fit="large_alpha"`` regresses ``log(1 - sigma_c)`` on
    ``log alpha`` over the largest alphas.
    """
    alphas = np.sort(np.asarray(alphas, float))
    if np.any(alphas <= 0):
        raise ValueError("alphas must be positive")
    sig = np.array(_map(_critical_sigma_task, [(a, n, tol) for a in alphas], _workers(workers)))
    m = fit_count or max(3, len(alphas) // 2)
    if fit == "small_sigma":
        sel = slice(0, m)
        y = np.log(sig[sel] - CS_SIGMA_LIMIT)
    elif fit == "large_alpha":
        sel = slice(len(alphas) - m, len(alphas))
        y = np.log(1.0 - sig[sel])
    else:
        raise ValueError(f"unknown fit {fit!r}")
    slope, icpt = np.polyfit(np.log(alphas[sel]), y, 1)
    return RegionScan(alphas, sig, float(slope), float(np.exp(icpt)), fit, alphas[sel])


# -- misc --------------------------------------------------------------------


def modal_content(grid: GridSpec, u: np.ndarray, k_max: int = 10) -> np.ndarray:
    """``|int (u - mean) w_k|`` for ``k = 1..k_max`` (cos and sin parts combined)."""
    x = grid.x
    w = grid.weights()
    d = np.reshape(u, grid.shape) - np.sum(w * u) / grid.volume
    L = grid.axes[0].length
    out = np.empty(k_max)
    for k in range(1, k_max + 1):
        c = np.sum(w * d * np.cos(2 * np.pi * k * x / L))
        s = np.sum(w * d * np.sin(2 * np.pi * k * x / L))
        out[k - 1] = np.sqrt(2.0 / L) * np.hypot(c, s)
    return out
