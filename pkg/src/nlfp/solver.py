"""Matrix-free GMRES and the Jacobian-free Newton iteration for ``T u = u``."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .grid import Field
from .models import NonFiniteError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GMRESConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-13
    max_krylov_dim: int = 200
    restart: int | None = None


@dataclass(frozen=True)
class NewtonConfig:
    n_iters: int = 20
    tol: float = 1e-7
    p: float = np.inf
    jvp_mode: str = "AF"
    h: float = 1e-5
    gmres: GMRESConfig = GMRESConfig()
    # remove shift modes d_i u (periodic axes) from each Newton step
    phase_condition: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.jvp_mode not in ("AF", "DF"):
            raise ValueError(f"jvp_mode must be 'AF' or 'DF', got {self.jvp_mode!r}")
        if self.jvp_mode == "DF" and self.h <= 0:
            raise ValueError("central-difference step h must be positive")
        if self.p not in (2, np.inf):
            raise ValueError("p must be 2 or inf")


class GMRESResult(NamedTuple):
    x: np.ndarray
    residual: float
    iterations: int
    converged: bool


def gmres_solve(
    jvp: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray, cfg: GMRESConfig = GMRESConfig()
) -> GMRESResult:
    """Unpreconditioned GMRES from a zero initial guess.

    Arnoldi with modified Gram-Schmidt (one reorthogonalisation pass) and
    Givens rotations.  Stops once the residual estimate drops below
    ``max(rel_tol * |rhs|, abs_tol)``; when the Krylov budget runs out the
    best iterate is returned with ``converged=False``.
    """
    b = np.asarray(rhs, dtype=float).ravel()
    n = b.size
    beta0 = float(np.linalg.norm(b))
    target = max(cfg.rel_tol * beta0, cfg.abs_tol)
    x = np.zeros(n)
    if beta0 <= target:
        return GMRESResult(x, beta0, 0, True)

    m_max = min(cfg.max_krylov_dim, n)
    cycle = m_max if cfg.restart is None else min(cfg.restart, m_max)
    total = 0
    r = b.copy()
    beta = beta0
    while total < m_max:
        m = min(cycle, m_max - total)
        V = np.empty((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        for j in range(m):
            w = np.asarray(jvp(V[j]), dtype=float).ravel()
            for _ in range(2):
                coeffs = V[: j + 1] @ w
                w -= coeffs @ V[: j + 1]
                H[: j + 1, j] += coeffs
            H[j + 1, j] = np.linalg.norm(w)
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            hj1 = H[j + 1, j]
            H[j, j] = cs[j] * H[j, j] + sn[j] * hj1
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_done = j + 1
            total += 1
            res = abs(g[j + 1])
            breakdown = hj1 <= 1e-14 * max(1.0, abs(H[j, j]))
            if res <= target or breakdown:
                break
            V[j + 1] = w / hj1
        y = _back_substitute(H[:j_done, :j_done], g[:j_done])
        x = x + y @ V[:j_done]
        if res <= target:
            return GMRESResult(x, res, total, True)
        if breakdown:
            # lucky breakdown leaves an exact solve in exact arithmetic; trust the estimate
            return GMRESResult(x, res, total, res <= target)
        r = b - np.asarray(jvp(x), dtype=float).ravel()
        beta = float(np.linalg.norm(r))
        if beta <= target:
            return GMRESResult(x, beta, total, True)
    return GMRESResult(x, float(res), total, False)


def _back_substitute(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        d = R[i, i]
        y[i] = (g[i] - R[i, i + 1 : k] @ y[i + 1 : k]) / d if d != 0.0 else 0.0
    return y


def central_difference_jvp(
    F: Callable[[np.ndarray], np.ndarray], u: np.ndarray, phi: np.ndarray, h: float
) -> np.ndarray:
    """``(F(u + h phi) - F(u - h phi)) / (2h)``."""
    if h <= 0:
        raise ValueError("h must be positive")
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float).reshape(u.shape)
    out = (np.asarray(F(u + h * phi)) - np.asarray(F(u - h * phi))) / (2.0 * h)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("central-difference JVP produced non-finite values")
    return out


@dataclass
class NewtonResult:
    solution: Field
    converged: bool
    iterations: int
    final_residual: float
    final_step: float
    residual_history: list[float] = field(default_factory=list)
    step_history: list[float] = field(default_factory=list)
    gmres_iterations: list[int] = field(default_factory=list)
    status: str = "converged"
    message: str = ""

    def trace(self) -> list[dict]:
        rows = []
        for i, r in enumerate(self.residual_history):
            rows.append(
                {
                    "iteration": i,
                    "residual": r,
                    "step": self.step_history[i] if i < len(self.step_history) else None,
                    "gmres_iterations": self.gmres_iterations[i] if i < len(self.gmres_iterations) else None,
                }
            )
        return rows


def _pnorm(v: np.ndarray, p: float) -> float:
    return float(np.max(np.abs(v))) if p == np.inf else float(np.linalg.norm(v.ravel()))


def _wrap_periodic(problem, u: np.ndarray) -> np.ndarray:
    if any(problem.grid.periodic):
        return problem.grid.wrap(u)
    return u


def _shift_modes(grid, u: np.ndarray) -> list[np.ndarray]:
    """Orthonormal basis of ``{d_i u}`` over the periodic axes."""
    modes: list[np.ndarray] = []
    block = grid.independent(u)
    for i, ax in enumerate(grid.axes):
        if not ax.periodic:
            continue
        # spectral derivative: the trigonometric interpolant is what the FFT convolution shifts exactly
        m = block.shape[i]
        k = np.fft.rfftfreq(m) * m
        if m % 2 == 0:
            k[-1] = 0.0
        shape_k = [1] * block.ndim
        shape_k[i] = k.size
        deriv = np.fft.irfft(1j * k.reshape(shape_k) * np.fft.rfft(block, axis=i), n=m, axis=i)
        d = grid.wrap(_pad_periodic(grid, deriv))
        for m in modes:
            d = d - np.vdot(m, d) * m
        nrm = np.linalg.norm(d)
        if nrm > 1e-12 * max(1.0, float(np.max(np.abs(u)))):
            modes.append(d / nrm)
    return modes


def _pad_periodic(grid, block: np.ndarray) -> np.ndarray:
    out = np.zeros(grid.shape)
    out[tuple(slice(0, n) for n in block.shape)] = block
    return out


def newton_solve(
    problem,
    u0: Field | np.ndarray,
    cfg: NewtonConfig = NewtonConfig(),
    callback: Callable[[dict], None] | None = None,
) -> NewtonResult:
    """Jacobian-free Newton-Krylov for ``F(u) = T u - u = 0``.

    Each step solves ``DF[u] du = -F(u)`` with GMRES, where the Jacobian
    action is ``DT[u](phi) - phi`` (``AF``) or a central difference of ``F``
    (``DF``).  Stops when ``|du|_p + |F(u)|_p <= tol``.  The returned profile
    has its periodic duplicate nodes re-synchronised with the first node; the
    map never reads those nodes, so this cannot increase the residual.
    """
    grid = problem.grid
    shape = grid.shape
    u = np.array(u0.values if isinstance(u0, Field) else u0, dtype=float).reshape(shape)
    res_hist: list[float] = []
    step_hist: list[float] = []
    gm_hist: list[int] = []

    def F(v):
        return problem.T(v.reshape(shape)) - v.reshape(shape)

    def finish(u, status, message, res, step):
        u = _wrap_periodic(problem, u)
        try:
            res = _pnorm(F(u), cfg.p)
        except NonFiniteError:
            pass
        converged = status == "converged"
        return NewtonResult(
            Field(grid, u), converged, len(step_hist), res, step, res_hist, step_hist, gm_hist, status, message
        )

    step = 0.0
    for it in range(cfg.n_iters + 1):
        try:
            Tu = problem.T(u)
        except NonFiniteError as exc:
            return finish(u, "non_finite", str(exc), float("nan"), step)
        Fu = Tu - u
        res = _pnorm(Fu, cfg.p)
        res_hist.append(res)
        if callback is not None:
            callback({"iteration": it, "residual": res, "step": step, "gmres_iterations": gm_hist[-1] if gm_hist else 0})
        if step + res <= cfg.tol:
            return finish(u, "converged", "", res, step)
        if it == cfg.n_iters:
            break

        if cfg.jvp_mode == "AF":
            def jvp(phi, u=u, Tu=Tu):
                return (problem.dT(u, Tu, phi.reshape(shape)) - phi.reshape(shape)).ravel()
        else:
            def jvp(phi, u=u):
                # GMRES hands over unit 2-norm vectors whose entries shrink like
                # 1/sqrt(N); perturb along the unit max-norm direction instead so
                # the step h stays commensurate with u and rounding noise does not
                # leak into the near-null translation mode.
                scale = float(np.max(np.abs(phi)))
                if scale == 0.0:
                    return np.zeros_like(phi)
                return scale * central_difference_jvp(F, u, phi.reshape(shape) / scale, cfg.h).ravel()

        try:
            gm = gmres_solve(jvp, -Fu.ravel(), cfg.gmres)
        except NonFiniteError as exc:
            return finish(u, "non_finite", f"JVP failed: {exc}", res, step)
        gm_hist.append(gm.iterations)
        if not gm.converged:
            log.debug("GMRES stalled at residual %.3e after %d iterations", gm.residual, gm.iterations)
            return finish(u, "gmres_failed", f"GMRES residual {gm.residual:.3e} after {gm.iterations} iterations", res, step)
        du = gm.x.reshape(shape)
        if cfg.phase_condition and any(grid.periodic):
            for m in _shift_modes(grid, u):
                du = du - np.vdot(m, du) * m
        u = u + du
        step = _pnorm(du, cfg.p)
        step_hist.append(step)
        if not np.all(np.isfinite(u)):
            return finish(u, "non_finite", "non-finite Newton iterate", res, step)
    return finish(u, "max_iter", f"no convergence in {cfg.n_iters} iterations", res, step)
