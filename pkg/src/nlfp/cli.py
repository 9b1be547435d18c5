"""``nlfp`` command line: one subcommand per study, configured by a JSON file.

Exit codes: 0 success, 2 invalid config (JSON error naming the key path),
3 Newton did not converge in ``solve``/``nfp-solve`` (JSON error with the
iteration trace), 1 any other failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .continuation import (
    DEDUP_TOL,
    WORKERS_ENV,
    CosineFamily,
    Gaussian,
    GuessSuite,
    LegacySweep,
    TraceConfig,
    basin_scan,
    build_diagram,
    cosine_guess,
    cs_region_scan,
    distance_to_homogeneous,
    find_critical_kappa,
    nfp_mode_guess,
    steady_state_residual,
    sweep_guesses,
)
from .grid import Field, GridSpec, upsample
from .io import read_field, write_field
from .kernels import CosineModes, critical_kappas, kernel_from_dict
from .models import CS, MV1D, MV2D, NFP, McKeanVlasov, activation_from_dict, cs_grid, nfp_grid
from .reference import cs_reference_profile, error_vs_reference, kuramoto_reference, solution_difference
from .solver import GMRESConfig, NewtonConfig, newton_solve
from .stability import EvolveConfig, classify_stability

log = logging.getLogger(__name__)

STUDIES = ("solve", "convergence", "diagram", "critical", "basins", "stability", "cs-region", "nfp-solve")
TOP_LEVEL = ("problem", "grid", "solver", "study", "output", "seed", "workers")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


class NotConverged(RuntimeError):
    def __init__(self, result):
        super().__init__(result.message or result.status)
        self.result = result


# -- config helpers ------------------------------------------------------------


def _get(block: dict, key: str, path: str, kind=float, default: Any = ..., check=None):
    full = f"{path}.{key}" if path else key
    if key not in block:
        if default is ...:
            raise ConfigError(full, "required key is missing")
        return default
    val = block[key]
    try:
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise TypeError
            val = float(val)
            if not math.isfinite(val):
                raise TypeError
        elif kind is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise TypeError
        elif kind is bool:
            if not isinstance(val, bool):
                raise TypeError
        elif kind is str:
            if not isinstance(val, str):
                raise TypeError
        elif kind is list:
            if not isinstance(val, list):
                raise TypeError
        elif kind is dict:
            if not isinstance(val, dict):
                raise TypeError
    except TypeError:
        raise ConfigError(full, f"expected {kind.__name__}, got {val!r}") from None
    if check is not None and not check(val):
        raise ConfigError(full, f"invalid value {val!r}")
    return val


def _floats(block: dict, key: str, path: str, default: Any = ..., min_len: int = 1) -> list[float]:
    vals = _get(block, key, path, list, default)
    if vals is None:
        return None
    out = []
    for i, v in enumerate(vals):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{path}.{key}[{i}]", f"expected a finite number, got {v!r}")
        out.append(float(v))
    if len(out) < min_len:
        raise ConfigError(f"{path}.{key}", f"needs at least {min_len} entries")
    return out


def _odd(n: int) -> bool:
    return n >= 3 and n % 2 == 1


def build_grid(cfg: dict, variant: str) -> GridSpec:
    g = _get(cfg, "grid", "", dict)
    if "axes" in g:
        try:
            grid = GridSpec.from_dict(g)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("grid.axes", str(exc)) from None
        for i, ax in enumerate(grid.axes):
            if not _odd(ax.n):
                raise ConfigError(f"grid.axes[{i}].n", "composite Simpson needs an odd node count >= 3")
        return grid
    if variant in ("MV1D", "MV2D"):
        length = _get(g, "length", "grid", float, math.pi, lambda v: v > 0)
        if variant == "MV1D":
            n = _get(g, "n", "grid", int, check=_odd)
            return GridSpec.torus(n, length)
        n = g.get("n")
        ns = n if isinstance(n, list) else [n, n]
        if len(ns) != 2:
            raise ConfigError("grid.n", "expected one or two node counts")
        for i, v in enumerate(ns):
            if isinstance(v, bool) or not isinstance(v, int) or not _odd(v):
                raise ConfigError("grid.n", f"node counts must be odd integers >= 3, got {n!r}")
        return GridSpec.torus2d(ns[0], ns[1], length)
    if variant == "CS":
        n = _get(g, "n", "grid", int, check=_odd)
        X = _get(g, "X", "grid", float, 6.0, lambda v: v > 0)
        return cs_grid(n, X)
    nx = _get(g, "nx", "grid", int, check=_odd)
    ny = _get(g, "ny", "grid", int, check=_odd)
    y_max = _get(g, "y_max", "grid", float, 35.0, lambda v: v > 0)
    return nfp_grid(nx, ny, y_max)


def build_problem(cfg: dict, grid: GridSpec | None = None):
    p = _get(cfg, "problem", "", dict)
    variant = _get(p, "variant", "problem", str, check=lambda v: v in ("MV1D", "MV2D", "CS", "NFP"))
    grid = grid if grid is not None else build_grid(cfg, variant)
    sigma = _get(p, "sigma", "problem", float, 1.0, lambda v: v > 0)
    try:
        if variant in ("MV1D", "MV2D"):
            kappa = _get(p, "kappa", "problem", float, check=lambda v: v >= 0)
            kernel = _kernel(p)
            cls = MV1D if variant == "MV1D" else MV2D
            return cls(kappa, kernel, grid, sigma)
        if variant == "CS":
            alpha = _get(p, "alpha", "problem", float, check=lambda v: v >= 0)
            return CS(alpha, sigma, grid)
        B = _get(p, "B", "problem", float)
        act = _get(p, "activation", "problem", dict, {"type": "smoothed_relu"})
        try:
            activation = activation_from_dict(act)
        except ValueError as exc:
            raise ConfigError("problem.activation", str(exc)) from None
        return NFP(sigma, B, _kernel(p), activation, grid)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("problem", str(exc)) from None


def _kernel(p: dict):
    k = _get(p, "kernel", "problem", dict)
    try:
        return kernel_from_dict(k)
    except (ValueError, TypeError) as exc:
        raise ConfigError("problem.kernel", str(exc)) from None


def build_newton(cfg: dict) -> NewtonConfig:
    s = _get(cfg, "solver", "", dict, {})
    known = {"n_iters", "tol", "p", "jvp_mode", "h", "gmres", "phase_condition"}
    for key in s:
        if key not in known:
            raise ConfigError(f"solver.{key}", "unknown solver option")
    p = s.get("p", "inf")
    if p in ("inf", "Inf", "infinity"):
        p = np.inf
    elif p != 2:
        raise ConfigError("solver.p", f"expected 2 or 'inf', got {p!r}")
    g = _get(s, "gmres", "solver", dict, {})
    for key in g:
        if key not in ("rel_tol", "abs_tol", "max_krylov_dim", "restart"):
            raise ConfigError(f"solver.gmres.{key}", "unknown GMRES option")
    gm = GMRESConfig(
        rel_tol=_get(g, "rel_tol", "solver.gmres", float, 1e-10, lambda v: v > 0),
        abs_tol=_get(g, "abs_tol", "solver.gmres", float, 1e-13, lambda v: v >= 0),
        max_krylov_dim=_get(g, "max_krylov_dim", "solver.gmres", int, 200, lambda v: v > 0),
        restart=_get(g, "restart", "solver.gmres", int, None, lambda v: v is None or v > 0),
    )
    return NewtonConfig(
        n_iters=_get(s, "n_iters", "solver", int, 20, lambda v: v > 0),
        tol=_get(s, "tol", "solver", float, 1e-7, lambda v: v > 0),
        p=p,
        jvp_mode=_get(s, "jvp_mode", "solver", str, "AF", lambda v: v in ("AF", "DF")),
        h=_get(s, "h", "solver", float, 1e-5, lambda v: v > 0),
        gmres=gm,
        phase_condition=_get(s, "phase_condition", "solver", bool, True),
    )


def build_guess(spec: dict | None, problem, path: str, base: Path, ncfg: NewtonConfig | None = None) -> np.ndarray:
    grid = problem.grid
    spec = spec or {"type": "homogeneous" if isinstance(problem, McKeanVlasov) else "gaussian"}
    if not isinstance(spec, dict):
        raise ConfigError(path, "guess must be an object")
    kind = _get(spec, "type", path, str)
    if kind == "homogeneous":
        if not isinstance(problem, McKeanVlasov):
            raise ConfigError(f"{path}.type", "homogeneous guess needs a McKean-Vlasov problem")
        return problem.homogeneous()
    if kind == "cosine":
        k = _get(spec, "k", path, float)
        b = _get(spec, "b", path, float)
        return cosine_guess(grid, k, b)
    if kind == "legacy":
        z = _get(spec, "z", path, float)
        return 1.0 / np.pi + 0.5 * np.cos((1 + 0.1 * z) * grid.coords()[0])
    if kind == "gaussian":
        c = _get(spec, "center", path, float, 0.0)
        s = grid.coords()[-1]
        return np.exp(-((s - c) ** 2) / 2)
    if kind == "nfp_mode":
        if not isinstance(problem, NFP):
            raise ConfigError(f"{path}.type", "nfp_mode guess needs an NFP problem")
        k = _get(spec, "k", path, float, 1.0)
        b = _get(spec, "b", path, float, 1e-3)
        return nfp_mode_guess(problem, k, b, ncfg or NewtonConfig())
    if kind == "file":
        fp = Path(_get(spec, "path", path, str))
        fp = fp if fp.is_absolute() else base / fp
        if not fp.exists():
            raise ConfigError(f"{path}.path", f"file {fp} does not exist")
        f = read_field(fp, periodic=all(grid.periodic))
        if f.grid.same_domain(grid) and f.grid.shape != grid.shape:
            f = upsample(f, grid)
        if f.grid.shape != grid.shape:
            raise ConfigError(f"{path}.path", f"field shape {f.grid.shape} does not match grid {grid.shape}")
        return f.values
    raise ConfigError(f"{path}.type", f"unknown guess type {kind!r}")


def build_suite(spec: dict | None, path: str) -> GuessSuite:
    if spec is None:
        return GuessSuite()
    if not isinstance(spec, dict):
        raise ConfigError(path, "suite must be an object")
    fams = []
    for i, fam in enumerate(_get(spec, "families", path, list, [{"type": "cosine"}])):
        fp = f"{path}.families[{i}]"
        if not isinstance(fam, dict):
            raise ConfigError(fp, "family must be an object")
        kind = _get(fam, "type", fp, str)
        if kind == "cosine":
            fams.append(CosineFamily(tuple(_floats(fam, "wavenumbers", fp, [1.0, 2.0, 3.0, 4.0, 5.0])),
                                     tuple(_floats(fam, "amplitudes", fp, [0.5]))))
        elif kind == "legacy":
            fams.append(LegacySweep(tuple(_floats(fam, "zs", fp, [float(z) for z in range(91)]))))
        elif kind == "gaussian":
            fams.append(Gaussian())
        else:
            raise ConfigError(f"{fp}.type", f"unknown guess family {kind!r}")
    return GuessSuite(tuple(fams), _get(spec, "include_homogeneous", path, bool, True))


def _study_block(cfg: dict, name: str) -> dict:
    study = _get(cfg, "study", "", dict)
    if len(study) != 1:
        raise ConfigError("study", f"exactly one study block is required, got {sorted(study)}")
    (key, block), = study.items()
    if key not in STUDIES:
        raise ConfigError(f"study.{key}", f"unknown study; expected one of {list(STUDIES)}")
    if key != name:
        raise ConfigError(f"study.{key}", f"config describes '{key}' but the '{name}' subcommand was run")
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigError(f"study.{key}", "study block must be an object")
    return block


# -- output helpers ------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data: dict) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_rows(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


def _field_name(grid: GridSpec, stem: str) -> str:
    return f"{stem}.csv" if grid.dim == 1 else f"{stem}.f64"


class Run:
    """Resolved configuration shared by the study runners."""

    def __init__(self, cfg: dict, study: str, base: Path):
        self.cfg = cfg
        self.study = study
        self.base = base
        self.block = _study_block(cfg, study)
        out = _get(cfg, "output", "", str, "nlfp-out")
        self.out = Path(out) if Path(out).is_absolute() else Path.cwd() / out
        self.seed = _get(cfg, "seed", "", int, 0)
        self.workers = _get(cfg, "workers", "", int, 1, lambda v: v >= 1)

    def metadata(self, **extra) -> dict:
        meta = {
            "nlfp_version": __version__,
            "study": self.study,
            "seed": self.seed,
            "workers": self.workers,
            "config": self.cfg,
        }
        meta.update(extra)
        return meta


def _profile_meta(problem, u: np.ndarray, residual: float) -> dict:
    try:
        ss = steady_state_residual(problem, u)
    except ValueError:
        ss = None
    return {"residual": residual, "ss_residual": ss}


# -- studies -------------------------------------------------------------------


def study_solve(run: Run, nfp: bool = False) -> dict:
    problem = build_problem(run.cfg)
    if nfp and not isinstance(problem, NFP):
        raise ConfigError("problem.variant", "nfp-solve needs variant 'NFP'")
    ncfg = build_newton(run.cfg)
    default_guess = {"type": "nfp_mode"} if isinstance(problem, NFP) else None
    guess = build_guess(run.block.get("guess", default_guess), problem, f"study.{run.study}.guess", run.base, ncfg)
    r = newton_solve(problem, guess, ncfg)
    run.out.mkdir(parents=True, exist_ok=True)
    name = _field_name(problem.grid, "profile")
    write_field(r.solution, run.out / name)
    info = {
        "profile": name,
        "status": r.status,
        "converged": r.converged,
        "iterations": r.iterations,
        "final_step": r.final_step,
        "mass": float(np.sum(problem.grid.weights() * r.solution.values)),
        "trace": r.trace(),
        **_profile_meta(problem, r.solution.values, r.final_residual),
    }
    if isinstance(problem, McKeanVlasov):
        info["distance_to_homogeneous"] = dict(zip(("l2", "linf"), distance_to_homogeneous(problem, r.solution.values)))
    if isinstance(problem, CS):
        info["mean_velocity"] = problem.mean_velocity(r.solution.values)
    if isinstance(problem, NFP):
        per_angle = r.solution.values @ problem.grid.axes[1].simpson_weights()
        info["angle_mass_error"] = float(np.max(np.abs(per_angle - 1.0 / problem.L)))
        info["F0"] = problem.activation(problem.drive(r.solution.values))
    write_json(run.out / "solve.json", run.metadata(**info))
    if not r.converged:
        raise NotConverged(r)
    return {"status": r.status, "residual": r.final_residual, "iterations": r.iterations}


def study_convergence(run: Run) -> dict:
    b = run.block
    path = "study.convergence"
    Ns = [int(n) for n in _floats(b, "N", path, [51, 101, 201, 401, 801, 1601, 3201])]
    for i, n in enumerate(Ns):
        if not _odd(n):
            raise ConfigError(f"{path}.N[{i}]", "node counts must be odd >= 3")
    hs = _floats(b, "h", path, [1e-5])
    ref_n = _get(b, "reference_N", path, int, 12801, _odd)
    base = build_problem(run.cfg, grid=None)
    ncfg = build_newton(run.cfg)
    if isinstance(base, MV1D):
        kern = base.kernel
        if not (isinstance(kern, CosineModes) and len(kern.terms) == 1 and kern.terms[0][0] == 1.0):
            raise ConfigError("problem.kernel", "convergence needs the Kuramoto kernel (one unit cosine mode)")
        if base.sigma != 1.0:
            raise ConfigError("problem.sigma", "the Kuramoto reference assumes sigma = 1")
        fine = GridSpec.torus(ref_n, base.grid.axes[0].length)
        ref = kuramoto_reference(base.kappa, kern.terms[0][1], fine).field

        def make(n):
            return MV1D(base.kappa, kern, GridSpec.torus(n, base.grid.axes[0].length), base.sigma)
    elif isinstance(base, CS):
        X = base.grid.axes[0].upper
        fine = cs_grid(ref_n, X)
        sign = _get(b, "branch", path, int, 0, lambda v: v in (-1, 0, 1))
        ref = cs_reference_profile(base.alpha, base.sigma, fine, sign)

        def make(n):
            return CS(base.alpha, base.sigma, cs_grid(n, X))
    else:
        raise ConfigError("problem.variant", "convergence supports MV1D (Kuramoto) and CS")
    rows = []
    for n in Ns:
        p = make(n)
        guess = build_guess(b.get("guess"), p, f"{path}.guess", run.base)
        af = newton_solve(p, guess, replace(ncfg, jvp_mode="AF"))
        row = {"N": n, "R_inf_AF": error_vs_reference(af.solution, ref), "converged_AF": af.converged}
        for h in hs:
            df = newton_solve(p, guess, replace(ncfg, jvp_mode="DF", h=h))
            row[f"R_inf_DF[h={h!r}]"] = error_vs_reference(df.solution, ref)
            row[f"Rtilde_inf[h={h!r}]"] = solution_difference(af.solution, df.solution, fine)
            row["converged_DF" if len(hs) == 1 else f"converged_DF[h={h!r}]"] = df.converged
        rows.append(row)
    run.out.mkdir(parents=True, exist_ok=True)
    cols = list(rows[0].keys())
    write_rows(run.out / "convergence.csv", rows, cols)
    logN = np.log(Ns)
    slopes = {c: float(np.polyfit(logN, np.log([r[c] for r in rows]), 1)[0])
              for c in cols if c.startswith("R_") and all(r[c] > 0 for r in rows)}
    write_json(run.out / "convergence.json", run.metadata(reference_N=ref_n, slopes=slopes))
    return {"slopes": slopes}


def _trace_config(block: dict, path: str) -> TraceConfig:
    t = _get(block, "trace", path, dict, {})
    fields = {"homogeneity_tol": float, "jump_factor": float, "jump_ratio": float, "store_every": int,
              "check_steady_state": bool}
    kw = {}
    for key, val in t.items():
        if key not in fields:
            raise ConfigError(f"{path}.trace.{key}", "unknown continuation option")
        kw[key] = _get(t, key, f"{path}.trace", fields[key])
    return TraceConfig(**kw)


def study_diagram(run: Run) -> dict:
    b = run.block
    path = "study.diagram"
    problem = build_problem(run.cfg)
    if not isinstance(problem, McKeanVlasov):
        raise ConfigError("problem.variant", "diagrams are computed in kappa for McKean-Vlasov problems")
    kr = _floats(b, "kappa_range", path, min_len=2)
    if len(kr) != 2 or not kr[1] > kr[0] or kr[0] < 0:
        raise ConfigError(f"{path}.kappa_range", "expected [kappa_min, kappa_max] with 0 <= kappa_min < kappa_max")
    n_kappa = _get(b, "n_kappa", path, int, 2001, lambda v: v >= 2)
    seeds = _floats(b, "seed_kappas", path, None)
    tol = _get(b, "dedup_tol", path, float, DEDUP_TOL, lambda v: v > 0)
    refl = _get(b, "reflections", path, bool, True)
    suite = build_suite(b.get("suite"), f"{path}.suite")
    tcfg = _trace_config(b, path)
    d = build_diagram(problem.with_kappa(kr[1]), tuple(kr), suite, seeds, n_kappa, build_newton(run.cfg),
                      tcfg, tol, refl, run.workers)
    run.out.mkdir(parents=True, exist_ok=True)
    info = d.to_dict()
    for entry, br in zip(info["branches"], d.branches):
        stem = f"branch_{br.branch_id:02d}"
        write_rows(run.out / f"{stem}.csv", br.to_rows(), ["kappa", "l2", "linf", "residual", "ss_residual"])
        entry["records_file"] = f"{stem}.csv"
        snap = br.snapshot() if br.profile_records() else None
        if snap is not None:
            name = _field_name(problem.grid, f"{stem}_profile")
            write_field(Field(problem.grid, snap.profile), run.out / name)
            entry["profile"] = {"file": name, "kappa": snap.kappa, "residual": snap.residual,
                                "ss_residual": snap.ss_residual}
    info["critical_kappas"] = [{"k": k, "kappa": v} for k, v in critical_kappas(problem.kernel, problem.grid, 10)] \
        if problem.grid.dim == 1 else []
    write_json(run.out / "diagram.json", run.metadata(diagram=info))
    return {"branches": len(d.branches), "inhomogeneous": len(d.inhomogeneous())}


def study_critical(run: Run) -> dict:
    b = run.block
    path = "study.critical"
    problem = build_problem(run.cfg)
    if not isinstance(problem, McKeanVlasov):
        raise ConfigError("problem.variant", "critical-kappa bisection needs a McKean-Vlasov problem")
    br = _floats(b, "bracket", path, min_len=2)
    if len(br) != 2 or not br[1] > br[0]:
        raise ConfigError(f"{path}.bracket", "expected [kappa_lo, kappa_hi] with kappa_lo < kappa_hi")
    guess_spec = b.get("guess", {"type": "cosine", "k": 1, "b": 1.0})
    guess = build_guess(guess_spec, problem, f"{path}.guess", run.base)
    tol_kappa = _get(b, "tol_kappa", path, float, 1e-6, lambda v: v > 0)
    try:
        kc = find_critical_kappa(problem, br[0], br[1], guess, tol_kappa, build_newton(run.cfg))
    except ValueError as exc:
        raise ConfigError(f"{path}.bracket", str(exc)) from None
    info = {"kappa_critical": kc, "bracket": br, "tol_kappa": tol_kappa}
    if problem.grid.dim == 1:
        info["linear_thresholds"] = [{"k": k, "kappa": v} for k, v in critical_kappas(problem.kernel, problem.grid, 10)]
    run.out.mkdir(parents=True, exist_ok=True)
    write_json(run.out / "critical.json", run.metadata(**info))
    return {"kappa_critical": kc}


def study_basins(run: Run) -> dict:
    b = run.block
    path = "study.basins"
    problem = build_problem(run.cfg)
    if not isinstance(problem, McKeanVlasov):
        raise ConfigError("problem.variant", "basin scans need a McKean-Vlasov problem")
    ks = _floats(b, "ks", path)
    bs = _floats(b, "bs", path)
    tol = _get(b, "dedup_tol", path, float, DEDUP_TOL, lambda v: v > 0)
    refl = _get(b, "reflections", path, bool, True)
    ncfg = build_newton(run.cfg)
    cat = sweep_guesses(problem, build_suite(b.get("catalogue_suite"), f"{path}.catalogue_suite"), ncfg, tol, refl,
                        run.workers)
    scan = basin_scan(problem, ks, bs, cat.states, ncfg, tol, refl, run.workers)
    run.out.mkdir(parents=True, exist_ok=True)
    rows = [{"k": k, "b": bb, "label": int(scan.labels[i, j])} for i, k in enumerate(ks) for j, bb in enumerate(bs)]
    write_rows(run.out / "basins.csv", rows, ["k", "b", "label"])
    states = []
    for i, u in enumerate(list(cat.states) + list(scan.new_states)):
        name = _field_name(problem.grid, f"state_{i:02d}")
        write_field(Field(problem.grid, u), run.out / name)
        res = float(np.max(np.abs(problem.T(u) - u)))
        states.append({"label": i, "file": name, "catalogue": i < scan.catalogue_size,
                       "origin": cat.labels[i] if i < len(cat.labels) else "scan",
                       **_profile_meta(problem, u, res)})
    write_json(run.out / "basins.json", run.metadata(states=states))
    return {"states": len(states)}


def study_stability(run: Run) -> dict:
    b = run.block
    path = "study.stability"
    problem = build_problem(run.cfg)
    if not isinstance(problem, MV1D):
        raise ConfigError("problem.variant", "the evolution probe is implemented for MV1D")
    kappas = _floats(b, "kappas", path)
    tiers = _get(b, "tiers", path, dict, {"large": 1e-2, "moderate": 1e-3, "small": 1e-5})
    for k, v in tiers.items():
        _get(tiers, k, f"{path}.tiers", float, check=lambda x: x > 0)
    ecfg = EvolveConfig(
        dt=_get(b, "dt", path, float, 0.1, lambda v: v > 0),
        T_final=_get(b, "T_final", path, float, 14.0, lambda v: v > 0),
        departure_factor=_get(b, "departure_factor", path, float, 10.0, lambda v: v > 0),
        seed=run.seed,
        noise_modes=_get(b, "noise_modes", path, int, 16, lambda v: v >= 1),
    )
    ncfg = build_newton(run.cfg)
    guess = build_guess(b.get("guess"), problem, f"{path}.guess", run.base)
    states = []
    for k in kappas:
        r = newton_solve(problem.with_kappa(k), guess, ncfg)
        states.append((k, r.solution.values))
    report = classify_stability(problem, states, {str(k): float(v) for k, v in tiers.items()}, ecfg, newton=ncfg)
    run.out.mkdir(parents=True, exist_ok=True)
    rows = [vars(lab) for lab in report.labels]
    write_rows(run.out / "stability.csv", rows, ["kappa", "tier", "noise_level", "final_distance", "stable"])
    write_json(run.out / "stability.json", run.metadata(labels=rows))
    return {"labels": len(rows)}


def study_cs_region(run: Run) -> dict:
    b = run.block
    path = "study.cs-region"
    alphas = _floats(b, "alphas", path, min_len=3)
    if any(a <= 0 for a in alphas):
        raise ConfigError(f"{path}.alphas", "alphas must be positive")
    n = _get(b, "n", path, int, 1001, _odd)
    tol = _get(b, "tol", path, float, 1e-7, lambda v: v > 0)
    fit = _get(b, "fit", path, str, "small_sigma", lambda v: v in ("small_sigma", "large_alpha"))
    fit_count = _get(b, "fit_count", path, int, None, lambda v: v is None or v >= 2)
    scan = cs_region_scan(alphas, n, tol, fit, fit_count, run.workers)
    run.out.mkdir(parents=True, exist_ok=True)
    rows = [{"alpha": a, "sigma_c": s} for a, s in zip(scan.alphas, scan.sigma_c)]
    write_rows(run.out / "cs_region.csv", rows, ["alpha", "sigma_c"])
    write_json(run.out / "cs_region.json", run.metadata(exponent=scan.exponent, prefactor=scan.prefactor, fit=fit,
                                                        fit_alphas=scan.fit_alphas))
    return {"exponent": scan.exponent}


RUNNERS = {
    "solve": study_solve,
    "nfp-solve": lambda run: study_solve(run, nfp=True),
    "convergence": study_convergence,
    "diagram": study_diagram,
    "critical": study_critical,
    "basins": study_basins,
    "stability": study_stability,
    "cs-region": study_cs_region,
}


# -- entry point ---------------------------------------------------------------


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(_jsonable(payload), sort_keys=True) + "\n")


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be a JSON object")
    for key in cfg:
        if key not in TOP_LEVEL:
            raise ConfigError(key, f"unknown top-level key; expected one of {list(TOP_LEVEL)}")
    return cfg


def parse_args(argv=None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(prog="nlfp", description="Stationary states of nonlocal Fokker-Planck equations.")
    ap.add_argument("--version", action="version", version=f"nlfp {__version__}")
    sub = ap.add_subparsers(dest="study", required=True)
    for name in STUDIES:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("--output", help="output directory (overrides 'output')")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides 'seed')")
        sp.add_argument("--workers", type=int, help=f"worker processes (overrides 'workers' and ${WORKERS_ENV})")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.output is not None:
            cfg["output"] = args.output
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.workers is not None:
            cfg["workers"] = args.workers
        elif os.environ.get(WORKERS_ENV):
            try:
                cfg["workers"] = int(os.environ[WORKERS_ENV])
            except ValueError:
                raise ConfigError(WORKERS_ENV, f"expected an integer, got {os.environ[WORKERS_ENV]!r}") from None
        run = Run(cfg, args.study, Path(args.config).resolve().parent)
        summary = RUNNERS[args.study](run)
    except ConfigError as exc:
        _emit({"error": "invalid_config", "key": exc.key, "message": exc.message})
        return 2
    except NotConverged as exc:
        r = exc.result
        _emit({"error": "not_converged", "status": r.status, "message": r.message,
               "final_residual": r.final_residual, "trace": r.trace()})
        return 3
    except Exception as exc:  # noqa: BLE001 - report any failure as JSON
        log.debug("study failed", exc_info=True)
        _emit({"error": type(exc).__name__, "message": str(exc)})
        return 1
    _emit({"status": "ok", "study": args.study, "output": str(run.out), **summary})
    return 0


if __name__ == "__main__":
    sys.exit(main())
