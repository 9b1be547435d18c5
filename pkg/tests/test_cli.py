import json

import numpy as np
import pytest

from nlfp.cli import main
from nlfp.io import read_field
from nlfp.kernels import SQRT_2PI
from nlfp.reference import kuramoto_reference

KURAMOTO = {"variant": "MV1D", "kappa": 3.0, "sigma": 1.0, "kernel": {"type": "kuramoto"}}


def _run(tmp_path, cfg, study, *flags, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return main([study, str(path), *flags])


def _emitted(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_solve_writes_profile_and_metadata(tmp_path, capsys):
    out = tmp_path / "solve"
    cfg = {"problem": KURAMOTO, "grid": {"n": 401},
           "study": {"solve": {"guess": {"type": "cosine", "k": 1, "b": 1.0}}}, "output": str(out)}
    assert _run(tmp_path, cfg, "solve") == 0
    assert _emitted(capsys)["study"] == "solve"
    meta = json.loads((out / "solve.json").read_text())
    assert meta["residual"] <= 1e-7 and meta["iterations"] >= 1
    assert meta["ss_residual"] <= 1e-6
    f = read_field(out / "profile.csv")
    ref = kuramoto_reference(3.0, 1, f.grid).field.values
    assert np.max(np.abs(f.values - ref)) <= 1e-10


def test_invalid_config_exit_2(tmp_path, capsys):
    cfg = {"problem": dict(KURAMOTO, kappa="x"), "grid": {"n": 101}, "study": {"solve": {}}, "output": str(tmp_path)}
    assert _run(tmp_path, cfg, "solve") == 2
    err = _emitted(capsys)
    assert err["error"] == "invalid_config" and err["key"] == "problem.kappa"
    cfg = {"problem": KURAMOTO, "grid": {"n": 100}, "study": {"solve": {}}, "output": str(tmp_path)}
    assert _run(tmp_path, cfg, "solve") == 2
    assert _emitted(capsys)["key"].startswith("grid")
    cfg = {"problem": KURAMOTO, "grid": {"n": 101}, "study": {"solve": {}, "critical": {}}, "output": str(tmp_path)}
    assert _run(tmp_path, cfg, "solve") == 2
    assert _emitted(capsys)["key"] == "study"
    cfg = {"problem": KURAMOTO, "grid": {"n": 101}, "solver": {"tolerance": 1}, "study": {"solve": {}},
           "output": str(tmp_path)}
    assert _run(tmp_path, cfg, "solve") == 2
    assert _emitted(capsys)["key"].startswith("solver")


def test_not_converged_exit_3(tmp_path, capsys):
    cfg = {"problem": KURAMOTO, "grid": {"n": 201}, "solver": {"n_iters": 1},
           "study": {"solve": {"guess": {"type": "cosine", "k": 1, "b": 1.0}}}, "output": str(tmp_path / "o")}
    assert _run(tmp_path, cfg, "solve") == 3
    err = _emitted(capsys)
    assert err["error"] == "not_converged" and err["status"] == "max_iter"
    assert len(err["trace"]) == 2


def test_critical_study(tmp_path, capsys):
    out = tmp_path / "crit"
    cfg = {"problem": KURAMOTO, "grid": {"n": 301}, "study": {"critical": {"bracket": [2, 3]}}, "output": str(out)}
    assert _run(tmp_path, cfg, "critical") == 0
    res = json.loads((out / "critical.json").read_text())
    assert res["kappa_critical"] == pytest.approx(SQRT_2PI, abs=1e-4)


def test_diagram_is_deterministic(tmp_path, capsys, monkeypatch):
    cfg = {"problem": KURAMOTO, "grid": {"n": 101},
           "study": {"diagram": {"kappa_range": [2, 3], "n_kappa": 101}}, "output": "out"}
    outs = []
    for i in range(2):
        run_dir = tmp_path / f"run{i}"
        run_dir.mkdir()
        monkeypatch.chdir(run_dir)
        assert _run(tmp_path, cfg, "diagram", "--seed", "5") == 0
        outs.append(run_dir / "out")
    files = sorted(p.name for p in outs[0].iterdir())
    assert "diagram.json" in files and any(f.startswith("branch_") for f in files)
    assert files == sorted(p.name for p in outs[1].iterdir())
    for name in files:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    meta = json.loads((outs[0] / "diagram.json").read_text())
    assert len(meta["diagram"]["branches"]) == 2


def test_workers_env_override(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("NLFP_WORKERS", "zero")
    cfg = {"problem": KURAMOTO, "grid": {"n": 101}, "study": {"solve": {}}, "output": str(tmp_path / "w")}
    assert _run(tmp_path, cfg, "solve") == 2
    assert _emitted(capsys)["key"] == "NLFP_WORKERS"
