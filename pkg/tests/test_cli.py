import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from steincouplings.cli import (
    COUPLING_REGISTRY,
    ConfigError,
    build_coupling,
    cmd_list_couplings,
    main,
    validate_config,
)


def _write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def _read_rows(path):
    text = open(path).read().splitlines()
    header = text[0].split(",")
    rows = []
    for line in text[1:]:
        # naive CSV split is fine: quoted config cell is last
        head, _, config = line.partition(',"')
        cells = head.split(",")
        rows.append(dict(zip(header, cells)))
    return rows


def test_registry_builds_everything():
    cases = {
        "indep_sum_deletion": {"n": 3},
        "two_runs": {"n": 6, "p": 0.4},
        "quadratic_form": {"matrix": [[0.0, 1.0], [1.0, 0.0]]},
        "size_bias": {"distribution": "binomial", "n": 4, "p": 0.3},
        "hoeffding": {"variant": 3},
        "occupancy": {"n": 3, "m": 2},
        "graph": {"n": 5, "lam": 0.5},
        "geometry": {"d": 1, "n": 5, "rho": 0.6},
    }
    for name, params in cases.items():
        sampler = build_coupling({"name": name, "params": params})
        sampler.draw(np.random.default_rng(0))


def test_unknown_coupling_and_params_rejected():
    with pytest.raises(ConfigError):
        build_coupling({"name": "nope", "params": {}})
    with pytest.raises(ConfigError):
        build_coupling({"name": "two_runs", "params": {"n": 6, "p": 0.4, "zzz": 1}})


def test_validate_config_rejects_unknowns():
    base = {
        "seed": 1,
        "tasks": {"recursion": {"n": 5, "a_const": 1.0, "band": 0.5}},
        "output": {"path": "x.csv", "format": "csv"},
    }
    validate_config(json.loads(json.dumps(base)))
    bad = dict(base, bogus=1)
    with pytest.raises(ConfigError):
        validate_config(bad)
    missing = {k: v for k, v in base.items() if k != "seed"}
    with pytest.raises(ConfigError):
        validate_config(missing)


def test_run_recursion_example(tmp_path):
    out = tmp_path / "rec.json"
    cfg = _write(
        tmp_path,
        "cfg.json",
        {
            "seed": 1,
            "tasks": {"recursion": {"n": 100, "a_const": 8.0, "band": 5.0}},
            "output": {"path": str(out), "format": "json"},
        },
    )
    assert main(["run", cfg]) == 0
    rows = {r["metric"]: r["value"] for r in json.loads(out.read_text())}
    # closed form 24.7253/sqrt(100); the stated example prints 2.472...
    assert abs(rows["kappa_bound"] - 24.72526280681796 / math.sqrt(100)) < 1e-10


def test_run_missing_seed_exits_2(tmp_path):
    cfg = _write(
        tmp_path,
        "bad.json",
        {"tasks": {"recursion": {"n": 5, "a_const": 1.0, "band": 0.5}},
         "output": {"path": str(tmp_path / "x.csv"), "format": "csv"}},
    )
    assert main(["run", cfg]) == 2


def test_run_hoeffding_bound_dominates_distance(tmp_path):
    out = tmp_path / "h3.csv"
    cfg = _write(
        tmp_path,
        "h3.json",
        {
            "experiment_id": "h3",
            "coupling": {
                "name": "hoeffding",
                "params": {"variant": 3, "kind": "random", "n": 50, "matrix_seed": 7},
            },
            "n_samples": 10_000,
            "seed": 99,
            "chunk_size": 4096,
            "tasks": {
                "terms": {},
                "bounds": {"theorems": ["corollary5", "application"]},
                "distance": {"metric": "dk"},
            },
            "output": {"path": str(out), "format": "csv"},
        },
    )
    assert main(["run", cfg]) == 0
    rows = _read_rows(out)
    by_metric = {r["metric"]: r for r in rows}
    dk = float(by_metric["dk"]["value"])
    cor5 = float(by_metric["bound_corollary5"]["bound"])
    hoeff = float(by_metric["bound_hoeffding"]["bound"])
    assert cor5 >= dk and hoeff >= dk
    # the Variant-3 a.s. bounds make corollary 5 equal the closed-form bound
    assert abs(cor5 - hoeff) < 1e-9
    # version and resolved config on every row
    assert all(r["version"] == "steincouplings-0.1.0" for r in rows)


def test_run_byte_identical_across_worker_counts(tmp_path):
    out = tmp_path / "out.csv"
    cfg = _write(
        tmp_path,
        "cfg.json",
        {
            "coupling": {"name": "two_runs", "params": {"n": 10, "p": 0.3}},
            "n_samples": 20_000,
            "seed": 5,
            "chunk_size": 1024,
            "tasks": {"moments": {}, "distance": {"metric": "dk"}},
            "output": {"path": str(out), "format": "csv"},
        },
    )
    blobs = []
    for workers in ("1", "4", "4"):
        env = dict(os.environ, STEINCOUPLINGS_WORKERS=workers)
        res = subprocess.run(
            [sys.executable, "-m", "steincouplings.cli", "run", cfg],
            capture_output=True,
            env=env,
        )
        assert res.returncode == 0, res.stderr
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]


def test_sweep_rows_and_empty_grid(tmp_path):
    out = tmp_path / "sweep.csv"
    tpl = _write(
        tmp_path,
        "tpl.json",
        {
            "seed": 3,
            "coupling": {"name": "two_runs", "params": {"n": 8, "p": 0.4}},
            "n_samples": 2000,
            "tasks": {"distance": {"metric": "dk"}},
            "output": {"path": str(out), "format": "csv"},
        },
    )
    grid = _write(tmp_path, "grid.json", {"coupling.params.n": [8, 12], "seed": [3, 4]})
    assert main(["sweep", tpl, grid]) == 0
    rows = _read_rows(out)
    assert len(rows) == 4
    assert {r["n"] for r in rows} == {"8", "12"}
    empty = _write(tmp_path, "empty.json", {})
    assert main(["sweep", tpl, empty]) == 0
    assert open(out).read().count("\n") == 1  # header only


def test_list_couplings_covers_registry(capsys):
    assert cmd_list_couplings(None) == 0
    out = capsys.readouterr().out
    for name in COUPLING_REGISTRY:
        assert name in out


def test_selftest_passes_and_is_deterministic():
    env1 = dict(os.environ, STEINCOUPLINGS_WORKERS="1")
    env4 = dict(os.environ, STEINCOUPLINGS_WORKERS="4")
    outs = []
    for env in (env1, env4, env4):
        res = subprocess.run(
            [sys.executable, "-m", "steincouplings.cli", "selftest"],
            capture_output=True,
            env=env,
        )
        assert res.returncode == 0, res.stdout
        outs.append(res.stdout)
    assert outs[0] == outs[1] == outs[2]


def test_runtime_error_exits_3(tmp_path):
    # corollary1 needs the conditional hook, which the Hoeffding pair lacks
    cfg = _write(
        tmp_path,
        "c1.json",
        {
            "coupling": {"name": "hoeffding", "params": {"variant": 1}},
            "n_samples": 1000,
            "seed": 2,
            "tasks": {"bounds": {"theorems": ["corollary1"]}},
            "output": {"path": str(tmp_path / "o.csv"), "format": "csv"},
        },
    )
    assert main(["run", cfg]) == 3
