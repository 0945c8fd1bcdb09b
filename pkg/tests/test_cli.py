import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from circlekam.cli import fmt, main
from circlekam.config import ConfigError, load_config

BASE = {"schema": "circlekam/1"}


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps({**BASE, **data}, indent=1))
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


FREE_ALPHA = {"model": {"kind": "free"}, "grid": {"n_space": 64, "n_substeps": 4},
              "params": {"c_grid": {"start": -1.0, "stop": 1.0, "num": 21}, "horizon": 20, "max_n": 40}}


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="grid.bogus"):
            load_config(json.dumps({**BASE, "model": {"kind": "free"}, "grid": {"n_space": 64, "bogus": 1}}))

    def test_range_checked(self):
        with pytest.raises(ConfigError, match="grid.n_space"):
            load_config(json.dumps({**BASE, "model": {"kind": "free"}, "grid": {"n_space": 8}}))

    def test_bad_json_line(self):
        with pytest.raises(ConfigError, match="line 3"):
            load_config('{\n "schema": "circlekam/1",\n "model": {kind: 1}\n}')

    def test_schema_required(self):
        with pytest.raises(ConfigError, match="schema"):
            load_config(json.dumps({"model": {"kind": "free"}, "grid": {"n_space": 64}}))

    def test_genfun_time_terms_rejected(self):
        with pytest.raises(ConfigError, match="x only"):
            load_config(json.dumps({**BASE, "model": {"kind": "generating_function",
                                                      "terms": [{"j": 1, "k": 1, "cos": 0.1}]},
                                    "grid": {"n_space": 64}}))

    def test_models(self):
        cfg = load_config(json.dumps({**BASE, "model": {"kind": "mechanical",
                                                        "terms": [{"j": 1, "cos": 1.0}]}, "grid": {"n_space": 64}}))
        assert cfg.lagrangian().potential.terms == ((1, 0, 1.0, 0.0),)
        cfg = load_config(json.dumps({**BASE, "model": {"kind": "standard_map", "k": 2}, "grid": {"n_space": 64}}))
        assert cfg.lagrangian().kind.value == "generating_function"

    def test_class_range(self):
        cfg = load_config(json.dumps({**BASE, **FREE_ALPHA}))
        cs = cfg.c_values()
        assert len(cs) == 21 and cs[0] == -1.0 and cs[-1] == 1.0


class TestExitCodes:
    def test_malformed_config_exit_1(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text('{"schema": "circlekam/1",\n  "model": {"kind": "free"},\n  "grid": {"n_space": 64,}\n}')
        assert main(["alpha", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
        assert "line 3" in capsys.readouterr().err

    def test_field_diagnostic_exit_1(self, tmp_path, capsys):
        p = write(tmp_path, {"model": {"kind": "free"}, "grid": {"n_space": 64}, "params": {"horizon": 3}})
        assert main(["alpha", "--config", p, "--out", str(tmp_path / "o")]) == 1
        assert "params.horizon" in capsys.readouterr().err

    def test_alpha_exit_0(self, tmp_path):
        out = tmp_path / "o"
        assert main(["alpha", "--config", write(tmp_path, FREE_ALPHA), "--out", str(out)]) == 0
        rows = read_csv(out / "alpha.csv")
        assert len(rows) == 21
        assert list(rows[0]) == ["c", "alpha", "alpha_prime", "rotation", "regular", "period_detected"]
        c = np.array([float(r["c"]) for r in rows])
        a = np.array([float(r["alpha"]) for r in rows])
        assert np.max(np.abs(a - c**2 / 2)) <= 1e-3
        man = json.loads((out / "manifest.json").read_text())
        assert man["exit_status"] == 0 and man["task"] == "alpha"
        assert set(man["files"]) == {"alpha.csv", "summary.json"}

    def test_non_equivalent_exit_1(self, tmp_path, capsys):
        p = write(tmp_path, {"model": {"kind": "free"}, "grid": {"n_space": 64, "n_substeps": 4},
                             "params": {"schedule": [{"class": 0.0, "epsilon": 0.1}, {"class": 0.5, "epsilon": 0.1}]}})
        assert main(["connect", "--config", p, "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "R(0.0)" in err
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert man["exit_status"] == 1 and "0.0" in man["error"]

    def test_connect_verified_exit_0(self, tmp_path):
        p = write(tmp_path, {"model": {"kind": "standard_map", "k": 2.0}, "grid": {"n_space": 128},
                             "params": {"schedule": [{"class": 0.0, "epsilon": 0.05}, {"class": 1.0, "epsilon": 0.05}]}})
        out = tmp_path / "o"
        assert main(["connect", "--config", p, "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["verified"] is True
        rows = read_csv(out / "orbit.csv")
        assert list(rows[0]) == ["t", "x", "v_fd", "window_index", "dist_to_target"]

    def test_unverified_exit_2(self, tmp_path):
        p = write(tmp_path, {"model": {"kind": "standard_map", "k": 2.0}, "grid": {"n_space": 128},
                             "params": {"t_cap": 8, "schedule": [{"class": 0.0, "epsilon": 0.001},
                                                                 {"class": 1.0, "epsilon": 0.001}]}})
        out = tmp_path / "o"
        assert main(["connect", "--config", p, "--out", str(out)]) == 2
        assert json.loads((out / "summary.json").read_text())["verified"] is False

    def test_warnings_exit_3(self, tmp_path):
        p = write(tmp_path, {"model": {"kind": "pendulum"}, "grid": {"n_space": 128, "n_substeps": 8},
                             "params": {"classes": [0.0], "phi_n_max": 2}})
        out = tmp_path / "o"
        assert main(["barrier", "--config", p, "--out", str(out)]) == 3
        man = json.loads((out / "manifest.json").read_text())
        assert man["warnings"] and man["exit_status"] == 3

    def test_task_mismatch(self, tmp_path):
        p = write(tmp_path, {**FREE_ALPHA, "task": "barrier"})
        assert main(["alpha", "--config", p]) == 1

    def test_connect_without_schedule(self, tmp_path):
        p = write(tmp_path, {"model": {"kind": "free"}, "grid": {"n_space": 64}})
        assert main(["connect", "--config", p, "--out", str(tmp_path / "o")]) == 1


class TestOutputs:
    def test_barrier_and_sets(self, tmp_path):
        p = write(tmp_path, {"model": {"kind": "pendulum"}, "grid": {"n_space": 64, "n_substeps": 8},
                             "params": {"classes": [0.0]}})
        out = tmp_path / "b"
        assert main(["barrier", "--config", p, "--out", str(out)]) == 0
        rows = read_csv(out / "barrier_0.0.csv")
        assert len(rows) == 64 * 64
        assert list(rows[0]) == ["x", "y", "phi", "h", "d", "d_tilde"]
        out = tmp_path / "s"
        assert main(["sets", "--config", p, "--out", str(out)]) == 0
        rows = read_csv(out / "sets_0.0.csv")
        assert list(rows[0]) == ["x", "d_xx", "in_aubry", "in_mane", "in_g", "velocity"]
        assert rows[0]["in_aubry"] == "true"
        assert all(r["in_mane"] == "true" for r in rows)

    def test_regularity(self, tmp_path):
        p = write(tmp_path, {"model": {"kind": "pendulum"}, "grid": {"n_space": 32, "n_substeps": 4},
                             "params": {"classes": [0.0, 0.5], "max_n": 100}})
        out = tmp_path / "r"
        assert main(["regularity", "--config", p, "--out", str(out)]) == 0
        rows = read_csv(out / "regularity.csv")
        assert [r["regular"] for r in rows] == ["true", "true"]

    def test_deterministic(self, tmp_path):
        p = write(tmp_path, {**FREE_ALPHA, "grid": {"n_space": 32, "n_substeps": 2}})
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["alpha", "--config", p, "--out", str(a)]) == 0
        assert main(["alpha", "--config", p, "--out", str(b)]) == 0
        for name in ("alpha.csv", "summary.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
        ma.pop("timings"), mb.pop("timings")
        assert ma == mb

    def test_warm_cache(self, tmp_path):
        p = write(tmp_path, {**FREE_ALPHA, "grid": {"n_space": 32, "n_substeps": 2}})
        cache = str(tmp_path / "cache")
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["alpha", "--config", p, "--out", str(a), "--cache", cache]) == 0
        assert main(["alpha", "--config", p, "--out", str(b), "--cache", cache]) == 0
        for name in ("alpha.csv", "summary.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        cold = json.loads((a / "manifest.json").read_text())["cache"]
        warm = json.loads((b / "manifest.json").read_text())["cache"]
        assert warm["hits"] > 0 and warm["hits"] > cold["hits"]

    def test_parallel_workers_same_output(self, tmp_path):
        p = write(tmp_path, {**FREE_ALPHA, "grid": {"n_space": 32, "n_substeps": 2}})
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["alpha", "--config", p, "--out", str(a)]) == 0
        assert main(["alpha", "--config", p, "--out", str(b), "--workers", "2"]) == 0
        assert (a / "alpha.csv").read_bytes() == (b / "alpha.csv").read_bytes()


class TestCacheGc:
    def test_empty(self, tmp_path, capsys):
        (tmp_path / "c").mkdir()
        assert main(["cache-gc", "--cache", str(tmp_path / "c"), "--max-bytes", "0"]) == 0
        assert capsys.readouterr().out.strip() == "0"

    def test_missing_dir(self, tmp_path):
        assert main(["cache-gc", "--cache", str(tmp_path / "nope"), "--max-bytes", "0"]) == 1

    def test_frees_after_run(self, tmp_path, capsys):
        p = write(tmp_path, {**FREE_ALPHA, "grid": {"n_space": 32, "n_substeps": 2}})
        cache = tmp_path / "cache"
        main(["alpha", "--config", p, "--out", str(tmp_path / "a"), "--cache", str(cache)])
        capsys.readouterr()
        size = sum(f.stat().st_size for f in cache.glob("*.npz"))
        assert main(["cache-gc", "--cache", str(cache), "--max-bytes", str(10 * size)]) == 0
        assert capsys.readouterr().out.strip() == "0"
        assert main(["cache-gc", "--cache", str(cache), "--max-bytes", "0"]) == 0
        assert int(capsys.readouterr().out.strip()) == size
        assert not list(cache.glob("*.npz"))


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "circlekam", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "cache-gc" in r.stdout


def test_fmt():
    assert fmt(-0.0) == "0"
    assert fmt(True) == "true" and fmt(np.bool_(False)) == "false"
    assert fmt(3) == "3"
    assert float(fmt(0.1)) == 0.1
