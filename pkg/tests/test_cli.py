import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from fanout import cli


def run(tmp_path, *argv, name="out.csv"):
    out = tmp_path / name
    code = cli.main([argv[0], "--out", str(out), *argv[1:]])
    return code, out


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestTrace:
    def test_four_qubits(self, tmp_path):
        code, out = run(tmp_path, "trace", "--n", "4", "--ratio", "8")
        assert code == cli.EXIT_OK
        rows = read_csv(out)
        assert list(rows[0]) == ["t", "control", "m", "amplitude", "phase", "fidelity"]
        assert abs(float(rows[-1]["fidelity"]) - 0.994) <= 0.001
        last_t = rows[-1]["t"]
        final = {(r["control"], r["m"]): r for r in rows if r["t"] == last_t}
        assert abs(float(final[("1", "1")]["phase"]) - math.pi) < 1e-9
        manifest = json.loads((tmp_path / "out.csv.manifest.json").read_text())
        assert manifest["subcommand"] == "trace"
        assert manifest["params"]["n"] == 4 and manifest["outputs"] == [str(out)]
        for key in ("seed", "version", "kernel_backend", "wall_clock_seconds", "results"):
            assert key in manifest

    def test_blocking_limit(self, tmp_path):
        code, out = run(tmp_path, "trace", "--n", "2", "--ratio", "1e6", "--no-tune", "--samples", "21")
        assert code == 0
        idle = [float(r["amplitude"]) for r in read_csv(out) if r["control"] == "0"]
        assert min(idle) > 1 - 1e-6

    def test_rejects_large_n(self, tmp_path, capsys):
        code, out = run(tmp_path, "trace", "--n", "20")
        assert code == cli.EXIT_USAGE and not out.exists()
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and "--n" in err[0]

    def test_reproducible(self, tmp_path):
        run(tmp_path, "trace", "--n", "3", "--samples", "11", name="a.csv")
        run(tmp_path, "trace", "--n", "3", "--samples", "11", name="b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestSweep:
    def test_bound_and_columns(self, tmp_path):
        code, out = run(tmp_path, "sweep-ratio", "--n", "3", "--ratio-min", "2", "--ratio-max", "20",
                        "--steps", "200", "--per-m")
        assert code == 0
        rows = read_csv(out)
        assert len(rows) == 200
        for r in rows:
            assert float(r["infidelity_sim"]) <= float(r["bound"]) + 1e-8
            assert float(r["idle_m0"]) == 0.0

    def test_minima_follow_timing_condition(self, tmp_path):
        n = 2
        code, out = run(tmp_path, "sweep-ratio", "--n", str(n), "--ratio-min", "9", "--ratio-max", "21",
                        "--steps", "2401")
        rows = read_csv(out)
        r = np.array([float(x["ratio"]) for x in rows])
        f = np.array([float(x["infidelity_sim"]) for x in rows])
        minima = r[1:-1][(f[1:-1] < f[:-2]) & (f[1:-1] < f[2:])]
        for k in range(5, 11):
            predicted = math.sqrt(4 * k * k - n / 2)
            assert np.min(np.abs(minima - predicted)) < 0.15

    def test_full_precision_fields(self, tmp_path):
        _, out = run(tmp_path, "sweep-ratio", "--n", "2", "--steps", "3")
        line = out.read_text().splitlines()[2]
        for field in line.split(","):
            assert float(repr(float(field))) == float(field)
        assert any(len(f.replace("-", "").replace(".", "").lstrip("0").split("e")[0]) >= 15
                   for f in line.split(","))


class TestScaling:
    def test_small_range(self, tmp_path):
        code, out = run(tmp_path, "scaling", "--n-min", "2", "--n-max", "8")
        assert code == 0
        rows = read_csv(out)
        assert [int(r["n"]) for r in rows] == list(range(2, 9))
        for r in rows:
            assert float(r["timed_infidelity"]) <= float(r["bound"])
            assert float(r["timed_infidelity"]) <= float(r["untimed_infidelity"])
            assert 18 <= float(r["ratio"]) <= 20
        assert float(rows[0]["timed_infidelity"]) < 1e-4

    def test_rejects_above_hundred(self, tmp_path):
        assert run(tmp_path, "scaling", "--n-max", "101")[0] == cli.EXIT_USAGE


class TestHeating:
    def test_columns_and_zero_kappa(self, tmp_path):
        code, out = run(tmp_path, "heating", "--n-min", "2", "--n-max", "4", "--kappas", "0,0.01",
                        "--n-traj", "50")
        assert code == 0
        rows = read_csv(out)
        assert list(rows[0]) == ["n", "kappa", "infidelity", "stderr", "n_traj", "seed", "ratio"]
        _, scaling = run(tmp_path, "scaling", "--n-min", "2", "--n-max", "4", name="s.csv")
        timed = {r["n"]: float(r["timed_infidelity"]) for r in read_csv(scaling)}
        for r in rows:
            if float(r["kappa"]) == 0.0:
                assert float(r["infidelity"]) == pytest.approx(timed[r["n"]], abs=1e-15)
                assert float(r["stderr"]) == 0.0

    def test_threads_and_reruns_identical(self, tmp_path, monkeypatch):
        args = ("heating", "--n-min", "3", "--n-max", "4", "--kappas", "0.01", "--n-traj", "100",
                "--seed", "7")
        run(tmp_path, *args, "--threads", "1", name="a.csv")
        run(tmp_path, *args, "--threads", "3", name="b.csv")
        monkeypatch.setenv("FANOUT_THREADS", "2")
        run(tmp_path, *args, name="c.csv")
        a = (tmp_path / "a.csv").read_bytes()
        assert a == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()

    def test_samples_out(self, tmp_path):
        samples = tmp_path / "samples.csv"
        code, out = run(tmp_path, "heating", "--n-min", "2", "--n-max", "2", "--kappas", "0.01",
                        "--n-traj", "4", "--samples-out", str(samples))
        assert code == 0
        rows = read_csv(samples)
        assert len(rows) == 2 * 2 * 4
        assert list(rows[0]) == ["n", "kappa", "m", "control", "trajectory", "fidelity"]
        manifest = json.loads((tmp_path / "out.csv.manifest.json").read_text())
        assert str(samples) in manifest["outputs"]

    def test_guard(self, tmp_path):
        assert run(tmp_path, "heating", "--n-max", "25", "--n-traj", "1")[0] == cli.EXIT_USAGE


class TestVerify:
    def test_coherent(self, tmp_path):
        code, out = run(tmp_path, "verify", "--n", "3", "--kappa", "0", "--n-states", "10",
                        "--cutoff", "2", "--ratio", "8", name="v.json")
        assert code == cli.EXIT_OK
        report = json.loads(out.read_text())
        assert report["passed"]
        checks = {c["check"]: c for c in report["checks"]}
        assert checks["coherent_basis_fidelities"]["value"] < 1e-8

    def test_heated(self, tmp_path):
        code, out = run(tmp_path, "verify", "--n", "3", "--kappa", "0.01", "--n-states", "20",
                        "--ratio", "8", name="v.json")
        assert code == cli.EXIT_OK
        report = json.loads(out.read_text())
        assert report["random_states"]["overestimate_fraction"] == 1.0

    def test_corrupted_factor_fails(self, tmp_path):
        code, out = run(tmp_path, "verify", "--n", "3", "--kappa", "0", "--n-states", "5",
                        "--cutoff", "1", "--ratio", "8", "--corrupt-probe", "1.01", name="v.json")
        assert code == cli.EXIT_VERIFY
        assert json.loads(out.read_text())["passed"] is False


class TestConfig:
    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n": 3, "samples": 5, "ratio-min": 3.0}))
        # ratio-min is not a trace option
        with pytest.raises(SystemExit) as exc:
            cli.main(["trace", "--config", str(cfg), "--out", str(tmp_path / "x.csv")])
        assert exc.value.code == cli.EXIT_USAGE
        cfg.write_text(json.dumps({"n": 3, "samples": 5}))
        code = cli.main(["trace", "--config", str(cfg), "--samples", "7", "--out", str(tmp_path / "x.csv")])
        assert code == 0
        manifest = json.loads((tmp_path / "x.csv.manifest.json").read_text())
        assert manifest["params"]["n"] == 3 and manifest["params"]["samples"] == 7

    def test_bad_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]")
        with pytest.raises(SystemExit) as exc:
            cli.main(["scaling", "--config", str(cfg), "--out", str(tmp_path / "x.csv")])
        assert exc.value.code == cli.EXIT_USAGE


def test_module_entry_point(tmp_path):
    out = tmp_path / "t.csv"
    proc = subprocess.run([sys.executable, "-m", "fanout", "trace", "--n", "2", "--samples", "3",
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
