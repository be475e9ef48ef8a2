import csv
import json

import numpy as np
import pytest

from qmpc import cli


def reports(capsys):
    return [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.startswith("{")]


class TestSeed:
    def test_env_overrides(self, monkeypatch):
        monkeypatch.setenv("DITTO_SEED", "42")
        assert cli.resolve_seed(3) == 42
        monkeypatch.setenv("DITTO_SEED", "")
        assert cli.resolve_seed(3) == 3

    def test_env_reaches_report(self, monkeypatch, capsys):
        monkeypatch.setenv("DITTO_SEED", "11")
        assert cli.main(["--seed", "1", "run-op", "--op", "max"]) == 0
        assert reports(capsys)[0]["params"]["seed"] == 11


class TestCommands:
    def test_bench_matmul(self, capsys):
        assert cli.main(["bench-matmul", "--m", "2", "--k", "16", "--n", "4", "--bits", "32"]) == 0
        (r,) = reports(capsys)
        assert r["cmd"] == "bench-matmul"
        assert r["comm"]["rounds"] == 3
        assert {c["name"] for c in r["checks"]} == {"matmul_max_abs_vs_float", "dot_product_bytes"}
        assert r["est_time"]["wan"] > r["est_time"]["lan"] > 0

    def test_bench_matmul_bytes_halve(self):
        r32 = cli.bench_matmul(4, 32, 8, 32)
        r64 = cli.bench_matmul(4, 32, 8, 64)
        mul = lambda r: next(p["bytes"] for p in r["phases"] if p["name"] == "mul")  # noqa: E731
        assert 2 * mul(r32) == mul(r64)

    def test_bench_matmul_casts(self):
        r = cli.bench_matmul(2, 8, 4, 32, casts=True)
        assert any(p["name"] == "cast" for p in r["phases"])

    def test_bench_block_small(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"d_model": 8, "n_heads": 2, "d_ff": 16, "seq_len": 4}))
        code = cli.main(["bench-block", "--config", str(cfg), "--mode", "quantized"])
        (r,) = reports(capsys)
        assert code == 0 and r["params"]["mode"] == "quantized"

    def test_bench_block_ratio_report(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"d_model": 8, "n_heads": 2, "d_ff": 16, "seq_len": 4}))
        cli.main(["bench-block", "--config", str(cfg), "--gelu", "poly", "--mask", "causal"])
        rs = reports(capsys)
        assert [r["params"]["mode"] for r in rs] == ["quantized", "uniform64", "ratio"]
        assert rs[2]["ratio"] == pytest.approx(rs[2]["quantized_bytes"] / rs[2]["uniform64_bytes"])
        assert rs[0]["params"]["gelu_mode"] == "poly"

    @pytest.mark.parametrize("op", sorted(cli.RUN_OPS))
    def test_run_op_defaults(self, op):
        r = cli.run_op(op, seed=1)
        assert all(c["pass"] for c in r["checks"]), r["checks"]

    @pytest.mark.parametrize("suffix", [".npy", ".json", ".csv"])
    def test_run_op_input_files(self, tmp_path, suffix, capsys):
        vals = np.array([-1.0, 0.0, 2.5])
        path = tmp_path / f"in{suffix}"
        if suffix == ".npy":
            np.save(path, vals)
        elif suffix == ".json":
            path.write_text(json.dumps(vals.tolist()))
        else:
            path.write_text("-1.0,0.0,2.5\n")
        assert cli.main(["run-op", "--op", "gelu_quad", "--input", str(path)]) == 0
        assert reports(capsys)[0]["params"]["shape"] == [3]

    def test_dump_graph(self, capsys):
        assert cli.main(["dump-graph"]) == 0
        (r,) = reports(capsys)
        assert r["upcasts"] == 1 and r["downcasts"] == 1
        assert cli.main(["dump-graph", "--text", "--uniform64"]) == 0
        text = capsys.readouterr().out
        assert "upcast" not in text and text.strip().endswith("return y=%y")

    def test_selftest(self, capsys):
        assert cli.main(["selftest"]) == 0
        (r,) = reports(capsys)
        assert len(r["checks"]) >= 10

    def test_csv_append(self, tmp_path, capsys):
        out = tmp_path / "runs.csv"
        for _ in range(2):
            cli.main(["--csv", str(out), "run-op", "--op", "max"])
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 2 and rows[0]["cmd"] == "run-op"

    def test_failed_check_sets_exit_code(self, monkeypatch, capsys):
        monkeypatch.setattr(cli.oracle, "within_slack", lambda *a, **k: False)
        assert cli.main(["run-op", "--op", "max"]) == 1
        assert "failed checks" in capsys.readouterr().err

    def test_bad_op(self):
        with pytest.raises(ValueError):
            cli.run_op("tanh")
