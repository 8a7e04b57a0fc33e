import json


import numpy as np
import pytest

from fsdp import cli


def run_cli(args):
    return cli.main([str(a) for a in args])


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


@pytest.fixture
def iid_config(tmp_path):
    return write_config(
        tmp_path,
        "cfg.json",
        {"model": "job_search_iid", "solver": "vfi", "seed": 7},
    )


class TestSolve:
    def test_job_search_reports_reservation_wage(self, tmp_path, iid_config):
        out = tmp_path / "run"
        assert run_cli(["solve", "--config", iid_config, "--out", out]) == 0
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["reservation_wage"] == pytest.approx(43.4, abs=0.1)
        assert (out / "value.csv").exists()
        assert (out / "policy.csv").exists()

    def test_inline_model_solves(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "inline.json",
            {
                "model": {
                    "type": "mdp",
                    "reward": [[1.0, 0.5]],
                    "kernel": [[[1.0], [1.0]]],
                    "beta": 0.9,
                },
                "solver": "hpi",
                "seed": 0,
            },
        )
        out = tmp_path / "inline_run"
        assert run_cli(["solve", "--config", cfg, "--out", out]) == 0
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["residual"] < 1e-8
        value = (out / "value.csv").read_text().splitlines()
        assert value[0] == "state,value"
        assert float(value[1].split(",")[1]) == pytest.approx(10.0)

    def test_unknown_model_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, "bad.json", {"model": "no_such_model"})
        assert run_cli(["solve", "--config", cfg, "--out", tmp_path / "x"]) == 2

    def test_invalid_config_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, "bad.json", {"solver": "vfi"})
        assert run_cli(["solve", "--config", cfg, "--out", tmp_path / "x"]) == 2

    def test_unstable_sdd_override_exits_3(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path,
            "sdd.json",
            {
                "model": "inventory_sdd",
                "solver": "vfi",
                "seed": 0,
                "overrides": {"K": 10, "n_z": 8, "d_max": 40, "b": 1.2},
            },
        )
        assert run_cli(["solve", "--config", cfg, "--out", tmp_path / "x"]) == 3
        err = capsys.readouterr().err
        assert "spectral radius" in err
        assert "1.2" in err  # measured radius printed

    def test_determinism_byte_identical(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "cfg.json",
            {
                "model": "job_search_markov",
                "solver": "hpi",
                "seed": 3,
                "overrides": {"n": 40},
            },
        )
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run_cli(["solve", "--config", cfg, "--out", out]) == 0
            outs.append(
                (out / "value.csv").read_bytes()
                + (out / "policy.csv").read_bytes()
                + (out / "metadata.json").read_bytes()
            )
        assert outs[0] == outs[1]

    def test_cli_override_changes_build(self, tmp_path):
        cfg = write_config(
            tmp_path, "cfg.json", {"model": "firm_exit", "solver": "hpi", "seed": 0}
        )
        out = tmp_path / "r"
        assert (
            run_cli(
                ["solve", "--config", cfg, "--out", out, "--override", "n=25"]
            )
            == 0
        )
        values = (out / "value.csv").read_text().splitlines()
        assert len(values) == 1 + 25 + 1  # header + active states + exit state


class TestSimulate:
    def test_inventory_series_is_lumpy(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "sim.json",
            {
                "model": "inventory_mdp",
                "solver": "hpi",
                "seed": 11,
                "horizon": 400,
                "overrides": {"K": 25, "d_max": 60},
            },
        )
        out = tmp_path / "sim"
        assert run_cli(["simulate", "--config", cfg, "--out", out]) == 0
        lines = (out / "series.csv").read_text().splitlines()
        assert lines[0] == "t,state,reward"
        states = np.array([int(l.split(",")[1]) for l in lines[1:]])
        drops = np.diff(states)
        assert (drops > 5).sum() > 5  # occasional large restocks
        stats = json.loads((out / "stats.json").read_text())
        assert stats["steps"] == 400

    def test_jump_chain_event_file(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "jump.json",
            {"model": "ct_inventory_restock", "seed": 5, "horizon": 50},
        )
        out = tmp_path / "jump"
        assert run_cli(["simulate", "--config", cfg, "--out", out]) == 0
        lines = (out / "events.csv").read_text().splitlines()
        assert lines[0] == "jump_time,state"
        times = np.array([float(l.split(",")[0]) for l in lines[1:]])
        assert times[0] == 0.0
        assert np.all(np.diff(times) > 0)
        assert times[-1] > 50.0

    def test_zero_horizon_header_only(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "zero.json",
            {"model": "ct_inventory_restock", "seed": 5, "horizon": 0},
        )
        out = tmp_path / "zero"
        assert run_cli(["simulate", "--config", cfg, "--out", out]) == 0
        assert (out / "events.csv").read_text() == "jump_time,state\n"

    def test_simulation_deterministic_given_seed(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "sim.json",
            {
                "model": "inventory_mdp",
                "solver": "hpi",
                "seed": 2,
                "horizon": 100,
                "overrides": {"K": 15, "d_max": 40},
            },
        )
        blobs = []
        for name in ("s1", "s2"):
            out = tmp_path / name
            assert run_cli(["simulate", "--config", cfg, "--out", out]) == 0
            blobs.append((out / "series.csv").read_bytes())
        assert blobs[0] == blobs[1]


class TestBench:
    def test_bench_table_with_policy_agreement(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "bench.json",
            {
                "model": "optimal_savings",
                "seed": 0,
                "m_grid": [1, 20, 60],
                "overrides": {"w_size": 40, "y_size": 4},
            },
        )
        out = tmp_path / "bench"
        assert run_cli(["bench", "--config", cfg, "--out", out]) == 0
        lines = (out / "bench.csv").read_text().splitlines()
        assert lines[0] == "solver,m,seconds,iterations,policies_agree"
        assert lines[1].startswith("vfi,n/a,")
        assert all(line.endswith("true") for line in lines[1:])
        assert len(lines) == 1 + 2 + 3  # vfi, hpi, three opi rows

    def test_json_and_csv_numbers_match(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "bench.json",
            {
                "model": "inventory_mdp",
                "seed": 0,
                "m_grid": [5],
                "overrides": {"K": 12, "d_max": 40},
            },
        )
        out_csv, out_json = tmp_path / "c", tmp_path / "j"
        assert run_cli(["bench", "--config", cfg, "--out", out_csv]) == 0
        assert run_cli(
            ["bench", "--config", cfg, "--out", out_json, "--format", "json"]
        ) == 0
        csv_lines = (out_csv / "bench.csv").read_text().splitlines()[1:]
        json_rows = json.loads((out_json / "bench.json").read_text())
        for line, row in zip(csv_lines, json_rows):
            fields = line.split(",")
            assert int(fields[3]) == row["iterations"]
            assert fields[0] == row["solver"]


class TestSpectral:
    def test_reference_matrix_report(self, tmp_path, capsys):
        matrix_file = tmp_path / "m.json"
        matrix_file.write_text(json.dumps({"matrix": [[0.4, 0.1], [0.7, 0.2]]}))
        assert run_cli(["spectral", matrix_file]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["spectral_radius"] == pytest.approx(0.5828, abs=1e-3)
        assert report["radius_lower_bound"] == pytest.approx(0.5)
        assert report["radius_upper_bound"] == pytest.approx(0.9)

    def test_identity_report(self, tmp_path, capsys):
        matrix_file = tmp_path / "id.json"
        matrix_file.write_text(json.dumps([[1.0, 0.0], [0.0, 1.0]]))
        assert run_cli(["spectral", matrix_file]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["spectral_radius"] == pytest.approx(1.0)
        assert (report["radius_lower_bound"], report["radius_upper_bound"]) == (1.0, 1.0)

    def test_intensity_matrix_note(self, tmp_path, capsys):
        matrix_file = tmp_path / "q.json"
        matrix_file.write_text(json.dumps([[-0.3, 0.3], [0.1, -0.1]]))
        assert run_cli(["spectral", matrix_file, "--out", tmp_path / "rep.json"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["is_intensity_matrix"] is True
        assert report["spectral_bound"] == pytest.approx(0.0, abs=1e-12)
        assert "note" in report

    def test_bad_matrix_exits_2(self, tmp_path):
        matrix_file = tmp_path / "bad.json"
        matrix_file.write_text(json.dumps([[1.0, 2.0]]))
        assert run_cli(["spectral", matrix_file]) == 2

    def test_seventeen_digit_round_trip(self, tmp_path, capsys):
        matrix_file = tmp_path / "m.json"
        value = 1.0 / 3.0
        matrix_file.write_text(json.dumps([[value]]))
        assert run_cli(["spectral", matrix_file]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["spectral_radius"] == value
