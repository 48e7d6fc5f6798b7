import csv
import json
import math
import subprocess
import sys

import pytest

from spcelab.cli import main


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def read_outputs(out_dir):
    manifest = json.loads((out_dir / "manifest.json").read_text())
    return {name: (out_dir / name).read_bytes() for name in manifest["outputs"]}


STANDARD_AXES = {"A": 0, "A_prime": 90, "B": 45, "B_prime": 135}


class TestSpceCommand:
    def test_minimal_single_pair(self, tmp_path):
        cfg = write_config(tmp_path, {"axes": {"A": 0, "B": 45}, "n": 10, "seed": 1})
        out = tmp_path / "out"
        assert main(["spce", "--config", str(cfg), "--out", str(out)]) == 0
        for name in ("runs.jsonl", "correlators.csv", "chsh.json", "manifest.json"):
            assert (out / name).exists()
        report = json.loads((out / "chsh.json").read_text())
        assert report["S"] is None
        assert report["low_n"] is True
        lines = (out / "runs.jsonl").read_text().splitlines()
        assert len(lines) == 11  # header + 10 records

    def test_standard_angles_reach_tsirelson(self, tmp_path):
        cfg = write_config(tmp_path, {
            "axes": STANDARD_AXES, "epsilon": 0.0, "n": 1_000_000,
            "seed": 7, "record_limit": 500,
        })
        out = tmp_path / "out"
        assert main(["spce", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "chsh.json").read_text())
        assert 2.81 <= report["S"] <= 2.85
        assert report["low_n"] is False

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, {"axes": STANDARD_AXES, "n": 200, "seed": 3})
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["spce", "--config", str(cfg), "--out", str(out_a)]) == 0
        assert main(["spce", "--config", str(cfg), "--out", str(out_b)]) == 0
        assert read_outputs(out_a) == read_outputs(out_b)

    def test_invalid_epsilon_is_a_config_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"axes": {"A": 0, "B": 45}, "epsilon": 3.0, "n": 10})
        assert main(["spce", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
        assert "epsilon" in capsys.readouterr().err

    def test_json_table_format(self, tmp_path):
        cfg = write_config(tmp_path, {"axes": {"A": 0, "B": 45}, "n": 50, "seed": 2})
        out = tmp_path / "out"
        assert main(["spce", "--config", str(cfg), "--out", str(out), "--format", "json"]) == 0
        records = json.loads((out / "correlators.json").read_text())
        assert records[0]["setting_pair"] == "AB"
        assert isinstance(records[0]["r"], float)


class TestCoinsCommand:
    def test_e1_constant_series(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "E1", "n": 6, "initial_face": "B", "seed": 0})
        out = tmp_path / "out"
        assert main(["coins", "--config", str(cfg), "--out", str(out)]) == 0
        records = [json.loads(line) for line in (out / "series.jsonl").read_text().splitlines()]
        outcomes = [r["outcome"] for r in records if "outcome" in r]
        assert outcomes == [-1] * 6  # face B in, face R out, every time

    def test_e4_summary_variance(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "E4", "n": 100, "urn": [51, 51],
                                      "runs": 100_000, "series_limit": 2, "seed": 5})
        out = tmp_path / "out"
        assert main(["coins", "--config", str(cfg), "--out", str(out)]) == 0
        with open(out / "summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["experiment"] == "E4"
        var = float(rows[0]["var_count_b"])
        assert abs(var - 0.495) / 0.495 < 0.05
        series_lines = (out / "series.jsonl").read_text().splitlines()
        headers = [json.loads(l) for l in series_lines if json.loads(l).get("kind") == "header"]
        assert len(headers) == 2

    def test_e5_vs_e6_paired(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "E5E6", "n": 5000, "urn": [50, 50],
                                      "runs": 2, "seed": 9})
        out = tmp_path / "out"
        assert main(["coins", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "series_e5.jsonl").exists()
        assert (out / "series_e6.jsonl").exists()
        with open(out / "summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["experiment"] for r in rows] == ["E5", "E6", "E5_vs_E6"]
        assert abs(float(rows[2]["z"])) < 5.0

    def test_removal_changes_e5_composition(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "E5", "n": 20_000, "urn": [50, 50],
                                      "remove": 90, "seed": 2})
        out = tmp_path / "out"
        assert main(["coins", "--config", str(cfg), "--out", str(out)]) == 0
        with open(out / "summary.csv", newline="") as fh:
            row = next(csv.DictReader(fh))
        fraction = float(row["mean_fraction_b"])
        # 10 coins survive the removal, so the revealed fraction sits near a tenth
        nearest = round(fraction * 10) / 10
        assert abs(fraction - nearest) < 4 * math.sqrt(0.25 / 20_000)

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "E3", "n": 500, "runs": 3, "seed": 11})
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["coins", "--config", str(cfg), "--out", str(out_a)]) == 0
        assert main(["coins", "--config", str(cfg), "--out", str(out_b)]) == 0
        assert read_outputs(out_a) == read_outputs(out_b)


class TestPurityCommand:
    def test_generated_pure_family_exits_zero(self, tmp_path):
        cfg = write_config(tmp_path, {
            "generate": {"experiments": [{"box": "E6", "urn": [50, 50], "n": 5000, "count": 4}]},
            "procedures": [{"kind": "thin", "param": 0.5}],
            "subensemble_count": 2,
            "alpha": 0.05,
            "seed": 21,
        })
        out = tmp_path / "out"
        assert main(["purity", "--config", str(cfg), "--out", str(out)]) == 0
        doc = json.loads((out / "verdict.json").read_text())
        assert doc["verdict"] == "pure"
        assert doc["correction"] == "holm"

    def test_perturbed_family_exits_one(self, tmp_path):
        cfg = write_config(tmp_path, {
            "generate": {"experiments": [
                {"box": "E5", "urn": [50, 50], "n": 2000, "count": 2},
                {"box": "E5", "urn": [4, 6], "n": 2000, "count": 2},
            ]},
            "alpha": 0.05,
            "seed": 22,
        })
        out = tmp_path / "out"
        assert main(["purity", "--config", str(cfg), "--out", str(out)]) == 1
        doc = json.loads((out / "verdict.json").read_text())
        assert doc["verdict"] == "mixed"

    def test_small_family_is_inconclusive(self, tmp_path):
        cfg = write_config(tmp_path, {
            "generate": {"experiments": [{"box": "E6", "urn": [1, 1], "n": 100, "count": 2}]},
            "seed": 23,
        })
        assert main(["purity", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2

    def test_input_files_mode(self, tmp_path):
        gen_cfg = write_config(tmp_path, {"experiment": "E6", "n": 6000, "urn": [50, 50],
                                          "runs": 4, "series_limit": 4, "seed": 24}, "gen.json")
        data_dir = tmp_path / "data"
        assert main(["coins", "--config", str(gen_cfg), "--out", str(data_dir)]) == 0
        cfg = write_config(tmp_path, {"inputs": [str(data_dir / "series.jsonl")], "seed": 25})
        assert main(["purity", "--config", str(cfg), "--out", str(tmp_path / "out"),
                     "--alpha", "0.05"]) == 0

    def test_truncated_input_exits_above_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"kind": "header", "n": 5}\n{"index": 0, "outcome": 1}\nnot json\n')
        cfg = write_config(tmp_path, {"inputs": [str(bad)], "seed": 0})
        code = main(["purity", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert code == 4
        assert "line 3" in capsys.readouterr().err


class TestBertrandCommand:
    def test_three_machines_converge(self, tmp_path):
        cfg = write_config(tmp_path, {"machines": ["M1", "M2", "M3"], "n": 200_000, "seed": 31})
        out = tmp_path / "out"
        assert main(["bertrand", "--config", str(cfg), "--out", str(out)]) == 0
        with open(out / "bertrand.csv", newline="") as fh:
            rows = {r["machine"]: r for r in csv.DictReader(fh)}
        for machine, expected in (("M1", 0.5), ("M2", 1 / 3), ("M3", 0.25)):
            p_hat = float(rows[machine]["p_hat"])
            stderr = float(rows[machine]["stderr"])
            assert abs(p_hat - expected) < 4 * stderr
            assert rows[machine]["low_n"] == "False"

    def test_single_trial_flagged(self, tmp_path):
        cfg = write_config(tmp_path, {"machines": ["M1"], "n": 1, "seed": 0})
        out = tmp_path / "out"
        assert main(["bertrand", "--config", str(cfg), "--out", str(out)]) == 0
        with open(out / "bertrand.csv", newline="") as fh:
            row = next(csv.DictReader(fh))
        assert row["low_n"] == "True"
        assert float(row["stderr"]) == 0.0

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, {"machines": ["M2"], "n": 1000, "seed": 2})
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["bertrand", "--config", str(cfg), "--out", str(out_a)]) == 0
        assert main(["bertrand", "--config", str(cfg), "--out", str(out_b)]) == 0
        assert read_outputs(out_a) == read_outputs(out_b)


class TestQkdCommand:
    def test_sharp_polarizers_mismatch_zero(self, tmp_path):
        cfg = write_config(tmp_path, {"axis": 0, "epsilon": 0.0, "n": 2000, "seed": 41})
        out = tmp_path / "out"
        assert main(["qkd", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["mismatch"] == 0.0
        keys = json.loads((out / "keys.json").read_text())
        assert keys["alice"] == keys["bob"]

    def test_smeared_mismatch_with_test_block(self, tmp_path):
        cfg = write_config(tmp_path, {
            "axis": 0, "epsilon": 0.1, "n": 100_000, "seed": 42,
            "test": {"axes": STANDARD_AXES, "n": 100_000},
        })
        out = tmp_path / "out"
        assert main(["qkd", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert abs(report["mismatch"] - 0.04875) < 4 * math.sqrt(0.04875 * 0.95 / 100_000)
        assert abs(report["chsh"]["S"] - 2 * math.sqrt(2) * 0.9025) < 0.05

    def test_adversary_is_capped(self, tmp_path):
        cfg = write_config(tmp_path, {
            "axis": 0, "epsilon": 0.0, "n": 1000, "seed": 43,
            "test": {"axes": STANDARD_AXES, "n": 50_000, "adversary": True},
        })
        out = tmp_path / "out"
        assert main(["qkd", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["chsh"]["S"] <= 2.0 + 1e-12
        assert report["chsh"]["adversary"] is True


class TestReplay:
    @pytest.mark.parametrize("command,cfg", [
        ("spce", {"axes": STANDARD_AXES, "n": 300, "seed": 51}),
        ("coins", {"experiment": "E4", "n": 50, "urn": [26, 26], "runs": 4, "seed": 52}),
        ("bertrand", {"machines": ["M1", "M3"], "n": 500, "seed": 53}),
        ("qkd", {"axis": 10, "epsilon": 0.2, "n": 400, "seed": 54}),
    ])
    def test_replay_reproduces_outputs(self, tmp_path, command, cfg):
        cfg_path = write_config(tmp_path, cfg)
        original = tmp_path / "original"
        assert main([command, "--config", str(cfg_path), "--out", str(original)]) == 0
        replayed = tmp_path / "replayed"
        assert main(["replay", str(original / "manifest.json"), "--out", str(replayed)]) == 0
        assert read_outputs(original) == read_outputs(replayed)

    def test_purity_replay_preserves_exit_code(self, tmp_path):
        cfg_path = write_config(tmp_path, {
            "generate": {"experiments": [
                {"box": "E5", "urn": [50, 50], "n": 2000, "count": 2},
                {"box": "E5", "urn": [4, 6], "n": 2000, "count": 2},
            ]},
            "seed": 55,
        })
        original = tmp_path / "original"
        assert main(["purity", "--config", str(cfg_path), "--out", str(original)]) == 1
        replayed = tmp_path / "replayed"
        assert main(["replay", str(original / "manifest.json"), "--out", str(replayed)]) == 1
        assert read_outputs(original) == read_outputs(replayed)

    def test_replay_honors_alpha_override(self, tmp_path):
        cfg_path = write_config(tmp_path, {
            "generate": {"experiments": [{"box": "E6", "urn": [50, 50], "n": 6000, "count": 2}]},
            "alpha": 0.5,
            "seed": 57,
        })
        original = tmp_path / "original"
        main(["purity", "--config", str(cfg_path), "--out", str(original), "--alpha", "0.01"])
        manifest = json.loads((original / "manifest.json").read_text())
        assert manifest["config"]["alpha"] == 0.01
        replayed = tmp_path / "replayed"
        main(["replay", str(original / "manifest.json"), "--out", str(replayed)])
        assert (original / "verdict.json").read_bytes() == (replayed / "verdict.json").read_bytes()

    def test_replay_in_place_is_stable(self, tmp_path):
        cfg_path = write_config(tmp_path, {"machines": ["M1"], "n": 100, "seed": 56})
        out = tmp_path / "out"
        assert main(["bertrand", "--config", str(cfg_path), "--out", str(out)]) == 0
        before = read_outputs(out)
        assert main(["replay", str(out / "manifest.json")]) == 0
        assert read_outputs(out) == before


class TestProcessEntry:
    def test_module_invocation(self, tmp_path):
        cfg = write_config(tmp_path, {"machines": ["M1"], "n": 100, "seed": 1})
        result = subprocess.run(
            [sys.executable, "-m", "spcelab.cli", "bertrand",
             "--config", str(cfg), "--out", str(tmp_path / "out")],
            capture_output=True, text=True,
        )
        assert result.returncode == 0
        assert (tmp_path / "out" / "bertrand.csv").exists()

    def test_env_var_default_out(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPCELAB_OUT", str(tmp_path / "env-out"))
        cfg = write_config(tmp_path, {"machines": ["M1"], "n": 10, "seed": 1})
        assert main(["bertrand", "--config", str(cfg)]) == 0
        assert (tmp_path / "env-out" / "bertrand.csv").exists()
