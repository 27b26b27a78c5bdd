"""Command-line surface: exit codes, argument validation, light commands."""
import subprocess
import sys

import pytest

from djscc.cli import main
from djscc.pipeline import CSV_HEADER


def run(argv):
    try:
        return main(argv)
    except SystemExit as e:  # argparse paths
        return e.code


class TestExitCodes:
    def test_no_command_is_usage_error(self, capsys):
        assert run([]) == 1

    def test_unknown_command(self, capsys):
        assert run(["frobnicate"]) == 1

    def test_missing_required_flag(self, capsys):
        assert run(["train-jscc"]) == 1

    def test_transmit_needs_snr(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text("")
        assert run(["transmit", "--config", str(cfg)]) == 1

    def test_runtime_failure_is_two(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text(f'[dataset]\npath = "{tmp_path / "missing"}"\n')
        assert run(["train-jscc", "--config", str(cfg)]) == 2

    def test_help_exits_zero(self, capsys):
        assert run(["--help"]) == 0

    def test_evaluate_without_source(self, capsys):
        assert run(["evaluate"]) == 2

    def test_evaluate_missing_csv(self, tmp_path, capsys):
        assert run(["evaluate", "--csv", str(tmp_path / "nope.csv")]) == 2


class TestGenDataset:
    def test_writes_both_splits(self, tmp_path, capsys):
        code = run(["gen-dataset", "--out", str(tmp_path / "d"),
                    "--train-count", "3", "--test-count", "2",
                    "--size", "16", "--seed", "1"])
        assert code == 0
        assert (tmp_path / "d" / "train" / "labels.csv").is_file()
        assert (tmp_path / "d" / "test" / "labels.csv").is_file()
        assert "3 train / 2 test" in capsys.readouterr().out

    def test_bad_size(self, tmp_path, capsys):
        code = run(["gen-dataset", "--out", str(tmp_path / "d"),
                    "--train-count", "2", "--test-count", "1",
                    "--size", "17"])
        assert code == 2


class TestEvaluate:
    def make_csv(self, tmp_path):
        rows = [
            "img_0,0,10.0,1/6,32.0,jscc,20.000000,0.9000,0.8500,1.00000000e-02,,,",
            "img_1,0,10.0,1/6,32.0,jscc,22.000000,0.9200,0.8700,6.30000000e-03,,,",
            "img_0,0,10.0,1/6,32.0,diffusion,23.000000,0.9400,0.9000,5.00000000e-03,,,",
        ]
        p = tmp_path / "results.csv"
        p.write_text(",".join(CSV_HEADER) + "\n" + "\n".join(rows) + "\n")
        return p

    def test_aggregates_by_stage(self, tmp_path, capsys):
        p = self.make_csv(tmp_path)
        assert run(["evaluate", "--csv", str(p)]) == 0
        out = capsys.readouterr().out
        assert "jscc" in out and "diffusion" in out
        assert "21.000" in out  # mean of 20 and 22

    def test_out_dir_form(self, tmp_path, capsys):
        self.make_csv(tmp_path)
        assert run(["evaluate", "--out", str(tmp_path)]) == 0

    def test_header_mismatch_rejected(self, tmp_path, capsys):
        p = tmp_path / "results.csv"
        p.write_text("a,b,c\n1,2,3\n")
        assert run(["evaluate", "--csv", str(p)]) == 2


class TestInstalledEntryPoint:
    def test_module_runs(self):
        r = subprocess.run([sys.executable, "-m", "djscc.cli", "--help"],
                           capture_output=True, text=True)
        assert r.returncode == 0
        assert "transmit" in r.stdout
        for cmd in ("train-jscc", "train-vae", "pretrain-diffusion",
                    "train-control", "sweep", "evaluate", "gen-dataset"):
            assert cmd in r.stdout

    def test_transmit_advertises_knobs(self):
        r = subprocess.run([sys.executable, "-m", "djscc.cli", "transmit",
                            "--help"], capture_output=True, text=True)
        assert r.returncode == 0
        assert "--snr-db" in r.stdout
        assert "--lambda" in r.stdout
        assert "--steps" in r.stdout
