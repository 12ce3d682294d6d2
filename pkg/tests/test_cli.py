import json

import pytest

from rayknight.cli import EXIT_FAIL, EXIT_PASS, EXIT_RUNTIME, EXIT_USAGE, main
from rayknight.config import OUTPUT_DIR_ENV

SMALL = ["--dt", str(2.0 ** -8), "--n-paths", "400", "--x", "0.5", "1", "--t", "0.25",
         "--T_max", "40"]


def run(tmp_path, *argv):
    return main([*argv, "--output-dir", str(tmp_path)])


class TestUsage:
    def test_unknown_lemma(self, tmp_path, capsys):
        assert run(tmp_path, "verify-lemma", "nope") == EXIT_USAGE
        assert "chapman-kolmogorov" in capsys.readouterr().err

    def test_too_few_samples(self, tmp_path, capsys):
        assert run(tmp_path, "verify-theorem", "--n_paths", "5") == EXIT_USAGE
        assert "insufficient samples" in capsys.readouterr().err

    def test_short_ladder(self, tmp_path):
        assert run(tmp_path, "convergence-study", "--ladder", "0.01", "0.005") == EXIT_USAGE

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("model: {beta: 1}\n")
        assert run(tmp_path, "verify-theorem", "--config", str(cfg)) == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        assert run(tmp_path, "verify-theorem", "--config", str(tmp_path / "no.yaml")) == EXIT_USAGE

    def test_no_command(self):
        assert main([]) == EXIT_USAGE


class TestRuns:
    def test_runtime_error_when_level_not_reached(self, tmp_path, capsys):
        code = run(tmp_path, "verify-theorem", *SMALL, "--s_max", "0.001")
        assert code == EXIT_RUNTIME
        assert "runtime error" in capsys.readouterr().err

    def test_small_theorem_passes(self, tmp_path):
        # the S_x check uses a fixed KS distance, so it needs a few thousand paths
        args = [*SMALL, "--dt", str(2.0 ** -12), "--n-paths", "3000"]
        assert run(tmp_path, "verify-theorem", *args) == EXIT_PASS
        rep = json.loads((tmp_path / "ks_report.json").read_text())
        assert set(rep["marginals"]) == {"x=0.5,t=0.25", "x=1,t=0.25"}
        assert rep["meta"]["config_hash"]
        assert (tmp_path / "qq_x0.5_t0.25.csv").exists()
        assert json.loads((tmp_path / "manifest.json").read_text())["passed"] is True

    def test_negative_control_fails(self, tmp_path, capsys):
        code = run(tmp_path, "verify-theorem", *SMALL, "--n-paths", "2000", "--gamma-feller", "4")
        assert code == EXIT_FAIL
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert not man["passed"]
        assert {f["marginal"] for f in man["failures"]} & {"x=0.5,t=0.25", "x=1,t=0.25"}
        assert "FAIL ks-holm" in capsys.readouterr().err

    def test_lemma_writes_report(self, tmp_path):
        code = run(tmp_path, "verify-lemma", "comparison", "--dt", str(2.0 ** -8))
        assert code == EXIT_PASS
        rep = json.loads((tmp_path / "lemma_comparison.json").read_text())
        assert rep["details"]["violations"] == 0

    def test_output_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env_out"))
        assert main(["verify-lemma", "monotone-field", "--dt", str(2.0 ** -8),
                     "--n-paths", "50"]) == EXIT_PASS
        assert (tmp_path / "env_out" / "lemma_monotone-field.json").exists()

    def test_flag_beats_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env_out"))
        assert run(tmp_path / "flag_out", "verify-lemma", "monotone-field", "--dt",
                   str(2.0 ** -8), "--n-paths", "50") == EXIT_PASS
        assert (tmp_path / "flag_out" / "lemma_monotone-field.json").exists()
        assert not (tmp_path / "env_out").exists()

    def test_outputs_independent_of_workers(self, tmp_path):
        outs = []
        for w in ("1", "2"):
            d = tmp_path / f"w{w}"
            assert run(d, "verify-theorem", *SMALL, "--n-paths", "100", "--workers", w) in (EXIT_PASS, EXIT_FAIL)
            outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        assert outs[0] == outs[1]
