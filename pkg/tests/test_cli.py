"""Command-line behavior on tiny profiles: schemas, exit codes, reproducibility."""

import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from bode.cli import (
    BASELINE_DEFAULTS,
    BODE_DEFAULTS,
    GENERATE_DEFAULTS,
    build_parser,
    main,
    resolve_config,
    ValidationError,
)
from bode.reporting import read_json

TINY_GEN = ["generate", "--nx", "8", "--nz", "8", "--timesteps", "100"]
FAST_BASELINE = ["baseline", "--members", "2", "--epochs", "6",
                 "--train-cell-stride", "2"]
FAST_BODE = ["bode", "--members", "2", "--sobol", "2", "--iters", "4",
             "--epochs", "4", "--bo-epochs", "3", "--bo-cell-stride", "4",
             "--train-cell-stride", "2", "--acq-raw", "8", "--acq-mc", "16"]


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    assert main(TINY_GEN + ["--out", str(out), "--seed", "7"]) == 0
    return out


@pytest.fixture(scope="module")
def baseline_run(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "base"
    code = main(FAST_BASELINE + ["--data", str(tiny_dataset), "--out", str(out),
                                 "--seed", "3"])
    assert code == 0
    return out


class TestDefaults:
    def test_spec_level_defaults(self):
        assert (GENERATE_DEFAULTS["nx"], GENERATE_DEFAULTS["nz"]) == (16, 32)
        assert GENERATE_DEFAULTS["timesteps"] == 600
        assert BASELINE_DEFAULTS["members"] == 5
        assert BASELINE_DEFAULTS["epochs"] == 200
        assert (BODE_DEFAULTS["sobol"], BODE_DEFAULTS["iters"]) == (8, 30)
        assert BODE_DEFAULTS["bo_epochs"] == 60

    def test_paper_protocol_flags_parse(self):
        args = build_parser().parse_args(
            ["bode", "--members", "20", "--sobol", "24", "--iters", "75"])
        flags = {k: v for k, v in vars(args).items() if k in BODE_DEFAULTS}
        cfg = resolve_config(BODE_DEFAULTS, None, flags)
        assert (cfg["members"], cfg["sobol"], cfg["iters"]) == (20, 24, 75)

    def test_noise_flags(self):
        for level in ("0.05", "0.10"):
            args = build_parser().parse_args(["bode", "--noise", level])
            assert vars(args)["noise"] == float(level)

    def test_config_precedence(self, tmp_path):
        f = tmp_path / "cfg.json"
        f.write_text(json.dumps({"members": 9, "epochs": 42}))
        args = build_parser().parse_args(["bode", "--config", str(f),
                                          "--members", "3"])
        from bode.cli import _load_config_file
        cfg = resolve_config(BODE_DEFAULTS, _load_config_file(f),
                             {k: v for k, v in vars(args).items()
                              if k in BODE_DEFAULTS})
        assert cfg["members"] == 3     # flag beats file
        assert cfg["epochs"] == 42     # file beats default
        assert cfg["sobol"] == 8       # default

    def test_unknown_config_key_rejected(self):
        with pytest.raises(ValidationError, match="unknown"):
            resolve_config(BODE_DEFAULTS, {"memberz": 5}, {})


class TestGenerate:
    def test_split_fractions_on_default_protocol(self, tiny_dataset):
        meta = read_json(tiny_dataset / "meta.json")
        sizes = {k: len(v) for k, v in meta["splits"].items()}
        assert sizes["train"] == 70 and sizes["test"] == 1 and sizes["val"] == 29
        assert (tiny_dataset / "manifest.json").exists()

    def test_byte_identical_on_same_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(TINY_GEN + ["--out", str(a), "--seed", "9"]) == 0
        assert main(TINY_GEN + ["--out", str(b), "--seed", "9"]) == 0
        names = [p.name for p in a.iterdir() if p.is_file()]
        names += [f"frames/{p.name}" for p in (a / "frames").iterdir()]
        match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        assert not mismatch and not errors
        assert len(match) == len(names)

    def test_grid_validation_exit_code(self, tmp_path):
        assert main(["generate", "--nx", "4", "--out", str(tmp_path / "x")]) == 2

    def test_refuses_nonempty_without_force(self, tmp_path, capsys):
        out = tmp_path / "ds"
        out.mkdir()
        (out / "junk.txt").write_text("hello")
        assert main(TINY_GEN + ["--out", str(out)]) == 2
        assert "force" in capsys.readouterr().err
        assert main(TINY_GEN + ["--out", str(out), "--force"]) == 0


class TestBaseline:
    def test_report_schema(self, baseline_run):
        report = read_json(baseline_run / "report.json")
        assert report["command"] == "baseline"
        assert len(report["members"]) == 2
        for m in report["members"]:
            assert m["final_val_rmse"] > 0
        t = report["metrics"]["test"]
        assert t["rmse"] > 0 and "mean_total_std" in t
        assert (baseline_run / "predictions.csv").exists()
        assert (baseline_run / "uncertainty.csv").exists()
        assert (baseline_run / "members" / "member_00.ckpt").exists()

    def test_manifest_rerun_bit_identical(self, baseline_run, tmp_path):
        out2 = tmp_path / "rerun"
        code = main(["baseline", "--config", str(baseline_run / "manifest.json"),
                     "--out", str(out2)])
        assert code == 0
        assert (baseline_run / "report.json").read_bytes() == \
            (out2 / "report.json").read_bytes()

    def test_members_validation(self, tiny_dataset, tmp_path):
        assert main(["baseline", "--members", "1", "--data", str(tiny_dataset),
                     "--out", str(tmp_path / "r")]) == 2

    def test_missing_dataset_is_compute_failure(self, tmp_path):
        assert main(FAST_BASELINE + ["--data", str(tmp_path / "missing"),
                                     "--out", str(tmp_path / "r")]) == 3


@pytest.fixture(scope="module")
def bode_run(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "bode"
    code = main(FAST_BODE + ["--data", str(tiny_dataset), "--out", str(out),
                             "--seed", "4"])
    assert code == 0
    return out


class TestBode:
    def test_report_and_trials(self, bode_run):
        report = read_json(bode_run / "report.json")
        assert report["command"] == "bode"
        assert len(report["members"]) == 2
        for m in report["members"]:
            assert "config" in m and "learning_rate" in m["config"]
        lines = (bode_run / "trials.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2 * 4  # members x iters
        recs = [json.loads(l) for l in lines]
        assert {r["phase"] for r in recs} == {"sobol", "bo"}
        for member in (0, 1):
            rmses = [r["rmse"] for r in recs if r["member"] == member]
            mins = np.minimum.accumulate([v if v is not None else np.inf
                                          for v in rmses])
            assert all(a >= b for a, b in zip(mins, mins[1:]))

    def test_running_min_in_report(self, bode_run):
        report = read_json(bode_run / "report.json")
        for trace in report["optimization"]["running_min_per_member"]:
            assert all(a >= b for a, b in zip(trace, trace[1:]))

    def test_noise_run_has_recovery_block(self, tiny_dataset, tmp_path):
        out = tmp_path / "noisy"
        code = main(FAST_BODE + ["--data", str(tiny_dataset), "--out", str(out),
                                 "--seed", "4", "--noise", "0.05"])
        assert code == 0
        report = read_json(out / "report.json")
        assert report["noise"]["sigma"] == 0.05
        assert report["noise"]["recovery_ratio"] > 0

    def test_iters_must_exceed_sobol(self, tiny_dataset, tmp_path):
        assert main(["bode", "--data", str(tiny_dataset), "--sobol", "8",
                     "--iters", "8", "--out", str(tmp_path / "r")]) == 2


class TestEvaluate:
    def test_self_comparison_zero_difference(self, baseline_run, tmp_path):
        out = tmp_path / "cmp"
        code = main(["evaluate", str(baseline_run), str(baseline_run),
                     "--out", str(out)])
        assert code == 0
        cmp_report = read_json(out / "comparison.json")
        assert all(v == 0 for v in cmp_report["difference"].values())
        for entry in cmp_report["runs"]:
            assert entry["matches_stored"] is True

    def test_recomputed_matches_stored_exactly(self, baseline_run, tmp_path):
        out = tmp_path / "cmp1"
        assert main(["evaluate", str(baseline_run), "--out", str(out)]) == 0
        entry = read_json(out / "comparison.json")["runs"][0]
        assert entry["recomputed"]["rmse"] == entry["stored"]["rmse"]
        assert entry["recomputed"]["coverage68"] == entry["stored"]["coverage68"]

    def test_missing_artifacts_explicit(self, tmp_path):
        empty = tmp_path / "empty_run"
        empty.mkdir()
        assert main(["evaluate", str(empty), "--out", str(tmp_path / "c")]) == 3

    def test_run_count_validation(self, tmp_path):
        assert main(["evaluate", "--out", str(tmp_path / "c")]) == 2


def test_jobs_flag_does_not_change_outputs(tiny_dataset, tmp_path):
    a, b = tmp_path / "j1", tmp_path / "j2"
    argv = FAST_BASELINE + ["--data", str(tiny_dataset), "--seed", "5"]
    assert main(argv + ["--out", str(a), "--jobs", "1"]) == 0
    assert main(argv + ["--out", str(b), "--jobs", "2"]) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
