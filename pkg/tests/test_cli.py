import json
import subprocess
import sys

import pytest

from tdlab.cli import main
from tdlab.experiments import EXPERIMENT_ORDER


def run_cli(args):
    return main(list(args))


def read_manifest(out_dir):
    with open(out_dir / "manifest.json") as fh:
        return json.load(fh)


def test_list_prints_every_experiment(capsys):
    assert run_cli(["list"]) == 0
    out = capsys.readouterr().out
    for name in EXPERIMENT_ORDER:
        assert name in out
    assert len(out.strip().splitlines()) == len(EXPERIMENT_ORDER)


def test_run_writes_manifest_and_artifacts(tmp_path, capsys):
    out = tmp_path / "artifacts"
    assert run_cli(["run", "two-state", "--out", str(out), "--seed", "3"]) == 0
    printed = capsys.readouterr().out.strip()
    assert printed == str(out / "manifest.json")
    manifest = read_manifest(out)
    assert manifest["experiment"] == "two-state"
    assert manifest["seed"] == 3
    assert manifest["reps"] == 1
    assert manifest["outputs"]
    for name in manifest["outputs"]:
        assert (out / name).exists()
    assert manifest["config"]["n_inits"] == 5


def test_config_overrides_are_applied(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[two-state]\nn_inits = 2\nt_end = 1.0\n")
    out = tmp_path / "out"
    assert run_cli(["run", "two-state", "--config", str(cfg), "--out", str(out)]) == 0
    manifest = read_manifest(out)
    assert manifest["config"]["n_inits"] == 2
    assert manifest["config"]["t_end"] == 1.0


def test_unknown_key_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[two-state]\nn_knits = 2\n")
    assert run_cli(["run", "two-state", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_section_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[not-an-experiment]\nx = 1\n")
    assert run_cli(["run", "two-state", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "not-an-experiment" in err


def test_unparseable_value_is_config_error(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[two-state]\nn_inits = soup\n")
    assert run_cli(["run", "two-state", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_malformed_and_missing_files_are_config_errors(tmp_path):
    broken = tmp_path / "broken.ini"
    broken.write_text("this is not an ini file\n")
    assert run_cli(["run", "two-state", "--config", str(broken), "--out", str(tmp_path / "o")]) == 2
    assert run_cli(["run", "two-state", "--config", str(tmp_path / "absent.ini"),
                    "--out", str(tmp_path / "o")]) == 2


def test_every_section_is_validated_even_if_unused(tmp_path, capsys):
    """A typo in a section for a different experiment still fails fast."""
    cfg = tmp_path / "multi.ini"
    cfg.write_text("[two-state]\nn_inits = 2\n\n[second-order]\nbogus = 1\n")
    assert run_cli(["run", "two-state", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "bogus" in capsys.readouterr().err


def test_numerical_failure_exits_three_and_names_the_error(tmp_path, capsys):
    cfg = tmp_path / "blowup.ini"
    cfg.write_text("[second-order]\nalphas = 3.0\nt_total = 300\n")
    code = run_cli(["run", "second-order", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 3
    err = capsys.readouterr().err
    assert "DivergenceDetected" in err


def test_validate_reports_ok_and_errors(tmp_path, capsys):
    good = tmp_path / "good.ini"
    good.write_text("[two-state]\nn_inits = 3\n[second-order]\ngamma = 0.5\n")
    assert run_cli(["validate", "--config", str(good)]) == 0
    assert "ok" in capsys.readouterr().out
    bad = tmp_path / "bad.ini"
    bad.write_text("[two-state]\nwhoops = 3\n")
    assert run_cli(["validate", "--config", str(bad)]) == 2


def test_unknown_experiment_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        run_cli(["run", "bogus", "--out", str(tmp_path / "o")])
    assert info.value.code == 2


def test_reruns_are_byte_identical(tmp_path):
    for experiment in ("two-state", "second-order"):
        dirs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{experiment}-{tag}"
            assert run_cli(["run", experiment, "--out", str(out), "--seed", "7"]) == 0
            dirs.append(out)
        names = read_manifest(dirs[0])["outputs"]
        assert names == read_manifest(dirs[1])["outputs"]
        for name in names:
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name


def test_reps_produce_prefixed_artifacts(tmp_path):
    out = tmp_path / "reps"
    assert run_cli(["run", "second-order", "--out", str(out), "--reps", "2"]) == 0
    manifest = read_manifest(out)
    assert manifest["reps"] == 2
    assert any(n.startswith("rep000_") for n in manifest["outputs"])
    assert any(n.startswith("rep001_") for n in manifest["outputs"])
    assert set(manifest["derived"]) == {"rep000", "rep001"}


def test_reps_change_the_draws_but_not_the_config(tmp_path):
    out = tmp_path / "r2"
    assert run_cli(["run", "second-order", "--out", str(out), "--reps", "2"]) == 0
    manifest = read_manifest(out)
    first = [n for n in manifest["outputs"] if n.startswith("rep000_")]
    paired = [n.replace("rep000_", "rep001_") for n in first]
    assert all(n in manifest["outputs"] for n in paired)
    # different rep => different RNG stream => different artifact bytes
    assert any(
        (out / a).read_bytes() != (out / b).read_bytes() for a, b in zip(first, paired)
    )


def test_verbose_goes_to_stderr_only(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TDLAB_VERBOSE", "1")
    out = tmp_path / "v"
    assert run_cli(["run", "second-order", "--out", str(out)]) == 0
    captured = capsys.readouterr()
    assert captured.out.strip() == str(out / "manifest.json")
    assert "tdlab:" in captured.err


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "tdlab.cli", "list"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "two-state" in proc.stdout
