import json
import subprocess
import sys

import pytest

from jointclock.cli import main
from jointclock.config import DEFAULT_REPS, DEFAULT_SEED, FAST_REPS, ConfigError, load_config, parse_config
from jointclock.experiments import REGISTRY

DECLARED = REGISTRY["estimator-profile"].declared()


def test_empty_file_gives_defaults(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("")
    spec = parse_config(cfg, "estimator-profile", declared=DECLARED)
    assert (spec.seed, spec.reps, spec.workers, spec.fast, spec.params) == (DEFAULT_SEED, DEFAULT_REPS, 1, False, {})
    assert parse_config(None, "estimator-profile", {"fast": True}).reps == FAST_REPS


def test_file_values_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('seed = 7\nreps = 50\n[params]\nprotocol = "single"\nN = 200\n')
    spec = parse_config(cfg, "estimator-profile", {"seed": 9}, {"N": "300"}, DECLARED)
    assert spec.seed == 9 and spec.reps == 50
    assert spec.params == {"protocol": "single", "N": 300}


def test_unknown_keys_are_errors(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("sede = 7\n")
    with pytest.raises(ConfigError, match="sede"):
        load_config(cfg)
    cfg.write_text("[params]\nNN = 3\n")
    with pytest.raises(ConfigError, match="NN"):
        parse_config(cfg, "estimator-profile", declared=DECLARED)
    cfg.write_text('experiment = "allan-vs-T"\n')
    with pytest.raises(ConfigError):
        parse_config(cfg, "estimator-profile")


def test_malformed_toml_reports_line(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("seed = 1\nreps = = 2\n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(cfg)


def test_type_errors():
    with pytest.raises(ConfigError):
        parse_config(None, "estimator-profile", param_flags={"N": "ten"}, declared=DECLARED)
    with pytest.raises(ConfigError):
        parse_config(None, "estimator-profile", param_flags={"N": "10.5"}, declared=DECLARED)
    with pytest.raises(ConfigError):
        parse_config(None, "estimator-profile", {"reps": 0})


def test_cli_estimator_profile(tmp_path, capsys):
    out = tmp_path / "prof.csv"
    code = main(["estimator-profile", "--N", "100", "--n-theta", "5", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "theta,bias,variance,mse"
    assert len(lines) == 6
    meta = json.loads(out.with_suffix(".json").read_text())
    for key in ("params", "seed", "reps", "workers", "fast", "version", "started", "runtime_s", "results"):
        assert key in meta
    assert meta["params"]["N"] == 100


def test_cli_underscore_alias(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["estimator-profile", "--n_theta", "3", "--N", "50", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 4


def test_cli_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-experiment"])
    assert exc.value.code == 2
    cfg = tmp_path / "bad.toml"
    cfg.write_text("bogus = 1\n")
    with pytest.raises(SystemExit) as exc:
        main(["estimator-profile", "--config", str(cfg)])
    assert exc.value.code == 2
    assert main(["estimator-profile", "--protocol", "quad", "--out", str(tmp_path / "x.csv")]) == 2


def test_cli_output_identical_across_workers(tmp_path):
    outs = []
    for w in (1, 2):
        out = tmp_path / f"w{w}.csv"
        args = ["allan-vs-cycles", "--reps", "1200", "--gamma-T", "0.25", "--tau-over-T", "4,40",
                "--seed", "5", "--workers", str(w), "--out", str(out)]
        assert main(args) == 0
        outs.append(out.read_text())
    assert outs[0] == outs[1]


def test_console_script_module_entry(tmp_path):
    out = tmp_path / "m.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "jointclock.cli", "estimator-profile", "--n-theta", "3", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
