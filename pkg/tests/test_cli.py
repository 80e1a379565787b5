import json

import pytest

from expstable.cli import EXIT_OK, EXIT_REJECTED, EXIT_USAGE, ConfigError, ExperimentConfig, build_parser, config_from_args, main


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_ppp_passes_and_writes(tmp_path, capsys):
    code, out, _ = run(["ppp", "--seed", "1", "--replicas", "5000", "--output-dir", str(tmp_path)], capsys)
    assert code == EXIT_OK and "PASS" in out
    assert {"maxima.csv", "config.json", "summary.json"} <= {p.name for p in tmp_path.iterdir()}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert all(c["passed"] for c in summary["checks"])


def test_control_is_rejected(capsys):
    code, out, _ = run(["stability", "--seed", "3", "--replicas", "3000", "--decoration", "gaussian_control"],
                       capsys)
    assert code == EXIT_REJECTED and "FAIL" in out


@pytest.mark.parametrize("args, field", [
    (["dppp", "--seed", "1", "--window-lo", "2", "--window-hi", "1"], "window.lo"),
    (["dppp"], "seed"),
    (["dppp", "--seed", "1", "--decoration", "nope"], "decoration.name"),
    (["dppp", "--seed", "1", "--param", "bogus=3"], "decoration.params"),
    (["dppp", "--seed", "1", "--param", "novalue"], "decoration.params"),
    (["bbm", "--seed", "1", "--t", "-1"], "t"),
    (["stability", "--seed", "1", "--alpha", "0.5"], "alpha"),
    (["bbm", "--seed", "1", "--t", "3", "--checkpoints", "2,1"], "checkpoints"),
])
def test_usage_errors_name_the_field(args, field, capsys):
    code, _, err = run(args, capsys)
    assert code == EXIT_USAGE
    assert f"error: {field}" in err


def test_help_shows_defaults():
    text = build_parser().subcommand_parsers["cumulant"].format_help()
    assert "--mc-inner" in text and "default: 20000" in text
    assert "default: 100000" in text


def test_yaml_config_and_override(tmp_path):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text("seed: 5\nreplicas: 2000\nwindow:\n  lo: -3\ndecoration:\n  name: finite_cluster\n"
                        "  params:\n    k: 2\n")
    cfg = config_from_args(["dppp", "--config", str(cfg_file)])
    assert (cfg.seed, cfg.replicas, cfg.window_lo, cfg.decoration) == (5, 2000, -3.0, "finite_cluster")
    assert cfg.decoration_params == {"k": 2}
    cfg = config_from_args(["dppp", "--config", str(cfg_file), "--replicas", "100", "--param", "k=3"])
    assert cfg.replicas == 100 and cfg.decoration_params == {"k": 3} and cfg.seed == 5


def test_yaml_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\nwindow: [1, 2\n")
    code, _, err = run(["dppp", "--config", str(bad)], capsys)
    assert code == EXIT_USAGE and "line" in err
    unknown = tmp_path / "unknown.yaml"
    unknown.write_text("seed: 1\ncolour: red\n")
    code, _, err = run(["dppp", "--config", str(unknown)], capsys)
    assert code == EXIT_USAGE and "colour" in err


def test_fresh_seed_is_reported(capsys):
    code, _, err = run(["dppp", "--fresh-seed", "--replicas", "200"], capsys)
    assert code == EXIT_OK and "fresh seed" in err


def test_config_validation_direct():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig("dppp", seed=1, replicas=0).validate()
    assert info.value.field == "replicas"


def test_canonicalize_offset(capsys):
    args = ["canonicalize", "--seed", "0", "--decoration", "two_point", "--n-pool", "5000", "--replicas", "5000"]
    assert run(args, capsys)[0] == EXIT_OK
    assert run(args + ["--m-offset", "0.1"], capsys)[0] == EXIT_REJECTED


def test_intensity_flags_growing(capsys):
    code, out, _ = run(["intensity", "--seed", "0", "--decoration", "growing", "--replicas", "2000"], capsys)
    assert "non-finite" in out or "nonfinite" in out.replace("-", "")
