import json

import pytest

from expstable.cli import main

RUNS = {
    "ppp": ["ppp", "--seed", "9", "--replicas", "3000"],
    "dppp": ["dppp", "--seed", "9", "--replicas", "500", "--decoration", "staircase"],
    "cumulant": ["cumulant", "--seed", "9", "--replicas", "2000", "--mc-inner", "500", "--window-lo", "-3"],
    "canonicalize": ["canonicalize", "--seed", "9", "--decoration", "two_point", "--n-pool", "1000",
                     "--replicas", "1000"],
    "bbm": ["bbm", "--seed", "9", "--replicas", "200", "--t", "4", "--checkpoints", "1,2,4"],
}


def snapshot(directory):
    files = {}
    for path in sorted(directory.iterdir()):
        data = path.read_bytes()
        if path.name == "summary.json":
            obj = json.loads(data)
            assert "generated_at" in obj
            obj.pop("generated_at")
            data = json.dumps(obj, sort_keys=True).encode()
        files[path.name] = data
    return files


@pytest.mark.parametrize("name", sorted(RUNS))
def test_rerun_is_byte_identical(name, tmp_path, capsys):
    out = tmp_path / "out"
    main(RUNS[name] + ["--output-dir", str(out)])
    a = snapshot(out)
    main(RUNS[name] + ["--output-dir", str(out)])
    b = snapshot(out)
    capsys.readouterr()
    assert a.keys() == b.keys() and any(k.endswith(".csv") for k in a)
    for key in a:
        assert a[key] == b[key], key


def test_worker_count_does_not_change_output(tmp_path, capsys):
    args = RUNS["dppp"]
    main(args + ["--workers", "1", "--output-dir", str(tmp_path / "one")])
    main(args + ["--workers", "2", "--output-dir", str(tmp_path / "two")])
    capsys.readouterr()
    a, b = snapshot(tmp_path / "one"), snapshot(tmp_path / "two")
    a.pop("config.json"), b.pop("config.json")
    assert a == b
