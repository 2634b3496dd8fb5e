import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from unitta.cli import main, verify_stream
from unitta.config import RunConfig, dump_config, load_config
from unitta.errors import InvalidConfig
from unitta.stream import Stream, generate

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_cfg(tmp_path, name="cfg.yaml", **over):
    raw = {
        "length": 600,
        "seed": 3,
        "domain": {"n": 3, "mode": "noniid", "alpha1": 0.8, "balance": "imbalanced", "beta": 2},
        "class": {"n": 3, "mode": "iid", "balance": "balanced"},
        "engine": {"eta": 0.05},
    }
    raw.update(over)
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


def sha(p):
    return hashlib.sha256(Path(p).read_bytes()).hexdigest()


def test_config_round_trip(tmp_path):
    cfg = load_config(write_cfg(tmp_path))
    again = RunConfig.from_dict(yaml.safe_load(dump_config(cfg)))
    assert again.to_dict() == cfg.to_dict()
    assert cfg.scenario.code == "nu-i1"


@pytest.mark.parametrize(
    "raw",
    [
        [1, 2],
        {"class": {"n": 3, "mode": "iid"}},
        {"domain": {"n": 3, "mode": "iid"}, "class": {"n": 3}},
        {"domain": {"n": 3, "mode": "iid"}, "class": {"n": 3, "mode": "iid"}, "colour": 1},
        {"domain": {"n": 3, "mode": "iid"}, "class": {"n": 3, "mode": "iid"}, "world": {"nois": 1}},
        {"domain": {"n": 3, "mode": "sometimes"}, "class": {"n": 3, "mode": "iid"}},
        {"domain": {"n": 3, "mode": "iid"}, "class": {"n": 3, "mode": "iid"}, "engine": {"mode": "tent"}},
        {"domain": {"n": "x", "mode": "iid"}, "class": {"n": 3, "mode": "iid"}},
    ],
)
def test_config_schema_errors(raw):
    with pytest.raises(InvalidConfig):
        RunConfig.from_dict(raw)


def test_every_grid_config_loads():
    files = sorted((CONFIGS / "grid").glob("*.yaml"))
    assert len(files) == 36
    codes = {load_config(f).scenario.code for f in files}
    assert codes == {f.stem for f in files}


def test_gen_writes_and_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    for name in ("stream.csv", "report.json", "config.yaml"):
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name)
    rows = list(csv.reader(open(tmp_path / "a" / "stream.csv")))
    assert rows[0] == ["step", "domain_id", "class_id", "sample_id"]
    assert len(rows) == 601
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    for name, digest in manifest["files"].items():
        assert sha(tmp_path / "a" / name) == digest
    assert manifest["resolved_seeds"]["stream"] == 3


def test_manifest_replay(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["gen", "--config", str(cfg), "--seed", "11", "--out", str(tmp_path / "a")])
    main(["gen", "--config", str(tmp_path / "a" / "config.yaml"), "--out", str(tmp_path / "b")])
    assert sha(tmp_path / "a" / "stream.csv") == sha(tmp_path / "b" / "stream.csv")


def test_seed_override(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["gen", "--config", str(cfg), "--seed", "99", "--out", str(tmp_path / "a")])
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["resolved_seeds"]["stream"] == 99


def test_gen_constraint_violation(tmp_path, capsys):
    assert main(["gen", "--config", str(CONFIGS / "infeasible.yaml"), "--out", str(tmp_path / "x")]) == 1
    err = capsys.readouterr().err
    assert "(1 - alpha1) * beta" in err and "(n - 1) / n" in err
    assert main(["gen", "--config", str(CONFIGS / "infeasible.yaml"), "--quota", "--out", str(tmp_path / "q")]) == 0
    assert main(["verify", "--config", str(CONFIGS / "infeasible.yaml"), "--quota", "--stream", str(tmp_path / "q" / "stream.csv")]) == 0


def test_missing_config(tmp_path):
    assert main(["gen", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 1


@pytest.mark.slow
def test_verify_long_stream(tmp_path):
    cfg = write_cfg(tmp_path, length=200_000)
    main(["gen", "--config", str(cfg), "--out", str(tmp_path / "g")])
    stream = tmp_path / "g" / "stream.csv"
    assert main(["verify", "--config", str(cfg), "--stream", str(stream), "--out", str(tmp_path / "v")]) == 0
    checks = json.loads((tmp_path / "v" / "verify.json").read_text())["checks"]
    assert all(c["ok"] for c in checks)


def test_verify_shuffled_fails():
    cfg = RunConfig.from_dict(
        {
            "length": 200_000,
            "domain": {"n": 3, "mode": "noniid", "alpha1": 0.8, "balance": "balanced"},
            "class": {"n": 3, "mode": "iid"},
        }
    )
    s = generate(cfg.scenario)
    assert all(c["ok"] for c in verify_stream(s, cfg))
    perm = np.random.default_rng(0).permutation(len(s))
    shuffled = Stream(s.domain[perm], s.cls[perm], s.sample_id[perm], s.n_domains, s.n_classes)
    failed = {c["name"] for c in verify_stream(shuffled, cfg) if not c["ok"]}
    assert "domain_self_transition" in failed
    assert "domain_marginal" not in failed


def test_verify_quota_deviation(tmp_path):
    cfg = write_cfg(tmp_path, quota=True)
    main(["gen", "--config", str(cfg), "--out", str(tmp_path / "g")])
    path = tmp_path / "g" / "stream.csv"
    assert main(["verify", "--config", str(cfg), "--stream", str(path)]) == 0
    lines = path.read_text().splitlines()
    step, d, k, sid = lines[-1].split(",")
    lines[-1] = ",".join([step, str((int(d) + 1) % 3), k, sid])
    path.write_text("\n".join(lines) + "\n")
    assert main(["verify", "--config", str(cfg), "--stream", str(path)]) == 2


def test_verify_truncated_csv(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["gen", "--config", str(cfg), "--out", str(tmp_path / "g")])
    path = tmp_path / "g" / "stream.csv"
    text = path.read_text()
    path.write_text(text[: len(text) // 2 - 3])
    assert main(["verify", "--config", str(cfg), "--stream", str(path)]) == 1
    path.write_text("")
    assert main(["verify", "--config", str(cfg), "--stream", str(path)]) == 1


def test_run_writes_metrics_and_bank(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    metrics = json.loads((tmp_path / "r" / "metrics.json").read_text())
    bank = json.loads((tmp_path / "r" / "bank.json").read_text())
    assert metrics["mode"] == "unitta" and metrics["setting"] == "nu-i1"
    assert 0 <= metrics["error"] <= 100
    assert bank["n_domains"] == metrics["n_domains"]
    first = sha(tmp_path / "r" / "metrics.json")
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")])
    assert sha(tmp_path / "r" / "metrics.json") == first


def test_run_mode_flag(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["run", "--config", str(cfg), "--mode", "test_baseline", "--out", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "metrics.json").read_text())["mode"] == "test_baseline"


def test_run_unknown_mode(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["run", "--config", str(cfg), "--mode", "tent", "--out", str(tmp_path / "r")]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "tent" in err


def test_bad_flag_exits_1():
    with pytest.raises(SystemExit) as e:
        main(["sweep", "--grid", "12", "--out", "x"])
    assert e.value.code == 1


def test_sweep_grid(tmp_path):
    # n=3 violates the leaving-probability constraint at the grid's alpha1/beta
    cfg = write_cfg(tmp_path, length=300, domain={"n": 5, "mode": "iid"}, **{"class": {"n": 4, "mode": "iid"}})
    out = tmp_path / "s"
    args = ["sweep", "--config", str(cfg), "--grid", "24", "--mode", "test_baseline", "--workers", "4", "--out", str(out)]
    assert main(args) == 0
    rows = list(csv.reader(open(out / "grid.csv")))
    assert rows[0] == ["setting", "test_baseline", "status"]
    assert len(rows) == 1 + 24 + 1
    assert rows[-1][0] == "average"
    first = sha(out / "grid.csv")
    assert main(args) == 0
    assert sha(out / "grid.csv") == first


def test_sweep_36_and_failed_rows(tmp_path):
    # 3 samples cannot cover 3 x 3 quota cells, so quota settings fail
    cfg = write_cfg(tmp_path, length=3)
    out = tmp_path / "s"
    assert main(["sweep", "--config", str(cfg), "--grid", "36", "--mode", "test_baseline", "--out", str(out)]) == 3
    rows = list(csv.reader(open(out / "grid.csv")))
    assert len(rows) == 1 + 36 + 1
    assert any(r[-1].startswith("failed") for r in rows[1:-1])
    assert any(r[-1] == "ok" for r in rows[1:-1])


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "unitta", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen" in r.stdout
