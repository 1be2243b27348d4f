import csv
import dataclasses
import json
import subprocess
import sys

import pytest

from qdac import cli

SMALL = ["--override", "total_steps=600", "--override", "warmup_steps=200",
         "--override", "hidden=8", "--override", "batch_size=8", "--override", "log_every=200"]


def manifest(out, sub, seed=0):
    return json.loads((out / sub / str(seed) / "manifest.json").read_text())


def test_unknown_key_reports_line(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nseed = 3\nbogus = 1\n")
    assert cli.run(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert f"{cfg}:3: unknown key 'bogus'" in capsys.readouterr().err


@pytest.mark.parametrize("override", ["gamma=1.5", "hidden=a,b", "relabel=maybe", "env=walker",
                                      "mode=SAC", "grid_per_dim=1", "noequals"])
def test_bad_values_exit_2(tmp_path, override):
    assert cli.run(["verify", "--out", str(tmp_path), "--override", override]) == cli.EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert cli.run(["verify", "--config", str(tmp_path / "nope")]) == cli.EXIT_CONFIG


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("hidden = 16, 8\nlevels = 1, 0.5\nlambda0 = none\nrelabel = false  # off\n")
    c = cli.load_config(cfg, ["seed=4"], out="o")
    assert c.hidden == (16, 8) and c.levels == (1.0, 0.5) and c.lambda0 is None
    assert c.relabel is False and c.seed == 4 and c.output_dir == "o"


def test_profile_without_checkpoint(tmp_path):
    assert cli.run(["profile", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_verify_writes_csv_and_manifest(tmp_path):
    args = ["verify", "--out", str(tmp_path), "--override", "verify_instances=10",
            "--override", "verify_skills=2"]
    assert cli.run(args) == cli.EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "verify" / "0" / "verify.csv")))
    assert len(rows) == 20 and all(r["holds"] == "true" for r in rows)
    assert list(rows[0]) == ["instance_id", "seed", "S", "A", "d", "gamma", "lhs", "rhs",
                             "epsilon", "holds"]
    m = manifest(tmp_path, "verify")
    assert m["status"] == "ok" and m["artifacts"] == ["verify.csv"]
    assert len(m["config_hash"]) == 64 and m["git_describe"]


def test_gradcheck(tmp_path):
    assert cli.run(["gradcheck", "--out", str(tmp_path), "--override",
                    "gradcheck_cases=3"]) == cli.EXIT_OK
    lines = (tmp_path / "gradcheck" / "0" / "gradcheck.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * len(cli.GRADCHECK_FAMILIES)


def test_config_hash_tracks_config():
    a = cli.load_config(None, ["lr=0.001"])
    b = cli.load_config(None, ["lr=0.002"])
    assert a.digest() != b.digest() and a.digest() == cli.load_config(None, ["lr=1e-3"]).digest()
    # every field takes part, including the output directory
    base = cli.load_config()
    for f in dataclasses.fields(base):
        v = getattr(base, f.name)
        other = (not v if isinstance(v, bool) else v + 1 if isinstance(v, (int, float))
                 else (*v, 1) if isinstance(v, tuple) else f"{v}x")
        changed = dataclasses.replace(base, **{f.name: other})
        assert changed.digest() != base.digest(), f.name


def test_train_twice_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert cli.run(["train", "--out", str(tmp_path / name), *SMALL]) == cli.EXIT_OK
    la = (tmp_path / "a" / "train" / "0" / "train_log.csv").read_bytes()
    lb = (tmp_path / "b" / "train" / "0" / "train_log.csv").read_bytes()
    assert la == lb and la.count(b"\n") == 4


def test_pipeline_profile_adapt_hier(tmp_path):
    out = str(tmp_path)
    assert cli.run(["train", "--out", out, *SMALL]) == cli.EXIT_OK
    ev = ["--override", "grid_per_dim=3", "--override", "n_rollouts=2"]
    assert cli.run(["profile", "--out", out, *SMALL, *ev]) == cli.EXIT_OK
    s0 = json.loads((tmp_path / "profile" / "0" / "scores.json").read_text())
    assert s0["iqm"] is None and s0["n_replications"] == 1 and s0["distance_score"] <= 0
    for name in ("records.csv", "distance_profile.csv", "performance_profile.csv",
                 "heatmap.csv"):
        assert (tmp_path / "profile" / "0" / name).exists()
    ck = str(tmp_path / "train" / "0" / "checkpoint")
    assert cli.run(["profile", "--out", out, "--seed", "1", *SMALL, *ev,
                    "--override", f"checkpoint={ck}"]) == cli.EXIT_OK
    s1 = json.loads((tmp_path / "profile" / "1" / "scores.json").read_text())
    assert s1["n_replications"] == 2 and s1["ci"][0] <= s1["iqm"] <= s1["ci"][1]
    assert cli.run(["adapt", "--out", out, *SMALL, *ev, "--override", "levels=1,0"]) == 0
    lines = (tmp_path / "adapt" / "0" / "adapt.csv").read_text().splitlines()
    assert len(lines) == 3
    assert cli.run(["adapt", "--out", out, *SMALL, "--override",
                    "perturbation=gravity_scale"]) == cli.EXIT_CONFIG
    assert cli.run(["hier", "--out", out, *SMALL, "--override", "meta_steps=50"]) == 0
    summary = json.loads((tmp_path / "hier" / "0" / "summary.json").read_text())
    assert set(summary) == {"wall_x", "final_x_meta", "final_x_fixed"}


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qdac", "verify", "--out", str(tmp_path),
                           "--override", "verify_instances=2"], capture_output=True)
    assert proc.returncode == 0
    proc = subprocess.run([sys.executable, "-m", "qdac", "verify", "--override", "x=1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "unknown key" in proc.stderr


@pytest.mark.parametrize("name", ["point_velocity.cfg", "hopper_lite.cfg"])
def test_shipped_configs_parse(name):
    from pathlib import Path
    cfg = cli.load_config(Path(__file__).parent.parent / "configs" / name)
    assert cfg.env == name.removesuffix(".cfg")
