import filecmp
import os
import subprocess
import sys

import numpy as np
import pytest

from acnn import cli, data, gradcheck, network
from acnn.geometry import RingSpec, build_neighborhood, order_counterclockwise

TINY_CFG = """
layer centroids=16 rings=0.0:0.3:4,0.3:0.6:6 features=4|4
layer centroids=1 features=8
head class c=2 fc=8 dropout=0.0
"""


@pytest.fixture
def tiny(tmp_path):
    root = tmp_path / "d"
    assert cli.main(["gen-data", "--out", str(root), "--classes", "sphere,cube", "--per-class", "4",
                     "--test-per-class", "2", "--points", "48", "--seed", "1"]) == 0
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    return root, cfg


def read_record(path):
    return dict(line.split("\t", 1) for line in open(path).read().splitlines())


def test_gen_data_default_counts(tmp_path):
    root = tmp_path / "d"
    assert cli.main(["gen-data", "--out", str(root)]) == 0
    assert len(os.listdir(root / "train")) == 500 and len(os.listdir(root / "test")) == 150
    entries, names = data.read_manifest(root)
    assert len(entries) == 650 and names == list(data.SHAPES)
    rec = read_record(root / "run.tsv")
    assert rec["status"] == "ok" and rec["seed"] == "0" and rec["version"]


def test_gen_data_same_seed_same_tree(tmp_path):
    for name in ("a", "b"):
        cli.main(["gen-data", "--out", str(tmp_path / name), "--per-class", "2", "--test-per-class", "1",
                  "--points", "40", "--seed", "7", "--record", str(tmp_path / f"{name}.run")])
    for sub in ("", "train", "test"):
        a, b = tmp_path / "a" / sub, tmp_path / "b" / sub
        files = [f for f in os.listdir(a) if os.path.isfile(a / f)]
        _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
        assert not mismatch and not errors


def test_gen_data_bad_class_is_usage_error(tmp_path, capsys):
    assert cli.main(["gen-data", "--out", str(tmp_path / "x"), "--classes", "sphere,blob"]) == 2
    assert "blob" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["train"], ["frobnicate"], ["gen-data", "--out", "x", "--points", "ten"]])
def test_usage_errors(argv):
    assert cli.main(argv) == 2


def test_train_eval_saliency(tiny, tmp_path, capsys):
    root, cfg = tiny
    ckpt = tmp_path / "m.ckpt"
    assert cli.main(["train", "--data", str(root), "--config", str(cfg), "--epochs", "2", "--batch-size", "4",
                     "--out", str(ckpt), "--quiet"]) == 0
    lines = open(str(ckpt) + ".metrics.tsv").read().splitlines()
    assert lines[0] == "epoch\tsplit\tloss\toa\taac\tmiou"
    assert [l.split("\t")[:2] for l in lines[1:]] == [["0", "train"], ["0", "test"], ["1", "train"], ["1", "test"]]
    assert all(l.endswith("\t") for l in lines[1:])  # miou blank for classification
    rec = read_record(str(ckpt) + ".run.tsv")
    assert rec["status"] == "ok" and rec["config_digest"] and "time.train" in rec

    capsys.readouterr()
    assert cli.main(["eval", "--data", str(root), "--ckpt", str(ckpt)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "split\tn\tloss\toa\taac\tmiou" and out[1].startswith("test\t4\t")

    sal = tmp_path / "s.tsv"
    assert cli.main(["saliency", "--data", str(root), "--ckpt", str(ckpt), "--out", str(sal), "--limit", "1"]) == 0
    rows = open(sal).read().splitlines()
    assert rows[0] == "cloud\tpoint\tx\ty\tz\tsaliency" and len(rows) == 49
    assert all(float(r.split("\t")[-1]) >= 0 for r in rows[1:])


def test_train_is_deterministic(tiny, tmp_path):
    root, cfg = tiny
    texts = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.ckpt"
        cli.main(["train", "--data", str(root), "--config", str(cfg), "--epochs", "1", "--batch-size", "4",
                  "--seed", "5", "--out", str(out), "--quiet"])
        texts.append((open(str(out) + ".metrics.tsv").read(), open(out, "rb").read()))
    assert texts[0] == texts[1]


def test_train_zero_epochs(tiny, tmp_path):
    root, cfg = tiny
    ckpt = tmp_path / "z.ckpt"
    assert cli.main(["train", "--data", str(root), "--config", str(cfg), "--epochs", "0", "--out", str(ckpt)]) == 0
    assert open(str(ckpt) + ".metrics.tsv").read() == "epoch\tsplit\tloss\toa\taac\tmiou\n"
    init = network.ACNN(cli.resolve_config(str(cfg)), rng=network.seed_streams(0)[0])
    back = network.Checkpoint.load(ckpt)
    for k, v in init.params.items():
        assert np.array_equal(back.model.params[k], v)


def test_train_divergence_exit_code(tiny, tmp_path, monkeypatch, capsys):
    root, cfg = tiny
    monkeypatch.setattr(network.numeric, "softmax_cross_entropy", lambda lg, lb: (float("inf"), np.zeros_like(lg)))
    out = tmp_path / "d.ckpt"
    code = cli.main(["train", "--data", str(root), "--config", str(cfg), "--epochs", "1", "--out", str(out)])
    assert code == 1
    assert "TrainingDiverged" in capsys.readouterr().err
    assert read_record(str(out) + ".run.tsv")["status"] == "failed"


def test_packaged_config_by_name(tiny, tmp_path):
    root, _ = tiny
    assert cli.resolve_config("desk3l").layers[0].centroids == 128
    assert cli.main(["train", "--data", str(root), "--config", "nope", "--out", str(tmp_path / "x")]) == 2


def test_eval_missing_checkpoint(tiny, tmp_path):
    root, _ = tiny
    rec = tmp_path / "e.run"
    assert cli.main(["eval", "--data", str(root), "--ckpt", str(tmp_path / "none.ckpt"), "--record", str(rec)]) == 1
    assert read_record(rec)["status"] == "failed"


def test_ablate_table(tiny, tmp_path, capsys):
    root, cfg = tiny
    out = tmp_path / "abl.tsv"
    assert cli.main(["ablate", "--data", str(root), "--config", str(cfg), "--seeds", "0,1", "--epochs", "1",
                     "--batch-size", "4", "--out", str(out)]) == 0
    rows = open(out).read().splitlines()
    assert rows[0] == "variant\tseed\toa\taac"
    assert len(rows) == 1 + 4 * 2
    assert sorted({r.split("\t")[0] for r in rows[1:]}) == sorted(v.value for v in network.Variant)


def test_gradcheck_exit_codes(tmp_path, monkeypatch, capsys):
    rec = str(tmp_path / "g.run")
    assert cli.main(["gradcheck", "--points", "1", "--only", "dense,relu", "--record", rec]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "check\tmax_rel_err\tpass" and len(out) == 3
    monkeypatch.setitem(gradcheck.CHECKS, "dense", lambda rng: 1.0)
    assert cli.main(["gradcheck", "--points", "1", "--only", "dense", "--record", rec]) == 1
    assert cli.main(["gradcheck", "--only", "bogus", "--record", rec]) == 2


def test_inspect_matches_library(tiny, tmp_path, capsys):
    root, _ = tiny
    path = root / "train" / "sphere_0000.pts"
    rings = "0:0.5:6,0.5:1.0:8"
    assert cli.main(["inspect", "--file", str(path), "--point", "3", "--rings", rings,
                     "--record", str(tmp_path / "i.run")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split("\t")[:7] == ["ring", "position", "index", "distance", "key", "angle_deg", "padded"]
    rows = [l.split("\t") for l in lines[1:]]
    cloud = data.read_pts(path)
    specs = [RingSpec(0, 0.5, 6), RingSpec(0.5, 1.0, 8)]
    nb = build_neighborhood(cloud, 3, specs)
    for r, spec in enumerate(specs):
        mine = [x for x in rows if x[0] == str(r)]
        assert [int(x[2]) for x in mine] == nb.rings[r].tolist()
        ordered = order_counterclockwise(nb.rings[r], cloud, cloud.points[3], cloud.normals[3])
        assert [int(x[2]) for x in mine] == ordered.tolist()
        genuine = [float(x[4]) for x in mine if x[6] == "0"]
        assert all(a > b for a, b in zip(genuine, genuine[1:]))
        assert genuine
        for x in mine:
            if x[6] == "0":
                assert spec.r_inner < float(x[3]) <= spec.r_outer
    sets = [{x[2] for x in rows if x[0] == str(r)} for r in range(2)]
    assert not sets[0] & sets[1]


def test_inspect_bad_rings(tiny, tmp_path):
    root, _ = tiny
    path = str(root / "train" / "sphere_0000.pts")
    rec = str(tmp_path / "i.run")
    assert cli.main(["inspect", "--file", path, "--point", "0", "--rings", "0:0.3", "--record", rec]) == 2
    assert cli.main(["inspect", "--file", path, "--point", "999", "--rings", "0:0.3:4", "--record", rec]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "acnn.cli", "gen-data", "--out", str(tmp_path / "d"),
                           "--classes", "cone", "--per-class", "1", "--test-per-class", "0", "--points", "32"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert os.path.exists(tmp_path / "d" / "train" / "cone_0000.pts")
