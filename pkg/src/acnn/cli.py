"""``acnn`` command-line entry point.

Every command writes plain TSV and a run record (``key<TAB>value`` lines)
next to its main artifact. Exit codes: 0 success, 1 runtime failure, 2 usage
error.
"""

import argparse
import math
import os
import shlex
import subprocess
import sys
import time
from importlib import resources

import numpy as np

from . import __version__, data, gradcheck, network
from .checkpoint import atomic_write_bytes
from .config import load_config, parse_config
from .errors import AcnnError, InvalidArgument
from .geometry import (
    PointCloud,
    RingSpec,
    angle_keys_batch,
    build_neighborhood,
    estimate_normals,
    project_to_tangent,
)
from .network import Checkpoint, HyperParams, Variant

METRIC_COLUMNS = ("epoch", "split", "loss", "oa", "aac", "miou")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def version_string():
    """``git describe`` of the source tree when available, else the package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=5, check=True,
        )
        desc = out.stdout.strip()
        if desc[:1].isdigit() or desc.startswith("v"):
            return desc
        if desc:
            return f"{__version__}+g{desc}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class RunRecord:
    def __init__(self, argv):
        self.fields = {"command": shlex.join(["acnn", *argv]), "version": version_string(), "seed": "",
                       "config_digest": "", "status": "running"}
        self.timings = {}
        self.t0 = time.perf_counter()
        self.fields["started"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.path = None

    def time(self, name, seconds):
        self.timings[name] = self.timings.get(name, 0.0) + seconds

    def write(self, status):
        if self.path is None:
            return
        self.fields["status"] = status
        self.fields["wall_seconds"] = f"{time.perf_counter() - self.t0:.3f}"
        lines = [f"{k}\t{v}" for k, v in self.fields.items()]
        lines += [f"time.{k}\t{v:.3f}" for k, v in self.timings.items()]
        parent = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(parent, exist_ok=True)
        atomic_write_bytes(self.path, ("\n".join(lines) + "\n").encode("utf-8"))


class Timer:
    def __init__(self, record, name):
        self.record, self.name = record, name

    def __enter__(self):
        self.t = time.perf_counter()

    def __exit__(self, *exc):
        self.record.time(self.name, time.perf_counter() - self.t)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}" if math.isfinite(v) else repr(v)
    return str(v)


def _tsv(rows, columns):
    out = ["\t".join(columns)]
    out += ["\t".join(_fmt(r.get(c)) for c in columns) for r in rows]
    return "\n".join(out) + "\n"


def _write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def resolve_config(name):
    """A config file path, or the name of a packaged config (e.g. ``desk3l``)."""
    if os.path.exists(name):
        return load_config(name)
    stem = name[:-4] if name.endswith(".cfg") else name
    res = resources.files("acnn") / "configs" / f"{stem}.cfg"
    if res.is_file():
        return parse_config(res.read_text(encoding="utf-8"), path=str(res))
    raise UsageError(f"config {name!r}: no such file or packaged config")


def _with_estimated_normals(ds, k=10):
    clouds = [PointCloud(c.points, estimate_normals(c, k), c.labels) for c in ds.clouds]
    return data.Dataset(clouds, ds.labels, ds.class_names, ds.paths)


def _load(root, split, estimate, k=10):
    ds = data.load_split(root, split)
    return _with_estimated_normals(ds, k) if estimate else ds


def _parse_rings(text):
    rings = []
    for part in text.split(","):
        bits = part.split(":")
        if len(bits) != 3:
            raise UsageError(f"ring {part!r} must look like r_inner:r_outer:k")
        try:
            rings.append(RingSpec(float(bits[0]), float(bits[1]), int(bits[2])))
        except (ValueError, InvalidArgument) as exc:
            raise UsageError(f"ring {part!r}: {exc}") from None
    return rings


def _seed_list(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


# ----------------------------------------------------------------- commands


def cmd_gen_data(args, rec):
    classes = [c for c in args.classes.split(",") if c]
    bad = [c for c in classes if c not in data.SHAPES]
    if bad or not classes:
        raise UsageError(f"unknown class name(s) {bad}; choose from {','.join(data.SHAPES)}")
    if args.per_class < 0 or args.test_per_class < 0:
        raise UsageError("per-class counts must be non-negative")
    if args.points < 32:
        raise UsageError("--points must be at least 32")
    rec.fields["seed"] = args.seed
    rec.path = args.record or os.path.join(args.out, "run.tsv")
    with Timer(rec, "generate"):
        entries = data.generate_dataset(args.out, classes, args.per_class, args.test_per_class, args.points,
                                        args.seed, args.segmented)
    print(f"wrote {len(entries)} clouds to {args.out}")
    return 0


def _hyper(args):
    if args.epochs < 0:
        raise UsageError("--epochs must be >= 0")
    if args.batch_size < 2:
        raise UsageError("--batch-size must be >= 2")
    return HyperParams(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                       decay_every=args.lr_decay_every, augment=not args.no_augment)


def cmd_train(args, rec):
    rec.path = args.record or args.out + ".run.tsv"
    cfg = resolve_config(args.config)
    hp = _hyper(args)
    rec.fields["seed"] = args.seed
    rec.fields["config_digest"] = cfg.digest()
    rec.fields["variant"] = args.variant
    with Timer(rec, "load"):
        train_set = _load(args.data, "train", args.estimate_normals)
        test_set = _load(args.data, "test", args.estimate_normals) if not args.no_test else None
    if test_set is not None and len(test_set) == 0:
        test_set = None
    metrics_path = args.metrics or args.out + ".metrics.tsv"
    rows = []

    def on_epoch(new_rows):
        rows.extend(new_rows)
        _write_text(metrics_path, _tsv(rows, METRIC_COLUMNS))
        if not args.quiet:
            print("\t".join(f"{r['split']} loss={r['loss']:.4f} oa={r['oa']:.4f}" for r in new_rows),
                  f"(epoch {new_rows[0]['epoch']})", file=sys.stderr)

    _write_text(metrics_path, _tsv([], METRIC_COLUMNS))
    with Timer(rec, "train"):
        result = network.train(train_set, cfg, hp, seed=args.seed, variant=args.variant,
                               test_set=test_set, on_epoch=on_epoch)
    with Timer(rec, "save"):
        result.checkpoint.save(args.out)
    rec.fields["checkpoint"] = args.out
    rec.fields["metrics"] = metrics_path
    return 0


def cmd_eval(args, rec):
    rec.path = args.record or args.ckpt + f".eval-{args.split}.run.tsv"
    ckpt = Checkpoint.load(args.ckpt)
    rec.fields["config_digest"] = ckpt.model.base_config.digest()
    ds = _load(args.data, args.split, args.estimate_normals)
    with Timer(rec, "eval"):
        res = network.evaluate(ds, ckpt)
    row = {"split": args.split, "n": len(ds), "loss": res["loss"], "oa": res["oa"], "aac": res["aac"],
           "miou": res["miou"] if ckpt.model.config.task == "segment" else None}
    sys.stdout.write(_tsv([row], ("split", "n", "loss", "oa", "aac", "miou")))
    return 0


def cmd_ablate(args, rec):
    seeds = _seed_list(args.seeds)
    cfg = resolve_config(args.config)
    hp = _hyper(args)
    rec.path = args.record or (args.out + ".run.tsv" if args.out else os.path.join(args.data, "ablate.run.tsv"))
    rec.fields["seed"] = ",".join(map(str, seeds))
    rec.fields["config_digest"] = cfg.digest()
    train_set = _load(args.data, "train", args.estimate_normals)
    test_set = _load(args.data, "test", args.estimate_normals)
    with Timer(rec, "ablate"):
        rows = network.ablate(train_set, test_set, cfg, hp, seeds,
                              on_run=lambda r: print(f"{r['variant']}\tseed={r['seed']}\toa={r['oa']:.4f}",
                                                     file=sys.stderr))
    text = _tsv(rows, ("variant", "seed", "oa", "aac"))
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)
    for variant in Variant:
        mean = np.mean([r["oa"] for r in rows if r["variant"] == variant.value])
        print(f"mean\t{variant.value}\t{mean:.4f}", file=sys.stderr)
    return 0


def cmd_gradcheck(args, rec):
    rec.path = args.record or "acnn-gradcheck.run.tsv"
    rec.fields["seed"] = args.seed
    names = None
    if args.only:
        names = [n for n in args.only.split(",") if n]
        bad = [n for n in names if n not in gradcheck.CHECKS]
        if bad:
            raise UsageError(f"unknown check(s) {bad}; choose from {','.join(gradcheck.CHECKS)}")
    if args.points < 1:
        raise UsageError("--points must be >= 1")
    with Timer(rec, "gradcheck"):
        errs = gradcheck.run_all(args.seed, args.points, names)
    ok = True
    lines = ["check\tmax_rel_err\tpass"]
    for name, err in errs.items():
        passed = err < gradcheck.THRESHOLD
        ok &= passed
        lines.append(f"{name}\t{err:.3e}\t{'yes' if passed else 'no'}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0 if ok else 1


def _angle_from_key(key):
    """Counterclockwise angle in degrees encoded by an ordering key."""
    if key >= -1.0:
        return math.degrees(math.acos(min(1.0, key)))
    return 360.0 - math.degrees(math.acos(max(-1.0, min(1.0, -key - 2.0))))


def cmd_inspect(args, rec):
    rec.path = args.record or "acnn-inspect.run.tsv"
    rings = _parse_rings(args.rings)
    cloud = data.read_pts(args.file)
    if not 0 <= args.point < len(cloud):
        raise UsageError(f"--point {args.point} outside [0, {len(cloud)})")
    if args.estimate_normals or cloud.normals is None:
        if cloud.normals is None and not args.estimate_normals:
            raise UsageError(f"{args.file} has no normals; pass --estimate-normals")
        cloud = PointCloud(cloud.points, estimate_normals(cloud, args.k_normals), cloud.labels)
    nb = build_neighborhood(cloud, args.point, rings, start=args.start)
    q = cloud.points[args.point]
    lines = ["ring\tposition\tindex\tdistance\tkey\tangle_deg\tpadded\tpx\tpy\tpz"]
    for r, (order, count) in enumerate(zip(nb.rings, nb.counts)):
        keys = angle_keys_batch(cloud.points, q[None], nb.normal[None], order[None], np.zeros(1, np.int64))[0]
        genuine_seen = set()
        for pos, (idx, key) in enumerate(zip(order, keys)):
            padded = count == 0 or idx in genuine_seen
            genuine_seen.add(int(idx))
            proj = project_to_tangent(cloud.points[idx], q, nb.normal)
            dist = float(np.linalg.norm(cloud.points[idx] - q))
            lines.append(f"{r}\t{pos}\t{idx}\t{dist:.9g}\t{key:.9g}\t{_angle_from_key(float(key)):.6f}\t"
                         f"{int(padded)}\t{proj[0]:.9g}\t{proj[1]:.9g}\t{proj[2]:.9g}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_saliency(args, rec):
    rec.path = args.record or args.out + ".run.tsv"
    ckpt = Checkpoint.load(args.ckpt)
    rec.fields["config_digest"] = ckpt.model.base_config.digest()
    ds = _load(args.data, args.split, args.estimate_normals)
    picked = range(len(ds)) if args.limit is None else range(min(args.limit, len(ds)))
    lines = ["cloud\tpoint\tx\ty\tz\tsaliency"]
    with Timer(rec, "saliency"):
        for ci in picked:
            cloud = ds.clouds[ci]
            label = int(ds.labels[ci]) if ds.labels is not None and args.true_label else None
            s = network.saliency(cloud, ckpt, label=label)
            name = ds.paths[ci] if ds.paths else str(ci)
            for pi, (p, v) in enumerate(zip(cloud.points, s)):
                lines.append(f"{name}\t{pi}\t{p[0]:.9g}\t{p[1]:.9g}\t{p[2]:.9g}\t{v:.9g}")
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


# ------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _train_flags(p):
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--lr-decay-every", type=int, default=20, help="epochs between x0.7 learning-rate steps")
    p.add_argument("--no-augment", action="store_true")


def build_parser():
    p = _Parser(prog="acnn", description="Annular convolution point-cloud toolkit.")
    p.add_argument("--version", action="version", version=f"acnn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--record", help="run-record path (default: next to the main output)")
        return sp

    g = common(sub.add_parser("gen-data", help="write a synthetic dataset"))
    g.add_argument("--out", required=True)
    g.add_argument("--classes", default=",".join(data.SHAPES))
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--test-per-class", type=int, default=30)
    g.add_argument("--points", type=int, default=256)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--segmented", action="store_true", help="part-labeled cylinders instead of classes")
    g.set_defaults(func=cmd_gen_data)

    t = common(sub.add_parser("train", help="train a network"))
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True, help="config file or packaged name (desk3l, desk_seg, ...)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="metrics TSV (default: <out>.metrics.tsv)")
    t.add_argument("--variant", choices=[v.value for v in Variant], default="full")
    t.add_argument("--estimate-normals", action="store_true")
    t.add_argument("--no-test", action="store_true", help="skip per-epoch test evaluation")
    t.add_argument("--quiet", action="store_true")
    _train_flags(t)
    t.set_defaults(func=cmd_train)

    e = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--split", choices=["train", "test"], default="test")
    e.add_argument("--estimate-normals", action="store_true")
    e.set_defaults(func=cmd_eval)

    a = common(sub.add_parser("ablate", help="train all four variants per seed"))
    a.add_argument("--data", required=True)
    a.add_argument("--config", required=True)
    a.add_argument("--seeds", default="0,1,2,3,4")
    a.add_argument("--out", help="also write the table here")
    a.add_argument("--estimate-normals", action="store_true")
    _train_flags(a)
    a.set_defaults(func=cmd_ablate)

    c = common(sub.add_parser("gradcheck", help="finite-difference gradient suite"))
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--points", type=int, default=20, help="random generic points per check")
    c.add_argument("--only", help="comma-separated subset of checks")
    c.set_defaults(func=cmd_gradcheck)

    i = common(sub.add_parser("inspect", help="dump one neighborhood as TSV"))
    i.add_argument("--file", required=True)
    i.add_argument("--point", type=int, required=True)
    i.add_argument("--rings", required=True, help="r_in:r_out:k[,...]")
    i.add_argument("--start", type=int, default=0)
    i.add_argument("--estimate-normals", action="store_true")
    i.add_argument("--k-normals", type=int, default=10)
    i.set_defaults(func=cmd_inspect)

    s = common(sub.add_parser("saliency", help="per-point gradient magnitudes"))
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=["train", "test"], default="test")
    s.add_argument("--limit", type=int)
    s.add_argument("--true-label", action="store_true", help="use the ground-truth class instead of the prediction")
    s.add_argument("--estimate-normals", action="store_true")
    s.set_defaults(func=cmd_saliency)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    rec = RunRecord(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"acnn: error: {exc}", file=sys.stderr)
        return 2
    try:
        code = args.func(args, rec)
    except UsageError as exc:
        print(f"acnn {args.command}: error: {exc}", file=sys.stderr)
        rec.write("usage-error")
        return 2
    except (AcnnError, OSError) as exc:
        print(f"acnn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        rec.write("failed")
        return 1
    rec.write("ok" if code == 0 else "failed")
    return code


if __name__ == "__main__":
    sys.exit(main())
