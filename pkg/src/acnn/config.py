"""Network configuration objects and their line-oriented text format.

::

    # comment
    layer centroids=128 rings=0.0:0.2:8,0.2:0.4:16 features=8,8,16|16,16,32 [kernel=3]
    layer centroids=1 features=64,128,256
    head class c=5 fc=128,64 dropout=0.5 [bn=1]
    head segment m=2 width=64

A ``layer`` without ``rings`` is the global 1x1 layer: every input point is
grouped around a single centroid and only one width list is allowed.
"""

import hashlib
from dataclasses import dataclass, field

from .errors import ParseError
from .geometry import RingSpec

LAYER_KEYS = {"centroids", "rings", "features", "kernel"}
CLASS_KEYS = {"c", "fc", "dropout", "bn"}
SEGMENT_KEYS = {"m", "width"}


@dataclass(frozen=True)
class LayerConfig:
    centroids: int
    rings: tuple = ()
    features: tuple = ()  # one width tuple per ring; a single tuple for a global layer
    kernel: int = 3

    def __post_init__(self):
        if self.centroids < 1:
            raise ValueError("centroids must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {self.kernel}")
        if self.is_global:
            if len(self.features) != 1:
                raise ValueError("a global layer takes exactly one width list")
        elif len(self.features) != len(self.rings):
            raise ValueError(f"{len(self.rings)} rings but {len(self.features)} width lists")
        for widths in self.features:
            if not widths or any(w < 1 for w in widths):
                raise ValueError("feature widths must be positive")
        for a, b in zip(self.rings, self.rings[1:]):
            if a.r_outer > b.r_inner:
                raise ValueError(f"rings overlap: ({a.r_inner}, {a.r_outer}] and ({b.r_inner}, {b.r_outer}]")

    @property
    def is_global(self):
        return not self.rings

    @property
    def out_channels(self):
        return sum(w[-1] for w in self.features)


@dataclass(frozen=True)
class ClassHead:
    classes: int
    fc: tuple = (512, 256)
    dropout: float = 0.5
    bn: bool = True


@dataclass(frozen=True)
class SegmentHead:
    parts: int
    width: int = 128


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple
    head: object = field(default=None)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("need at least one layer")
        counts = [l.centroids for l in self.layers]
        if any(a <= b for a, b in zip(counts, counts[1:])):
            raise ValueError(f"centroid counts must strictly decrease, got {counts}")
        if self.head is None:
            raise ValueError("missing head line")

    @property
    def task(self):
        return "segment" if isinstance(self.head, SegmentHead) else "class"

    @property
    def num_outputs(self):
        return self.head.parts if self.task == "segment" else self.head.classes

    def to_text(self):
        return format_config(self)

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def replace_kernels(self, k):
        layers = tuple(
            LayerConfig(l.centroids, l.rings, l.features, k if not l.is_global else l.kernel) for l in self.layers
        )
        return NetworkConfig(layers, self.head)


def _ints(text):
    return tuple(int(v) for v in text.split(","))


def _kv(tokens, allowed, lineno):
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep or not val:
            raise ParseError(f"expected key=value, got {tok!r}", lineno)
        if key not in allowed:
            raise ParseError(f"unknown key {key!r}", lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", lineno)
        out[key] = val
    return out


def _parse_layer(tokens, lineno):
    kv = _kv(tokens, LAYER_KEYS, lineno)
    if "centroids" not in kv or "features" not in kv:
        raise ParseError("layer needs centroids= and features=", lineno)
    rings = []
    if "rings" in kv:
        for spec in kv["rings"].split(","):
            parts = spec.split(":")
            if len(parts) != 3:
                raise ParseError(f"ring must be rin:rout:k, got {spec!r}", lineno)
            rings.append(RingSpec(float(parts[0]), float(parts[1]), int(parts[2])))
    features = tuple(_ints(group) for group in kv["features"].split("|"))
    return LayerConfig(int(kv["centroids"]), tuple(rings), features, int(kv.get("kernel", 3)))


def _parse_head(tokens, lineno):
    if not tokens:
        raise ParseError("head needs a kind (class or segment)", lineno)
    kind, rest = tokens[0], tokens[1:]
    if kind == "class":
        kv = _kv(rest, CLASS_KEYS, lineno)
        if "c" not in kv:
            raise ParseError("class head needs c=", lineno)
        fc = _ints(kv["fc"]) if "fc" in kv else (512, 256)
        return ClassHead(int(kv["c"]), fc, float(kv.get("dropout", 0.5)), kv.get("bn", "1") not in ("0", "false"))
    if kind == "segment":
        kv = _kv(rest, SEGMENT_KEYS, lineno)
        if "m" not in kv:
            raise ParseError("segment head needs m=", lineno)
        return SegmentHead(int(kv["m"]), int(kv.get("width", 128)))
    raise ParseError(f"unknown head kind {kind!r}", lineno)


def parse_config(text, path=None):
    layers, head = [], None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, *tokens = line.split()
        try:
            if word == "layer":
                layers.append(_parse_layer(tokens, lineno))
            elif word == "head":
                if head is not None:
                    raise ParseError("more than one head line", lineno)
                head = _parse_head(tokens, lineno)
            else:
                raise ParseError(f"unknown directive {word!r}", lineno)
        except ParseError as exc:
            exc.path = path
            raise
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from exc
    try:
        return NetworkConfig(tuple(layers), head)
    except ValueError as exc:
        raise ParseError(str(exc), None, path) from exc


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), path)


def format_config(cfg):
    lines = []
    for l in cfg.layers:
        parts = [f"layer centroids={l.centroids}"]
        if l.rings:
            parts.append("rings=" + ",".join(f"{r.r_inner!r}:{r.r_outer!r}:{r.k}" for r in l.rings))
        parts.append("features=" + "|".join(",".join(map(str, w)) for w in l.features))
        if l.kernel != 3:
            parts.append(f"kernel={l.kernel}")
        lines.append(" ".join(parts))
    h = cfg.head
    if isinstance(h, SegmentHead):
        lines.append(f"head segment m={h.parts} width={h.width}")
    else:
        fc = ",".join(map(str, h.fc))
        lines.append(f"head class c={h.classes} fc={fc} dropout={h.dropout!r} bn={int(h.bn)}")
    return "\n".join(lines) + "\n"
