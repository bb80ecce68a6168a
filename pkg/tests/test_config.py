import pytest
from importlib import resources

from acnn.config import ClassHead, SegmentHead, load_config, parse_config
from acnn.errors import ParseError

DESK = """
# comment
layer centroids=128 rings=0.0:0.2:8,0.2:0.4:16 features=8,8,16|16,16,32
layer centroids=32 rings=0.2:0.4:8,0.6:0.8:16 features=16,16,32|32,32,64 kernel=5
layer centroids=1 features=64,128,256
head class c=5 fc=128,64 dropout=0.5
"""


def test_parse_desk():
    cfg = parse_config(DESK)
    assert [l.centroids for l in cfg.layers] == [128, 32, 1]
    assert cfg.layers[0].rings[1].k == 16 and cfg.layers[0].rings[1].r_inner == 0.2
    assert cfg.layers[0].out_channels == 48
    assert cfg.layers[1].kernel == 5
    assert cfg.layers[2].is_global
    assert cfg.head == ClassHead(5, (128, 64), 0.5, True)
    assert cfg.task == "class" and cfg.num_outputs == 5


def test_round_trip_through_text():
    cfg = parse_config(DESK)
    again = parse_config(cfg.to_text())
    assert again == cfg and again.digest() == cfg.digest()


def test_segment_head():
    cfg = parse_config("layer centroids=4 rings=0:1:2 features=3\nlayer centroids=1 features=4\nhead segment m=3 width=16")
    assert cfg.head == SegmentHead(3, 16) and cfg.task == "segment"


@pytest.mark.parametrize(
    "text,line",
    [
        ("layer centroids=4 rings=0:1:2 features=3 colour=red\nhead class c=2", 1),
        ("layer centroids=4 features=3\nhead class c=2 lr=0.1", 2),
        ("layer centroids=4 features=3\nhead segment m=2 fc=3", 2),
        ("layer centroids=4 features=3\nnetwork x=1", 2),
        ("layer centroids=4 centroids=5 features=3\nhead class c=2", 1),
        ("layer centroids=4 rings=0:1 features=3\nhead class c=2", 1),
        ("layer centroids=4 rings=0:1:2,0.5:2:2 features=3|3\nhead class c=2", 1),
        ("layer centroids=4 rings=0:1:2 features=3|4\nhead class c=2", 1),
        ("layer centroids=4 rings=0:1:2 features=3 kernel=2\nhead class c=2", 1),
        ("layer centroids=four features=3\nhead class c=2", 1),
        ("layer centroids=4 features=3\nhead class c=2\nhead class c=3", 3),
        ("layer centroids=4 features=3\nhead blob c=2", 2),
    ],
)
def test_rejects_with_line_number(text, line):
    with pytest.raises(ParseError) as info:
        parse_config(text)
    assert info.value.line == line


def test_whole_file_errors():
    with pytest.raises(ParseError):
        parse_config("layer centroids=4 features=3")
    with pytest.raises(ParseError):
        parse_config("layer centroids=4 features=3\nlayer centroids=8 features=3\nhead class c=2")
    with pytest.raises(ParseError):
        parse_config("")


@pytest.mark.parametrize("name", ["desk3l", "acnn3l", "acnn4l", "desk_seg"])
def test_packaged_configs_parse(name):
    path = resources.files("acnn") / "configs" / f"{name}.cfg"
    cfg = load_config(str(path))
    assert cfg.layers[-1].is_global


def test_full_width_config():
    cfg = load_config(str(resources.files("acnn") / "configs" / "acnn3l.cfg"))
    l1, l2, l3 = cfg.layers
    assert (l1.centroids, l2.centroids, l3.centroids) == (512, 128, 1)
    assert [(r.r_inner, r.r_outer, r.k) for r in l1.rings] == [(0.0, 0.1, 16), (0.1, 0.2, 48)]
    assert [(r.r_inner, r.r_outer, r.k) for r in l2.rings] == [(0.1, 0.2, 16), (0.3, 0.4, 48)]
    assert l1.features == ((32, 32, 64), (64, 64, 128))
    assert l3.features == ((256, 512, 1024),)
    assert cfg.head.fc == (512, 256) and cfg.head.dropout == 0.5
