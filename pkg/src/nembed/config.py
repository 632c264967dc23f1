"""Run configuration: nested dataclasses <-> flat ``section.key=value`` text."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .runtime import ChannelProfile
from .scheduler import ClusterShape
from .sgns import TrainConfig
from .walker import WalkConfig


@dataclass
class WalkSection:
    k: int = 5
    l: int = 5
    walks_per_node: int = 1
    epochs: int = 1  # distinct walk corpora; training cycles through them
    order: str = "shuffle"


@dataclass
class TrainSection:
    dim: int = 128
    negatives: int = 5
    lr: float = 0.025
    lr_decay: bool = False
    epochs: int = 1
    episodes_per_epoch: int = 1
    noise_power: float = 0.75


@dataclass
class ShapeSection:
    num_nodes: int = 1
    workers_per_node: int = 1
    subparts: int = 4
    sockets_per_node: int = 1


@dataclass
class EvalSection:
    test_frac: float = 0.01
    valid_frac: float = 0.0001
    score_mode: str = "vertex-context"


@dataclass
class ChannelSection:
    intra_latency: float = 0.0
    intra_bandwidth: float = math.inf
    cross_socket_penalty: float = 1.3
    inter_latency: float = 0.0
    inter_bandwidth: float = math.inf


@dataclass
class RunConfig:
    graph: str = ""
    graph_format: str = "text"
    undirected: bool = True
    id_width: int = 4
    output: str = "out"
    seed: int = 0
    deterministic: bool = True
    walk: WalkSection = field(default_factory=WalkSection)
    train: TrainSection = field(default_factory=TrainSection)
    shape: ShapeSection = field(default_factory=ShapeSection)
    eval: EvalSection = field(default_factory=EvalSection)
    channel: ChannelSection = field(default_factory=ChannelSection)

    def validate(self) -> "RunConfig":
        if self.graph_format not in ("text", "binary"):
            raise ValueError(f"graph_format must be text or binary, not {self.graph_format!r}")
        if self.id_width not in (4, 8):
            raise ValueError("id_width must be 4 or 8")
        if self.eval.score_mode not in ("vertex-context", "vertex-vertex"):
            raise ValueError(f"unknown eval.score_mode {self.eval.score_mode!r}")
        if self.walk.epochs < 1:
            raise ValueError("walk.epochs must be >= 1")
        # constructing the module configs runs their own checks
        self.walk_config()
        self.train_config()
        self.cluster_shape()
        self.channel_profile()
        if not (0 <= self.eval.test_frac < 1 and 0 <= self.eval.valid_frac < 1
                and self.eval.test_frac + self.eval.valid_frac < 1):
            raise ValueError("eval fractions must be in [0, 1) and sum below 1")
        return self

    def walk_config(self) -> WalkConfig:
        return WalkConfig(self.walk.k, self.walk.l, self.walk.walks_per_node, self.seed,
                          self.train.episodes_per_epoch, self.walk.order)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.dim, t.negatives, t.lr, t.epochs, self.seed, self.deterministic,
                           t.lr_decay, t.noise_power)

    def cluster_shape(self) -> ClusterShape:
        s = self.shape
        return ClusterShape(s.num_nodes, s.workers_per_node, s.subparts, s.sockets_per_node)

    def channel_profile(self) -> ChannelProfile:
        c = self.channel
        return ChannelProfile(c.intra_latency, c.intra_bandwidth, c.cross_socket_penalty,
                              c.inter_latency, c.inter_bandwidth, seed=self.seed)


def _keys(obj, prefix=""):
    for f in fields(obj):
        val = getattr(obj, f.name)
        if is_dataclass(val):
            yield from _keys(val, f"{prefix}{f.name}.")
        else:
            yield f"{prefix}{f.name}", type(val)


def config_keys() -> dict[str, type]:
    """Every settable key with its Python type, in file order."""
    return dict(_keys(RunConfig()))


def getattr_path(obj, key):
    for part in key.split("."):
        obj = getattr(obj, part)
    return obj


def _parse_value(typ, raw: str):
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def set_key(cfg: RunConfig, key: str, raw) -> RunConfig:
    keys = config_keys()
    if key not in keys:
        raise KeyError(f"unknown config key {key!r}")
    value = _parse_value(keys[key], raw) if isinstance(raw, str) else raw
    parts = key.split(".")
    if len(parts) == 1:
        return replace(cfg, **{key: value})
    section = getattr(cfg, parts[0])
    return replace(cfg, **{parts[0]: replace(section, **{parts[1]: value})})


def dumps(cfg: RunConfig, exclude=()) -> str:
    return "".join(f"{k}={_format_value(getattr_path(cfg, k))}\n" for k in config_keys() if k not in exclude)


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, ln in enumerate(text.splitlines(), 1):
        s = ln.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ValueError(f"config line {lineno}: expected key=value, got {ln!r}")
        k, _, v = s.partition("=")
        try:
            cfg = set_key(cfg, k.strip(), v)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"config line {lineno}: {exc}") from exc
    return cfg


def load(path) -> RunConfig:
    return loads(Path(path).read_text())


def save(cfg: RunConfig, path):
    Path(path).write_text(dumps(cfg))
