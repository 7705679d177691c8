"""Run configuration: one INI file describing network, data, augmentation,
training schedule, evaluation, and the quantization analysis.

Every key has a default, so an empty file is a valid config; unknown
sections or keys raise, which catches typos before a long run burns time.
The learning-rate decay epochs are stored as absolute epochs out of
``total_epochs`` — when a run is shortened via ``total_steps``, the decay
points keep their fractional positions (90/140 and 120/140 by default).
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from typing import Optional

from .data import AugmentPolicy
from .evaluation import OksParams
from .network import NetworkConfig

__all__ = [
    "DataConfig",
    "TrainConfig",
    "EvalConfig",
    "AnalysisConfig",
    "RunConfig",
    "ConfigError",
    "load_config",
    "parse_config",
    "save_config",
    "config_text",
]


class ConfigError(ValueError):
    """Raised for malformed or unknown configuration entries."""


@dataclasses.dataclass
class DataConfig:
    source: str = "synthetic"          # "synthetic" | "manifest"
    manifest: str = ""
    skeleton: str = "toy"
    num_images: int = 16
    min_people: int = 1
    max_people: int = 2
    canvas_height: int = 192
    canvas_width: int = 256
    noise: float = 0.15
    seed: int = 0
    crop_margin: float = 1.25


@dataclasses.dataclass
class TrainConfig:
    batch_size: int = 8
    base_lr: float = 1e-3
    decay_factor: float = 0.1
    decay_epochs: tuple[int, ...] = (90, 120)
    total_epochs: int = 140
    total_steps: Optional[int] = None   # overrides the epoch count if set
    seed: int = 0
    sigma: Optional[float] = None       # None: derived from input height
    log_every: int = 10


@dataclasses.dataclass
class EvalConfig:
    decode: str = "subpixel"            # "subpixel" | "argmax"
    flip_average: bool = False
    flip_aligned: bool = True
    oks: str = "uniform:0.1"            # "coco" | "uniform:<k>"
    max_dets: int = 20

    def oks_params(self, num_joints: int) -> OksParams:
        if self.oks == "coco":
            if num_joints != 17:
                raise ConfigError(
                    f"oks=coco needs 17 joints, network has {num_joints}")
            return OksParams.coco17()
        if self.oks.startswith("uniform:"):
            try:
                k = float(self.oks.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad oks spec {self.oks!r}")
            return OksParams.uniform(k, num_joints)
        raise ConfigError(f"bad oks spec {self.oks!r}; "
                          "use 'coco' or 'uniform:<k>'")


@dataclasses.dataclass
class AnalysisConfig:
    strides: tuple[int, ...] = (4, 2, 1)
    samples: int = 400
    crop_size: int = 64
    seed: int = 0


@dataclasses.dataclass
class RunConfig:
    network: NetworkConfig = dataclasses.field(default_factory=NetworkConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    augment: AugmentPolicy = dataclasses.field(default_factory=AugmentPolicy)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    eval: EvalConfig = dataclasses.field(default_factory=EvalConfig)
    analysis: AnalysisConfig = dataclasses.field(default_factory=AnalysisConfig)

    def validate(self) -> None:
        self.network.validate()
        if self.data.source not in ("synthetic", "manifest"):
            raise ConfigError(f"data source must be synthetic or manifest, "
                              f"got {self.data.source!r}")
        if self.data.source == "manifest" and not self.data.manifest:
            raise ConfigError("data source is manifest but no manifest path set")
        if self.train.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.train.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")
        for e in self.train.decay_epochs:
            if not 0 < e <= self.train.total_epochs:
                raise ConfigError(
                    f"decay epoch {e} outside 1..{self.train.total_epochs}")
        if self.eval.decode not in ("subpixel", "argmax"):
            raise ConfigError(f"decode must be subpixel or argmax, "
                              f"got {self.eval.decode!r}")
        self.eval.oks_params(self.network.num_joints)


# --------------------------------------------------------------------------
# parsing

_BOOLEANS = {"true": True, "false": False, "yes": True, "no": False,
             "1": True, "0": False}


def _to_bool(text: str, key: str) -> bool:
    try:
        return _BOOLEANS[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _to_ints(text: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: expected integers, got {text!r}")


def _num(cast, text: str, key: str):
    try:
        return cast(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {cast.__name__}, got {text!r}")


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}")
    cfg = RunConfig()
    handlers = {
        "network": _parse_network,
        "data": _parse_data,
        "augment": _parse_augment,
        "train": _parse_train,
        "eval": _parse_eval,
        "analysis": _parse_analysis,
    }
    for section in parser.sections():
        if section not in handlers:
            raise ConfigError(f"unknown section [{section}]; "
                              f"have {sorted(handlers)}")
        handlers[section](cfg, dict(parser.items(section)))
    try:
        cfg.validate()
    except ValueError as exc:            # plain ValueError from sub-configs
        raise ConfigError(str(exc))
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _pop(items: dict, section: str):
    def get(key, cast=str):
        if key not in items:
            return None
        raw = items.pop(key)
        full = f"[{section}] {key}"
        if cast is bool:
            return _to_bool(raw, full)
        if cast is int or cast is float:
            return _num(cast, raw, full)
        if cast == "ints":
            return _to_ints(raw, full)
        return raw.strip()
    return get


def _reject_leftovers(items: dict, section: str) -> None:
    if items:
        raise ConfigError(f"unknown key(s) in [{section}]: "
                          f"{', '.join(sorted(items))}")


def _parse_network(cfg: RunConfig, items: dict) -> None:
    get = _pop(items, "network")
    encoder = get("encoder")
    if encoder is not None:
        cfg.network = NetworkConfig.from_preset(encoder)
    n = cfg.network
    for key, cast, attr in [
        ("variant", str, "variant"), ("block", str, "block"),
        ("base_width", int, "base_width"),
        ("num_joints", int, "num_joints"),
        ("gcb_ratio", int, "gcb_ratio"),
        ("fusion_channels", int, "fusion_channels"),
        ("gate", str, "gate"),
    ]:
        value = get(key, cast)
        if value is not None:
            setattr(n, attr, value)
    value = get("stage_blocks", "ints")
    if value is not None:
        n.stage_blocks = value
    value = get("decoder_channels", "ints")
    if value is not None:
        n.decoder_channels = value
    height = get("input_height", int)
    width = get("input_width", int)
    if (height is None) != (width is None):
        raise ConfigError("[network] set both input_height and input_width")
    if height is not None:
        n.input_size = (height, width)
    value = get("fuse_attention_logits", bool)
    if value is not None:
        n.fuse_attention_logits = value
    _reject_leftovers(items, "network")


def _parse_data(cfg: RunConfig, items: dict) -> None:
    get = _pop(items, "data")
    d = cfg.data
    for key, cast in [("source", str), ("manifest", str), ("skeleton", str),
                      ("num_images", int), ("min_people", int),
                      ("max_people", int), ("canvas_height", int),
                      ("canvas_width", int), ("noise", float),
                      ("seed", int), ("crop_margin", float)]:
        value = get(key, cast)
        if value is not None:
            setattr(d, key, value)
    _reject_leftovers(items, "data")


def _parse_augment(cfg: RunConfig, items: dict) -> None:
    get = _pop(items, "augment")
    a = cfg.augment
    for key, cast in [("enabled", bool), ("flip_prob", float),
                      ("max_rotation_deg", float), ("scale_low", float),
                      ("scale_high", float)]:
        value = get(key, cast)
        if value is not None:
            setattr(a, key, value)
    _reject_leftovers(items, "augment")


def _parse_train(cfg: RunConfig, items: dict) -> None:
    get = _pop(items, "train")
    t = cfg.train
    for key, cast in [("batch_size", int), ("base_lr", float),
                      ("decay_factor", float), ("total_epochs", int),
                      ("seed", int), ("log_every", int)]:
        value = get(key, cast)
        if value is not None:
            setattr(t, key, value)
    value = get("decay_epochs", "ints")
    if value is not None:
        t.decay_epochs = value
    value = get("total_steps", str)
    if value is not None:
        t.total_steps = None if value in ("", "none") else _num(
            int, value, "[train] total_steps")
    value = get("sigma", str)
    if value is not None:
        t.sigma = None if value in ("", "auto") else _num(
            float, value, "[train] sigma")
    _reject_leftovers(items, "train")


def _parse_eval(cfg: RunConfig, items: dict) -> None:
    get = _pop(items, "eval")
    e = cfg.eval
    for key, cast in [("decode", str), ("flip_average", bool),
                      ("flip_aligned", bool), ("oks", str),
                      ("max_dets", int)]:
        value = get(key, cast)
        if value is not None:
            setattr(e, key, value)
    _reject_leftovers(items, "eval")


def _parse_analysis(cfg: RunConfig, items: dict) -> None:
    get = _pop(items, "analysis")
    a = cfg.analysis
    value = get("strides", "ints")
    if value is not None:
        a.strides = value
    for key in ("samples", "crop_size", "seed"):
        value = get(key, int)
        if value is not None:
            setattr(a, key, value)
    _reject_leftovers(items, "analysis")


# --------------------------------------------------------------------------
# echoing


def config_text(cfg: RunConfig) -> str:
    """Serialize the effective configuration back to INI."""
    parser = configparser.ConfigParser()
    n = cfg.network
    parser["network"] = {
        "variant": n.variant,
        "block": n.block,
        "stage_blocks": ",".join(str(v) for v in n.stage_blocks),
        "base_width": str(n.base_width),
        "num_joints": str(n.num_joints),
        "input_height": str(n.input_size[0]),
        "input_width": str(n.input_size[1]),
        "decoder_channels": ",".join(str(v) for v in n.decoder_channels),
        "gcb_ratio": str(n.gcb_ratio),
        "fusion_channels": str(n.fusion_channels),
        "gate": n.gate,
        "fuse_attention_logits": str(n.fuse_attention_logits).lower(),
    }
    d = cfg.data
    parser["data"] = {
        "source": d.source, "manifest": d.manifest, "skeleton": d.skeleton,
        "num_images": str(d.num_images), "min_people": str(d.min_people),
        "max_people": str(d.max_people),
        "canvas_height": str(d.canvas_height),
        "canvas_width": str(d.canvas_width), "noise": repr(d.noise),
        "seed": str(d.seed), "crop_margin": repr(d.crop_margin),
    }
    a = cfg.augment
    parser["augment"] = {
        "enabled": str(a.enabled).lower(), "flip_prob": repr(a.flip_prob),
        "max_rotation_deg": repr(a.max_rotation_deg),
        "scale_low": repr(a.scale_low), "scale_high": repr(a.scale_high),
    }
    t = cfg.train
    parser["train"] = {
        "batch_size": str(t.batch_size), "base_lr": repr(t.base_lr),
        "decay_factor": repr(t.decay_factor),
        "decay_epochs": ",".join(str(v) for v in t.decay_epochs),
        "total_epochs": str(t.total_epochs),
        "total_steps": "none" if t.total_steps is None else str(t.total_steps),
        "seed": str(t.seed),
        "sigma": "auto" if t.sigma is None else repr(t.sigma),
        "log_every": str(t.log_every),
    }
    e = cfg.eval
    parser["eval"] = {
        "decode": e.decode, "flip_average": str(e.flip_average).lower(),
        "flip_aligned": str(e.flip_aligned).lower(), "oks": e.oks,
        "max_dets": str(e.max_dets),
    }
    an = cfg.analysis
    parser["analysis"] = {
        "strides": ",".join(str(v) for v in an.strides),
        "samples": str(an.samples), "crop_size": str(an.crop_size),
        "seed": str(an.seed),
    }
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(config_text(cfg))
