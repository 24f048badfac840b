"""Run configuration stored as an INI file with one section per module."""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from io import StringIO

from .geometry import DeskConfig
from .phantoms import DatasetSpec
from .training import TrainConfig
from .unet import UNetConfig
from .wnet import WNetConfig

GEOMETRY_KEYS = {
    "size": "image",
    "detectors": "n_detectors",
    "views": "sparse_views",
    "upsample_factor": "upsample_factor",
    "full_view_factor": "full_view_factor",
    "detector_span": "detector_span",
}
DATASET_KEYS = ("n_train", "n_val", "n_test", "augment")
TRAIN_KEYS = ("jump_epochs", "joint_epochs", "lr", "beta1", "beta2", "eps", "batch_size", "dtype")
NET_KEYS = ("depth", "base_channels", "down", "up", "slope", "residual")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WlsTvConfig:
    lam: float = 1.0
    iters: int = 250
    step: float | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    desk: DeskConfig = field(default_factory=DeskConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    wls_tv: WlsTvConfig = field(default_factory=WlsTvConfig)


def _convert(raw: str, like, key: str):
    kind = type(like)
    try:
        if kind is bool:
            return {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}[
                raw.strip().lower()
            ]
        if like is None:
            return None if raw.strip().lower() in ("", "none") else float(raw)
        return kind(raw)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad value {raw!r} for {key}") from exc


def _section(parser, name: str, defaults: dict, keymap: dict) -> dict:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in keymap:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        field_name = keymap[key]
        out[field_name] = _convert(raw, defaults[field_name], f"{name}.{key}")
    return out


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    """Read an INI run file (or defaults) and apply flat ``section.key`` overrides."""
    parser = configparser.ConfigParser()
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} not found")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        sec, key = dotted.split(".")
        if not parser.has_section(sec):
            parser.add_section(sec)
        parser.set(sec, key, str(value))
    known = {"run", "geometry", "dataset", "train", "network", "wls_tv"}
    for sec in parser.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")

    base = RunConfig()
    seed = _section(parser, "run", {"seed": 0}, {"seed": "seed"}).get("seed", 0)
    desk_d = dataclasses.asdict(base.desk)
    geo = _section(parser, "geometry", desk_d, GEOMETRY_KEYS)
    ds_d = {k: getattr(base.dataset, k) for k in DATASET_KEYS}
    ds = _section(parser, "dataset", ds_d, {k: k for k in DATASET_KEYS})
    tr_d = {k: getattr(base.train, k) for k in TRAIN_KEYS}
    tr = _section(parser, "train", tr_d, {k: k for k in TRAIN_KEYS})
    net_d = {k: getattr(base.train.wnet.sdm, k) for k in NET_KEYS}
    net = _section(parser, "network", {**net_d, "huber_delta": 1.0},
                   {**{k: k for k in NET_KEYS}, "huber_delta": "huber_delta"})
    huber = net.pop("huber_delta", 1.0)
    wls_d = dataclasses.asdict(base.wls_tv)
    wls = _section(parser, "wls_tv", wls_d, {k: k for k in wls_d})
    try:
        desk = DeskConfig(**{**desk_d, **geo})
        unet = UNetConfig(**net)
        wnet = WNetConfig(sdm=unet, idm=unet, huber_delta=huber)
        return RunConfig(
            seed=seed,
            desk=desk,
            dataset=DatasetSpec(seed=seed, desk=desk, **ds),
            train=TrainConfig(seed=seed, wnet=wnet, **tr),
            wls_tv=WlsTvConfig(**wls),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: RunConfig) -> str:
    """Render a RunConfig back to INI text that load_config reads unchanged."""
    parser = configparser.ConfigParser()
    parser["run"] = {"seed": str(cfg.seed)}
    parser["geometry"] = {k: str(getattr(cfg.desk, f)) for k, f in GEOMETRY_KEYS.items()}
    parser["dataset"] = {k: str(getattr(cfg.dataset, k)) for k in DATASET_KEYS}
    parser["train"] = {k: str(getattr(cfg.train, k)) for k in TRAIN_KEYS}
    net = {k: str(getattr(cfg.train.wnet.sdm, k)) for k in NET_KEYS}
    parser["network"] = {**net, "huber_delta": str(cfg.train.wnet.huber_delta)}
    parser["wls_tv"] = {k: str(v) for k, v in dataclasses.asdict(cfg.wls_tv).items()}
    buf = StringIO()
    parser.write(buf)
    return buf.getvalue()
