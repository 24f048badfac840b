"""Encoder-decoder denoiser built on the autodiff primitives."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

DOWN_MODES = ("pool", "stride")
UP_MODES = ("transpose", "nearest")


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 3
    base_channels: int = 16
    in_channels: int = 1
    out_channels: int = 1
    residual: bool = True
    down: str = "pool"
    up: str = "transpose"
    slope: float = 0.01

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be >= 1")
        if self.down not in DOWN_MODES or self.up not in UP_MODES:
            raise ValueError(f"unknown sampling mode {self.down!r}/{self.up!r}")
        if self.residual and self.in_channels != self.out_channels:
            raise ValueError("residual output needs in_channels == out_channels")

    def to_dict(self) -> dict:
        return asdict(self)


def _xavier(rng, shape, fan_in, fan_out, dtype):
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return (rng.standard_normal(shape) * std).astype(dtype)


def _bias(rng, n, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=n).astype(dtype)


def init_unet(cfg: UNetConfig, rng, dtype=np.float32) -> dict[str, ad.Tensor]:
    """Xavier-normal kernels and uniform biases, in a fixed name order."""
    shapes: list[tuple[str, tuple]] = []

    def conv(name, cin, cout, k=3):
        shapes.append((f"{name}.w", (cout, cin, k, k)))
        shapes.append((f"{name}.b", (cout,)))

    ch = [cfg.base_channels * 2**level for level in range(cfg.depth + 1)]
    cin = cfg.in_channels
    for level in range(cfg.depth):
        conv(f"enc{level}.0", cin, ch[level])
        conv(f"enc{level}.1", ch[level], ch[level])
        if cfg.down == "stride":
            conv(f"down{level}", ch[level], ch[level])
        cin = ch[level]
    conv("mid.0", cin, ch[cfg.depth])
    conv("mid.1", ch[cfg.depth], ch[cfg.depth])
    for level in reversed(range(cfg.depth)):
        if cfg.up == "transpose":
            shapes.append((f"up{level}.w", (ch[level + 1], ch[level], 2, 2)))
            shapes.append((f"up{level}.b", (ch[level],)))
        else:
            conv(f"up{level}", ch[level + 1], ch[level], k=1)
        conv(f"dec{level}.0", 2 * ch[level], ch[level])
        conv(f"dec{level}.1", ch[level], ch[level])
    conv("head", ch[0], cfg.out_channels, k=1)

    params = {}
    for name, shape in shapes:
        if name.endswith(".w"):
            if name.startswith("up") and cfg.up == "transpose":
                fan_in = shape[0] * shape[2] * shape[3]
                fan_out = shape[1] * shape[2] * shape[3]
            else:
                fan_in = shape[1] * shape[2] * shape[3]
                fan_out = shape[0] * shape[2] * shape[3]
            value = _xavier(rng, shape, fan_in, fan_out, dtype)
        else:
            value = _bias(rng, shape[0], fan_in, dtype)  # fan_in of the preceding kernel
        params[name] = ad.Tensor(value, requires_grad=True)
    return params


def unet_forward(params: dict[str, ad.Tensor], x, cfg: UNetConfig) -> ad.Tensor:
    """Map an (N, C, H, W) batch to an (N, out_channels, H, W) batch."""
    x = ad.as_tensor(x)
    H, W = x.shape[-2:]
    if H % 2**cfg.depth or W % 2**cfg.depth:
        raise ValueError(f"spatial dims {(H, W)} must be divisible by {2**cfg.depth}")

    def block(name, h, stride=1, padding=1):
        h = ad.conv2d(h, params[f"{name}.w"], params[f"{name}.b"], stride=stride, padding=padding)
        return ad.leaky_relu(h, cfg.slope)

    skips = []
    h = ad.to_channels_last(x)
    for level in range(cfg.depth):
        h = block(f"enc{level}.1", block(f"enc{level}.0", h))
        skips.append(h)
        h = block(f"down{level}", h, stride=2) if cfg.down == "stride" else ad.max_pool2(h)
    h = block("mid.1", block("mid.0", h))
    for level in reversed(range(cfg.depth)):
        if cfg.up == "transpose":
            h = ad.conv_transpose2d(h, params[f"up{level}.w"], params[f"up{level}.b"])
        else:
            h = ad.conv2d(ad.nearest_upsample2(h), params[f"up{level}.w"], params[f"up{level}.b"])
        h = ad.concat([h, skips[level]], axis=-1)
        h = block(f"dec{level}.1", block(f"dec{level}.0", h))
    out = ad.to_channels_first(ad.conv2d(h, params["head.w"], params["head.b"]))
    return ad.add(out, x) if cfg.residual else out


def count_parameters(params: dict[str, ad.Tensor]) -> int:
    return sum(p.value.size for p in params.values())
