"""WNet: sinogram denoiser, trainable-filter FBP layer and image denoiser."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .fbp import SpectralFilter, default_pad_len, fbp_scale, make_filter
from .geometry import Geometry, check_upsampling
from .unet import UNetConfig, init_unet, unet_forward
from .upsample import enhance


@dataclass(frozen=True)
class WNetConfig:
    sdm: UNetConfig = field(default_factory=UNetConfig)
    idm: UNetConfig = field(default_factory=UNetConfig)
    pad_len: int | None = None
    huber_delta: float = 1.0


@dataclass
class WNetParams:
    sdm: dict[str, ad.Tensor]
    rem_filter: ad.Tensor
    idm: dict[str, ad.Tensor]

    def modules(self) -> dict[str, dict[str, ad.Tensor]]:
        return {"sdm": self.sdm, "rem": {"filter": self.rem_filter}, "idm": self.idm}

    def named(self) -> dict[str, ad.Tensor]:
        out = {}
        for mod, group in self.modules().items():
            for name, t in group.items():
                out[f"{mod}/{name}"] = t
        return out

    def learned_filter(self) -> SpectralFilter:
        w = np.asarray(self.rem_filter.value, dtype=np.float64)
        return SpectralFilter(w, 2 * (w.size - 1), "learned")

    def astype(self, dtype) -> "WNetParams":
        def conv(group):
            return {k: ad.Tensor(v.value.astype(dtype), True) for k, v in group.items()}

        return WNetParams(
            conv(self.sdm), ad.Tensor(self.rem_filter.value.astype(dtype), True), conv(self.idm)
        )

    def copy(self) -> "WNetParams":
        return self.astype(self.rem_filter.dtype)


def init_wnet(cfg: WNetConfig, g_K: Geometry, seed: int, dtype=np.float32) -> WNetParams:
    """Fresh networks (Xavier) and a Ram-Lak initialized reconstruction filter."""
    rng = np.random.default_rng(seed)
    sdm = init_unet(cfg.sdm, rng, dtype)
    idm = init_unet(cfg.idm, rng, dtype)
    pad = cfg.pad_len or default_pad_len(g_K.n_detectors)
    w = make_filter("ramlak", pad).weights.astype(dtype)
    return WNetParams(sdm, ad.Tensor(w, requires_grad=True), idm)


def _as_batch(a, dtype) -> np.ndarray:
    """Bring a 2-D array or a stack of them to (N, 1, H, W)."""
    a = np.asarray(a, dtype=dtype)
    if a.ndim == 2:
        return a[None, None]
    if a.ndim == 3:
        return a[:, None]
    return a


def sdm_forward(params: WNetParams, y_enh, y_k, C: int, cfg: WNetConfig) -> ad.Tensor:
    out = unet_forward(params.sdm, y_enh, cfg.sdm)
    return ad.consensus_layer(out, y_k, C)


def rem_forward(y, rem_filter, g_K: Geometry) -> ad.Tensor:
    y = ad.as_tensor(y)
    filtered = ad.filter_layer(y, rem_filter)
    return ad.scale(ad.backproject_layer(filtered, g_K), fbp_scale(g_K))


def idm_forward(params: WNetParams, x, cfg: WNetConfig) -> ad.Tensor:
    return unet_forward(params.idm, x, cfg.idm)


def wnet_from_enhanced(params, y_enh, y_k, g_k, g_K, cfg) -> ad.Tensor:
    C = check_upsampling(g_k, g_K)
    s = sdm_forward(params, y_enh, y_k, C, cfg)
    return idm_forward(params, rem_forward(s, params.rem_filter, g_K), cfg)


def wnet_forward(params: WNetParams, y_k, g_k: Geometry, g_K: Geometry, cfg: WNetConfig):
    """Full pipeline from a sparse sinogram; returns an (N, 1, rows, cols) tensor."""
    dtype = params.rem_filter.dtype
    y_k = _as_batch(y_k, dtype)
    y_enh = enhance(y_k, g_k, g_K).astype(dtype, copy=False)
    return wnet_from_enhanced(params, y_enh, y_k, g_k, g_K, cfg)


def reconstruct(params: WNetParams, y_k, g_k, g_K, cfg) -> np.ndarray:
    """Inference in double precision; returns images shaped like the input batch."""
    p64 = params.astype(np.float64)
    y_k = np.asarray(y_k, dtype=np.float64)
    out = wnet_forward(p64, y_k, g_k, g_K, cfg).value
    return out[0, 0] if y_k.ndim == 2 else out[:, 0]


def sinogram_loss(params, y_enh, y_k, y_K, C, cfg) -> ad.Tensor:
    return ad.huber_loss(sdm_forward(params, y_enh, y_k, C, cfg), y_K, cfg.huber_delta)


def filter_loss(params, y_sdm, x_label, g_K, cfg) -> ad.Tensor:
    return ad.huber_loss(rem_forward(y_sdm, params.rem_filter, g_K), x_label, cfg.huber_delta)


def image_loss(params, x_rem, x_label, cfg) -> ad.Tensor:
    return ad.huber_loss(idm_forward(params, x_rem, cfg), x_label, cfg.huber_delta)
