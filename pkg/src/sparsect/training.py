"""Round-robin WNet training with per-module Adam, and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .geometry import DeskConfig, Geometry, check_upsampling
from .tensorio import tensor_from_bytes, tensor_to_bytes
from .unet import UNetConfig
from .upsample import enhance
from .wnet import (
    WNetConfig,
    WNetParams,
    filter_loss,
    image_loss,
    init_wnet,
    rem_forward,
    sdm_forward,
    sinogram_loss,
    wnet_from_enhanced,
)

log = logging.getLogger(__name__)

PHASES = ("sdm", "rem", "idm", "joint")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    jump_epochs: int = 5
    joint_epochs: int = 20
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    seed: int = 0
    dtype: str = "float32"
    wnet: WNetConfig = field(default_factory=WNetConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        w = dict(d.pop("wnet", {}))
        wnet = WNetConfig(
            sdm=UNetConfig(**w.pop("sdm", {})), idm=UNetConfig(**w.pop("idm", {})), **w
        )
        return cls(wnet=wnet, **d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class AdamMoments:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, ad.Tensor]) -> "AdamMoments":
        return cls(
            {k: np.zeros_like(p.value) for k, p in params.items()},
            {k: np.zeros_like(p.value) for k, p in params.items()},
        )


def adam_step(params, grads, state: AdamMoments, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p.value = p.value - (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.value.dtype)
    return state


@dataclass
class TrainState:
    params: WNetParams
    optim: dict[str, AdamMoments]
    log: list[tuple[str, int, float]] = field(default_factory=list)
    epochs_done: dict[str, int] = field(default_factory=lambda: {p: 0 for p in PHASES})


@dataclass
class PreparedData:
    """Training arrays in network layout (N, 1, H, W) and the working dtype."""

    y_k: np.ndarray
    y_enh: np.ndarray
    y_K: np.ndarray
    x_full: np.ndarray

    def __len__(self):
        return self.y_k.shape[0]


def prepare(samples, g_k: Geometry, g_K: Geometry, dtype=np.float32) -> PreparedData:
    """Stack samples and run the fixed geometry-aware upsampling once."""
    if not samples:
        raise TrainingError("empty dataset")
    y_k = np.stack([s.y_k for s in samples]).astype(np.float64)
    y_enh = enhance(y_k, g_k, g_K)
    stack = lambda a: np.ascontiguousarray(a[:, None], dtype=dtype)  # noqa: E731
    return PreparedData(
        stack(y_k),
        stack(y_enh),
        stack(np.stack([s.y_K for s in samples])),
        stack(np.stack([s.x_full for s in samples])),
    )


def _batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _frozen(fn, data_len, batch_size):
    """Evaluate a no-grad map over the dataset in fixed-order batches."""
    parts = [fn(np.arange(i, min(i + batch_size, data_len))) for i in range(0, data_len, batch_size)]
    return np.concatenate(parts, axis=0)


def _detached(params: WNetParams) -> WNetParams:
    return WNetParams(
        {k: ad.Tensor(v.value) for k, v in params.sdm.items()},
        ad.Tensor(params.rem_filter.value),
        {k: ad.Tensor(v.value) for k, v in params.idm.items()},
    )


def sdm_outputs(params, data: PreparedData, C, cfg: WNetConfig, batch_size=16):
    frozen = _detached(params)
    return _frozen(
        lambda idx: sdm_forward(frozen, data.y_enh[idx], data.y_k[idx], C, cfg).value,
        len(data),
        batch_size,
    )


def rem_outputs(params, y_sdm, g_K, batch_size=16):
    w = ad.Tensor(params.rem_filter.value)
    return _frozen(lambda idx: rem_forward(y_sdm[idx], w, g_K).value, y_sdm.shape[0], batch_size)


def phase_losses(params, data: PreparedData, g_k, g_K, cfg: WNetConfig, batch_size=16):
    """Mean L_s, L_r and L_i of the current parameters over a dataset."""
    C = check_upsampling(g_k, g_K)
    frozen = _detached(params)
    y_sdm = sdm_outputs(frozen, data, C, cfg, batch_size)
    x_rem = rem_outputs(frozen, y_sdm, g_K, batch_size)
    out = {"sdm": 0.0, "rem": 0.0, "idm": 0.0}
    n = len(data)
    for i in range(0, n, batch_size):
        idx = np.arange(i, min(i + batch_size, n))
        w = len(idx) / n
        out["sdm"] += w * float(ad.huber_loss(y_sdm[idx], data.y_K[idx], cfg.huber_delta).value)
        out["rem"] += w * float(ad.huber_loss(x_rem[idx], data.x_full[idx], cfg.huber_delta).value)
        out["idm"] += w * float(image_loss(frozen, x_rem[idx], data.x_full[idx], cfg).value)
    return out


def train(
    data: PreparedData,
    g_k: Geometry,
    g_K: Geometry,
    config: TrainConfig = TrainConfig(),
    on_epoch_end=None,
    on_phase_end=None,
    state: TrainState | None = None,
) -> TrainState:
    """Jump-start each module alone, then fine-tune all three on the image loss.

    ``on_epoch_end(phase, epoch, mean_loss, seconds, state)`` and
    ``on_phase_end(phase, state)`` are optional hooks.
    """
    C = check_upsampling(g_k, g_K)
    if len(data) == 0:
        raise TrainingError("empty dataset")
    dtype = np.dtype(config.dtype)
    cfg = config.wnet
    if state is None:
        params = init_wnet(cfg, g_K, config.seed, dtype)
        optim = {m: AdamMoments.zeros_like(g) for m, g in params.modules().items()}
        state = TrainState(params, optim)
    params = state.params
    shuffle = np.random.default_rng([config.seed, 1])
    betas = (config.beta1, config.beta2)

    def step(modules: tuple[str, ...], loss: ad.Tensor):
        for group in params.modules().values():
            for t in group.values():
                t.grad = None
        ad.backward(loss)
        for mod in modules:
            group = params.modules()[mod]
            grads = {k: t.grad for k, t in group.items() if t.grad is not None}
            adam_step(group, grads, state.optim[mod], config.lr, betas, config.eps)

    def run_phase(phase, modules, epochs, batch_loss):
        for _ in range(epochs):
            t0 = time.perf_counter()
            total, count = 0.0, 0
            for b, idx in enumerate(_batches(len(data), config.batch_size, shuffle)):
                loss = batch_loss(idx)
                val = float(loss.value)
                if not math.isfinite(val):
                    raise TrainingError(
                        f"non-finite loss in phase {phase}, epoch "
                        f"{state.epochs_done[phase] + 1}, batch {b}"
                    )
                step(modules, loss)
                total += val * len(idx)
                count += len(idx)
            state.epochs_done[phase] += 1
            mean_loss = total / count
            state.log.append((phase, state.epochs_done[phase], mean_loss))
            seconds = time.perf_counter() - t0
            log.info("%s epoch %d loss %.6g (%.1fs)", phase, state.epochs_done[phase],
                     mean_loss, seconds)
            if on_epoch_end is not None:
                on_epoch_end(phase, state.epochs_done[phase], mean_loss, seconds, state)
        if on_phase_end is not None:
            on_phase_end(phase, state)

    # Phase 1: sinogram denoiser against the dense label sinogram.
    run_phase(
        "sdm",
        ("sdm",),
        config.jump_epochs,
        lambda idx: sinogram_loss(params, data.y_enh[idx], data.y_k[idx], data.y_K[idx], C, cfg),
    )
    # Phase 2: filter only, on frozen denoised sinograms.
    y_sdm = sdm_outputs(params, data, C, cfg)
    run_phase(
        "rem",
        ("rem",),
        config.jump_epochs,
        lambda idx: filter_loss(params, y_sdm[idx], data.x_full[idx], g_K, cfg),
    )
    # Phase 3: image denoiser on frozen reconstructions.
    x_rem = rem_outputs(params, y_sdm, g_K)
    run_phase(
        "idm",
        ("idm",),
        config.jump_epochs,
        lambda idx: image_loss(params, x_rem[idx], data.x_full[idx], cfg),
    )
    # Phase 4: everything, driven by the image loss alone.
    run_phase(
        "joint",
        ("sdm", "rem", "idm"),
        config.joint_epochs,
        lambda idx: ad.huber_loss(
            wnet_from_enhanced(params, data.y_enh[idx], data.y_k[idx], g_k, g_K, cfg),
            data.x_full[idx],
            cfg.huber_delta,
        ),
    )
    return state


# -- checkpoints ----------------------------------------------------------------

CKPT_MAGIC = b"WNCK"
CKPT_VERSION = 1


def save_checkpoint(path, state: TrainState, config: TrainConfig, desk: DeskConfig) -> None:
    """Deterministic container: magic, version, JSON header, then tensors."""
    tensors = {f"param/{k}": t.value for k, t in state.params.named().items()}
    for mod in state.params.modules():
        mom = state.optim[mod]
        for k in sorted(mom.m):
            tensors[f"adam_m/{mod}/{k}"] = mom.m[k]
            tensors[f"adam_v/{mod}/{k}"] = mom.v[k]
    header = {
        "config": config.to_dict(),
        "config_hash": config.digest(),
        "desk": asdict(desk),
        "adam_steps": {m: o.step for m, o in state.optim.items()},
        "epochs_done": state.epochs_done,
        "log": [[p, e, repr(loss)] for p, e, loss in state.log],
        "tensors": list(tensors),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<BQ", CKPT_VERSION, len(blob)), blob]
    parts += [tensor_to_bytes(tensors[k]) for k in header["tensors"]]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[TrainState, TrainConfig, DeskConfig]:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise ValueError(f"{path} is not a WNet checkpoint")
    version, n = struct.unpack_from("<BQ", buf, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 13
    header = json.loads(buf[pos : pos + n])
    pos += n
    tensors = {}
    for name in header["tensors"]:
        tensors[name], pos = tensor_from_bytes(buf, pos)
    config = TrainConfig.from_dict(header["config"])
    if config.digest() != header["config_hash"]:
        raise ValueError("checkpoint config hash mismatch")

    def group(prefix):
        return {
            k[len(prefix) :]: ad.Tensor(v, True) for k, v in tensors.items() if k.startswith(prefix)
        }

    params = WNetParams(
        group("param/sdm/"), group("param/rem/")["filter"], group("param/idm/")
    )
    optim = {}
    for mod in params.modules():
        steps = header["adam_steps"][mod]
        m = {k[len(f"adam_m/{mod}/"):]: v for k, v in tensors.items() if k.startswith(f"adam_m/{mod}/")}
        v = {k[len(f"adam_v/{mod}/"):]: a for k, a in tensors.items() if k.startswith(f"adam_v/{mod}/")}
        optim[mod] = AdamMoments(m, v, steps)
    state = TrainState(params, optim, [(p, e, float(l)) for p, e, l in header["log"]],
                       header["epochs_done"])
    return state, config, DeskConfig(**header["desk"])
