"""Fourier-domain sinogram filtering and filtered backprojection."""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import Geometry, GeometryError
from .projector import back_project

FILTER_KINDS = ("ramlak", "cosine", "shepp_logan", "learned")

# Residual gain of the discrete pipeline (frequency-sampled ramp, zero padding,
# Siddon backprojection), found by reconstructing a constant disk from 256
# noiseless views on the 64x64 desk grid. With it the disk interior comes back
# within 2% of its true value.
FBP_GAIN = 1.0429


class FilterError(ValueError):
    pass


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class SpectralFilter:
    """One real weight per nonnegative rFFT bin of a ``pad_len``-point transform."""

    weights: np.ndarray
    pad_len: int
    kind: str = "learned"

    def __post_init__(self):
        if not _is_pow2(self.pad_len):
            raise FilterError(f"pad_len must be a power of two, got {self.pad_len}")
        if self.kind not in FILTER_KINDS:
            raise FilterError(f"unknown filter kind {self.kind!r}")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.pad_len // 2 + 1,):
            raise FilterError(f"expected {self.pad_len // 2 + 1} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise FilterError("filter weights must be finite")
        object.__setattr__(self, "weights", w)

    @property
    def frequencies(self) -> np.ndarray:
        """Bin frequencies in cycles per detector sample (0 .. 0.5)."""
        return np.arange(self.weights.size) / self.pad_len


def make_filter(kind: str, pad_len: int) -> SpectralFilter:
    """Classical FBP filters; the Ram-Lak ramp runs from 0 at DC to 0.5 at Nyquist."""
    kind = kind.replace("-", "_")
    if not _is_pow2(pad_len):
        raise FilterError(f"pad_len must be a power of two, got {pad_len}")
    f = np.arange(pad_len // 2 + 1) / pad_len
    ramp = f.copy()
    nyq = 0.5
    if kind == "ramlak":
        w = ramp
    elif kind == "cosine":
        w = ramp * np.cos(np.pi * f / (2 * nyq))
        w[-1] = 0.0  # cos(pi/2) rounds to 6e-17
    elif kind == "shepp_logan":
        w = ramp * np.sinc(f / (2 * nyq))
    else:
        raise FilterError(f"unknown filter kind {kind!r}")
    return SpectralFilter(w, pad_len, kind)


def default_pad_len(n_detectors: int) -> int:
    return next_pow2(n_detectors)


def apply_filter(y, w: SpectralFilter | np.ndarray, pad_len: int | None = None) -> np.ndarray:
    """Filter each detector row: zero-pad, rFFT, weight, inverse rFFT, crop.

    ``y`` may carry any leading axes; the last axis is the detector axis.
    """
    y = np.asarray(y)
    if isinstance(w, SpectralFilter):
        weights, pad_len = w.weights, w.pad_len
    else:
        weights = np.asarray(w)
        pad_len = pad_len or 2 * (weights.size - 1)
    n_det = y.shape[-1]
    if pad_len < n_det:
        raise FilterError(f"pad_len {pad_len} is smaller than {n_det} detectors")
    if weights.shape[-1] != pad_len // 2 + 1:
        raise FilterError("filter length does not match pad_len")
    spec = np.fft.rfft(y, n=pad_len, axis=-1)
    out = np.fft.irfft(spec * weights.astype(y.dtype, copy=False), n=pad_len, axis=-1)
    return out[..., :n_det].astype(y.dtype, copy=False)


def fbp_scale(g: Geometry) -> float:
    """Backprojection weight turning A^T W y into attenuation units.

    The angular quadrature step is pi / n_angles for a span covering each
    direction once or twice; Siddon weights add one pixel area per view.
    """
    return FBP_GAIN * math.pi / (g.n_angles * g.pixel_spacing**2)


def fbp_reconstruct(y, g: Geometry, w: SpectralFilter | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.shape[-2:] != g.sinogram_shape:
        raise GeometryError(f"sinogram shape {y.shape[-2:]} does not match {g.sinogram_shape}")
    if w is None:
        w = make_filter("ramlak", default_pad_len(g.n_detectors))
    filtered = apply_filter(y, w)
    return back_project(filtered, g) * y.dtype.type(fbp_scale(g))


# -- serialization ----------------------------------------------------------

_FILTER_MAGIC = b"SCTF"


def filter_to_bytes(w: SpectralFilter) -> bytes:
    head = _FILTER_MAGIC + struct.pack("<QB", w.pad_len, FILTER_KINDS.index(w.kind))
    return head + w.weights.astype("<f8").tobytes()


def filter_from_bytes(buf: bytes) -> SpectralFilter:
    if buf[:4] != _FILTER_MAGIC:
        raise FilterError("not a filter record")
    pad_len, kind = struct.unpack_from("<QB", buf, 4)
    weights = np.frombuffer(buf, dtype="<f8", offset=13)
    if kind >= len(FILTER_KINDS):
        raise FilterError(f"bad kind tag {kind}")
    return SpectralFilter(weights.astype(np.float64), int(pad_len), FILTER_KINDS[kind])


def filter_to_csv(w: SpectralFilter, extra: dict[str, SpectralFilter] | None = None) -> str:
    extra = extra or {}
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["bin", "frequency", "weight", *extra])
    cols = [e.weights for e in extra.values()]
    for b, (f, val) in enumerate(zip(w.frequencies, w.weights)):
        writer.writerow([b, repr(float(f)), repr(float(val)), *(repr(float(c[b])) for c in cols)])
    return out.getvalue()
