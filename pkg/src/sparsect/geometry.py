"""Parallel-beam acquisition geometry and the image/sinogram containers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

VALUE_UNITS = ("normalized", "attenuation", "display")


class GeometryError(ValueError):
    """Raised for invalid or mismatched acquisition descriptions."""


@dataclass(frozen=True)
class Geometry:
    """Uniform angle grid, centered flat detector, centered square-pixel grid.

    Angles are ``i * angular_span / n_angles`` (endpoint excluded). Detector
    element ``d`` sits at ``(d - (n_detectors - 1) / 2) * detector_spacing``.
    """

    n_angles: int
    n_detectors: int
    image_size: tuple[int, int]
    detector_spacing: float = 1.0
    pixel_spacing: float = 1.0
    angular_span: float = 2.0 * math.pi

    def __post_init__(self):
        if self.n_angles < 1 or self.n_detectors < 1:
            raise GeometryError(
                f"n_angles and n_detectors must be >= 1, got {self.n_angles}, {self.n_detectors}"
            )
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            raise GeometryError(f"image_size must be two counts >= 1, got {self.image_size}")
        if not (self.detector_spacing > 0 and self.pixel_spacing > 0 and self.angular_span > 0):
            raise GeometryError("detector_spacing, pixel_spacing and angular_span must be > 0")
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))

    @property
    def sinogram_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_detectors)

    @property
    def n_rays(self) -> int:
        return self.n_angles * self.n_detectors

    @property
    def n_pixels(self) -> int:
        return self.image_size[0] * self.image_size[1]

    def angles(self) -> np.ndarray:
        # span * (i / n) makes angle i*C of an n*C grid bit-identical to angle i
        return self.angular_span * (np.arange(self.n_angles) / self.n_angles)

    def detector_positions(self) -> np.ndarray:
        return (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2.0) * self.detector_spacing

    def with_angles(self, n_angles: int) -> "Geometry":
        """Same detector and image grid, different number of views."""
        return replace(self, n_angles=n_angles)

    def to_config(self) -> dict[str, str]:
        return {
            "n_angles": str(self.n_angles),
            "n_detectors": str(self.n_detectors),
            "rows": str(self.image_size[0]),
            "cols": str(self.image_size[1]),
            "detector_spacing": repr(self.detector_spacing),
            "pixel_spacing": repr(self.pixel_spacing),
            "angular_span": repr(self.angular_span),
        }

    @classmethod
    def from_config(cls, block) -> "Geometry":
        return make_geometry(
            int(block["n_angles"]),
            int(block["n_detectors"]),
            (int(block["rows"]), int(block["cols"])),
            detector_spacing=float(block.get("detector_spacing", 1.0)),
            pixel_spacing=float(block.get("pixel_spacing", 1.0)),
            angular_span=float(block.get("angular_span", 2.0 * math.pi)),
        )


def make_geometry(
    n_angles: int,
    n_detectors: int,
    image_size: tuple[int, int] | int,
    detector_spacing: float = 1.0,
    pixel_spacing: float = 1.0,
    angular_span: float = 2.0 * math.pi,
) -> Geometry:
    if isinstance(image_size, (int, np.integer)):
        image_size = (int(image_size), int(image_size))
    return Geometry(
        n_angles=int(n_angles),
        n_detectors=int(n_detectors),
        image_size=tuple(image_size),
        detector_spacing=float(detector_spacing),
        pixel_spacing=float(pixel_spacing),
        angular_span=float(angular_span),
    )


def angle_of(g: Geometry, i: int) -> float:
    if not 0 <= i < g.n_angles:
        raise IndexError(f"angle index {i} out of range for {g.n_angles} angles")
    return g.angular_span * (i / g.n_angles)


def check_upsampling(g_k: Geometry, g_K: Geometry) -> int:
    """Return the integer factor C = K / k, validating that the grids align."""
    if g_K.n_angles % g_k.n_angles:
        raise GeometryError(
            f"{g_K.n_angles} views is not an integer multiple of {g_k.n_angles} views"
        )
    same_layout = (
        g_k.n_detectors == g_K.n_detectors
        and g_k.detector_spacing == g_K.detector_spacing
        and g_k.image_size == g_K.image_size
        and g_k.pixel_spacing == g_K.pixel_spacing
        and g_k.angular_span == g_K.angular_span
    )
    if not same_layout:
        raise GeometryError("sparse and dense geometries differ beyond the number of views")
    return g_K.n_angles // g_k.n_angles


@dataclass(frozen=True)
class DeskConfig:
    """Reduced-size defaults keeping the 4x upsampling and 4x full-view ratios."""

    image: int = 64
    n_detectors: int = 96
    sparse_views: int = 16
    upsample_factor: int = 4
    full_view_factor: int = 4
    detector_span: float = 1.5  # detector width relative to image width

    def __post_init__(self):
        counts = (self.image, self.n_detectors, self.sparse_views, self.upsample_factor,
                  self.full_view_factor)
        if min(counts) < 1:
            raise GeometryError(f"desk sizes and factors must be >= 1, got {counts}")
        if not self.detector_span > 0:
            raise GeometryError("detector_span must be > 0")

    def geometries(self) -> tuple[Geometry, Geometry, Geometry]:
        ds = self.detector_span * self.image / self.n_detectors
        g_k = make_geometry(self.sparse_views, self.n_detectors, self.image, detector_spacing=ds)
        g_K = g_k.with_angles(self.sparse_views * self.upsample_factor)
        g_full = g_k.with_angles(g_K.n_angles * self.full_view_factor)
        return g_k, g_K, g_full


@dataclass(frozen=True)
class Image:
    data: np.ndarray
    pixel_spacing: float = 1.0
    value_unit: str = "normalized"

    def __post_init__(self):
        if np.ndim(self.data) != 2:
            raise GeometryError(f"image data must be 2-D, got shape {np.shape(self.data)}")
        if self.value_unit not in VALUE_UNITS:
            raise GeometryError(f"unknown value unit {self.value_unit!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Sinogram:
    data: np.ndarray
    geometry: Geometry = field(repr=False)

    def __post_init__(self):
        if np.shape(self.data) != self.geometry.sinogram_shape:
            raise GeometryError(
                f"sinogram shape {np.shape(self.data)} does not match geometry "
                f"{self.geometry.sinogram_shape}"
            )
