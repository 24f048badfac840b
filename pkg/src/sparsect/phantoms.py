"""Synthetic phantoms, simulated sinogram triples and on-disk datasets."""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fbp import default_pad_len, fbp_reconstruct, make_filter
from .geometry import DeskConfig, Geometry, check_upsampling
from .projector import forward_project
from .tensorio import read_tensor, write_tensor

# (intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees) on [-1, 1]^2
MODIFIED_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def pixel_centers(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates on [-1, 1]^2; row 0 is the top (y = +1) edge."""
    c = (np.arange(n) - (n - 1) / 2.0) * (2.0 / n)
    return np.meshgrid(c, -c)


def ellipse_phantom(n: int, ellipses, clip: bool = True, supersample: int = 4) -> np.ndarray:
    """Sum of constant-valued ellipses, each pixel averaged over a sub-grid."""
    m = n * supersample
    x, y = pixel_centers(m)
    img = np.zeros((m, m))
    for value, a, b, x0, y0, phi in ellipses:
        t = np.deg2rad(phi)
        xr = (x - x0) * np.cos(t) + (y - y0) * np.sin(t)
        yr = -(x - x0) * np.sin(t) + (y - y0) * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    if clip:
        img = np.clip(img, 0.0, 1.0)
    return img.reshape(n, supersample, n, supersample).mean(axis=(1, 3))


def shepp_logan(n: int) -> np.ndarray:
    return ellipse_phantom(n, MODIFIED_SHEPP_LOGAN)


def random_phantom(seed, n: int = 64) -> np.ndarray:
    """A body ellipse with 2-11 random inclusions, clamped to [0, 1]."""
    rng = np.random.default_rng(seed)
    n_inner = int(rng.integers(2, 12))
    body = (
        float(rng.uniform(0.3, 0.7)),
        float(rng.uniform(0.55, 0.8)),
        float(rng.uniform(0.55, 0.8)),
        float(rng.uniform(-0.05, 0.05)),
        float(rng.uniform(-0.05, 0.05)),
        float(rng.uniform(0.0, 180.0)),
    )
    ellipses = [body]
    for _ in range(n_inner):
        r = rng.uniform(0.0, 0.45)
        phi = rng.uniform(0.0, 2 * np.pi)
        ellipses.append(
            (
                float(rng.uniform(-0.35, 0.45)),
                float(rng.uniform(0.04, 0.25)),
                float(rng.uniform(0.04, 0.25)),
                float(r * np.cos(phi)),
                float(r * np.sin(phi)),
                float(rng.uniform(0.0, 180.0)),
            )
        )
    return ellipse_phantom(n, ellipses)


def augment_rotations(x) -> list[np.ndarray]:
    """The image and its clockwise rotations by 90, 180 and 270 degrees."""
    x = np.asarray(x)
    return [np.ascontiguousarray(np.rot90(x, k=-k)) for k in range(4)]


@dataclass(frozen=True)
class DatasetSpec:
    n_train: int = 200
    n_val: int = 40
    n_test: int = 40
    seed: int = 0
    augment: bool = True
    desk: DeskConfig = field(default_factory=DeskConfig)

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split sizes must be nonnegative")

    @property
    def geometries(self) -> tuple[Geometry, Geometry, Geometry]:
        return self.desk.geometries()


@dataclass
class Sample:
    sample_id: str
    phantom: np.ndarray
    y_k: np.ndarray
    y_K: np.ndarray
    x_full: np.ndarray


def synthesize_sample(x, g_k: Geometry, g_K: Geometry, g_full: Geometry):
    """Sparse sinogram, dense label sinogram and full-view Ram-Lak FBP label."""
    check_upsampling(g_k, g_K)
    x = np.asarray(x, dtype=np.float64)
    y_k = forward_project(x, g_k)
    y_K = forward_project(x, g_K)
    ramlak = make_filter("ramlak", default_pad_len(g_full.n_detectors))
    x_full = fbp_reconstruct(forward_project(x, g_full), g_full, ramlak)
    return y_k, y_K, x_full


_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


def split_phantoms(spec: DatasetSpec, split: str):
    """Yield (sample id, phantom) for one split; rotations follow their source."""
    count = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}[split]
    n = spec.desk.image
    augment = spec.augment and split != "test"
    for i in range(count):
        base = random_phantom((spec.seed, _SPLIT_CODES[split], i), n)
        views = augment_rotations(base) if augment else [base]
        for r, img in enumerate(views):
            yield f"{split}{i:05d}r{90 * r}", img


def generate_split(spec: DatasetSpec, split: str) -> list[Sample]:
    g_k, g_K, g_full = spec.geometries
    return [
        Sample(sid, x, *synthesize_sample(x, g_k, g_K, g_full))
        for sid, x in split_phantoms(spec, split)
    ]


# -- on-disk layout -----------------------------------------------------------

ROLES = ("phantom", "y_k", "y_K", "x_full")
MANIFEST = "manifest.csv"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_dataset(spec: DatasetSpec, root: str | os.PathLike, splits=("train", "val", "test")):
    root = Path(root)
    rows = []
    for split in splits:
        (root / split).mkdir(parents=True, exist_ok=True)
        for s in generate_split(spec, split):
            for role in ROLES:
                rel = Path(split) / f"{s.sample_id}_{role}.sct"
                write_tensor(root / rel, getattr(s, role))
                rows.append((s.sample_id, split, role, rel.as_posix(), _sha256(root / rel)))
    with open(root / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "split", "role", "path", "sha256"])
        writer.writerows(rows)
    return root


def read_manifest(root: str | os.PathLike) -> list[dict]:
    with open(Path(root) / MANIFEST, newline="") as fh:
        return list(csv.DictReader(fh))


def load_split(root: str | os.PathLike, split: str, verify: bool = False) -> list[Sample]:
    root = Path(root)
    by_id: dict[str, dict] = {}
    for row in read_manifest(root):
        if row["split"] != split:
            continue
        path = root / row["path"]
        if verify and _sha256(path) != row["sha256"]:
            raise ValueError(f"checksum mismatch for {path}")
        by_id.setdefault(row["sample_id"], {})[row["role"]] = read_tensor(path)
    return [Sample(sid, **{r: t[r] for r in ROLES}) for sid, t in by_id.items()]
