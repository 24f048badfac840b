import math

import numpy as np
import pytest

from sparsect.geometry import DeskConfig
from sparsect.metrics import psnr
from sparsect.phantoms import (
    MODIFIED_SHEPP_LOGAN,
    DatasetSpec,
    augment_rotations,
    ellipse_phantom,
    generate_split,
    load_split,
    random_phantom,
    read_manifest,
    shepp_logan,
    split_phantoms,
    synthesize_sample,
    write_dataset,
)

SMALL = DatasetSpec(n_train=2, n_val=1, n_test=2, seed=3)


def table_value_at(px, py):
    total = 0.0
    for value, a, b, x0, y0, deg in MODIFIED_SHEPP_LOGAN:
        t = math.radians(deg)
        xr = (px - x0) * math.cos(t) + (py - y0) * math.sin(t)
        yr = -(px - x0) * math.sin(t) + (py - y0) * math.cos(t)
        if (xr / a) ** 2 + (yr / b) ** 2 <= 1:
            total += value
    return total


def test_shepp_logan_corner_and_center():
    x = shepp_logan(64)
    assert x[0, 0] == 0.0 and x[-1, -1] == 0.0
    center = table_value_at(0.0, 0.0)
    assert center == pytest.approx(0.2)
    np.testing.assert_allclose(x[31:33, 31:33], center, atol=1e-12)
    assert x.min() >= 0.0 and x.max() <= 1.0


def test_symmetric_ellipses_give_mirror_image():
    sym = [e for e in MODIFIED_SHEPP_LOGAN if e[3] == 0.0 and e[5] == 0.0]
    assert len(sym) >= 5
    x = ellipse_phantom(64, sym)
    np.testing.assert_allclose(x, np.fliplr(x), rtol=0, atol=1e-15)


def test_random_phantom_is_seeded_and_clamped():
    a = random_phantom(5)
    assert a.tobytes() == random_phantom(5).tobytes()
    assert a.tobytes() != random_phantom(6).tobytes()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_random_phantom_coverage_band():
    frac = np.mean([np.mean(random_phantom(s) > 0) for s in range(100)])
    assert 0.1 < frac < 0.9
    assert frac == pytest.approx(0.366, abs=0.02)  # regression value


def test_rotations():
    x = random_phantom(1)
    rots = augment_rotations(x)
    assert len(rots) == 4
    np.testing.assert_array_equal(rots[0], x)
    np.testing.assert_array_equal(augment_rotations(rots[1])[1], rots[2])
    np.testing.assert_array_equal(rots[1], np.rot90(x, -1))  # clockwise
    for r in rots:
        assert math.fsum(r.ravel()) == math.fsum(x.ravel())


def test_sample_triple():
    g_k, g_K, g_full = DeskConfig().geometries()
    x = shepp_logan(64)
    y_k, y_K, x_full = synthesize_sample(x, g_k, g_K, g_full)
    assert y_k.shape == (16, 96) and y_K.shape == (64, 96) and x_full.shape == (64, 64)
    np.testing.assert_allclose(y_K[::4], y_k, rtol=0, atol=1e-12)
    assert psnr(x_full, x) >= 25.0
    zeros = synthesize_sample(np.zeros((64, 64)), g_k, g_K, g_full)
    assert all(not np.any(a) for a in zeros)


def test_split_ids_and_augmentation():
    ids = {s: [sid for sid, _ in split_phantoms(SMALL, s)] for s in ("train", "val", "test")}
    assert ids["train"] == [f"train{i:05d}r{r}" for i in range(2) for r in (0, 90, 180, 270)]
    assert ids["test"] == ["test00000r0", "test00001r0"]
    base = {s: [x for sid, x in split_phantoms(SMALL, s) if sid.endswith("r0")]
            for s in ("train", "val", "test")}
    flat = [x.tobytes() for v in base.values() for x in v]
    assert len(set(flat)) == len(flat)  # no phantom shared between splits


def test_dataset_files_are_reproducible(tmp_path):
    write_dataset(SMALL, tmp_path / "a")
    write_dataset(SMALL, tmp_path / "b")
    rows = read_manifest(tmp_path / "a")
    assert len(rows) == (8 + 4 + 2) * 4
    assert rows == read_manifest(tmp_path / "b")
    for row in rows:
        assert (tmp_path / "a" / row["path"]).read_bytes() == (tmp_path / "b" / row["path"]).read_bytes()
    test = load_split(tmp_path / "a", "test", verify=True)
    fresh = generate_split(SMALL, "test")
    assert [s.sample_id for s in test] == [s.sample_id for s in fresh]
    for a, b in zip(test, fresh):
        assert a.x_full.tobytes() == b.x_full.tobytes()


def test_checksum_mismatch_detected(tmp_path):
    spec = DatasetSpec(n_train=0, n_val=0, n_test=1)
    write_dataset(spec, tmp_path)
    path = tmp_path / read_manifest(tmp_path)[0]["path"]
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="checksum"):
        load_split(tmp_path, "test", verify=True)


def test_negative_split_rejected():
    with pytest.raises(ValueError):
        DatasetSpec(n_train=-1)
