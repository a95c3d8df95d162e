import struct

import numpy as np
import pytest

from hpdnet import data as D
from hpdnet.errors import (
    BadMagic,
    BadSpec,
    DataError,
    NoLabeledPixels,
    NonFiniteEntry,
    TruncatedFile,
)


def identity_image(h=2, w=2, labels=None, k=1):
    values = np.broadcast_to(np.eye(3, dtype=complex), (h, w, 3, 3)).copy()
    return D.CovImage(values=values, labels=labels, class_count=k)


def write_pc3(path, pixels9, labels=None, k=1):
    """Hand-rolled writer used as the byte-layout oracle."""
    h, w = pixels9.shape[:2]
    version = 1 | ((1 << 16) if labels is not None else 0)
    with open(path, "wb") as fh:
        fh.write(b"PC3\0")
        fh.write(struct.pack("<IIII", version, h, w, k))
        fh.write(pixels9.astype("<f4").tobytes())
        if labels is not None:
            fh.write(labels.astype("<u2").tobytes())


class TestPc3Format:
    def test_identity_pixels(self, tmp_path):
        nine = np.zeros((2, 2, 9), dtype=np.float32)
        nine[..., :3] = 1.0
        p = tmp_path / "ident.pc3"
        write_pc3(p, nine)
        img = D.load_cov(p)
        assert img.height == 2 and img.width == 2
        assert np.allclose(img.values, np.eye(3), atol=1e-7)

    def test_single_pixel_byte_layout(self, tmp_path):
        # C12 = 1 + 2j along with distinct values in every slot
        nine = np.array([[[3.0, 4.0, 5.0, 1.0, 2.0, 0.5, -0.25, 0.125, -0.0625]]],
                        dtype=np.float32)
        p = tmp_path / "one.pc3"
        write_pc3(p, nine)
        img = D.load_cov(p)
        m = img.values[0, 0]
        # off-diagonals carry no ridge, so they match bit-exactly
        assert m[0, 1] == 1.0 + 2.0j
        assert m[1, 0] == 1.0 - 2.0j
        assert m[0, 2] == 0.5 - 0.25j
        assert m[1, 2] == 0.125 - 0.0625j
        assert m[0, 0].real == pytest.approx(3.0, rel=1e-7)

    def test_loaded_pixels_are_pd(self, tmp_path):
        # a singular stored pixel becomes PD through the load ridge
        nine = np.zeros((1, 1, 9), dtype=np.float32)
        nine[..., 0] = 1.0  # rank-1 diagonal
        p = tmp_path / "sing.pc3"
        write_pc3(p, nine)
        img = D.load_cov(p)
        assert np.linalg.eigvalsh(img.values[0, 0]).min() > 0

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.pc3"
        p.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(BadMagic):
            D.load_cov(p)

    def test_truncated_pixels(self, tmp_path):
        nine = np.ones((2, 2, 9), dtype=np.float32)
        p = tmp_path / "trunc.pc3"
        write_pc3(p, nine)
        blob = p.read_bytes()
        p.write_bytes(blob[:-10])
        with pytest.raises(TruncatedFile):
            D.load_cov(p)

    def test_truncated_labels(self, tmp_path):
        nine = np.ones((2, 2, 9), dtype=np.float32)
        labels = np.ones((2, 2), dtype=np.uint16)
        p = tmp_path / "trunclab.pc3"
        write_pc3(p, nine, labels)
        blob = p.read_bytes()
        p.write_bytes(blob[:-2])
        with pytest.raises(TruncatedFile):
            D.load_cov(p)

    def test_non_finite(self, tmp_path):
        nine = np.ones((1, 1, 9), dtype=np.float32)
        nine[0, 0, 3] = np.nan
        p = tmp_path / "nan.pc3"
        write_pc3(p, nine)
        with pytest.raises(NonFiniteEntry):
            D.load_cov(p)

    def test_round_trip_byte_identical(self, tmp_path):
        img = D.synth_scene(D.default_scene_spec(seed=1, height=6, width=5))
        p1 = tmp_path / "a.pc3"
        p2 = tmp_path / "b.pc3"
        D.save_cov(p1, img)
        D.save_cov(p2, D.load_cov(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_labels_round_trip(self, tmp_path):
        img = D.synth_scene(D.default_scene_spec(seed=2, height=4, width=4))
        p = tmp_path / "lab.pc3"
        D.save_cov(p, img)
        loaded = D.load_cov(p)
        assert np.array_equal(loaded.labels, img.labels)
        assert loaded.class_count == img.class_count


class TestLabelsCsv:
    def test_load(self, tmp_path):
        p = tmp_path / "lab.csv"
        p.write_text("1,2\n0,3\n")
        lab = D.load_labels_csv(p)
        assert np.array_equal(lab, [[1, 2], [0, 3]])

    def test_ragged_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(DataError):
            D.load_labels_csv(p)

    def test_attach(self):
        img = identity_image()
        img2 = D.with_labels(img, np.array([[1, 2], [0, 1]]))
        assert img2.class_count == 2


class TestExtractPatches:
    def test_single_labeled_pixel(self):
        labels = np.zeros((3, 3), dtype=np.uint16)
        labels[1, 1] = 1
        img = identity_image(3, 3, labels, k=1)
        train, test = D.extract_patches(img, p=1, ratio=0.5, seed=0)
        assert len(train) == 1 and len(test) == 0
        assert np.allclose(train.patch(0)[0, 0], np.eye(3))

    def test_counting_split(self):
        labels = np.ones((4, 4), dtype=np.uint16)
        img = identity_image(4, 4, labels, k=1)
        train, test = D.extract_patches(img, p=1, ratio=0.25, seed=3)
        assert len(train) == 4 and len(test) == 12

    def test_split_disjoint_and_stratified(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(1, 4, size=(20, 20)).astype(np.uint16)
        img = identity_image(20, 20, labels, k=3)
        train, test = D.extract_patches(img, p=3, ratio=0.1, seed=5)
        tr = {tuple(c) for c in train.centers}
        te = {tuple(c) for c in test.centers}
        assert not tr & te
        assert len(tr) + len(te) == (labels > 0).sum()
        for cls in (1, 2, 3):
            n_cls = (labels == cls).sum()
            n_train = (train.labels == cls).sum()
            assert abs(n_train - 0.1 * n_cls) <= 1.0

    def test_deterministic_per_seed(self):
        labels = np.ones((8, 8), dtype=np.uint16)
        img = identity_image(8, 8, labels, k=1)
        a, _ = D.extract_patches(img, p=3, ratio=0.2, seed=9)
        b, _ = D.extract_patches(img, p=3, ratio=0.2, seed=9)
        assert np.array_equal(a.centers, b.centers)

    def test_mirror_padding_at_corner(self):
        rng = np.random.default_rng(6)
        values = rng.normal(size=(4, 4, 3, 3)) @ np.eye(3)
        values = values + np.swapaxes(values, -1, -2) + 6 * np.eye(3)
        values = values.astype(complex)
        labels = np.zeros((4, 4), dtype=np.uint16)
        labels[0, 0] = 1
        img = D.CovImage(values=values, labels=labels, class_count=1)
        train, _ = D.extract_patches(img, p=3, ratio=0.9, seed=0)
        patch = train.patch(0)
        # reflect padding: the patch around (0,0) mirrors row/col 1
        assert np.array_equal(patch[0, 0], values[1, 1])
        assert np.array_equal(patch[0, 1], values[1, 0])
        assert np.array_equal(patch[1, 0], values[0, 1])
        assert np.array_equal(patch[1, 1], values[0, 0])
        assert np.array_equal(patch[2, 2], values[1, 1])

    def test_no_labels_rejected(self):
        img = identity_image(2, 2, np.zeros((2, 2), dtype=np.uint16), k=1)
        with pytest.raises(NoLabeledPixels):
            D.extract_patches(img, p=1, ratio=0.5, seed=0)


class TestSynthScene:
    def test_large_look_count_concentrates(self):
        spec = D.SceneSpec(height=4, width=4,
                           class_means=np.eye(3)[None].astype(complex),
                           looks=10000, rectangles=((1, 0, 0, 4, 4),), seed=0)
        img = D.synth_scene(spec)
        mean = img.values.reshape(-1, 3, 3).mean(axis=0)
        assert np.abs(mean - np.eye(3)).max() < 0.02

    def test_pixels_pass_hpd_invariants(self):
        img = D.synth_scene(D.default_scene_spec(seed=3, height=10, width=10))
        v = img.values
        assert np.abs(v - np.conj(np.swapaxes(v, -1, -2))).max() < 1e-12
        assert np.linalg.eigvalsh(v).min() > 0

    def test_deterministic(self):
        spec = D.default_scene_spec(seed=11, height=8, width=8)
        a = D.synth_scene(spec)
        b = D.synth_scene(spec)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.labels, b.labels)

    def test_needs_three_looks(self):
        with pytest.raises(BadSpec):
            D.SceneSpec(height=2, width=2,
                        class_means=np.eye(3)[None].astype(complex),
                        looks=2, rectangles=(), seed=0)

    def test_rect_bounds_checked(self):
        with pytest.raises(BadSpec):
            D.SceneSpec(height=4, width=4,
                        class_means=np.eye(3)[None].astype(complex),
                        looks=4, rectangles=((1, 2, 2, 4, 4),), seed=0)

    def test_default_means_conjugate_pair(self):
        means = D.default_class_means()
        assert np.abs(means[0].real - means[1].real).max() == 0.0
        assert np.abs(means[0].imag + means[1].imag).max() == 0.0
        assert np.linalg.eigvalsh(means).min() > 0

    def test_zero_imaginary_ablation(self):
        img = D.synth_scene(D.default_scene_spec(seed=4, height=6, width=6))
        img0 = D.zero_imaginary(img)
        assert np.abs(img0.values.imag).max() == 0.0
        assert np.linalg.eigvalsh(img0.values).min() > 0
