import numpy as np
import pytest

from hpdnet import data as D
from hpdnet import layers as ly
from hpdnet import training as T
from hpdnet.checkpoint import serialize_head, serialize_params
from hpdnet.errors import DataError, EmptyTestSet

from conftest import rand_herm, rand_hpd


def two_class_spec(seed=0, size=20, looks=8):
    """A small strongly separable scene: the class means differ in power."""
    m1 = np.diag([2.0, 1.0, 0.5]).astype(complex)
    m2 = np.diag([0.5, 0.25, 0.125]).astype(complex)
    m1[0, 1] = 0.4 + 0.3j
    m1[1, 0] = 0.4 - 0.3j
    half = size // 2
    return D.SceneSpec(height=size, width=size,
                       class_means=np.stack([m1, m2]), looks=looks,
                       rectangles=((1, 0, 0, half, size),
                                   (2, half, 0, size - half, size)),
                       seed=seed)


class TestConfusionReport:
    def test_perfect(self):
        rep = T.ConfusionReport.from_counts(np.diag([30, 20, 10]))
        assert rep.oa == 1.0 and rep.aa == 1.0 and rep.kappa == 1.0

    def test_chance_level(self):
        # everything predicted as class 1 on a balanced two-class set
        rep = T.ConfusionReport.from_counts([[50, 0], [50, 0]])
        assert rep.oa == pytest.approx(0.5)
        assert rep.kappa == pytest.approx(0.0)

    def test_hand_computed_case(self):
        rep = T.ConfusionReport.from_counts([[45, 5], [10, 40]])
        assert rep.oa == pytest.approx(0.85)
        assert rep.kappa == pytest.approx(0.7)
        assert rep.aa == pytest.approx(0.5 * (45 / 50 + 40 / 50))

    def test_row_sums_are_class_counts(self):
        m = np.array([[7, 2, 1], [0, 5, 0], [3, 3, 3]])
        rep = T.ConfusionReport.from_counts(m)
        assert rep.matrix.sum(axis=1).tolist() == [10, 5, 9]

    def test_json_round_trip(self):
        import json
        rep = T.ConfusionReport.from_counts([[45, 5], [10, 40]])
        doc = json.loads(rep.to_json())
        assert doc["oa"] == pytest.approx(0.85)
        assert doc["confusion"] == [[45, 5], [10, 40]]


class TestChannelMapping:
    def test_fixed_order(self):
        y = np.zeros((1, 3, 3), dtype=complex)
        y[0] = [[1.0, 4 + 4j, 5 + 5j],
                [4 - 4j, 2.0, 6 + 6j],
                [5 - 5j, 6 - 6j, 3.0]]
        ch = T.herm_to_channels(y)
        assert ch.shape == (1, 6, 1)
        assert np.array_equal(ch[0, :3, 0], [1.0, 2.0, 3.0])
        assert np.array_equal(ch[0, 3:, 0], [4 + 4j, 5 + 5j, 6 + 6j])

    def test_gradient_mapping_matches_fd(self):
        rng = np.random.default_rng(100)
        y = rand_herm(rng)[None]
        g_ch = rng.normal(size=(1, 6, 1)) + 1j * rng.normal(size=(1, 6, 1))

        def loss(yz):
            ch = T.herm_to_channels(yz)
            return float(np.sum(g_ch.real * ch.real + g_ch.imag * ch.imag))

        g_y = T.channels_grad_to_herm(g_ch)
        h = 1e-6
        for d in [rand_herm(rng) for _ in range(10)]:
            fd = (loss(y + h * d[None]) - loss(y - h * d[None])) / (2 * h)
            an = float(np.einsum("ij,ij->", np.conj(g_y[0]), d).real)
            assert abs(fd - an) / max(abs(fd), 1e-9) < 1e-7


class TestForwardPipeline:
    def test_identity_patch_feeds_zeros(self):
        params = ly.init_params([3], tau=0.1, seed=0)
        patch = np.broadcast_to(np.eye(3, dtype=complex), (5, 5, 3, 3)).copy()
        flat = patch.reshape(-1, 3, 3)
        tangent, _ = ly.hpdnet_forward_batch(params, flat)
        chans = T.herm_to_channels(tangent)
        assert np.abs(chans).max() < 1e-12

    def test_probs_sum_to_one(self):
        from hpdnet import head as hd
        rng = np.random.default_rng(101)
        params = ly.init_params([3, 3], tau=0.01, seed=1)
        head = hd.init_head((9, 9, 6), classes=4, seed=2)
        patch = np.stack([[rand_hpd(rng) for _ in range(9)]
                          for _ in range(9)])
        probs = T.forward_pipeline(params, head, patch)
        assert probs.shape == (4,)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_exact_and_fast_paths_agree(self):
        from hpdnet import head as hd
        rng = np.random.default_rng(102)
        params = ly.init_params([3, 3], tau=0.01, seed=3)
        head = hd.init_head((9, 9, 6), classes=3, seed=4)
        for _ in range(5):
            patch = np.stack([[rand_hpd(rng, lam_lo=0.5, lam_hi=3.0)
                               for _ in range(9)] for _ in range(9)])
            pe = T.forward_pipeline(params, head, patch, "exact")
            pf = T.forward_pipeline(params, head, patch, "fast")
            assert np.abs(pe - pf).max() < 1e-2


class TestTrain:
    def test_zero_epochs_returns_init(self):
        img = D.synth_scene(two_class_spec(seed=5))
        train_b, _ = D.extract_patches(img, p=5, ratio=0.2, seed=0)
        cfg = T.TrainConfig(epochs=0, patch=5, seed=7)
        params, head, history = T.train(cfg, train_b)
        assert history == []
        tau = T._tau_from_batch(train_b, 3)
        ref = ly.init_params(cfg.dims, tau, cfg.seed)
        for (w, _), (wr, _) in zip(params.layers, ref.layers):
            assert np.array_equal(w.w, wr.w)

    def test_learns_separable_scene(self):
        img = D.synth_scene(two_class_spec(seed=6))
        train_b, test_b = D.extract_patches(img, p=5, ratio=0.3, seed=0)
        cfg = T.TrainConfig(epochs=20, patch=5, batch=32, seed=0)
        params, head, history = T.train(cfg, train_b)
        assert history[-1][1] < 0.1
        assert history[-1][1] < history[0][1]
        rep = T.evaluate(params, head, test_b)
        assert rep.oa > 0.9

    def test_weights_stay_semi_orthogonal(self):
        img = D.synth_scene(two_class_spec(seed=8, size=12))
        train_b, _ = D.extract_patches(img, p=5, ratio=0.3, seed=0)
        cfg = T.TrainConfig(epochs=3, patch=5, batch=16, seed=1)
        params, _, _ = T.train(cfg, train_b)
        for w, _ in params.layers:
            m = w.shape[0]
            assert np.linalg.norm(w.w @ w.w.conj().T - np.eye(m)) < 1e-6

    def test_deterministic_checkpoint_bytes(self):
        img = D.synth_scene(two_class_spec(seed=9, size=12))
        train_b, _ = D.extract_patches(img, p=5, ratio=0.3, seed=0)
        cfg = T.TrainConfig(epochs=3, patch=5, batch=16, seed=2)
        blobs = []
        for _ in range(2):
            params, head, history = T.train(cfg, train_b)
            blobs.append(serialize_params(params) + serialize_head(head))
        assert blobs[0] == blobs[1]

    def test_seeded_rerun_identical_history(self):
        img = D.synth_scene(two_class_spec(seed=10, size=12))
        train_b, _ = D.extract_patches(img, p=5, ratio=0.3, seed=0)
        cfg = T.TrainConfig(epochs=2, patch=5, batch=16, seed=3)
        _, _, h1 = T.train(cfg, train_b)
        _, _, h2 = T.train(cfg, train_b)
        assert h1 == h2

    def test_rejects_empty_class(self):
        img = D.synth_scene(two_class_spec(seed=11, size=12))
        train_b, _ = D.extract_patches(img, p=5, ratio=0.3, seed=0)
        labels = np.ones_like(train_b.labels)
        labels[0] = 3  # class 2 now has no training patches
        hacked = D.PatchBatch(padded=train_b.padded,
                              centers=train_b.centers, labels=labels, p=5)
        with pytest.raises(DataError):
            T.train(T.TrainConfig(epochs=1, patch=5), hacked)


class TestEvaluatePredict:
    @pytest.fixture(scope="class")
    def trained(self):
        img = D.synth_scene(two_class_spec(seed=12, size=16))
        train_b, test_b = D.extract_patches(img, p=5, ratio=0.3, seed=0)
        cfg = T.TrainConfig(epochs=5, patch=5, batch=32, seed=4)
        params, head, _ = T.train(cfg, train_b)
        return img, test_b, params, head

    def test_empty_test_set(self, trained):
        img, test_b, params, head = trained
        empty = D.PatchBatch(padded=test_b.padded,
                             centers=np.zeros((0, 2), dtype=int),
                             labels=np.zeros(0, dtype=np.uint16), p=5)
        with pytest.raises(EmptyTestSet):
            T.evaluate(params, head, empty)

    def test_confusion_row_sums(self, trained):
        img, test_b, params, head = trained
        rep = T.evaluate(params, head, test_b)
        counts = np.bincount(test_b.labels, minlength=3)[1:]
        assert rep.matrix.sum(axis=1).tolist() == counts.tolist()

    def test_predict_map_shape_and_consistency(self, trained):
        img, test_b, params, head = trained
        class_map, rgb = T.predict_map(params, head, img, patch=5)
        assert class_map.shape == (img.height, img.width)
        assert rgb.shape == (img.height, img.width, 3)
        preds = T._predict_batches(params, head, test_b, "exact") + 1
        rows = test_b.centers[:, 0]
        cols = test_b.centers[:, 1]
        assert np.array_equal(class_map[rows, cols], preds)

    def test_single_pixel_map(self, trained):
        img, _, params, head = trained
        one = D.CovImage(values=img.values[:1, :1], labels=None,
                         class_count=img.class_count)
        class_map, rgb = T.predict_map(params, head, one, patch=5)
        assert class_map.shape == (1, 1)
        assert rgb.shape == (1, 1, 3)
