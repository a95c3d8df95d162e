import numpy as np
import pytest

from hpdnet import checkpoint as C
from hpdnet import head as hd
from hpdnet import layers as ly
from hpdnet.errors import BadMagic, TruncatedFile


def make_pair(seed=0):
    params = ly.init_params([3, 3, 2], tau=0.025, seed=seed)
    head = hd.init_head((9, 9, 6), classes=3, seed=seed + 1)
    return params, head


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params, head = make_pair()
        p = tmp_path / "model.ckpt"
        C.save_checkpoint(p, params, head)
        params2, head2 = C.load_checkpoint(p)
        assert params2.depth == params.depth
        for (w, tau), (w2, tau2) in zip(params.layers, params2.layers):
            assert np.array_equal(w.w, w2.w)
            assert tau == tau2
        assert head2.pool_after == head.pool_after
        for k, k2 in zip(head.convs, head2.convs):
            assert np.array_equal(k.weights, k2.weights)
            assert np.array_equal(k.bias, k2.bias)
        assert np.array_equal(head.dense_w, head2.dense_w)
        assert np.array_equal(head.dense_b, head2.dense_b)

    def test_deterministic_bytes(self):
        params, head = make_pair(3)
        a = C.serialize_params(params) + C.serialize_head(head)
        b = C.serialize_params(params) + C.serialize_head(head)
        assert a == b

    def test_magics_present(self):
        params, head = make_pair(4)
        blob = C.serialize_params(params)
        assert blob[:4] == b"HPDN"
        assert C.serialize_head(head)[:4] == b"CVHD"

    def test_truncated(self, tmp_path):
        params, head = make_pair(5)
        p = tmp_path / "model.ckpt"
        C.save_checkpoint(p, params, head)
        p.write_bytes(p.read_bytes()[:-7])
        with pytest.raises(TruncatedFile):
            C.load_checkpoint(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"WHAT" + b"\0" * 100)
        with pytest.raises(BadMagic):
            C.load_checkpoint(p)
