from fractions import Fraction

import numpy as np
import pytest

from deepfont import compress
from deepfont.errors import RankExceededError
from deepfont.network import DESK, FULL, build_cnn, init_model
from deepfont.numerics import rank_project


def test_truncate_lossy_eckart_young():
    w = np.random.default_rng(0).normal(size=(12, 8))
    s = np.linalg.svd(w, compute_uv=False)
    layer = compress.truncate_lossy(w, 3)
    assert layer.k == 3 and layer.n_params == 3 * (12 + 8 + 1)
    assert abs(np.linalg.norm(w - layer.dense()) - np.sqrt(np.sum(s[3:] ** 2))) < 1e-8


def test_truncate_examples():
    assert abs(np.linalg.norm(np.diag([3.0, 2, 1]) - compress.truncate_lossy(np.diag([3.0, 2, 1]), 2).dense())
               - 1.0) < 1e-12
    w = np.random.default_rng(1).normal(size=(5, 4))
    assert np.abs(compress.truncate_lossy(w, 4).dense() - w).max() < 1e-8


def test_export_lossless():
    w = rank_project(np.random.default_rng(2).normal(size=(30, 20)), 4)
    layer = compress.export_lossless(w, 4)
    assert np.abs(layer.dense() - w).max() <= 1e-5 * max(1, np.abs(w).max())
    with pytest.raises(RankExceededError) as info:
        compress.export_lossless(np.random.default_rng(3).normal(size=(10, 10)), 2)
    assert info.value.ratio > 1e-6 and info.value.k == 2
    zero = compress.export_lossless(np.zeros((6, 5)), 2)
    assert not zero.dense().any() and not zero.u_tilde.any() and not zero.v_tilde.any()


def test_compression_ratio_counts():
    assert compress.compression_ratio(36864, 4096, 5) * 36864 * 4096 == 204805
    assert compress.compression_ratio(36864, 4096, 100) * 36864 * 4096 == 4096100
    assert compress.compression_ratio(4, 4, 4) > 1
    assert isinstance(compress.compression_ratio(3, 3, 1), Fraction)


def test_size_report_table():
    spec = build_cnn(FULL, 2383, 2)
    base = compress.size_report(spec)
    assert base.total_before == base.total_after == 177546176 and base.ratio_2dp == "1.00"
    r = compress.size_report(spec, {"fc6": 50})
    assert r.total_after == 28599282 and r.ratio_2dp == "6.21"
    assert r.ratio == Fraction(r.total_before, r.total_after)
    with pytest.raises(ValueError):
        compress.size_report(spec, {"conv1": 2})


def test_mini_model():
    r = compress.mini_model_report()
    assert r.compressed["fc6"] == 389130
    assert r.total_after == 9477066 and r.ratio_2dp == "18.73"


def test_factorize_model_and_report():
    spec = build_cnn(DESK, 4, 2)
    model = init_model(spec, np.random.default_rng(4))
    out, layer = compress.factorize_model(model, "fc5", 8, "lossy")
    assert set(out.params[4]) == {"u", "s", "v", "b"} and layer.k == 8
    assert compress.model_size_report(out).compressed == {"fc5": 8 * (256 + 256 + 1)}
    with pytest.raises(RankExceededError):
        compress.factorize_model(model, "fc5", 8, "lossless")
    with pytest.raises(ValueError):
        compress.factorize_model(model, "conv2", 8)
