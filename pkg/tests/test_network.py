import numpy as np
import pytest

from deepfont import network
from deepfont.network import (DESK, EVAL, FULL, TRAIN, build_cnn, build_scae, forward, init_model,
                              network_input)
from deepfont.numerics import mse_loss, softmax_xent


@pytest.fixture(scope="module")
def spec():
    return build_cnn(DESK, 5, 2)


def batch(n, seed=0, dtype=np.float64):
    return network_input(np.random.default_rng(seed).random((n, 105, 105)), dtype)


def test_desk_layout(spec):
    assert spec.names == ["conv1", "conv2", "conv3", "fc4", "fc5", "fc6"]
    shapes = dict(zip(spec.names, spec.param_shapes()))
    assert shapes["fc5"][0] == (256, 256) and shapes["fc6"][0] == (256, 5)


def test_full_layout_feeds_fc6_36864():
    full = build_cnn(FULL, 2383, 2)
    shapes = dict(zip(full.names, full.param_shapes()))
    assert shapes["fc6"][0] == (36864, 4096)
    assert shapes["fc7"][0] == (4096, 4096) and shapes["fc8"][0] == (4096, 2383)


def test_k_split_bounds():
    with pytest.raises(ValueError):
        build_cnn(DESK, 5, 0)
    with pytest.raises(ValueError):
        build_cnn(DESK, 5, 6)
    assert build_cnn(DESK, 5, 5).k_split == 5


def test_forward_shapes(spec):
    model = init_model(spec, np.random.default_rng(0), np.float64)
    out = forward(model, batch(3)).acts[-1]
    assert out.shape == (3, 5)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        forward(model, np.zeros((1, 1, 50, 50)))


def test_dropout_only_in_train_mode(spec):
    model = init_model(spec, np.random.default_rng(0), np.float64)
    x = batch(2)
    a = forward(model, x, EVAL).acts[-1]
    b = forward(model, x, EVAL).acts[-1]
    c = forward(model, x, TRAIN, np.random.default_rng(1)).acts[-1]
    assert np.array_equal(a, b) and not np.allclose(a, c)
    with pytest.raises(ValueError):
        forward(model, x, TRAIN)


def _probe_entries(rng, shape, n=3):
    return [tuple(int(rng.integers(s)) for s in shape) for _ in range(n)]


def test_network_gradient_matches_finite_differences(spec):
    model = init_model(spec, np.random.default_rng(2), np.float64)
    model.params[0]["b"] += 0.05  # avoid ReLU kinks at exactly zero
    x = batch(2, 3)
    labels = np.array([1, 3])
    idx = network.logits_index(spec)

    def loss():
        return softmax_xent(forward(model, x, EVAL, stop=idx).acts[-1], labels)[0]

    trace = forward(model, x, EVAL, stop=idx)
    _, g = softmax_xent(trace.acts[-1], labels)
    grads = network.backward(model, trace, g)
    rng = np.random.default_rng(4)
    eps = 1e-6
    for j, p in enumerate(model.params):
        for name in ("w", "b"):
            for e in _probe_entries(rng, p[name].shape):
                old = p[name][e]
                p[name][e] = old + eps
                hi = loss()
                p[name][e] = old - eps
                lo = loss()
                p[name][e] = old
                num = (hi - lo) / (2 * eps)
                assert abs(num - grads[j][name][e]) <= 1e-4 * max(1e-3, abs(num))


def test_scae_reconstructs_input_shape_and_gradients(spec):
    scae = build_scae(spec, 2)
    assert scae.shapes[-1] == spec.input_shape
    model = init_model(scae, np.random.default_rng(5), np.float64)
    x = batch(1, 6)
    trace = forward(model, x)
    _, g = mse_loss(trace.acts[-1], x)
    grads = network.backward(model, trace, g, upto=len(scae.layers))
    p = model.params[-1]
    e = (0, 3, 1, 1)
    old = p["w"][e]
    p["w"][e] = old + 1e-6
    hi = mse_loss(forward(model, x).acts[-1], x)[0]
    p["w"][e] = old - 1e-6
    lo = mse_loss(forward(model, x).acts[-1], x)[0]
    p["w"][e] = old
    assert abs((hi - lo) / 2e-6 - grads[-1]["w"][e]) < 1e-4 * abs(grads[-1]["w"][e]) + 1e-10


def test_scae_encoder_matches_cnn_prefix(spec):
    for k in (1, 2, 3, 4):
        scae = build_scae(spec, k)
        assert scae.param_shapes()[:k] == spec.param_shapes()[:k]


def test_split_reassemble_identity(spec):
    model = init_model(spec, np.random.default_rng(7))
    cu, cs = network.split(model)
    assert cu.names == ["conv1", "conv2"] and len(cs.names) == 4
    again = network.reassemble(spec, cu, cs)
    assert all(np.array_equal(a["w"], b["w"]) for a, b in zip(model.params, again.params))


def test_import_cu_copies_and_freezes(spec):
    encoder = init_model(build_scae(spec, 2), np.random.default_rng(8))
    model = network.import_cu(init_model(spec, np.random.default_rng(9)), encoder)
    assert model.frozen == [True, True, False, False, False, False]
    for j in range(2):
        assert np.array_equal(model.params[j]["w"], encoder.params[j]["w"])


def test_backward_skips_frozen(spec):
    model = init_model(spec, np.random.default_rng(10), np.float64)
    model.frozen[:2] = [True, True]
    trace = forward(model, batch(2), stop=network.logits_index(spec))
    _, g = softmax_xent(trace.acts[-1], np.array([0, 1]))
    grads = network.backward(model, trace, g)
    assert grads[0] is None and grads[1] is None and grads[2] is not None


def test_spec_dict_round_trip(spec):
    scae = build_scae(spec, 2)
    for s in (spec, scae, build_cnn(FULL, 2383, 3)):
        assert network.NetworkSpec.from_dict(s.to_dict()) == s


def test_factored_forward_matches_dense(spec):
    model = init_model(spec, np.random.default_rng(11), np.float64)
    j = spec.index_of("fc5")
    w = model.params[j]["w"]
    u, s, vt = np.linalg.svd(w)
    fact = model.copy()
    fact.params[j] = {"u": u, "s": s, "v": vt.T, "b": model.params[j]["b"]}
    x = batch(2, 12)
    np.testing.assert_allclose(forward(fact, x).acts[-1], forward(model, x).acts[-1], atol=1e-12)


def test_index_of(spec):
    assert spec.index_of("fc5") == 4 and spec.index_of(0) == 0
    with pytest.raises(KeyError):
        spec.index_of("fc9")
