import numpy as np
import pytest

from deepfont import glyphgen, network, training
from deepfont.errors import NumericError
from deepfont.network import DESK, build_cnn, init_model
from deepfont.training import EpochRecord, TrainConfig, TrainLog


@pytest.fixture(scope="module")
def tiny_data():
    cfg = glyphgen.DomainConfig.for_classes(3)
    syn = glyphgen.make_domain(cfg, glyphgen.SYN, 6, np.random.default_rng(0))
    val = glyphgen.make_domain(cfg, glyphgen.SYN, 2, np.random.default_rng(1))
    real = glyphgen.make_domain(cfg, glyphgen.PSEUDO_REAL, 6, np.random.default_rng(2), labeled=False)
    return syn, val, real


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_drop_factor=1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 0.1})
    assert TrainConfig.from_dict({"rank_constraint": ["fc5", 16]}).rank_constraint == ("fc5", 16)


def test_log_invariants():
    log = TrainLog()
    log.add(EpochRecord(1, "SUPERVISED", 0.01, 1.0, 0.5, 0.1))
    with pytest.raises(ValueError):
        log.add(EpochRecord(1, "SUPERVISED", 0.01, 1.0, 0.5, 0.1))
    with pytest.raises(ValueError):
        log.add(EpochRecord(2, "SUPERVISED", 0.1, 1.0, 0.5, 0.1))
    log.add(EpochRecord(1, "RANK_FT", 0.1, 1.0, 0.5, 0.1))


def _model():
    spec = build_cnn(DESK, 3, 2)
    return init_model(spec, np.random.default_rng(0), np.float64)


def _grads(model, seed=1, scale=1.0):
    rng = np.random.default_rng(seed)
    return [{k: scale * rng.normal(size=v.shape) for k, v in p.items()} for p in model.params]


def test_sgd_single_step_closed_form():
    model = _model()
    before = model.copy()
    grads = _grads(model)
    cfg = TrainConfig()
    training.sgd_step(model, grads, training.SGDState(model), cfg, 0.01)
    for p0, p1, g in zip(before.params, model.params, grads):
        np.testing.assert_allclose(p1["w"], p0["w"] - 0.01 * (g["w"] + 0.0005 * p0["w"]), atol=1e-15)
        np.testing.assert_allclose(p1["b"], p0["b"] - 0.01 * g["b"], atol=1e-15)


def test_sgd_momentum_second_step():
    model = _model()
    w0 = model.params[3]["w"].copy()
    cfg = TrainConfig(weight_decay=0.0)
    state = training.SGDState(model)
    g1, g2 = _grads(model, 1), _grads(model, 2)
    training.sgd_step(model, g1, state, cfg, 0.1)
    training.sgd_step(model, g2, state, cfg, 0.1)
    v1 = -0.1 * g1[3]["w"]
    v2 = 0.9 * v1 - 0.1 * g2[3]["w"]
    np.testing.assert_allclose(model.params[3]["w"], w0 + v1 + v2, atol=1e-14)


def test_sgd_zero_grad_no_decay_is_noop_and_frozen_untouched():
    model = _model()
    before = model.copy()
    zero = _grads(model, scale=0.0)
    training.sgd_step(model, zero, training.SGDState(model), TrainConfig(weight_decay=0.0), 0.01)
    assert all(np.array_equal(a["w"], b["w"]) for a, b in zip(before.params, model.params))
    model.frozen[0] = True
    training.sgd_step(model, _grads(model), training.SGDState(model), TrainConfig(), 0.01)
    assert np.array_equal(model.params[0]["w"], before.params[0]["w"])


def test_scae_recipes():
    assert training.scae_recipe("N") == (frozenset(), False)
    assert training.scae_recipe("S") == (frozenset({1, 2, 3, 4}), False)
    assert training.scae_recipe("F") == (frozenset(range(1, 7)), False)
    assert training.scae_recipe("R") == (None, True)
    assert training.scae_recipe("FR") == (frozenset(range(1, 7)), True)
    with pytest.raises(ValueError):
        training.scae_recipe("X")


def test_scae_checks_data(tiny_data):
    syn, _, _ = tiny_data
    spec = build_cnn(DESK, 3, 2)
    with pytest.raises(ValueError):
        training.train_scae("R", syn, None, TrainConfig(max_epochs=1), spec)
    with pytest.raises(ValueError):  # syn was rendered with all six steps
        training.train_scae("S", syn, None, TrainConfig(max_epochs=1), spec)


def test_mixed_schedule_alternates():
    assert training._mixed_schedule(6, 0.5) == [False, True] * 3
    assert sum(training._mixed_schedule(100, 0.25)) == 25


def test_scae_deterministic_and_logged(tiny_data):
    syn, _, real = tiny_data
    spec = build_cnn(DESK, 3, 2)
    cfg = TrainConfig(max_epochs=2, batch_size=4, seed=3)
    val = {"N": syn.images[:3], "R": real.images[:3]}
    a, log = training.train_scae("FR", syn, real, cfg, spec, val)
    b, _ = training.train_scae("FR", syn, real, cfg, spec, val)
    assert all(np.array_equal(p["w"], q["w"]) for p, q in zip(a.params, b.params))
    assert [r.epoch for r in log.records] == [0, 1, 2]
    assert {"val_N", "val_R"} <= set(log.records[-1].extra)
    assert len({r.lr for r in log.records}) == 1


def test_supervised_keeps_cu_frozen_and_lr_schedule(tiny_data):
    syn, val, _ = tiny_data
    spec = build_cnn(DESK, 3, 2)
    model = init_model(spec, np.random.default_rng(4))
    model.frozen[:2] = [True, True]
    cfg = TrainConfig(max_epochs=6, batch_size=6, patience=1)
    out, log = training.train_supervised(model, syn, val, cfg)
    for j in range(2):
        assert np.array_equal(out.params[j]["w"], model.params[j]["w"])
    assert not np.array_equal(out.params[2]["w"], model.params[2]["w"])
    allowed = {0.01, 0.001, 0.0001, 0.00001}
    assert all(any(abs(r.lr - a) < 1e-15 for a in allowed) for r in log.records)


def test_supervised_rejects_unlabeled(tiny_data):
    _, val, real = tiny_data
    model = init_model(build_cnn(DESK, 3, 2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        training.train_supervised(model, real, val, TrainConfig(max_epochs=1))


def test_rank_projector_matches_oracle():
    rng = np.random.default_rng(5)
    proj = training.RankProjector(4)
    w = rng.normal(size=(40, 30)).astype(np.float32)
    for _ in range(3):
        out = proj(w)
        u, s, vt = np.linalg.svd(w.astype(np.float64))
        np.testing.assert_allclose(out, (u[:, :4] * s[:4]) @ vt[:4], atol=1e-5)
        w = out + 0.01 * rng.normal(size=w.shape).astype(np.float32)
    wide = rng.normal(size=(10, 20))
    assert np.linalg.matrix_rank(training.RankProjector(3)(wide), tol=1e-8) == 3
    assert np.array_equal(training.RankProjector(30)(wide), wide)


def test_rank_constrained_every_step(tiny_data):
    syn, val, _ = tiny_data
    model = init_model(build_cnn(DESK, 3, 2), np.random.default_rng(6))
    ratios = []

    def check(step, m):
        s = np.linalg.svd(m.params[4]["w"].astype(np.float64), compute_uv=False)
        ratios.append(s[8] / s[0])

    cfg = TrainConfig(max_epochs=2, batch_size=6, lr0=0.001)
    out, log = training.train_rank_constrained(model, "fc5", 8, syn, val, cfg, on_step=check)
    assert len(ratios) == 6 and max(ratios) <= 1e-6
    assert log.records[-1].extra["steps"] == 6
    with pytest.raises(ValueError):
        training.train_rank_constrained(model, "conv1", 8, syn, val, cfg)


def test_divergence_raises(tiny_data):
    syn, val, _ = tiny_data
    model = init_model(build_cnn(DESK, 3, 2), np.random.default_rng(7))
    with pytest.raises(NumericError):
        training.train_supervised(model, syn, val, TrainConfig(max_epochs=2, batch_size=6, lr0=1e6))
