import numpy as np
import pytest

from mapredict.channel import Scenario
from mapredict.dataset import Normalizer, WindowSplit, split_windows
from mapredict.errors import ConfigError, ModelKindMismatchError, TrainingDivergedError, TruncatedFileError
from mapredict.models import (
    ARCH,
    MODEL_KINDS,
    NARX,
    ModelConfig,
    Predictor,
    loss_and_grads,
    param_count,
    persistence,
    train,
)
from mapredict.nn import gradient_check

TOY = ModelConfig(n_antennas=2, win=4, pre=2, lstm_hidden=3, d_model=4, heads=2, bilstm_hidden=3, lstm_only_hidden=3,
                  tf_ff=5, narx_delay=2, narx_hidden=4, dropout=0.3, head_rank=2)
SC = Scenario()


def _prepared(cfg, seed):
    """Toy model with every weight active: zero-initialised output layers get random
    values and the attention inputs are sharpened so query/key gradients are not
    vanishingly small next to finite-difference noise."""
    rng = np.random.default_rng(seed)
    s = ARCH[cfg.kind].build(cfg, rng)
    for name in ("head.W", "head.ar", "head.ar_b", "out.W"):
        if name in s:
            s[name][...] = rng.normal(scale=0.5, size=s[name].shape)
    if "fuse.W" in s:
        s["fuse.W"][...] *= 3
    return s, rng


@pytest.mark.parametrize("axis", ["time", "antenna"])
@pytest.mark.parametrize("rank", [0, 2])
def test_proposed_gradient_check(axis, rank):
    cfg = TOY.with_(kind="proposed", attention_axis=axis, head_rank=rank)
    s, rng = _prepared(cfg, 0)
    X = rng.uniform(size=(3, 4, 2, 3))
    R = rng.normal(size=(3, 2, 2, 3))
    names = s.names()

    def f():
        y, cache = ARCH["proposed"].forward(s, X, cfg, "train", np.random.default_rng(9))
        dx, g = ARCH["proposed"].backward(s, R, cache, cfg)
        return np.sum(y * R), [dx] + [g[n] for n in names]

    assert gradient_check(f, [X] + [s[n] for n in names]) < 1e-4


@pytest.mark.parametrize("kind", ["lstm", "transformer"])
def test_baseline_gradient_check(kind):
    cfg = TOY.with_(kind=kind)
    s, rng = _prepared(cfg, 1)
    X = rng.uniform(size=(3, 4, 2, 3))
    R = rng.normal(size=(3, 2, 2, 3))
    names = s.names()

    def f():
        y, cache = ARCH[kind].forward(s, X, cfg)
        dx, g = ARCH[kind].backward(s, R, cache, cfg)
        return np.sum(y * R), [dx] + [g[n] for n in names]

    assert gradient_check(f, [X] + [s[n] for n in names]) < 1e-4


def test_narx_gradient_check_teacher_forced_loss():
    cfg = TOY.with_(kind="narx")
    s, rng = _prepared(cfg, 2)
    X, Y = rng.uniform(size=(3, 4, 2, 3)), rng.uniform(size=(3, 2, 2, 3))
    names = s.names()

    def f():
        loss, g = loss_and_grads("narx", s, X, Y, cfg)
        return loss, [g[n] for n in names]

    assert gradient_check(f, [s[n] for n in names]) < 1e-4
    U = rng.uniform(size=(3, 2, 2, 3))
    R = rng.normal(size=(3, 2, 3))

    def g():
        y, cache = NARX.step_forward(s, U)
        dU, _ = NARX.step_backward(s, R, cache)
        return np.sum(y * R), [dU]

    assert gradient_check(g, [U]) < 1e-4


def test_full_loss_gradient_with_nmse():
    cfg = TOY.with_(kind="proposed")
    s, rng = _prepared(cfg, 3)
    X, Y = rng.uniform(size=(3, 4, 2, 3)), rng.uniform(size=(3, 2, 2, 3))
    names = s.names()

    def f():
        loss, g = loss_and_grads("proposed", s, X, Y, cfg, "train", np.random.default_rng(4))
        return loss, [g[n] for n in names]

    # the loss is O(1) while some recurrent gradients are ~1e-7; a 1e-4 step keeps
    # roundoff below the bound without visible truncation error
    assert gradient_check(f, [s[n] for n in names], step=1e-4) < 1e-4


def test_proposed_output_shapes_random_configs():
    rng = np.random.default_rng(0)
    for _ in range(20):
        heads = int(rng.integers(1, 4))
        cfg = ModelConfig(kind="proposed", n_antennas=int(rng.integers(1, 5)), win=int(rng.integers(1, 7)),
                          pre=int(rng.integers(1, 6)), lstm_hidden=int(rng.integers(1, 5)),
                          d_model=heads * int(rng.integers(1, 4)), heads=heads, bilstm_hidden=int(rng.integers(1, 5)),
                          head_rank=int(rng.integers(0, 3)), attention_axis=["time", "antenna"][int(rng.integers(2))])
        s = ARCH["proposed"].build(cfg.validate(), rng)
        x = rng.uniform(size=(2, cfg.win, cfg.n_antennas, 3))
        y, _ = ARCH["proposed"].forward(s, x, cfg)
        assert y.shape == (2, cfg.pre, cfg.n_antennas, 3)
        assert s.count() == param_count(cfg)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_all_models_shape_and_param_formula(kind):
    for cfg in (TOY.with_(kind=kind), ModelConfig(kind=kind, win=8, pre=5), TOY.with_(kind=kind, head_rank=0,
                                                                                     ar_skip=False)):
        s = ARCH[kind].build(cfg, np.random.default_rng(0))
        y, _ = ARCH[kind].forward(s, np.random.default_rng(1).uniform(size=(3, cfg.win, cfg.n_antennas, 3)), cfg)
        assert y.shape == (3, cfg.pre, cfg.n_antennas, 3)
        assert s.count() == param_count(cfg)


def test_eval_mode_deterministic():
    cfg = TOY.with_(kind="proposed", dropout=0.5)
    s, rng = _prepared(cfg, 5)
    x = rng.uniform(size=(2, 4, 2, 3))
    a, _ = ARCH["proposed"].forward(s, x, cfg, "eval")
    b, _ = ARCH["proposed"].forward(s, x, cfg, "eval")
    assert a.tobytes() == b.tobytes()
    c, _ = ARCH["proposed"].forward(s, x, cfg, "train", np.random.default_rng(0))
    assert not np.array_equal(a, c)


def test_untrained_models_are_persistence():
    for kind in MODEL_KINDS:
        cfg = TOY.with_(kind=kind)
        s = ARCH[kind].build(cfg, np.random.default_rng(0))
        x = np.random.default_rng(1).uniform(size=(2, 4, 2, 3))
        y, _ = ARCH[kind].forward(s, x, cfg)
        np.testing.assert_array_equal(y, persistence(x, cfg.pre))


def test_narx_constant_sequence_fixed_point():
    cfg = TOY.with_(kind="narx", pre=7)
    s = ARCH["narx"].build(cfg, np.random.default_rng(0))
    s["hid.W"][...] = np.random.default_rng(1).normal(size=s["hid.W"].shape)
    x = np.tile(np.array([[0.2, 0.4, 0.6], [0.1, 0.9, 0.5]]), (1, 4, 1, 1))
    y, _ = NARX.forward(s, x, cfg)
    np.testing.assert_array_equal(y, np.tile(x[:, :1], (1, 7, 1, 1)))


def _split_from(layouts, win, pre):
    return split_windows(layouts, win, pre)


def _box():
    return np.array(SC.box_lo), np.array(SC.box_hi)


def test_constant_windows_train_to_zero_loss():
    lay = np.tile(np.array([0.01, -0.02, 0.005]), (40, 2, 1))
    lay[:, 1] += 0.01
    sp = _split_from(lay, 4, 2)
    cfg = TOY.with_(kind="proposed", epochs=200)
    res = train(sp, cfg, *_box())
    assert min(res.train_curve) < 1e-6


def _toy_split(T=60, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(T)[:, None, None]
    lay = 0.01 * np.sin(2 * np.pi * t / 15 + rng.uniform(0, 6, (1, 2, 3))) + rng.normal(scale=1e-4, size=(T, 2, 3))
    return _split_from(lay, 4, 2)


def test_training_loss_curve_bit_identical():
    sp = _toy_split()
    cfg = TOY.with_(kind="proposed", epochs=5, dropout=0.2, seed=3)
    a = train(sp, cfg, *_box())
    b = train(sp, cfg, *_box())
    assert a.train_curve == b.train_curve and a.val_curve == b.val_curve
    assert a.predictor.store.snapshot().keys() == b.predictor.store.snapshot().keys()
    for k, v in a.predictor.store.snapshot().items():
        assert v.tobytes() == b.predictor.store[k].tobytes()


def test_zero_dropout_reproducible_all_kinds():
    sp = _toy_split()
    for kind in MODEL_KINDS:
        cfg = TOY.with_(kind=kind, epochs=3, dropout=0.0)
        assert train(sp, cfg, *_box()).train_curve == train(sp, cfg, *_box()).train_curve


def test_training_improves_on_toy_sinusoid():
    sp = _toy_split(T=120)
    cfg = TOY.with_(kind="proposed", epochs=40, lr=3e-3)
    res = train(sp, cfg, *_box())
    assert res.val_curve[res.best_epoch] < res.val_curve[0]


def test_divergence_reports_epoch():
    sp = _toy_split()
    bad = WindowSplit(sp.train, sp.val, sp.test, sp.normalizer, sp.win, sp.pre)
    bad.train.Y[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergedError) as exc:
        train(bad, TOY.with_(kind="lstm", epochs=3), *_box())
    assert exc.value.epoch == 0


def test_predict_clamps_into_box_and_counts():
    cfg = TOY.with_(kind="lstm")
    s = ARCH["lstm"].build(cfg, np.random.default_rng(0))
    lo, hi = np.array([-1.0, -1, -1]), np.array([1.0, 1, 1])
    pred = Predictor(cfg, s, Normalizer(lo, hi), lo, hi)
    s["head.b"][...] = 5.0  # pushes every output far outside the box
    hist = np.zeros((4, 2, 3))
    hist[-1] = 1.0  # truth sits on the boundary
    out = pred.predict(hist)
    assert out.positions.shape == (2, 2, 3)
    assert np.all(out.positions <= hi) and np.all(out.positions >= lo)
    assert out.clamped > 0
    s["head.b"][...] = 0.0
    out = pred.predict(hist)
    assert out.clamped == 0
    np.testing.assert_allclose(out.positions, 1.0, rtol=0, atol=1e-12)


def test_normalizer_round_trip_on_truth():
    sp = _toy_split()
    Y = sp.test.Y
    assert np.max(np.abs(sp.normalizer.inverse(sp.normalizer.transform(Y)) - Y)) < 1e-12


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_save_load_predictions_identical(kind, tmp_path):
    sp = _toy_split()
    cfg = TOY.with_(kind=kind, epochs=2)
    res = train(sp, cfg, *_box())
    path = tmp_path / "m.mapw"
    res.predictor.save(path)
    back = Predictor.load(path, kind=kind)
    a = res.predictor.predict(sp.test.X)
    b = back.predict(sp.test.X)
    assert a.positions.tobytes() == b.positions.tobytes()
    assert back.cfg == cfg


def test_load_kind_mismatch_and_truncation(tmp_path):
    sp = _toy_split()
    res = train(sp, TOY.with_(kind="narx", epochs=1), *_box())
    path = tmp_path / "m.mapw"
    res.predictor.save(path)
    with pytest.raises(ModelKindMismatchError):
        Predictor.load(path, kind="proposed")
    data = path.read_bytes()
    path.write_bytes(data[:-13])
    with pytest.raises(TruncatedFileError) as exc:
        Predictor.load(path)
    assert exc.value.expected - exc.value.actual == 13


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=10, heads=4).validate()
    with pytest.raises(ConfigError):
        ModelConfig(kind="gru").validate()
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.0).validate()
    with pytest.raises(ConfigError):
        train(_toy_split(), TOY.with_(win=5), *_box())


def test_persistence_repeats_last():
    h = np.random.default_rng(0).normal(size=(3, 5, 2, 3))
    p = persistence(h, 4)
    assert p.shape == (3, 4, 2, 3)
    for k in range(4):
        np.testing.assert_array_equal(p[:, k], h[:, -1])
