import numpy as np
import pytest

from topicgrid.errors import ConfigError, ShapeError
from topicgrid.layout import GridAssignment, apply_assignment
from topicgrid.metrics import MetricSeries
from topicgrid.models import (
    ARCHITECTURES, LRCN, MLP, SCCN, ModelConfig, build_model, forward_sequence, load_model,
    objective, predict, train_epoch,
)
from topicgrid.neurons import Adam

from oracles import model_grad_error

SMALL = dict(k=4, T=3, dense_widths=(16,), lstm_width=6, channels=2, kernel=2, conv_layers=2)


def small(arch, **kw):
    return build_model(ModelConfig(arch, **{**SMALL, **kw}))


def test_mlp_widths():
    m = build_model(ModelConfig("mlp", k=8, T=8))
    assert isinstance(m, MLP)
    assert m.input_width == 512
    assert m.layers["dense0"].params["W"].shape == (256, 512)
    assert m.layers["readout"].params["W"].shape[0] == 64


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_output_shape(arch, rng):
    m = small(arch)
    assert m.forward(rng.random((5, 3, 4, 4))).shape == (5, 4, 4)
    assert forward_sequence(m, rng.random((3, 4, 4))).shape == (4, 4)


def test_lrcn_sccn_stage_shapes():
    cfg = ModelConfig("lrcn", k=8, T=8)
    lrcn, sccn = build_model(cfg), build_model(cfg.with_arch("sccn"))
    assert lrcn.stage_shapes(5) == sccn.stage_shapes(5) == [(5, 8, 6, 6), (5, 8, 4, 4)]
    x = np.zeros((2, 1, 8, 8))
    for a, b in zip(lrcn.spatial_layers, sccn.spatial_layers):
        x_a, x_b = a.forward(x), b.forward(x)
        assert x_a.shape == x_b.shape
        x = x_a


def test_sccn_parameter_count_closed_form():
    cfg = ModelConfig("lrcn", k=8, T=8)
    lrcn, sccn = build_model(cfg), build_model(cfg.with_arch("sccn"))
    C, q = cfg.channels, cfg.kernel
    conv = (C * 1 * q * q + C) + (C * C * q * q + C)
    lcn = 36 * (C * 1 * q * q + C) + 16 * (C * C * q * q + C)
    shared = lrcn.n_params - conv
    assert sccn.n_params == shared + lcn
    assert sccn.n_params > lrcn.n_params


def test_unknown_architecture():
    with pytest.raises(ConfigError):
        ModelConfig("cnn")
    with pytest.raises(ConfigError):
        ModelConfig("lrcn", k=4, kernel=3, conv_layers=2)
    with pytest.raises(ConfigError):
        ModelConfig("mlp", lstm_width=0)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_zero_input_zero_output(arch):
    m = small(arch)
    for name, p in m.parameters().items():
        if name.endswith(".b"):
            p[...] = 0.0
    assert np.all(m.forward(np.zeros((2, 3, 4, 4))) == 0.0)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_deterministic(arch, rng):
    x = rng.random((3, 3, 4, 4))
    a, b = small(arch), small(arch)
    assert np.array_equal(a.forward(x), b.forward(x))
    assert np.array_equal(a.forward(x), a.forward(x))


def test_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        small("lrcn").forward(rng.random((2, 4, 4, 4)))


def test_sccn_from_lrcn_equal_first_loss(rng):
    lrcn = build_model(ModelConfig("lrcn", k=8, T=4, seed=3))
    sccn = SCCN.from_lrcn(lrcn)
    X, Y = rng.random((6, 4, 8, 8)), rng.random((6, 8, 8))
    # the L2 term differs (each positional kernel is penalized); the data loss does not
    assert objective(lrcn, X, Y)[0] == objective(sccn, X, Y)[0]


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_full_gradients(arch):
    for seed in range(3):
        assert model_grad_error(arch, seed) < 1e-4


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_zero_learning_rate(arch, rng):
    m = small(arch)
    before = {k: v.copy() for k, v in m.parameters().items()}
    X, Y = rng.random((10, 3, 4, 4)), rng.random((10, 4, 4))
    opt = Adam(lr=0.0)
    r1 = train_epoch(m, X, Y, opt, epoch=0, batch_size=5)
    r2 = train_epoch(m, X, Y, opt, epoch=1, batch_size=5)
    for k, v in m.parameters().items():
        assert np.array_equal(v, before[k])
    assert r1.mean_loss == pytest.approx(r2.mean_loss, rel=1e-12)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_epoch_reports_reproducible(arch, rng):
    X, Y = rng.random((12, 3, 4, 4)), rng.random((12, 4, 4))
    runs = []
    for _ in range(2):
        m = small(arch)
        opt = Adam(lr=1e-2)
        runs.append([train_epoch(m, X, Y, opt, epoch=e, batch_size=5).losses for e in range(2)])
    assert runs[0] == runs[1]


def test_train_epoch_rejects_empty():
    with pytest.raises(ConfigError):
        train_epoch(small("mlp"), np.zeros((0, 3, 4, 4)), np.zeros((0, 4, 4)), Adam())


def test_training_reduces_loss(rng):
    m = small("lrcn")
    X = rng.random((40, 3, 4, 4))
    Y = X[:, -1]
    opt = Adam(lr=1e-2)
    first = train_epoch(m, X, Y, opt, epoch=0, batch_size=8).mean_loss
    for e in range(1, 30):
        last = train_epoch(m, X, Y, opt, epoch=e, batch_size=8).mean_loss
    assert last < 0.5 * first


def test_predict_uses_last_periods(rng):
    m = small("mlp")
    a = GridAssignment(4, np.array([[t % 4, t // 4] for t in range(16)]))
    values = rng.random((5, 16))
    frame, vec = predict(m, MetricSeries("e", values), a)
    expected = m.forward(apply_assignment(values[-3:], a)[None])[0]
    assert np.array_equal(frame, expected)
    assert np.array_equal(vec, frame[a.cells[:, 0], a.cells[:, 1]])
    with pytest.raises(ConfigError):
        predict(m, values[:2], a)


def test_zero_weight_model_predicts_zero(rng):
    m = small("sccn")
    for p in m.parameters().values():
        p[...] = 0.0
    frame, _ = predict(m, rng.random((4, 16)), GridAssignment.identity(4))
    assert np.all(frame == 0.0)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_save_load(arch, tmp_path, rng):
    m = small(arch, seed=4)
    m.save(tmp_path / arch)
    back, manifest = load_model(tmp_path / arch)
    assert back.cfg == m.cfg
    x = rng.random((2, 3, 4, 4))
    assert np.array_equal(back.forward(x), m.forward(x))
    assert manifest["seed"] == 4
