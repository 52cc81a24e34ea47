import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rftraffic.dataset import SliceSpec, build_generative_dataset, partition_blocks
from rftraffic.errors import Diverged, SchemaMismatch, ShapeMismatch
from rftraffic.neural.checkpoint import Checkpoint
from rftraffic.neural.gradcheck import check_gradients, relative_error
from rftraffic.neural.lstm import init_lstm, lstm_cell_forward, lstm_layer_forward
from rftraffic.neural.model import (
    ModelArch,
    forward,
    forward_classifier,
    init_params,
    loss_and_grads,
    loss_crossentropy,
    loss_mse,
    softmax,
)
from rftraffic.neural.optim import AdamState, adam_step, clip_by_global_norm
from rftraffic.neural.training import Hyper, evaluate, free_run_generate, train, write_metrics


class ArraySet:
    """Minimal in-memory stand-in for an ExampleSet."""

    def __init__(self, x, labels):
        self.x = np.asarray(x)
        self.labels = np.asarray(labels, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    def batch(self, idx, dtype=np.float32):
        return self.x[idx].astype(dtype)


def unit_params(W, U, b):
    return {"W": np.array(W, float).reshape(4, 1), "U": np.array(U, float).reshape(4, 1),
            "b": np.array(b, float)}


# -- cell and layer --------------------------------------------------------------

def test_cell_zero_fixed_point():
    p = {"W": np.zeros((12, 5)), "U": np.zeros((12, 3)), "b": np.zeros(12)}
    h, c, _ = lstm_cell_forward(np.random.default_rng(0).standard_normal((2, 5)),
                                np.zeros((2, 3)), np.zeros((2, 3)), p)
    assert np.all(h == 0) and np.all(c == 0)


def test_cell_single_unit_hand_value():
    # z = (0.1, 1.05, 0.175, 0.175) for x = 0.5, h = 0.1, c = 0.2
    p = unit_params([0.1, 0.2, 0.3, 0.4], [0.5, -0.5, 0.25, -0.25], [0, 1, 0, 0])
    h, c, _ = lstm_cell_forward([[0.5]], [[0.1]], [[0.2]], p)
    assert h[0, 0] == pytest.approx(0.1275622756100837, abs=1e-12)
    assert c[0, 0] == pytest.approx(0.2390998322392566, abs=1e-12)


def test_cell_saturated_gates_accumulate():
    p = unit_params([0, 0, 1, 0], [0, 0, 0, 0], [20, 20, 0, 20])
    c_prev = 0.3
    for x in (-0.4, 0.1, 0.25):
        _, c, _ = lstm_cell_forward([[x]], [[0.0]], [[c_prev]], p)
        sig = 1 / (1 + math.exp(-20))
        assert c[0, 0] == pytest.approx(sig * c_prev + sig * math.tanh(x), abs=1e-12)
        assert c[0, 0] == pytest.approx(c_prev + math.tanh(x), abs=1e-8)


def test_layer_single_step_is_cell():
    rng = np.random.default_rng(1)
    p = init_lstm(rng, 6, 4, np.float64)
    x = rng.standard_normal((1, 3, 6))
    hs, _ = lstm_layer_forward(x, p)
    h, _, _ = lstm_cell_forward(x[0], np.zeros((3, 4)), np.zeros((3, 4)), p)
    np.testing.assert_array_equal(hs[0], h)


def test_layer_constant_input_without_carry():
    rng = np.random.default_rng(2)
    p = init_lstm(rng, 3, 5, np.float64)
    p["U"][:] = 0
    p["W"][5:10] = 0
    p["b"][5:10] = -50.0  # forget gate shut
    x = np.repeat(rng.standard_normal((1, 2, 3)), 6, axis=0)
    hs, _ = lstm_layer_forward(x, p)
    for t in range(1, 6):
        np.testing.assert_allclose(hs[t], hs[0], atol=1e-12)


def test_layer_pure():
    rng = np.random.default_rng(3)
    p = init_lstm(rng, 4, 4)
    x = rng.standard_normal((5, 2, 4)).astype(np.float32)
    a, _ = lstm_layer_forward(x, p)
    b, _ = lstm_layer_forward(x, p)
    np.testing.assert_array_equal(a, b)


def test_shape_mismatch():
    p = init_lstm(np.random.default_rng(0), 4, 3)
    with pytest.raises(ShapeMismatch):
        lstm_layer_forward(np.zeros((2, 1, 5)), p)
    with pytest.raises(ShapeMismatch):
        lstm_cell_forward(np.zeros((1, 4)), np.zeros((1, 2)), np.zeros((1, 3)), p)
    arch = ModelArch.classifier(8, 2, hidden=4, fc_hidden=4)
    with pytest.raises(ShapeMismatch):
        forward(arch, init_params(arch, 0), np.zeros((1, 3, 2, 3)))


def test_forget_bias_init():
    p = init_lstm(np.random.default_rng(0), 3, 4)
    np.testing.assert_array_equal(p["b"][4:8], 1.0)
    np.testing.assert_array_equal(np.delete(p["b"], range(4, 8)), 0.0)


# -- heads and losses ------------------------------------------------------------

def test_classifier_probabilities():
    arch = ModelArch.classifier(4, 2, hidden=8, fc_hidden=8)
    params = init_params(arch, 0)
    x = np.random.default_rng(0).standard_normal((3, 2, 2)).astype(np.float32)
    p = forward_classifier(x, arch, params)
    assert p.shape == (2,) and np.all((p > 0) & (p < 1)) and abs(p.sum() - 1) < 1e-6
    np.testing.assert_array_equal(forward_classifier(x, arch, params),
                                  forward_classifier(np.stack([x, x]), arch, params)[1])
    a = forward_classifier(x, arch, params, train_mode=True, dropout_seed=4)
    b = forward_classifier(x, arch, params, train_mode=True, dropout_seed=4)
    np.testing.assert_array_equal(a, b)


@given(st.lists(st.floats(-500, 500), min_size=2, max_size=11))
def test_softmax_invariants(logits):
    p = softmax(np.array([logits]))
    assert abs(p.sum() - 1) < 1e-6 and np.all(p >= 0)


def test_softmax_positive_for_moderate_logits():
    p = softmax(np.random.default_rng(0).uniform(-30, 30, (100, 11)))
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)


def test_losses():
    oh = np.eye(4)
    assert loss_crossentropy(oh, oh) <= 1e-6
    assert loss_crossentropy(np.full((3, 11), 1 / 11), np.eye(11)[:3]) == pytest.approx(math.log(11))
    t = np.random.default_rng(0).standard_normal((4, 6))
    assert loss_mse(t, t) == 0.0
    assert loss_mse(t, t + 2) == pytest.approx(4.0)


# -- gradients -------------------------------------------------------------------

def tiny_batch(kind, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 3, 2, 2))  # B=3, N=3, C=2, L=2
    y = rng.integers(0, 2, 3) if kind == "classifier" else rng.standard_normal((3, 4))
    return x, y


@pytest.mark.parametrize("readout", ["last", "mean"])
@pytest.mark.parametrize("train_mode", [False, True])
def test_gradcheck_classifier(readout, train_mode):
    arch = ModelArch.classifier(4, 2, hidden=4, fc_hidden=5, dropout=0.3, readout=readout)
    params = init_params(arch, 1, np.float64)
    x, y = tiny_batch("classifier")
    errs = check_gradients(arch, params, x, y, train=train_mode, dropout_seed=7)
    assert set(errs) == set(params)
    assert max(errs.values()) < 1e-4, errs


@pytest.mark.parametrize("readout", ["last", "mean"])
def test_gradcheck_generator(readout):
    arch = ModelArch.generator(4, hidden=4, dropout=0.2, readout=readout)
    params = init_params(arch, 2, np.float64)
    x, y = tiny_batch("generator")
    errs = check_gradients(arch, params, x, y, train=True, dropout_seed=3)
    assert max(errs.values()) < 1e-4, errs


def test_gradcheck_three_layers():
    arch = ModelArch.classifier(4, 3, hidden=3, fc_hidden=None, dropout=0.0, n_layers=3)
    params = init_params(arch, 5, np.float64)
    x, _ = tiny_batch("classifier")
    errs = check_gradients(arch, params, x, np.array([0, 2, 1]))
    assert max(errs.values()) < 1e-4, errs


def test_relative_error_definition():
    assert relative_error(np.array([1.0]), np.array([1.0]))[0] == 0
    assert relative_error(np.array([1.0]), np.array([3.0]))[0] == pytest.approx(0.5)
    assert relative_error(np.array([0.0]), np.array([1e-11]))[0] < 1e-4
    assert relative_error(np.array([1e-6]), np.array([1.1e-6]))[0] > 1e-2


def test_gradcheck_detects_a_wrong_gradient(monkeypatch):
    import rftraffic.neural.gradcheck as gc
    arch = ModelArch.classifier(4, 2, hidden=4, fc_hidden=5, dropout=0.0)
    params = init_params(arch, 1, np.float64)
    x, y = tiny_batch("classifier")

    def skewed(*args, **kwargs):
        loss, grads, out = loss_and_grads(*args, **kwargs)
        grads["lstm0.U"] = grads["lstm0.U"] * 1.001
        return loss, grads, out

    monkeypatch.setattr(gc, "loss_and_grads", skewed)
    errs = gc.check_gradients(arch, params, x, y)
    assert errs["lstm0.U"] > 1e-4


def test_zero_loss_gives_zero_gradient():
    arch = ModelArch.generator(4, hidden=4)
    params = init_params(arch, 0, np.float64)
    x, _ = tiny_batch("generator")
    pred, _ = forward(arch, params, x)
    loss, grads, _ = loss_and_grads(arch, params, x, pred, train=False)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads.values())


def test_eval_mode_dropout_is_pass_through():
    x, y = tiny_batch("classifier")
    with_p = ModelArch.classifier(4, 2, hidden=4, fc_hidden=4, dropout=0.5)
    without = ModelArch.classifier(4, 2, hidden=4, fc_hidden=4, dropout=0.0)
    params = init_params(with_p, 0, np.float64)
    la, ga, _ = loss_and_grads(with_p, params, x, y, train=False)
    lb, gb, _ = loss_and_grads(without, params, x, y, train=True, dropout_seed=1)
    assert la == lb
    for k in params:
        np.testing.assert_array_equal(ga[k], gb[k])


def test_inverted_dropout_expectation():
    # one layer then dropout then a linear head: the train-mode mean is the eval output
    arch = ModelArch.generator(4, hidden=6, dropout=0.5, n_layers=1)
    params = init_params(arch, 0, np.float64)
    x = np.random.default_rng(0).standard_normal((1, 2, 2, 2))
    ref, _ = forward(arch, params, x)
    acc = np.zeros_like(ref)
    for s in range(10_000):
        acc += forward(arch, params, x, train=True, dropout_seed=s)[0]
    np.testing.assert_allclose(acc / 10_000, ref, atol=0.02 * np.abs(ref).max())


# -- optimizer -------------------------------------------------------------------

def test_adam_zero_gradient_no_change():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_hand_formula():
    p = {"w": np.array([0.5, 0.5])}
    g = np.array([0.2, -3.0])
    state = AdamState()
    adam_step(p, {"w": g}, state, lr=0.01)
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    np.testing.assert_allclose(p["w"], 0.5 - 0.01 * g / (np.abs(g) + 1e-8), atol=1e-15)
    assert state.step == 1


def test_adam_second_step_hand_formula():
    p = {"w": np.array([0.0])}
    state = AdamState()
    adam_step(p, {"w": np.array([1.0])}, state, lr=0.1)
    adam_step(p, {"w": np.array([-1.0])}, state, lr=0.1)
    m = 0.9 * 0.1 + 0.1 * -1.0
    v = 0.999 * 0.001 + 0.001
    step2 = 0.1 * (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert p["w"][0] == pytest.approx(-0.1 * 1 / (1 + 1e-8) - step2, abs=1e-12)


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_by_global_norm(g, 1.0) == pytest.approx(5.0)
    assert math.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)


# -- training --------------------------------------------------------------------

def sign_task(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    x = np.ones((n, 4, 2, 8)) * np.where(labels == 1, 1.0, -1.0)[:, None, None, None]
    return ArraySet(x, labels)


def test_separable_task_perfect_within_five_epochs():
    arch = ModelArch.classifier(16, 2, hidden=8, fc_hidden=8, dropout=0.5)
    _, metrics = train(sign_task(1000, 0), sign_task(100, 1), arch, Hyper(epochs=5), seed=0)
    assert max(m["val_acc"] for m in metrics) == 1.0


def test_overfit_fifty_examples():
    rng = np.random.default_rng(0)
    data = ArraySet(rng.standard_normal((50, 4, 2, 8)), rng.integers(0, 2, 50))
    arch = ModelArch.classifier(16, 2, hidden=32, fc_hidden=32, dropout=0.0)
    reached = []
    hyper = Hyper(epochs=200, lr=1e-2, patience=None)

    def stop(row, _):
        reached.append(row["val_acc"])

    train(data, data, arch, hyper, seed=0, on_epoch=stop)
    assert max(reached) >= 0.99


def test_shuffled_labels_near_chance():
    rng = np.random.default_rng(1)
    tr = ArraySet(rng.standard_normal((400, 4, 2, 8)), rng.integers(0, 4, 400))
    va = ArraySet(rng.standard_normal((400, 4, 2, 8)), rng.integers(0, 4, 400))
    arch = ModelArch.classifier(16, 4, hidden=16, fc_hidden=16)
    _, metrics = train(tr, va, arch, Hyper(epochs=5), seed=0)
    assert abs(metrics[-1]["val_acc"] - 0.25) <= 0.10


def test_training_deterministic_and_resumable():
    arch = ModelArch.classifier(16, 2, hidden=8, fc_hidden=8)
    tr, va = sign_task(64, 2), sign_task(32, 3)
    full, m_full = train(tr, va, arch, Hyper(epochs=4), seed=5)
    again, _ = train(tr, va, arch, Hyper(epochs=4), seed=5)
    assert full.to_bytes() == again.to_bytes()
    half, _ = train(tr, va, arch, Hyper(epochs=2), seed=5)
    half = Checkpoint.from_bytes(half.to_bytes())
    resumed, m_rest = train(tr, va, arch, Hyper(epochs=4), seed=5, resume=half)
    for k in full.params:
        np.testing.assert_array_equal(full.params[k], resumed.params[k])
    assert [m["val_loss"] for m in m_full[2:]] == [m["val_loss"] for m in m_rest]


def test_early_stopping_patience():
    arch = ModelArch.classifier(16, 2, hidden=4, fc_hidden=4)
    rng = np.random.default_rng(0)
    noise = ArraySet(rng.standard_normal((64, 4, 2, 8)), rng.integers(0, 2, 64))
    _, metrics = train(noise, noise, arch, Hyper(epochs=50, patience=1, lr=0.05), seed=0)
    assert len(metrics) < 50


def test_nan_input_diverges():
    x = np.full((8, 2, 2, 2), np.nan)
    data = ArraySet(x, np.zeros(8))
    arch = ModelArch.classifier(4, 2, hidden=4, fc_hidden=4)
    with pytest.raises(Diverged):
        train(data, data, arch, Hyper(epochs=1), seed=0)


def test_metrics_csv(tmp_path):
    write_metrics(tmp_path / "m.csv", [{"epoch": 1, "train_loss": 0.5, "val_loss": 0.25,
                                        "val_acc": float("nan"), "seconds": 1.0}])
    assert (tmp_path / "m.csv").read_text() == \
        "epoch,train_loss,val_loss,val_acc,seconds\n1,0.5,0.25,,1\n"


# -- checkpoints -----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    arch = ModelArch.classifier(16, 2, hidden=8, fc_hidden=8)
    ckpt, _ = train(sign_task(64, 0), sign_task(32, 1), arch, Hyper(epochs=2), seed=1)
    path = ckpt.save(tmp_path / "c.rftc")
    back = Checkpoint.load(path)
    assert back.to_bytes() == ckpt.to_bytes() == path.read_bytes()
    x = sign_task(10, 9).x.astype(np.float32)
    assert forward(arch, back.params, x)[0].tobytes() == forward(arch, ckpt.params, x)[0].tobytes()
    assert back.epoch == 2 and back.adam.step == ckpt.adam.step


def test_checkpoint_corrupt(tmp_path):
    arch = ModelArch.generator(4, hidden=2)
    data = Checkpoint(arch, init_params(arch, 0)).to_bytes()
    with pytest.raises(SchemaMismatch):
        Checkpoint.from_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(SchemaMismatch):
        Checkpoint.from_bytes(data[:-10])


# -- generator -------------------------------------------------------------------

def test_free_run_zero_steps():
    arch = ModelArch.generator(4, hidden=4)
    out = free_run_generate(np.zeros((3, 2, 2)), 0, Checkpoint(arch, init_params(arch, 0)))
    assert out.shape == (0, 2, 2)


def test_identity_generator_on_constant_signal():
    x = np.full(4000, 0.6 - 0.3j, dtype=np.complex64)
    spec = SliceSpec(n_steps=3, window_len=4, stride=4)
    part = partition_blocks(4000, 0.5, 0, block_len=2000)
    tr = build_generative_dataset(x, spec, part, 200, seed=0, split="train")
    va = build_generative_dataset(x, spec, part, 50, seed=1, split="test")
    arch = ModelArch.generator(8, hidden=8)
    ckpt, _ = train(tr, va, arch, Hyper(epochs=60, lr=3e-3, dtype="float64"), seed=0)
    seed_windows = tr.tensors(np.float64)[0][0]
    gen = free_run_generate(seed_windows, 10, ckpt)
    assert np.max(np.abs(gen - seed_windows[-1])) < 1e-3


def test_evaluate_generator_reports_mse():
    x = np.exp(0.2j * np.arange(3000)).astype(np.complex64)
    spec = SliceSpec(n_steps=2, window_len=4, stride=4)
    part = partition_blocks(3000, 0.5, 0, block_len=1500)
    data = build_generative_dataset(x, spec, part, 20, 0)
    arch = ModelArch.generator(8, hidden=4)
    params = init_params(arch, 0)
    loss, acc, _ = evaluate(arch, params, data)
    inputs, targets = data.tensors()
    assert loss == pytest.approx(loss_mse(forward(arch, params, inputs)[0], targets), rel=1e-6)
    assert math.isnan(acc)
