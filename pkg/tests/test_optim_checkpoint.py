import numpy as np
import pytest

from aped.autograd import Tensor
from aped.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from aped.optim import AdamState, adam_step, clip_global_norm
from aped.rng import make_rng


def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    params = {"w": p}
    state = AdamState()
    adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_lr_sized():
    # m_hat = g, v_hat = g^2 -> step = lr * g/(|g|+eps) ~= lr
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState()
    adam_step({"w": p}, {"w": np.array([1.0])}, state, lr=0.001)
    assert p.data[0] == pytest.approx(-0.001, rel=1e-6)


def test_adam_hand_computed_two_steps():
    lr, b1, b2, eps = 0.001, 0.9, 0.999, 1e-8
    g1, g2 = 1.0, 0.5
    m = v = 0.0
    x = 0.3
    m = b1 * m + (1 - b1) * g1
    v = b2 * v + (1 - b2) * g1 * g1
    x -= lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
    m = b1 * m + (1 - b1) * g2
    v = b2 * v + (1 - b2) * g2 * g2
    x -= lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)

    p = Tensor(np.array([0.3]), requires_grad=True)
    state = AdamState()
    adam_step({"w": p}, {"w": np.array([g1])}, state, lr=lr)
    adam_step({"w": p}, {"w": np.array([g2])}, state, lr=lr)
    assert p.data[0] == pytest.approx(x, abs=1e-15)


def test_adam_deterministic_trajectories():
    rng = make_rng(1, "adam")
    grads = [rng.normal(size=(4, 3)) for _ in range(20)]

    def run():
        p = Tensor(np.ones((4, 3)), requires_grad=True)
        state = AdamState()
        for g in grads:
            adam_step({"w": p}, {"w": g}, state, lr=0.01)
        return p.data

    np.testing.assert_array_equal(run(), run())


def test_adam_shape_mismatch():
    p = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        adam_step({"w": p}, {"w": np.ones(4)}, AdamState(), lr=0.1)


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    assert total == pytest.approx(1.0)


def test_clip_noop_below_threshold():
    grads = {"a": np.array([0.3])}
    clip_global_norm(grads, 5.0)
    assert grads["a"][0] == 0.3


def test_checkpoint_roundtrip(tmp_path):
    rng = make_rng(2, "ckpt")
    entries = {
        "b.weight": rng.normal(size=(3, 4)),
        "a.bias": rng.normal(size=(7,)),
        "scalar": np.array(2.5),
    }
    path = tmp_path / "x.ckpt"
    save_checkpoint(entries, path)
    back = load_checkpoint(path)
    assert set(back) == set(entries)
    for name in entries:
        np.testing.assert_array_equal(back[name], entries[name])
    # rewriting the loaded dict is byte-identical (sorted names, fixed layout)
    path2 = tmp_path / "y.ckpt"
    save_checkpoint(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_header_layout(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint({"w": np.zeros((2, 2))}, path)
    blob = path.read_bytes()
    assert blob[:8] == b"APEDCKPT"
    assert blob[8] == 1  # version
    assert int.from_bytes(blob[9:13], "little") == 1  # entry count


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint({"w": np.ones((4, 4))}, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
