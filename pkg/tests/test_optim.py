"""Optimizers, LR schedules, checkpoint round-trips."""
import numpy as np
import pytest

from hybridqrl import autodiff as ad
from hybridqrl.checkpoint import load_checkpoint, restore_into, save_checkpoint
from hybridqrl.optim import SGD, Adam, piecewise_constant, sgd_step


def test_sgd_step_plain():
    p = {"w": ad.parameter(1.0)}
    sgd_step(p, {"w": np.array(2.0)}, lr=0.1)
    assert np.allclose(p["w"].data, 0.8, atol=1e-15)


def test_sgd_zero_lr_no_change():
    p = {"w": ad.parameter([1.0, -2.0])}
    sgd_step(p, {"w": np.array([5.0, 5.0])}, lr=0.0)
    assert np.array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    # after the first update, bias-corrected Adam moves by ~lr * sign(g)
    p = {"w": ad.parameter(1.0)}
    opt = Adam(p, lr=0.1)
    opt.step({"w": np.array(2.0)})
    assert abs(p["w"].data - 0.9) < 1e-8


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    theta = rng.normal(size=4)
    p = {"w": ad.parameter(theta.copy())}
    opt = Adam(p, lr=0.01)
    # independent reference
    m = np.zeros(4)
    v = np.zeros(4)
    ref = theta.copy()
    for t in range(1, 6):
        g = rng.normal(size=4)
        opt.step({"w": g})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1 - 0.9 ** t)
        vh = v / (1 - 0.999 ** t)
        ref -= 0.01 * mh / (np.sqrt(vh) + 1e-8)
        rng2 = None  # reference consumed the same g
        assert np.allclose(p["w"].data, ref, atol=1e-14)


def test_lr_override_longest_prefix_wins():
    p = {"policy.w": ad.parameter(0.0), "policy.bias.b": ad.parameter(0.0),
         "critic.w": ad.parameter(0.0)}
    opt = SGD(p, lr=1.0, lr_overrides={"policy": 0.1, "policy.bias": 0.01})
    g = {k: np.array(1.0) for k in p}
    opt.step(g)
    assert np.allclose(p["policy.w"].data, -0.1)
    assert np.allclose(p["policy.bias.b"].data, -0.01)
    assert np.allclose(p["critic.w"].data, -1.0)


def test_piecewise_constant_boundary_semantics():
    sched = piecewise_constant([250, 500], [1.0, 0.5, 0.1])
    assert sched(0) == 1.0
    assert sched(250) == 1.0   # boundary belongs to the earlier interval
    assert sched(251) == 0.5
    assert sched(500) == 0.5
    assert sched(501) == 0.1
    assert sched(10_000) == 0.1


def test_piecewise_constant_validation():
    with pytest.raises(ValueError):
        piecewise_constant([10, 5], [1, 2, 3])
    with pytest.raises(ValueError):
        piecewise_constant([10], [1, 2, 3])


def test_optimizer_with_schedule():
    p = {"w": ad.parameter(0.0)}
    opt = SGD(p, lr=999.0, schedule=piecewise_constant([1], [1.0, 0.5]))
    opt.step({"w": np.array(1.0)})   # step 1 -> lr 1.0
    opt.step({"w": np.array(1.0)})   # step 2 -> lr 0.5
    assert np.allclose(p["w"].data, -1.5)


def test_missing_grad_entry_leaves_param(tmp_path):
    p = {"a": ad.parameter(1.0), "b": ad.parameter(2.0)}
    Adam(p, lr=0.5).step({"a": np.array(1.0)})
    assert p["b"].data == 2.0


# ------------------------------------------------------------ checkpoints

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    params = {
        "enc.w": ad.parameter(rng.normal(size=(3, 2)) * 1e-3),
        "enc.b": ad.parameter([0.1, 0.2 + 1e-17]),
        "scalar": ad.parameter(np.pi),
    }
    path = str(tmp_path / "ck.json")
    save_checkpoint(params, path)
    tree = load_checkpoint(path)
    for k, p in params.items():
        assert tree[k].shape == p.data.shape
        assert np.array_equal(tree[k], p.data)  # exact, not approximate


def test_checkpoint_restore_into(tmp_path):
    src = {"w": ad.parameter([[1.0, 2.0]])}
    path = str(tmp_path / "ck.json")
    save_checkpoint(src, path)
    dst = {"w": ad.parameter(np.zeros((1, 2)))}
    restore_into(dst, load_checkpoint(path))
    assert np.array_equal(dst["w"].data, [[1.0, 2.0]])


def test_checkpoint_shape_mismatch_raises(tmp_path):
    src = {"w": ad.parameter(np.zeros(3))}
    path = str(tmp_path / "ck.json")
    save_checkpoint(src, path)
    with pytest.raises(ValueError):
        restore_into({"w": ad.parameter(np.zeros(4))}, load_checkpoint(path))


def test_checkpoint_missing_key_strict(tmp_path):
    path = str(tmp_path / "ck.json")
    save_checkpoint({"a": ad.parameter(1.0)}, path)
    with pytest.raises(KeyError):
        restore_into({"a": ad.parameter(0.0), "b": ad.parameter(0.0)},
                     load_checkpoint(path))


def test_checkpoint_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something-else", "params": {}}')
    with pytest.raises(ValueError):
        load_checkpoint(str(path))
