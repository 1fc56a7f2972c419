from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptfed import oracles
from promptfed.datasets import synth_task
from promptfed.errors import DimensionMismatch, MissingUpdate, UnknownConfig
from promptfed.model import Backbone
from promptfed.optim import (
    OPTIMIZERS,
    AdamHyper,
    AdamState,
    DeviceUpdate,
    OptimHyper,
    OptimizerConfig,
    ServerOptState,
    adam_step,
    local_update,
    make_optimizer,
    server_round,
    sync_coords,
)


def test_adam_zero_gradient_is_noop():
    w, s = adam_step(np.array([1.0, -2.0]), AdamState.fresh(2), np.zeros(2))
    assert np.array_equal(w, [1.0, -2.0])
    assert not s.m.any() and not s.v.any() and s.t == 1


def test_adam_hand_trace():
    s = AdamState.fresh(1, AdamHyper(lr=0.1))
    w, s = adam_step(np.zeros(1), s, np.ones(1))
    assert s.m[0] == pytest.approx(0.1, abs=1e-16)
    assert s.v[0] == pytest.approx(0.001, abs=1e-18)
    assert w[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-16)
    assert w[0] == pytest.approx(-0.0999999990, abs=1e-10)


@pytest.mark.parametrize("steps", [3, 100])
def test_adam_matches_reference(steps, rng):
    grads = rng.normal(size=(steps, 4))
    w0 = rng.normal(size=4)
    ref = oracles.adam_reference(w0, grads)
    w, s = w0, AdamState.fresh(4)
    for t in range(steps):
        w, s = adam_step(w, s, grads[t])
        np.testing.assert_allclose(w, ref[t], atol=1e-12, rtol=0)


def test_adam_inputs_untouched():
    w = np.array([1.0])
    s = AdamState.fresh(1)
    adam_step(w, s, np.array([3.0]))
    assert w[0] == 1.0 and s.t == 0 and s.m[0] == 0.0


def test_adam_shape_check():
    with pytest.raises(DimensionMismatch):
        adam_step(np.zeros(2), AdamState.fresh(3), np.zeros(2))


def test_optimizer_table():
    assert make_optimizer("fedavg") == OptimizerConfig("fedavg", "sgd", "average", False)
    assert make_optimizer("moms_adamd") == OptimizerConfig("moms_adamd", "adam", "momentum", False)
    assert make_optimizer("fedpeptao") == OptimizerConfig("fedpeptao", "adam", "momentum", True)
    assert len(OPTIMIZERS) == 7
    with pytest.raises(UnknownConfig):
        make_optimizer("sgd++")


def test_sync_coords():
    assert sync_coords([2, 0], 3).tolist() == [6, 7, 8, 0, 1, 2]
    assert sync_coords([], 3).tolist() == []


@pytest.fixture
def shard():
    return synth_task(4, 3, 5, 60)


def _local(b, shard, rule, steps=1, prompts=None, seed=0, layers=(0, 1, 2, 3)):
    p = np.zeros((4, 3)) if prompts is None else prompts
    up = local_update(b, p, list(layers), shard, steps, rule, OptimHyper(batch_size=len(shard)),
                      np.random.default_rng(seed))
    return up, p


def test_one_adam_step_equals_adam_step(small_backbone, shard):
    from promptfed.model import prompt_gradient

    g = prompt_gradient(small_backbone, np.zeros((4, 3)), shard).ravel()
    expected, _ = adam_step(np.zeros(12), AdamState.fresh(12), g)
    up, p = _local(small_backbone, shard, "adam")
    np.testing.assert_array_equal(up.delta, expected)
    np.testing.assert_array_equal(p.ravel(), expected)
    assert up.steps_taken == 1 and up.sample_count == 60


def test_disconnected_layer_delta_zero(shard):
    b0 = Backbone.init(4, 6, 5, 3, 3, seed=2)
    maps = np.array(b0.prompt_maps)
    maps[1] = 0.0
    b = Backbone(b0.first, b0.rest, maps, b0.head)
    for rule in ("sgd", "momentum", "adam"):
        up, _ = _local(b, shard, rule, steps=5)
        d = up.delta.reshape(4, 3)
        assert np.array_equal(d[1], np.zeros(3))
        assert np.any(d[0] != 0)


def test_identical_devices_identical_updates(small_backbone, shard):
    a, _ = _local(small_backbone, shard, "adam", steps=4, seed=3)
    b, _ = _local(small_backbone, shard, "adam", steps=4, seed=3)
    assert np.array_equal(a.delta, b.delta)


def test_delta_covers_sync_layers_only(small_backbone, shard):
    up, p = _local(small_backbone, shard, "sgd", steps=3, layers=(2,))
    assert up.delta.shape == (3,)
    np.testing.assert_array_equal(up.delta, p[2])
    assert np.any(p[0] != 0)  # private rows still train


def test_local_update_leaves_backbone_frozen(small_backbone, shard):
    before = small_backbone.fingerprint()
    for rule in ("sgd", "momentum", "adam"):
        _local(small_backbone, shard, rule, steps=3)
    assert small_backbone.fingerprint() == before


def test_stale_adam_state_rejected(small_backbone, shard):
    s = AdamState(np.ones(12), np.ones(12), 3)
    with pytest.raises(AssertionError):
        local_update(small_backbone, np.zeros((4, 3)), [0, 1, 2, 3], shard, 1, "adam", OptimHyper(),
                     np.random.default_rng(0), adam_state=s)


def _updates(rng, ids, dim, steps=None):
    return [DeviceUpdate(i, rng.normal(size=dim), int(rng.integers(1, 8)) if steps is None else steps,
                         int(rng.integers(1, 100))) for i in ids]


def test_round_one_fedavg_equivalence():
    rng = np.random.default_rng(17)
    opt = make_optimizer("moms_adamd")
    hyper = OptimHyper(server_lr=1.0, server_momentum=0.0)
    for _ in range(10):
        M = int(rng.integers(1, 9))
        dim = int(rng.integers(1, 12))
        ids = sorted(rng.choice(M, size=int(rng.integers(1, M + 1)), replace=False).tolist())
        ups = _updates(rng, ids, dim)
        w0 = rng.normal(size=dim)
        w1, _ = server_round(ServerOptState(dim), ups, ids, M, w0, opt, hyper)
        n = np.array([u.sample_count for u in ups], dtype=float)
        expected = sum(k * (w0 + u.delta) for k, u in zip(n, ups)) / n.sum()
        np.testing.assert_allclose(w1, expected, atol=1e-12, rtol=0)


def test_average_rule_is_weighted_average():
    rng = np.random.default_rng(3)
    ups = _updates(rng, [0, 1, 2], 4)
    w0 = rng.normal(size=4)
    w1, _ = server_round(ServerOptState(4), ups, [0, 1, 2], 3, w0, make_optimizer("fedavg"), OptimHyper())
    n = np.array([u.sample_count for u in ups], dtype=float)
    np.testing.assert_allclose(w1, w0 + (n @ np.stack([u.delta for u in ups])) / n.sum(), atol=1e-14)


def test_single_device_variates():
    d = np.array([0.5, -1.0, 2.0])
    hyper = OptimHyper(sgd_lr=1.0)
    _, st = server_round(ServerOptState(3), [DeviceUpdate(0, d, 1, 10)], [0], 1, np.zeros(3),
                         make_optimizer("moms_con"), hyper)
    np.testing.assert_array_equal(st.c_per_device[0], -d)
    np.testing.assert_array_equal(st.c_global, -d)


def test_fixed_point():
    for name in OPTIMIZERS:
        w0 = np.array([1.0, 2.0, 3.0])
        w1, st = server_round(ServerOptState(3), [DeviceUpdate(0, np.zeros(3), 2, 5)], [0], 4, w0,
                              make_optimizer(name), OptimHyper())
        np.testing.assert_array_equal(w1, w0)
        assert not st.momentum.any()


def test_variate_consistency_full_participation():
    rng = np.random.default_rng(8)
    M, dim = 5, 6
    ids = list(range(M))
    counts = rng.integers(1, 50, size=M)
    st, w = ServerOptState(dim), np.zeros(dim)
    for _ in range(50):
        ups = [DeviceUpdate(i, rng.normal(scale=0.1, size=dim), int(rng.integers(1, 6)), int(counts[i])) for i in ids]
        w, st = server_round(st, ups, ids, M, w, make_optimizer("fedpeptao"), OptimHyper())
        avg = np.average(np.stack([st.c_per_device[i] for i in ids]), axis=0, weights=counts)
        np.testing.assert_allclose(st.c_global, avg, atol=1e-12, rtol=0)


def test_unsampled_variates_untouched():
    rng = np.random.default_rng(4)
    st = ServerOptState(2)
    st.c_per_device = {0: np.array([1.0, 1.0]), 1: np.array([2.0, -2.0]), 2: np.array([0.5, 0.0])}
    before = {k: v.copy() for k, v in st.c_per_device.items()}
    _, new = server_round(st, _updates(rng, [1], 2), [1], 3, np.zeros(2), make_optimizer("fedpeptao"), OptimHyper())
    for k in (0, 2):
        assert np.array_equal(new.c_per_device[k], before[k])
    assert not np.array_equal(new.c_per_device[1], before[1])
    # input state is not mutated
    assert all(np.array_equal(st.c_per_device[k], before[k]) for k in before)


def test_missing_update_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(MissingUpdate):
        server_round(ServerOptState(2), _updates(rng, [0], 2), [0, 1], 2, np.zeros(2),
                     make_optimizer("fedavg"), OptimHyper())


def test_projection_keeps_coordinates():
    st = ServerOptState(4, {3: np.arange(4.0)}, np.arange(4.0) + 10, np.arange(4.0) + 20, np.arange(4.0) + 30, 5)
    p = st.project([1, 3])
    assert p.dim == 2 and p.round == 5
    assert p.c_per_device[3].tolist() == [1.0, 3.0]
    assert p.c_global.tolist() == [11.0, 13.0]
    assert p.momentum.tolist() == [21.0, 23.0]
    assert p.prev_delta.tolist() == [31.0, 33.0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(sorted(OPTIMIZERS)))
def test_server_round_weight_scale_invariant(seed, name):
    rng = np.random.default_rng(seed)
    ups = _updates(rng, [0, 1, 2], 3)
    scaled = [replace(u, sample_count=u.sample_count * 7) for u in ups]
    w0 = rng.normal(size=3)
    a, sa = server_round(ServerOptState(3), ups, [0, 1, 2], 5, w0, make_optimizer(name), OptimHyper())
    b, sb = server_round(ServerOptState(3), scaled, [0, 1, 2], 5, w0, make_optimizer(name), OptimHyper())
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(sa.c_global, sb.c_global, atol=1e-12)
