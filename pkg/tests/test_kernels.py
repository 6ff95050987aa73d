"""The compiled kernels and the pure-Python fallback must agree bit for bit."""

import numpy as np
import pytest

from multilevel_readout import _backend
from multilevel_readout._rng import SplitMix, trial_key
from multilevel_readout.ancilla import AncillaConfusion
from multilevel_readout.hmm import HiddenMarkovModel, mle_prefix_labels
from multilevel_readout.params import SystemParams, get_code, stream_id
from multilevel_readout.protocol import ErrorModel
from multilevel_readout.readout import ResponseTemplates, n_samples, readout_config

compiled = pytest.mark.skipif(_backend.BACKEND == _backend.fallback.BACKEND,
                              reason="compiled extension not built")


def test_trial_key_is_order_independent():
    keys = [trial_key(7, 3, t) for t in range(100)]
    assert len(set(keys)) == 100
    assert keys[42] == trial_key(7, 3, 42)


def test_splitmix_uniform_range():
    s = SplitMix(trial_key(1, 2, 3))
    u = np.array([s.next_double() for _ in range(20000)])
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01


@compiled
def test_trial_key_matches_extension():
    for t in (0, 1, 2**40):
        assert _backend.kernels.trial_key(11, 5, t) == trial_key(11, 5, t)


@compiled
def test_storage_batch_identical():
    a = np.zeros(300, dtype=np.int64)
    b = np.zeros(300, dtype=np.int64)
    _backend.kernels.storage_batch(3, 9, 100, 300, 4, 200e-6, 1e3, 300.0, 10, a)
    _backend.fallback.storage_batch(3, 9, 100, 300, 4, 200e-6, 1e3, 300.0, 10, b)
    np.testing.assert_array_equal(a, b)


@compiled
@pytest.mark.parametrize("level", [0, 1, 2, 3, 4])
def test_reset_batch_identical(level):
    p = SystemParams(ancilla_leak_prob=0.05)
    conf = AncillaConfusion.default()
    cfg = ErrorModel(conf).kernel_config(p)
    outs = []
    for k in (_backend.kernels, _backend.fallback):
        it = np.zeros(500, dtype=np.int64)
        fin = np.zeros(500, dtype=np.int64)
        assert k.reset_batch(5, 1, 0, 500, level, cfg, conf.cdf(), it, fin) == -1
        outs.append((it, fin))
    np.testing.assert_array_equal(outs[0][0], outs[1][0])
    np.testing.assert_array_equal(outs[0][1], outs[1][1])


@compiled
@pytest.mark.parametrize("fixed", [False, True])
def test_protocol_batch_identical(fixed):
    p = SystemParams(ancilla_leak_prob=1e-3, demolition_prob=1e-2)
    code = get_code("binomial-1")
    model = ErrorModel(fixed=fixed)
    cfg = model.kernel_config(p)
    res = []
    for k in (_backend.kernels, _backend.fallback):
        out = np.zeros((200, 12), dtype=np.uint8)
        raw = np.zeros((200, 12), dtype=np.uint8)
        its = np.zeros((200, 12), dtype=np.uint16)
        tot = np.zeros(200)
        k.protocol_batch(17, 2, 50, 200, 12, 4, cfg, code.in_flip_set(p.n_max), model.eps_map(code, p),
                         model.confusion.cdf(), out, raw, its, tot)
        res.append((out, raw, its, tot))
    for x, y in zip(*res):
        np.testing.assert_array_equal(x, y)


@compiled
def test_mle_labels_identical(rng):
    p = SystemParams()
    code = get_code("fock-0-3")
    m = HiddenMarkovModel.from_params(p, code)
    outcomes = rng.integers(0, 2, size=(50, 9)).astype(np.uint8)
    iters = rng.integers(1, 4, size=(50, 9)).astype(np.uint16)
    a = mle_prefix_labels(outcomes, iters, code, m, 4.56e-6, p.t_map, p.t_readout_reset)
    saved = _backend.kernels
    try:
        _backend.kernels = _backend.fallback
        b = mle_prefix_labels(outcomes, iters, code, m, 4.56e-6, p.t_map, p.t_readout_reset)
    finally:
        _backend.kernels = saved
    np.testing.assert_array_equal(a, b)


@compiled
def test_readout_batch_identical():
    p = SystemParams()
    tpl = ResponseTemplates()
    dt = 20e-9
    grid = np.array([n_samples(t, dt) for t in (0.2e-6, 0.6e-6, 1.0e-6)], dtype=np.int64)
    rcum = tpl.cumulative_weight(int(grid[-1]), dt)
    cfg = readout_config(p, tpl, dt)
    for level in range(4):
        res = []
        for k in (_backend.kernels, _backend.fallback):
            counts = np.zeros((3, 4), dtype=np.int64)
            k.readout_batch(1, stream_id("t", level), 0, 400, level, cfg,
                            np.ascontiguousarray(tpl.centers), rcum, grid, counts)
            res.append(counts)
        np.testing.assert_array_equal(res[0], res[1])
