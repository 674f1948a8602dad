from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advlab import optim as O


def one(v):
    return OrderedDict(w=np.array([float(v)]))


def test_sgd_plain_step():
    p, _ = O.sgd_step(one(1.0), one(1.0), None, O.SgdConfig(0.1, 0.0, 0.0), 0.1)
    assert p["w"][0] == pytest.approx(0.9, abs=1e-15)


def test_sgd_momentum_step():
    state = OrderedDict(w=np.array([1.0]))
    p, state = O.sgd_step(one(1.0), one(0.0), state, O.SgdConfig(0.1, 0.9, 0.0), 0.1)
    assert state["w"][0] == pytest.approx(0.9, abs=1e-15)
    assert p["w"][0] == pytest.approx(0.91, abs=1e-15)


def test_sgd_weight_decay_step():
    p, _ = O.sgd_step(one(2.0), one(0.0), None, O.SgdConfig(0.1, 0.0, 5e-4), 0.1)
    assert p["w"][0] == pytest.approx(1.9999, abs=1e-15)


def test_sgd_rejects_non_finite_and_bad_shapes():
    with pytest.raises(FloatingPointError):
        O.sgd_step(one(1.0), one(np.nan), None, O.SgdConfig(), 0.1)
    with pytest.raises(ValueError):
        O.sgd_step(one(1.0), OrderedDict(w=np.zeros(2)), None, O.SgdConfig(), 0.1)


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        O.SgdConfig(momentum=1.0)
    with pytest.raises(ValueError):
        O.SgdConfig(weight_decay=-1)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.floats(1e-4, 1.0))
def test_sgd_without_momentum_or_decay_is_plain_descent(ws, lr):
    w = np.array(ws)
    g = np.sin(w)
    p, _ = O.sgd_step(OrderedDict(w=w.copy()), OrderedDict(w=g), None, O.SgdConfig(lr, 0.0, 0.0), lr)
    np.testing.assert_array_equal(p["w"], w - lr * g)


def test_piecewise_default_values():
    s = O.Piecewise(0.1)
    assert s.lr_at(99) == 0.1
    assert s.lr_at(100) == pytest.approx(0.01, rel=1e-15)
    assert s.lr_at(150) == pytest.approx(0.001, rel=1e-15)


def test_onecycle_default_values():
    s = O.OneCycle(0.2, 200)
    assert s.lr_at(0) == 0 and s.lr_at(100) == 0.2 and s.lr_at(200) == 0


def test_cosine_endpoints():
    s = O.Cosine(0.2, 200)
    assert s.lr_at(0) == 0.2 and s.lr_at(200) == 0


@given(st.floats(0, 200), st.floats(0, 200))
def test_piecewise_nonincreasing(a, b):
    s = O.Piecewise(0.1)
    lo, hi = min(a, b), max(a, b)
    assert s.lr_at(lo) >= s.lr_at(hi)


@given(st.floats(0, 200))
def test_schedules_nonnegative_and_bounded(t):
    for s in (O.Piecewise(0.1), O.OneCycle(0.2, 200), O.Cosine(0.2, 200)):
        assert 0 <= s.lr_at(t) <= 0.2


@given(st.floats(0.01, 1.0), st.integers(2, 300), st.floats(0.1, 0.9))
def test_onecycle_piecewise_linear_single_peak(max_lr, total, frac):
    s = O.OneCycle(max_lr, total, frac)
    ts = np.linspace(0, total, 2001)
    lrs = np.array([s.lr_at(t) for t in ts])
    assert np.all(lrs >= 0)
    assert np.sum(lrs == max_lr) <= 1
    assert lrs.max() == pytest.approx(max_lr, rel=1e-2)
    # continuity: neighbouring samples differ by at most the slope times the spacing
    slope = max_lr / min(frac * total, (1 - frac) * total)
    assert np.abs(np.diff(lrs)).max() <= slope * (ts[1] - ts[0]) * (1 + 1e-9)
    assert s.lr_at(frac * total) == pytest.approx(max_lr, rel=1e-12)


def test_schedule_dict_round_trip():
    for s in (O.Piecewise(0.1, (30, 40), 10, 50), O.OneCycle(0.3, 40, 0.4), O.Cosine(0.1, 10)):
        assert O.schedule_from_dict(O.schedule_to_dict(s)) == s
    with pytest.raises(ValueError):
        O.schedule_from_dict({"kind": "step"})


def test_wa_examples():
    avg = O.WeightAverager(0.9)
    avg.averaged_params = OrderedDict(w=np.zeros(1))
    O.wa_update(avg, one(1.0))
    assert avg.averaged_params["w"][0] == pytest.approx(0.1, abs=1e-15)
    avg = O.WeightAverager(0.0, averaged_params=OrderedDict(w=np.array([5.0])))
    O.wa_update(avg, one(3.0))
    assert avg.averaged_params["w"][0] == 3.0


@given(st.floats(0.0, 0.99), st.integers(1, 60), st.floats(-3, 3), st.floats(-3, 3))
def test_wa_geometric_convergence(decay, n, a0, w):
    avg = O.WeightAverager(decay, averaged_params=OrderedDict(w=np.array([a0])))
    for _ in range(n):
        avg.update(one(w))
    assert abs(avg.averaged_params["w"][0] - w) == pytest.approx(decay**n * abs(a0 - w), abs=1e-12)


def test_wa_never_mutates_live_params():
    live = OrderedDict(w=np.array([1.0, 2.0]))
    avg = O.WeightAverager(0.5)
    avg.update(live)
    avg.averaged_params["w"] += 10
    avg.update(live)
    np.testing.assert_array_equal(live["w"], [1.0, 2.0])


def test_wa_shape_mismatch():
    avg = O.WeightAverager(0.5, averaged_params=OrderedDict(w=np.zeros(2)))
    with pytest.raises(ValueError):
        avg.update(OrderedDict(w=np.zeros(3)))
