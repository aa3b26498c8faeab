import numpy as np
import pytest

from splatfuse.optim import Adam, exp_decay


def test_first_step_moves_by_lr():
    p = np.array([1.0, -2.0, 3.0])
    opt = Adam()
    opt.add("p", p, 0.1)
    opt.step({"p": np.array([0.5, -4.0, 0.0])})
    assert np.allclose(p, [0.9, -1.9, 3.0])


def test_minimizes_quadratic():
    p = np.array([3.0, -1.0])
    opt = Adam()
    opt.add("p", p, 0.05)
    for _ in range(2000):
        opt.step({"p": 2 * p})
    assert np.abs(p).max() < 1e-3


def test_rebind_keeps_surviving_moments():
    p = np.zeros(3)
    opt = Adam()
    opt.add("p", p, 0.1)
    opt.step({"p": np.array([1.0, 2.0, 3.0])})
    m_before = opt.m["p"].copy()
    q = np.zeros(4)
    opt.rebind("p", q, keep=np.array([0, 2]), n_new=2)
    assert np.array_equal(opt.m["p"], [m_before[0], m_before[2], 0, 0])


def test_exp_decay_endpoints():
    assert exp_decay(1e-2, 1e-4, 0, 100) == pytest.approx(1e-2)
    assert exp_decay(1e-2, 1e-4, 100, 100) == pytest.approx(1e-4)
    assert exp_decay(1e-2, 1e-4, 50, 100) == pytest.approx(1e-3)
    assert exp_decay(1e-2, 1e-4, 500, 100) == pytest.approx(1e-4)


def test_rejects_non_positive_lr():
    with pytest.raises(ValueError):
        Adam().add("p", np.zeros(1), 0.0)
