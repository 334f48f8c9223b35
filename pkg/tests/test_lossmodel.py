import numpy as np
import pytest

from lossyserve.errors import ConfigInvalid
from lossyserve.lossmodel import LossSpec, loss_mask


def runs(mask):
    out, n = [], 0
    for x in mask:
        if x:
            n += 1
        elif n:
            out.append(n)
            n = 0
    if n:
        out.append(n)
    return out


def test_bernoulli_rate_and_determinism():
    m = loss_mask(200_000, 0.01, seed=4)
    assert abs(m.mean() - 0.01) < 0.001
    assert np.array_equal(m, loss_mask(200_000, 0.01, seed=4))
    assert not np.array_equal(m, loss_mask(200_000, 0.01, seed=5))


def test_gilbert_elliott_rate_and_burst():
    m = loss_mask(400_000, 0.02, seed=1, model="gilbert-elliott", burst=4.0)
    assert abs(m.mean() - 0.02) < 0.004
    assert abs(np.mean(runs(m)) - 4.0) < 0.4


def test_zero_rate():
    assert not loss_mask(100, 0.0, seed=0, model="gilbert-elliott", burst=3).any()


@pytest.mark.parametrize("kw", [dict(model="uniform"), dict(rate=1.0), dict(rate=-0.1), dict(burst=0.5)])
def test_invalid(kw):
    with pytest.raises(ConfigInvalid):
        LossSpec(**kw)
