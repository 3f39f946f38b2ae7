import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from spinecarve.errors import DegenerateSample
from spinecarve.stats import betainc, paired_t_test, t_cdf, t_sf_two_sided

DIFFS = [0.1, 0.2, 0.15, 0.05, 0.1]


def t_pdf(x, df):
    c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
    return c * (1 + x * x / df) ** (-(df + 1) / 2)


def integrated_two_sided_p(t, df):
    """Two-sided tail mass by Simpson's rule on [0, |t|]."""
    x = np.linspace(0.0, abs(t), 20001)
    y = np.array([t_pdf(v, df) for v in x])
    h = x[1] - x[0]
    inner = h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())
    return 1.0 - 2.0 * inner


def test_worked_example_by_hand():
    d = np.array(DIFFS)
    mean = d.mean()
    sd = math.sqrt(((d - mean) ** 2).sum() / 4)
    assert mean == pytest.approx(0.12)
    assert sd == pytest.approx(0.05701, abs=1e-5)
    t_hand = mean / (sd / math.sqrt(5))
    res = paired_t_test(d, np.zeros(5))
    assert res.t == pytest.approx(t_hand, rel=1e-12)
    assert res.t == pytest.approx(4.707, abs=1e-3)
    assert res.p == pytest.approx(0.00925, abs=1e-3)
    assert res.p == pytest.approx(integrated_two_sided_p(t_hand, 4), abs=1e-9)
    assert res.significant and res.n == 5


def test_symmetric_differences():
    a = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    res = paired_t_test(a + np.array([1, -1, 1, -1, 1, -1]), a)
    assert res.t == 0.0 and res.p == 1.0 and not res.significant


def test_degenerate_and_invalid():
    with pytest.raises(DegenerateSample):
        paired_t_test([1, 2, 3], [1, 2, 3])
    with pytest.raises(DegenerateSample):
        paired_t_test([1.5, 2.5, 3.5], [1, 2, 3])
    with pytest.raises(ValueError):
        paired_t_test([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        paired_t_test([1], [2])


def test_antisymmetry():
    rng = np.random.default_rng(0)
    a, b = rng.random(12), rng.random(12)
    x, y = paired_t_test(a, b), paired_t_test(b, a)
    assert x.t == -y.t and x.p == y.p


@pytest.mark.parametrize("df", [1, 2, 4, 9, 29, 200])
def test_t_distribution_against_scipy(df):
    for t in (-7.3, -2.0, -0.3, 0.0, 0.8, 2.5, 12.0):
        assert t_sf_two_sided(t, df) == pytest.approx(2 * sps.t.sf(abs(t), df), rel=1e-10, abs=1e-15)
        assert t_cdf(t, df) == pytest.approx(sps.t.cdf(t, df), rel=1e-10, abs=1e-15)


@pytest.mark.parametrize("a,b", [(0.5, 0.5), (2.0, 0.5), (14.5, 0.5), (3.0, 7.0)])
def test_betainc_against_scipy(a, b):
    from scipy.special import betainc as ref
    for x in (0.0, 1e-6, 0.1, 0.5, 0.93, 1.0):
        assert betainc(a, b, x) == pytest.approx(ref(a, b, x), rel=1e-11, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=40))
def test_matches_scipy_ttest_rel(diffs):
    d = np.array(diffs)
    if np.ptp(d) < 1e-9:
        return
    base = np.linspace(0, 1, len(d))
    res = paired_t_test(base + d, base)
    ref = sps.ttest_rel(base + d, base)
    assert res.t == pytest.approx(ref.statistic, rel=1e-6, abs=1e-9)
    assert res.p == pytest.approx(ref.pvalue, rel=1e-6, abs=1e-12)
