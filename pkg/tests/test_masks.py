import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from glpn.errors import ContractError, DataError
from glpn.masks import MaskSpec, Mechanism, make_mask, mar_mask, mcar_mask, minmax_scale, mnar_mask


@pytest.mark.parametrize("mech", ["MCAR", "MAR", "MNAR"])
def test_ratio_zero_keeps_everything(mech):
    x = np.random.default_rng(0).normal(size=(20, 5))
    assert np.all(make_mask(x, MaskSpec(mech, 0.0, seed=1)) == 1)


def test_mcar_extremes_and_concentration():
    assert np.all(mcar_mask(4, 3, MaskSpec("MCAR", 1.0)) == 0)
    m = mcar_mask(1000, 100, MaskSpec("MCAR", 0.2, seed=5))
    assert abs((1 - m.mean()) - 0.2) <= 0.01


def test_mcar_deterministic():
    a = mcar_mask(30, 4, MaskSpec("MCAR", 0.3, seed=9))
    b = mcar_mask(30, 4, MaskSpec("MCAR", 0.3, seed=9))
    assert np.array_equal(a, b)


def test_mar_drivers_observed_and_calibrated():
    rng = np.random.default_rng(2)
    base = rng.normal(size=(400, 1))
    x = base + 0.1 * rng.normal(size=(400, 10))
    spec = MaskSpec("MAR", 0.3, seed=4)
    m = mar_mask(x, spec)
    full_cols = np.flatnonzero(m.all(axis=0))
    assert full_cols.size >= 3  # 30% of 10 columns drive the mechanism
    maskable = (~m.all(axis=1)).sum()
    # missing fraction over the maskable block matches the ratio
    rows = 400 - int(round(0.2 * 400))
    block = rows * (10 - 3)
    assert abs((m == 0).sum() / block - 0.3) <= 0.01
    assert maskable <= rows


def test_mar_depends_on_observed_values():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2000, 4))
    m = mar_mask(x, MaskSpec("MAR", 0.5, seed=0))
    drivers = np.flatnonzero(m.all(axis=0))
    target = [j for j in range(4) if j not in drivers][0]
    miss = m[:, target] == 0
    # missingness correlates with the always-observed driver values
    corr = max(abs(np.corrcoef(x[:, j], miss)[0, 1]) for j in drivers)
    assert corr > 0.1


def test_mar_needs_two_columns():
    with pytest.raises(ContractError):
        mar_mask(np.ones((5, 1)), MaskSpec("MAR", 0.2))


def test_mnar_counts_rows():
    m = mnar_mask(10, 3, MaskSpec("MNAR", 0.2, seed=3))
    assert (m.sum(axis=1) == 0).sum() == 2
    assert set(np.unique(m.sum(axis=1))) <= {0.0, 3.0}
    m = mnar_mask(10, 3, MaskSpec("MNAR", 0.3))
    assert (m.sum(axis=1) == 0).sum() == 3


def test_spec_validation():
    with pytest.raises(ContractError):
        MaskSpec("MCAR", 1.5)
    with pytest.raises(ValueError):
        MaskSpec("XYZ", 0.2)
    assert MaskSpec("mnar", 0.1).mechanism is Mechanism.MNAR


def test_minmax_examples():
    s, rec = minmax_scale(np.array([[0.0], [5.0], [10.0]]))
    assert np.allclose(s.ravel(), [0.0, 0.5, 1.0])
    s, _ = minmax_scale(np.full((3, 1), 7.0))
    assert np.all(s == 0.5)
    with pytest.raises(DataError):
        minmax_scale(np.ones((2, 2)), np.array([[1.0, 0.0], [1.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 10), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3)))
def test_minmax_round_trip(x):
    s, rec = minmax_scale(x)
    back = rec.inverse(s)
    const = rec.col_max == rec.col_min
    assert np.allclose(back[:, ~const], x[:, ~const], atol=1e-12 * max(1.0, np.abs(x).max()) * 10)
    assert np.all((s >= 0) & (s <= 1))
