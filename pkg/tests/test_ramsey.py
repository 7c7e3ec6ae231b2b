import numpy as np
import pytest

from recdual import ramsey as R


def test_curve_values():
    assert R.h_eval(0.0) == 1.0
    assert R.h_eval(0.75) == pytest.approx(1 - 0.75 / (2 * 0.5))
    assert R.f_eval(0.65, 0.65) == 0.0
    assert R.welfare(0.36, 0.0) == pytest.approx(np.log(0.36) + 0.8)
    with pytest.raises(ValueError):
        R.welfare(0.5, 0.65)
    with pytest.raises(ValueError):
        R.h_eval(1.0)


@pytest.mark.parametrize("g", [0.0, 0.3, 0.65])
def test_surplus_is_single_peaked(g):
    ell = np.linspace(g, 0.999, 5000)[1:]
    f = R.f_eval(ell, g)
    k = int(np.argmax(f))
    assert 0 < k < f.size - 1
    assert np.all(np.diff(f[: k + 1]) > 0)
    assert np.all(np.diff(f[k:]) < 0)


def test_max_debt():
    cap0, ell0 = R.max_debt(0.0)
    # f(l; 0) peaks where its derivative vanishes
    h = 1e-6
    assert (R.f_eval(ell0 + h, 0.0) - R.f_eval(ell0 - h, 0.0)) / (2 * h) == \
        pytest.approx(0.0, abs=1e-5)
    cap, _ = R.max_debt(0.65)
    assert 0.02 <= cap <= 0.03
    assert cap < cap0
    # beyond l = 2 sqrt(2) - 2 the tax rate is negative, so large g has no surplus
    with pytest.raises(ValueError, match="cannot be financed"):
        R.max_debt(0.9)


def test_labor_roots():
    lo, hi = R.labor_roots(0.02, 0.65)
    assert lo < hi
    assert R.f_eval(lo, 0.65) == pytest.approx(0.02, abs=1e-8)
    assert R.f_eval(hi, 0.65) == pytest.approx(0.02, abs=1e-8)
    assert R.labor_roots(0.0, 0.0)[1] == pytest.approx(2 * np.sqrt(2) - 2, abs=1e-8)
    with pytest.raises(ValueError, match="capacity"):
        R.labor_roots(0.1, 0.65)


def test_revenue_formula():
    assert R.revenue(0.5, 0.0, 0.3) == pytest.approx(R.f_eval(0.5, 0.0) + 0.5 * 0.3)


def test_scenario_checks():
    with pytest.raises(ValueError):
        R.RamseyScenario(probs=(0.5, 0.6))
    with pytest.raises(ValueError):
        R.RamseyScenario(g=(0.0,))


def test_scatter_rows_are_consistent():
    sc = R.RamseyScenario(n_debt=5)
    rows = R.enumerate_scatter(sc, "H", lottery=True, ell0=np.array([0.3, 0.6]))
    assert len(rows) == 5 * 3 * 2
    for row in rows[::7]:
        assert len(row) == len(R.SCATTER_COLUMNS)
        assert R.row_revenue(sc, row) == pytest.approx(row[5])
    assert {r[4] for r in rows} == {0.0, 0.5, 1.0}


def test_deterministic_scatter_has_no_mixing():
    sc = R.RamseyScenario(n_debt=4)
    rows = R.enumerate_scatter(sc, "L", lottery=False, ell0=np.array([0.5]))
    assert {r[4] for r in rows} == {0.0, 1.0}


def test_small_debt_needs_no_lottery():
    out = R.dominance_check(R.RamseyScenario(n_debt=30), 0.1)
    assert out["feasible"]
    assert not out["dominates"]


def test_curves():
    rows = R.curves(100)
    assert len(rows) == 99
    assert rows[0][0] == pytest.approx(0.01)
    assert len(rows[0]) == len(R.CURVE_COLUMNS)
