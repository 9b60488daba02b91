import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from logltn.analysis import (
    demorgan_average, demorgan_gap_and, demorgan_gap_or, demorgan_grid_csv, demorgan_peak,
    lattice_average_and, stability_csv, stability_table, verify_lme_bounds,
)


def test_gap_examples():
    assert demorgan_gap_and([0.5, 0.5]) == pytest.approx(0.25)
    assert demorgan_gap_and([0.3, 0.8]) == pytest.approx(0.06)
    assert demorgan_gap_and([0.0, 0.7]) == 0.0
    assert demorgan_gap_and([1.0, 0.7]) == pytest.approx(0.0)
    assert demorgan_gap_or([0.5, 0.5]) == pytest.approx(0.25)


def test_gap_rejects_out_of_range():
    with pytest.raises(ValueError):
        demorgan_gap_and([0.5, 1.5])
    with pytest.raises(ValueError):
        demorgan_gap_or([])


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(0, 1)))
def test_gaps_nonnegative(x):
    assert demorgan_gap_and(x) >= -1e-15
    assert demorgan_gap_or(x) >= -1e-15


@given(arrays(np.float64, st.integers(2, 6), elements=st.floats(0, 1)))
def test_or_gap_is_reflected_and_gap(x):
    assert demorgan_gap_or(x) == pytest.approx(demorgan_gap_and(1.0 - x), abs=1e-12)


@pytest.mark.parametrize("n", range(2, 11))
def test_peak_matches_grid(n):
    p = demorgan_peak(n)
    assert p.grid_x_star == pytest.approx(p.x_star, abs=1e-5)
    assert p.grid_gap == pytest.approx(p.gap, abs=1e-9)
    q = demorgan_peak(n, "or")
    assert q.x_star == pytest.approx(1 - p.x_star)
    assert q.grid_gap == pytest.approx(p.gap, abs=1e-9)


def test_peak_n8_value():
    p = demorgan_peak(8)
    assert p.x_star == pytest.approx(0.742997, abs=1e-6)
    assert p.gap == pytest.approx(0.650123, abs=1e-6)


@pytest.mark.parametrize("n, k", [(2, 7), (3, 5), (4, 4)])
def test_lattice_oracle_matches_enumeration(n, k):
    axis = np.linspace(0, 1, k)
    brute = np.mean([demorgan_gap_and(np.array(p)) for p in itertools.product(axis, repeat=n)])
    assert lattice_average_and(n, k) == pytest.approx(brute, abs=1e-12)
    assert demorgan_average(n, k) == pytest.approx(brute, abs=1e-12)


def test_average_converges_with_resolution():
    a = demorgan_average(2, 2000)
    b = demorgan_average(2, 4000)
    assert round(a, 4) == round(b, 4)
    # continuous limit for n=2: E[min] - E[x]^2 = 1/3 - 1/4
    assert demorgan_average(2, samples=400_000, points_per_axis=None) == pytest.approx(1 / 12, abs=1e-3)


def test_lattice_monte_carlo_near_exact():
    exact = lattice_average_and(8, 10)
    mc = demorgan_average(8, 10, samples=200_000, seed=1)
    assert mc == pytest.approx(exact, abs=2e-3)


def test_grid_csv_shape():
    lines = demorgan_grid_csv(11).splitlines()
    assert lines[0] == "x1,x2,gap" and len(lines) == 1 + 121


def test_stability_table_float32():
    rows = stability_table(precision=32)
    fused = [r.fused_value for r in rows]
    np.testing.assert_allclose(fused, [-np.log(2), -10.0000454, -100, -1000, -10000], rtol=1e-5)
    np.testing.assert_allclose([r.fused_grad for r in rows], [-0.5, -0.9999546, -1, -1, -1], rtol=1e-5)
    assert all(np.isfinite(r.fused_value) and np.isfinite(r.fused_grad) for r in rows)
    big = [r for r in rows if r.x >= 100]
    assert all(r.naive_value == -np.inf for r in big)
    assert all(not np.isfinite(r.naive_grad) for r in big)
    assert stability_csv(rows).count("\n") == 6


def test_stability_precisions_agree():
    xs = np.linspace(-50, 50, 41)
    a = stability_table(xs, 32)
    b = stability_table(xs, 64)
    for r, s in zip(a, b):
        assert r.fused_value == pytest.approx(s.fused_value, rel=1e-4, abs=1e-4)
        assert r.fused_grad == pytest.approx(s.fused_grad, rel=1e-4, abs=1e-4)
    with pytest.raises(ValueError):
        stability_table(xs, 16)


def test_lme_bounds_hold():
    rep = verify_lme_bounds(trials=2000, seed=3)
    assert rep.ok, rep.worst
    assert rep.lse_overshoot == pytest.approx(np.log(2))
    assert "trials=2000" in rep.summary()
