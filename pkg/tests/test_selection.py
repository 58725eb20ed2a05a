import math

import numpy as np
import pytest

from multifused.exceptions import InvalidArgumentError, SelectionError
from multifused.model import Coefficients, PanelData, PenaltyParams
from multifused.selection import (Grid, SelectionTable, count_df, cross_validate,
                                  fold_assignment, information_criteria, lambda1_max,
                                  make_grid, select, selection_table)
from multifused.simulate import SimConfig, generate
from multifused.solver import SolverConfig, fit

from conftest import random_panel

TIGHT = SolverConfig(max_iters=3000, epsilon=1e-10, stop_rule="iter")


def trajectory_coefficients(values, p=3, T=15):
    beta = np.zeros((p, T, 1))
    beta[1, :, 0] = values
    return Coefficients(np.zeros((T, 1)), beta)


def test_lambda1_max_zero_predictors():
    data = PanelData([[1, 2], [2, 1], [1, 1]], np.zeros((3, 2, 2)), 2)
    assert lambda1_max(data) == 0


def test_lambda1_max_aligned_predictor():
    # balanced labels, x = +1 for class 1 and -1 for class 2
    Y = np.array([[1, 1], [2, 2], [1, 2], [2, 1]])
    X = np.where(Y == 1, 1.0, -1.0)[:, None, :]
    data = PanelData(Y, X, 2)
    lmax = lambda1_max(data)
    # at beta = 0: |(1/n_t) sum_i x_i (1/2 - 1{y=1})| = 1/2 per timepoint
    assert lmax == pytest.approx(0.5)
    assert np.all(fit(data, PenaltyParams(1.01 * lmax), TIGHT).coefficients.beta == 0)
    assert np.any(fit(data, PenaltyParams(0.9 * lmax), TIGHT).coefficients.beta != 0)


def test_lambda1_max_probe_random(rng):
    for _ in range(3):
        data = random_panel(rng, n=25, p=4, T=5, K=3)
        lmax = lambda1_max(data)
        assert np.all(fit(data, PenaltyParams(1.01 * lmax, 0.0), TIGHT).coefficients.beta == 0)
        assert np.any(fit(data, PenaltyParams(0.9 * lmax, 0.0), TIGHT).coefficients.beta != 0)


def test_lambda1_max_absent_class():
    with pytest.raises(SelectionError):
        lambda1_max(PanelData([[1], [1]], np.ones((2, 1, 1)), 3))


def test_make_grid_endpoints(rng):
    data = random_panel(rng, n=20)
    lmax = lambda1_max(data)
    g = make_grid(data, 1, 1)
    assert g.pairs == [(lmax, 10 * lmax)]
    g = make_grid(data, 4, 5)
    assert len(g) == 20 and len(g.pairs) == 20
    assert g.lam1_values[0] == pytest.approx(lmax) and g.lam1_values[-1] == pytest.approx(1e-3 * lmax)
    assert g.lam2_values[0] == pytest.approx(10 * lmax) and g.lam2_values[-1] == pytest.approx(1e-3 * lmax)
    ratios = np.array(g.lam1_values[:-1]) / np.array(g.lam1_values[1:])
    np.testing.assert_allclose(ratios, 10.0, rtol=1e-12)


def test_make_grid_zero_signal():
    data = PanelData([[1, 2], [2, 1]], np.zeros((2, 1, 2)), 2)
    with pytest.raises(SelectionError):
        make_grid(data, 3, 3)


def test_grid_orders_descending():
    g = Grid((0.1, 1.0, 0.5), (2.0, 3.0))
    assert g.lam1_values == (1.0, 0.5, 0.1) and g.lam2_values == (3.0, 2.0)
    assert g.rows[0] == [(1.0, 3.0), (0.5, 3.0), (0.1, 3.0)]
    with pytest.raises(InvalidArgumentError):
        Grid((), (1.0,))
    with pytest.raises(InvalidArgumentError):
        Grid((-1.0,), (1.0,))


def test_fold_assignment_seeded():
    a, b = fold_assignment(23, 4, 7), fold_assignment(23, 4, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(23))
    assert [len(x) for x in a] == [6, 6, 6, 5]
    assert not all(np.array_equal(x, y) for x, y in zip(a, fold_assignment(23, 4, 8)))
    with pytest.raises(InvalidArgumentError):
        fold_assignment(3, 4, 0)


def test_cv_huge_lambda_is_majority_baseline():
    rng = np.random.default_rng(3)
    n, T = 31, 4
    Y = np.where(rng.random((n, T)) < np.array([0.8, 0.2, 0.75, 0.25]), 1, 2)
    data = PanelData(Y, rng.normal(size=(n, 2, T)), 2)
    lmax = lambda1_max(data)
    table = cross_validate(data, Grid((100 * lmax,), (1.0,)), folds=4, seed=11, config=TIGHT)
    parts = fold_assignment(n, 4, 11)
    expected = []
    for held in parts:
        train = np.setdiff1d(np.arange(n), held)
        c1 = (Y[train] == 1).sum(axis=0)
        c2 = (Y[train] == 2).sum(axis=0)
        assert np.all(c1 != c2)
        majority = np.where(c1 > c2, 1, 2)
        expected.append(np.mean(Y[held] != majority))
    np.testing.assert_allclose(table.fold_errors[0], expected, rtol=0, atol=1e-15)
    assert table.cv_mean[0] == pytest.approx(np.mean(expected))


def test_cv_duplicated_individuals_zero_se(rng):
    m, seed = 10, 5
    base = random_panel(rng, n=m, p=2, T=3, K=2, missing=0.0)
    perm = np.random.default_rng(seed).permutation(2 * m)
    first, second = np.sort(perm[:m]), np.sort(perm[m:])
    Y = np.empty((2 * m, 3), dtype=int)
    X = np.empty((2 * m, 2, 3))
    Y[first], Y[second] = base.Y, base.Y
    X[first], X[second] = base.X, base.X
    data = PanelData(Y, X, 2)
    grid = Grid((0.01, 0.1), (0.05,))
    table = cross_validate(data, grid, folds=2, seed=seed)
    np.testing.assert_array_equal(table.fold_errors[:, 0], table.fold_errors[:, 1])
    assert np.all(table.cv_se == 0)


def test_cv_fold_losing_class():
    Y = np.array([[1], [1], [1], [2]])
    data = PanelData(Y, np.ones((4, 1, 1)), 2)
    with pytest.raises(SelectionError, match="fold"):
        cross_validate(data, Grid((1.0,), (1.0,)), folds=4, seed=0)


def test_cv_reproducible(rng):
    data = random_panel(rng, n=24, p=3, T=4, K=2)
    grid = make_grid(data, 3, 2)
    a = cross_validate(data, grid, folds=3, seed=9)
    b = cross_validate(data, grid, folds=3, seed=9, threads=3)
    assert a.to_csv() == b.to_csv()


def test_count_df_examples():
    assert count_df(trajectory_coefficients(np.zeros(15))) == 15
    assert count_df(trajectory_coefficients(np.full(15, 0.7))) == 16
    assert count_df(trajectory_coefficients(np.r_[np.full(8, 0.7), np.full(7, -0.2)])) == 17


def test_count_df_zero_gaps_split_blocks():
    vals = np.r_[np.full(3, 0.5), np.zeros(4), np.full(8, 0.5)]
    assert count_df(trajectory_coefficients(vals)) == 17


def test_count_df_tolerance():
    vals = np.full(15, 0.7) + np.linspace(0, 1e-8, 15)
    assert count_df(trajectory_coefficients(vals)) == 16
    assert count_df(trajectory_coefficients(vals), tol=1e-12) > 16


def test_count_df_invariances(rng):
    beta = np.round(rng.normal(size=(5, 6, 2)), 1)
    beta[rng.random(beta.shape) < 0.4] = 0
    c = Coefficients(np.zeros((6, 2)), beta)
    base = count_df(c)
    flipped = beta * rng.choice([-1, 1], size=(5, 1, 2))
    assert count_df(Coefficients(np.zeros((6, 2)), beta[rng.permutation(5)])) == base
    assert count_df(Coefficients(np.zeros((6, 2)), flipped)) == base


def test_count_df_sparse_fit(rng):
    data = random_panel(rng, n=20, p=3, T=5, K=3)
    res = fit(data, PenaltyParams(1.5 * lambda1_max(data), 0.1), TIGHT)
    assert count_df(res.coefficients) == 5 * 2


def test_information_criteria_formula():
    data = PanelData([[1, 2], [2, 1], [1, 1]], np.zeros((3, 1, 2)), 2)
    c = Coefficients.zeros(1, 2, 2)
    aic, bic = information_criteria(c, data, "nll")
    L, df, N = 6 * math.log(2), 2, 6
    assert aic == pytest.approx(2 * L + 2 * df)
    assert bic == pytest.approx(2 * L + math.log(N) * df)
    aic_mc, bic_mc = information_criteria(c, data, "misclass")
    # every cell predicted as class 1; two of six are class 2
    assert aic_mc == pytest.approx(2 * 2 + 2 * df)
    with pytest.raises(InvalidArgumentError):
        information_criteria(c, data, "other")


def make_table(cv, se, df, score=None):
    grid = Grid(tuple(range(len(cv), 0, -1)), (1.0,))
    t = SelectionTable.empty(grid)
    t.cv_mean, t.cv_se, t.df = np.array(cv, float), np.array(se, float), np.array(df)
    if score is not None:
        for col in ("aic_nll", "bic_nll", "aic_misclass", "bic_misclass"):
            setattr(t, col, np.array(score, float))
    return t


def test_select_cv_min():
    t = make_table([0.3, 0.2, 0.25], [0.01] * 3, [3, 5, 9])
    assert select(t, "cv_min") == (float(t.lam1[1]), 1.0)


def test_select_one_se_prefers_fewer_df():
    t = make_table([0.22, 0.21, 0.20, 0.4], [0.05] * 4, [7, 5, 9, 2])
    assert select(t, "cv_one_se") == (float(t.lam1[1]), 1.0)


def test_select_criteria_tie_break():
    t = make_table([0.1] * 3, [0.0] * 3, [1, 2, 3], score=[5.0, 6.0, 7.0])
    for rule in ("aic", "bic", "aic_mc", "bic_mc"):
        assert select(t, rule) == (3.0, 1.0)
    t = make_table([0.1] * 3, [0.0] * 3, [1, 2, 3], score=[5.0, 5.0, 5.0])
    assert select(t, "aic") == (3.0, 1.0)
    assert select(t, "cv_min") == (3.0, 1.0)


def test_select_errors():
    t = make_table([0.1], [0.0], [1])
    with pytest.raises(InvalidArgumentError):
        select(t, "nope")
    with pytest.raises(SelectionError):
        select(t, "aic")


def test_selection_table_one_se_dominance(rng):
    for _ in range(3):
        data = random_panel(rng, n=30, p=4, T=4, K=2, missing=0.1)
        table = selection_table(data, make_grid(data, 4, 3), folds=3, seed=1)
        assert set(table.chosen) >= {"cv_min", "cv_one_se", "aic_nll", "bic_misclass"}
        df = dict(zip(zip(table.lam1, table.lam2), table.df))
        assert df[table.chosen["cv_one_se"]] <= df[table.chosen["cv_min"]]
        assert np.all(table.df >= 4) and np.all(table.cv_se >= 0)
        assert table.to_csv().splitlines()[0] == ",".join(SelectionTable.COLUMNS)


def test_simulation_cv_at_reference_pair():
    data, _ = generate(SimConfig(seed=2))
    ref = (2.5 / data.n, 12.5 / data.n)
    table = cross_validate(data, Grid((ref[0], 0.0), (ref[1], 0.0)), folds=4, seed=0)
    err = dict(zip(zip(table.lam1, table.lam2), table.cv_mean))
    assert err[ref] < 0.3
    assert err[ref] < err[(0.0, 0.0)]
