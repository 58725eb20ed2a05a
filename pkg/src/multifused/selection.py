"""Choosing (lam1, lam2): cross-validation, the one-standard-error rule, AIC/BIC."""
import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import RawPanel, apply_report, preprocess
from .exceptions import InvalidArgumentError, SelectionError
from .model import (Coefficients, PanelData, PenaltyParams, misclassification,
                    unscaled_nll)
from .solver import SolverConfig, fit

__all__ = [
    "RULES",
    "Grid",
    "SelectionTable",
    "intercept_only",
    "lambda1_max",
    "make_grid",
    "fold_assignment",
    "fit_path",
    "cross_validate",
    "count_df",
    "information_criteria",
    "selection_table",
    "select",
]

RULES = ("cv_min", "cv_one_se", "aic_nll", "bic_nll", "aic_misclass", "bic_misclass")
RULE_ALIASES = {"aic": "aic_nll", "bic": "bic_nll", "aic_mc": "aic_misclass",
                "bic_mc": "bic_misclass"}


@dataclass(frozen=True)
class Grid:
    """Tuning pairs ordered row by row: lam2 descending, lam1 descending within a row.

    Fits warm-start along each row, from the sparsest lam1 to the densest.
    """

    lam1_values: tuple
    lam2_values: tuple
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        l1 = tuple(sorted({float(v) for v in self.lam1_values}, reverse=True))
        l2 = tuple(sorted({float(v) for v in self.lam2_values}, reverse=True))
        if not l1 or not l2:
            raise InvalidArgumentError("grid needs at least one value per parameter")
        if min(l1) < 0 or min(l2) < 0 or not all(map(math.isfinite, l1 + l2)):
            raise InvalidArgumentError("grid values must be finite and >= 0")
        object.__setattr__(self, "lam1_values", l1)
        object.__setattr__(self, "lam2_values", l2)

    @property
    def rows(self):
        return [[(a, b) for a in self.lam1_values] for b in self.lam2_values]

    @property
    def pairs(self):
        return [pair for row in self.rows for pair in row]

    def __len__(self):
        return len(self.lam1_values) * len(self.lam2_values)


def _require_classes(data, what):
    counts = data.class_counts().sum(axis=0)
    absent = [data.class_labels[k] for k in range(data.K) if counts[k] == 0]
    if absent:
        raise SelectionError(f"{what}: class(es) {absent} never observed")


def intercept_only(data):
    """Intercept-only maximum likelihood: per-timepoint log-odds against class K.

    Timepoints without observations, or where a class is absent, get the
    finite limit 0 / +-inf clipped to +-30 (the likelihood has no finite
    maximiser there).
    """
    counts = data.class_counts().astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        b0 = np.log(counts[:, :-1]) - np.log(counts[:, -1:])
    b0 = np.nan_to_num(b0, nan=0.0, posinf=30.0, neginf=-30.0)
    b0 = np.clip(b0, -30.0, 30.0)
    return Coefficients(b0, np.zeros((data.p, data.T, data.K - 1)))


def lambda1_max(data):
    """Smallest lam1 at which every slope is zero, for any lam2.

    At beta = 0 the optimal intercepts reproduce the empirical class
    frequencies, so the slope gradient there has a closed form.
    """
    _require_classes(data, "lambda1_max")
    counts = data.class_counts().astype(float)
    nt = data.n_t.astype(float)
    freq = np.divide(counts[:, :-1], nt[:, None], out=np.zeros_like(counts[:, :-1]),
                     where=nt[:, None] > 0)
    resid = (freq[:, None, :] - data._onehot) * data._weights[:, :, None]
    grad = data._Xt.transpose(0, 2, 1) @ resid
    return float(np.abs(grad).max(initial=0.0))


def make_grid(data, n1, n2):
    """Log-spaced grid anchored at ``lambda1_max``.

    lam1 spans [1e-3, 1] x lambda1_max and lam2 spans [1e-3, 10] x
    lambda1_max; with a single value the upper endpoint is used.
    """
    if n1 < 1 or n2 < 1:
        raise InvalidArgumentError("grid counts must be >= 1")
    lmax = lambda1_max(data)
    if lmax <= 0:
        raise SelectionError("lambda1_max is zero; predictors carry no signal to penalise")
    l1 = lmax * np.logspace(0, -3, n1) if n1 > 1 else np.array([lmax])
    l2 = lmax * np.logspace(1, -3, n2) if n2 > 1 else np.array([10 * lmax])
    meta = {"lambda1_max": lmax, "n1": n1, "n2": n2, "spacing": "log",
            "lam1_range": [lmax * 1e-3, lmax], "lam2_range": [lmax * 1e-3, 10 * lmax]}
    return Grid(tuple(l1), tuple(l2), meta)


def fold_assignment(n, folds, seed):
    """Shuffle individuals with ``seed`` and cut into ``folds`` near-equal parts."""
    if folds < 2 or folds > n:
        raise InvalidArgumentError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def fit_path(data, grid, config=SolverConfig(), threads=1):
    """Fit every grid pair; returns results in ``grid.pairs`` order.

    Each row starts from zero coefficients and warm-starts along the row.
    """
    def run_row(row):
        out, init = [], None
        for lam1, lam2 in row:
            res = fit(data, PenaltyParams(lam1, lam2), config, init=init)
            out.append(res)
            init = res.coefficients
        return out

    return [r for row in _map(run_row, grid.rows, threads) for r in row]


@dataclass
class SelectionTable:
    """One row per grid pair plus the pairs chosen by each rule."""

    lam1: np.ndarray
    lam2: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    df: np.ndarray
    aic_nll: np.ndarray
    bic_nll: np.ndarray
    aic_misclass: np.ndarray
    bic_misclass: np.ndarray
    objective: np.ndarray
    fold_errors: np.ndarray = None   # (pairs, folds)
    chosen: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    COLUMNS = ("lam1", "lam2", "cv_mean", "cv_se", "df", "aic_nll", "bic_nll",
               "aic_misclass", "bic_misclass", "objective")

    @classmethod
    def empty(cls, grid):
        pairs = grid.pairs
        nan = np.full(len(pairs), np.nan)
        return cls(lam1=np.array([a for a, _ in pairs]), lam2=np.array([b for _, b in pairs]),
                   cv_mean=nan.copy(), cv_se=nan.copy(),
                   df=np.full(len(pairs), -1, dtype=np.int64),
                   aic_nll=nan.copy(), bic_nll=nan.copy(), aic_misclass=nan.copy(),
                   bic_misclass=nan.copy(), objective=nan.copy())

    def __len__(self):
        return len(self.lam1)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in range(len(self)):
            row = []
            for col in self.COLUMNS:
                v = getattr(self, col)[r]
                row.append(str(int(v)) if col == "df" else repr(float(v)))
            w.writerow(row)
        return buf.getvalue()


def cross_validate(data, grid, folds=4, seed=0, config=SolverConfig(), threads=1, table=None):
    """Fill the CV columns of a :class:`SelectionTable`.

    ``data`` may be a :class:`RawPanel`, in which case imputation and
    standardization are refit on each training part and replayed on the
    held-out part.  The error of a fold is the fraction of its observed
    held-out cells that are misclassified.
    """
    table = SelectionTable.empty(grid) if table is None else table
    parts = fold_assignment(data.n, folds, seed)

    def prepare(f):
        held = parts[f]
        train_idx = np.sort(np.concatenate([parts[g] for g in range(folds) if g != f]))
        if isinstance(data, RawPanel):
            train, report = preprocess(data.subset(train_idx))
            test = apply_report(data.subset(held), report)
        else:
            train, test = data.subset(train_idx), data.subset(held)
        counts = train.class_counts().sum(axis=0)
        if np.any(counts == 0):
            missing = [train.class_labels[k] for k in np.flatnonzero(counts == 0)]
            raise SelectionError(f"fold {f + 1}: training part has no observations of "
                                 f"class(es) {missing}")
        return train, test

    prepared = [prepare(f) for f in range(folds)]
    tasks = [(f, r) for f in range(folds) for r in range(len(grid.rows))]

    def run(task):
        f, r = task
        train, test = prepared[f]
        out, init = [], None
        for lam1, lam2 in grid.rows[r]:
            res = fit(train, PenaltyParams(lam1, lam2), config, init=init)
            wrong, cells = misclassification(res.coefficients, test)
            out.append(wrong / cells if cells else np.nan)
            init = res.coefficients
        return out

    results = _map(run, tasks, threads)
    n_per_row = len(grid.lam1_values)
    errors = np.empty((len(grid), folds))
    for (f, r), errs in zip(tasks, results):
        errors[r * n_per_row:(r + 1) * n_per_row, f] = errs
    table.fold_errors = errors
    table.cv_mean = errors.mean(axis=1)
    table.cv_se = errors.std(axis=1, ddof=1) / np.sqrt(folds)
    table.meta.update({"folds": folds, "seed": seed,
                       "fold_sizes": [int(len(p)) for p in parts]})
    return table


def count_df(coeffs, tol=1e-6):
    """Number of nonzero blocks: T(K-1) intercepts plus fused nonzero runs of slopes."""
    if tol < 0:
        raise InvalidArgumentError("tol must be >= 0")
    beta = np.asarray(coeffs.beta)
    p, T, km1 = beta.shape
    traj = beta.transpose(0, 2, 1).reshape(-1, T)
    nonzero = np.abs(traj) > tol
    new_run = np.ones_like(nonzero)
    new_run[:, 1:] = np.abs(np.diff(traj, axis=1)) > tol
    # a block opens at a nonzero entry that jumps from, or follows a zero at, t-1
    starts = nonzero & (new_run | np.concatenate(
        [np.ones((traj.shape[0], 1), bool), ~nonzero[:, :-1]], axis=1))
    return int(T * km1 + starts.sum())


def information_criteria(result, data, loss_kind="nll", tol=1e-6):
    """(AIC, BIC) of a fit, with loss the in-sample NLL or misclassification count."""
    coeffs = result.coefficients if hasattr(result, "coefficients") else result
    if loss_kind == "nll":
        loss = unscaled_nll(coeffs, data)
    elif loss_kind == "misclass":
        loss = float(misclassification(coeffs, data)[0])
    else:
        raise InvalidArgumentError(f"unknown loss kind {loss_kind!r}")
    df = count_df(coeffs, tol)
    n_tot = int(data.n_t.sum())
    return 2 * loss + 2 * df, 2 * loss + math.log(n_tot) * df


def selection_table(data, grid, folds=4, seed=0, config=SolverConfig(), threads=1,
                    df_tol=1e-6):
    """Cross-validate over ``grid`` and score full-data fits by df, AIC and BIC.

    Returns the populated table with ``chosen`` filled for every rule.
    """
    full = preprocess(data)[0] if isinstance(data, RawPanel) else data
    table = cross_validate(data, grid, folds, seed, config, threads)
    results = fit_path(full, grid, config, threads)
    for r, res in enumerate(results):
        table.df[r] = count_df(res.coefficients, df_tol)
        table.aic_nll[r], table.bic_nll[r] = information_criteria(res, full, "nll", df_tol)
        table.aic_misclass[r], table.bic_misclass[r] = information_criteria(
            res, full, "misclass", df_tol)
        table.objective[r] = res.objective
    table.meta.update({"df_tol": df_tol, "n_tot": int(full.n_t.sum()),
                       "misclass_loss": "unscaled in-sample count"})
    table.chosen = {rule: select(table, rule) for rule in RULES}
    return table


def _best(indices, score, table):
    # ties: larger lam1, then larger lam2
    return min(indices, key=lambda r: (score[r], -table.lam1[r], -table.lam2[r]))


def select(table, rule):
    """Return the (lam1, lam2) pair preferred by ``rule``."""
    rule = RULE_ALIASES.get(rule, rule)
    if rule not in RULES:
        raise InvalidArgumentError(f"unknown rule {rule!r}; choose from {RULES}")
    if len(table) == 0:
        raise SelectionError("empty selection table")
    rows = range(len(table))
    if rule in ("cv_min", "cv_one_se"):
        if np.isnan(table.cv_mean).any():
            raise SelectionError("cross-validation columns are not populated")
        best = _best(rows, table.cv_mean, table)
        if rule == "cv_one_se":
            if np.any(table.df < 0):
                raise SelectionError("df column is not populated")
            limit = table.cv_mean[best] + table.cv_se[best]
            eligible = [r for r in rows if table.cv_mean[r] <= limit]
            best = _best(eligible, table.df, table)
    else:
        score = getattr(table, rule)
        if np.isnan(score).any():
            raise SelectionError(f"column {rule} is not populated")
        best = _best(rows, score, table)
    return float(table.lam1[best]), float(table.lam2[best])
