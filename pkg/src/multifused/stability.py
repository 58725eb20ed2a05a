"""Subsampling-based variable importance."""
import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import RawPanel, encode_categorical, preprocess
from .exceptions import ImportanceError, InvalidArgumentError, SelectionError
from .model import PenaltyParams
from .selection import cross_validate, fold_assignment, make_grid, select, selection_table
from .solver import SolverConfig, fit

__all__ = ["ImportanceConfig", "ImportanceResult", "aggregate_importance", "importance",
           "relative_importance"]


@dataclass(frozen=True)
class ImportanceConfig:
    replicates: int = 4
    fraction: float = 0.75
    inner_selection: bool = True
    seed: int = 0
    lam1: float = 0.0          # used when inner_selection is False
    lam2: float = 0.0
    folds: int = 4             # inner cross-validation
    grid_n1: int = 5
    grid_n2: int = 5
    rule: str = "cv_min"
    reuse_cv_folds: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.replicates < 1:
            raise InvalidArgumentError("replicates must be >= 1")
        if not 0 < self.fraction <= 1:
            raise InvalidArgumentError("fraction must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class ImportanceResult:
    importance: np.ndarray      # (p, K-1)
    relative: np.ndarray        # (p, K-1), max scaled to 100
    chosen: tuple               # per replicate (lam1, lam2)
    subsamples: tuple           # per replicate sorted individual indices
    coefficients: tuple         # per replicate Coefficients
    predictor_names: tuple = ()
    class_labels: tuple = ()

    def to_csv(self):
        """Rows (predictor, class, importance, relative_importance), most important first."""
        p, km1 = self.importance.shape
        rows = [(self.predictor_names[j], self.class_labels[k],
                 self.importance[j, k], self.relative[j, k])
                for j in range(p) for k in range(km1)]
        order = sorted(range(len(rows)), key=lambda r: (-rows[r][2], r))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["predictor", "class", "importance", "relative_importance"])
        for r in order:
            name, label, imp, rel = rows[r]
            w.writerow([name, label, repr(float(imp)), repr(float(rel))])
        return buf.getvalue()


def relative_importance(I):
    I = np.asarray(I, dtype=float)
    top = I.max(initial=0.0)
    if top <= 0:
        return np.zeros_like(I)
    return I / top * 100.0


def aggregate_importance(coefficients):
    """Mean of |beta| over replicates and timepoints: a (p, K-1) array."""
    stacked = np.stack([np.abs(c.beta) for c in coefficients])   # (R, p, T, K-1)
    return stacked.mean(axis=(0, 2))


def _subsamples(n, config):
    if config.reuse_cv_folds:
        parts = fold_assignment(n, config.replicates, config.seed)
        return [np.setdiff1d(np.arange(n), held) for held in parts]
    m = math.ceil(config.fraction * n)
    # one independent stream per replicate so replicates can run in any order
    return [np.sort(np.random.default_rng([config.seed, r]).choice(n, m, replace=False))
            for r in range(config.replicates)]


def _fit_replicate(sub, config, r):
    panel = preprocess(sub)[0] if isinstance(sub, RawPanel) else sub
    counts = panel.class_counts().sum(axis=0)
    if np.any(counts == 0):
        missing = [panel.class_labels[k] for k in np.flatnonzero(counts == 0)]
        raise ImportanceError(f"replicate {r + 1}: subsample has no observations of "
                              f"class(es) {missing}")
    if config.inner_selection:
        try:
            grid = make_grid(panel, config.grid_n1, config.grid_n2)
            if config.rule == "cv_min":
                table = cross_validate(sub, grid, config.folds, config.seed + r, config.solver)
            else:
                table = selection_table(sub, grid, config.folds, config.seed + r, config.solver)
            lam1, lam2 = select(table, config.rule)
        except SelectionError as exc:
            raise ImportanceError(f"replicate {r + 1}: {exc}") from exc
    else:
        lam1, lam2 = config.lam1, config.lam2
    res = fit(panel, PenaltyParams(lam1, lam2), config.solver)
    return (lam1, lam2), res.coefficients


def importance(data, config=ImportanceConfig(), threads=1):
    """Average absolute slope over replicates and timepoints, per (predictor, class).

    Each replicate fits on a subsample of individuals drawn without
    replacement; with ``inner_selection`` the replicate first picks its own
    tuning pair by cross-validation on that subsample.
    """
    subs = _subsamples(data.n, config)
    tasks = list(enumerate(subs))

    def run(task):
        r, idx = task
        return _fit_replicate(data.subset(idx), config, r)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(run, tasks))
    else:
        outs = [run(t) for t in tasks]

    coefs = [c for _, c in outs]
    I = aggregate_importance(coefs)
    if isinstance(data, RawPanel):
        names = encode_categorical(data).predictors
        labels = data.classes[:-1]
    else:
        names, labels = data.predictor_names, data.class_labels[:-1]
    return ImportanceResult(importance=I, relative=relative_importance(I),
                            chosen=tuple(pair for pair, _ in outs),
                            subsamples=tuple(subs), coefficients=tuple(coefs),
                            predictor_names=tuple(names), class_labels=tuple(labels))
