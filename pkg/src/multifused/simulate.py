"""Synthetic longitudinal panels with sparse, piecewise-constant effects."""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EvaluationError, InvalidArgumentError
from .model import Coefficients, PanelData, misclassification

__all__ = ["SimConfig", "DEFAULT_TRAJECTORIES", "generate", "evaluate",
           "true_coefficients", "bayes_error", "scaled_trajectories"]

# predictor index (0-based) -> [(first t, last t inclusive, value), ...], t 0-based
DEFAULT_TRAJECTORIES = (
    (27, ((0, 4, 2.0), (5, 14, 0.5))),
    (28, ((0, 9, -1.5), (10, 14, -3.0))),
    (29, ((0, 14, 1.0),)),
)


def scaled_trajectories(p, T):
    """The default shapes on the last (up to) three predictors, breakpoints scaled to T.

    Equals :data:`DEFAULT_TRAJECTORIES` for ``p=30, T=15``.
    """
    a, b = round(T / 3), round(2 * T / 3)
    shapes = (((0, a - 1, 2.0), (a, T - 1, 0.5)),
              ((0, b - 1, -1.5), (b, T - 1, -3.0)),
              ((0, T - 1, 1.0),))
    shapes = shapes[3 - min(3, p):]
    out = []
    for offset, segs in enumerate(shapes):
        kept = tuple(seg for seg in segs if seg[0] <= seg[1])
        out.append((p - len(shapes) + offset, kept))
    return tuple(out)


@dataclass(frozen=True)
class SimConfig:
    n: int = 50
    T: int = 15
    K: int = 2
    p: int = 30
    seed: int = 0
    # for K > 2 each segment value may be a length K-1 sequence
    trajectories: tuple = DEFAULT_TRAJECTORIES
    intercept: float = 0.0

    def __post_init__(self):
        if min(self.n, self.T, self.p) < 1 or self.K < 2:
            raise InvalidArgumentError("n, T, p must be positive and K >= 2")
        seen = set()
        for j, segments in self.trajectories:
            if not 0 <= j < self.p or j in seen:
                raise InvalidArgumentError(f"bad or repeated predictor index {j}")
            seen.add(j)
            covered = []
            for lo, hi, _ in segments:
                covered.extend(range(lo, hi + 1))
            if sorted(covered) != list(range(self.T)):
                raise InvalidArgumentError(
                    f"segments for predictor {j} do not partition 0..{self.T - 1}")


def true_coefficients(config):
    km1 = config.K - 1
    beta = np.zeros((config.p, config.T, km1))
    for j, segments in config.trajectories:
        for lo, hi, value in segments:
            beta[j, lo:hi + 1, :] = value
    beta0 = np.full((config.T, km1), float(config.intercept))
    return Coefficients(beta0, beta)


def _draw_labels(rng, coeffs, X):
    # X: (n, p, T)
    eta = np.einsum("ijt,jtk->itk", X, coeffs.beta) + coeffs.beta0[None]
    eta = np.concatenate([eta, np.zeros(eta.shape[:2] + (1,))], axis=-1)
    eta -= eta.max(axis=-1, keepdims=True)
    prob = np.exp(eta)
    prob /= prob.sum(axis=-1, keepdims=True)
    u = rng.random(eta.shape[:2])
    cum = np.cumsum(prob, axis=-1)
    labels = (u[..., None] > cum).sum(axis=-1) + 1
    return np.minimum(labels, coeffs.K)


def generate(config=SimConfig(), n=None, rng=None):
    """Draw a fully observed panel and return it with the true coefficients.

    ``n`` overrides ``config.n`` (handy for large test sets); ``rng``
    overrides the seeded generator so train and test draws can share one
    stream.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    n = config.n if n is None else n
    truth = true_coefficients(config)
    X = rng.standard_normal((n, config.p, config.T))
    Y = _draw_labels(rng, truth, X)
    return PanelData(Y, X, config.K), truth


def evaluate(train, test, coeffs):
    """Misclassification rate of ``coeffs`` over the observed cells of ``test``."""
    for d in (train, test):
        if coeffs.beta.shape != (d.p, d.T, d.K - 1):
            raise EvaluationError(
                f"coefficients {coeffs.beta.shape} do not match panel "
                f"(p={d.p}, T={d.T}, K={d.K})")
    wrong, cells = misclassification(coeffs, test)
    if cells == 0:
        raise EvaluationError("test panel has no observed cells")
    return wrong / cells


def bayes_error(config=SimConfig(), cells=200_000, seed=12345):
    """Monte-Carlo error of the Bayes rule under the true model.

    Computed from the class probabilities directly (expected error of the
    argmax rule), not from sampled labels.
    """
    rng = np.random.default_rng(seed)
    truth = true_coefficients(config)
    n = max(1, cells // config.T)
    X = rng.standard_normal((n, config.p, config.T))
    eta = np.einsum("ijt,jtk->itk", X, truth.beta) + truth.beta0[None]
    eta = np.concatenate([eta, np.zeros(eta.shape[:2] + (1,))], axis=-1)
    eta -= eta.max(axis=-1, keepdims=True)
    prob = np.exp(eta)
    prob /= prob.sum(axis=-1, keepdims=True)
    return float(1.0 - prob.max(axis=-1).mean())
