"""Multinomial logit model over a longitudinal panel.

Class K is the reference class: its log-odds are pinned at zero, so a
model with K classes carries K-1 intercepts and K-1 slope vectors per
timepoint.  Timepoints are indexed from 0; class labels run 1..K with 0
marking a missing outcome.
"""
from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np

from .exceptions import InvalidArgumentError

MISSING = 0

__all__ = [
    "MISSING",
    "PanelData",
    "Coefficients",
    "PenaltyParams",
    "class_probabilities",
    "scaled_nll",
    "unscaled_nll",
    "gradient",
    "loss_and_gradient",
    "penalty_value",
    "objective",
    "predict",
    "predict_panel",
    "misclassification",
]


@dataclass(frozen=True, eq=False)
class PanelData:
    """Outcomes ``Y`` (n x T, labels 1..K, 0 = missing) and predictors ``X`` (n x p x T).

    An individual belongs to I_t exactly when ``Y[i, t] != 0``.  Predictor
    values of individuals outside I_t are never read.
    """

    Y: np.ndarray
    X: np.ndarray
    K: int
    ids: tuple = None
    predictor_names: tuple = None
    class_labels: tuple = None
    times: tuple = None

    def __post_init__(self):
        Y = np.array(self.Y, dtype=np.int64)
        X = np.array(self.X, dtype=np.float64)
        if Y.ndim != 2 or X.ndim != 3:
            raise InvalidArgumentError("Y must be n x T and X must be n x p x T")
        n, T = Y.shape
        if X.shape[0] != n or X.shape[2] != T:
            raise InvalidArgumentError(f"X shape {X.shape} does not match Y shape {Y.shape}")
        K = int(self.K)
        if K < 2:
            raise InvalidArgumentError("need at least two classes")
        if Y.min(initial=0) < 0 or Y.max(initial=0) > K:
            raise InvalidArgumentError(f"labels must lie in 0..{K}")
        obs = Y != MISSING
        if not np.all(np.isfinite(X[obs.nonzero()[0], :, obs.nonzero()[1]])):
            raise InvalidArgumentError("X has non-finite entries for observed cells")
        Y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "K", K)
        if self.ids is None:
            object.__setattr__(self, "ids", tuple(str(i + 1) for i in range(n)))
        if self.predictor_names is None:
            object.__setattr__(self, "predictor_names",
                               tuple(f"x{j + 1}" for j in range(X.shape[1])))
        if self.class_labels is None:
            object.__setattr__(self, "class_labels", tuple(str(k + 1) for k in range(K)))
        if self.times is None:
            object.__setattr__(self, "times", tuple(range(1, T + 1)))

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def T(self):
        return self.Y.shape[1]

    @cached_property
    def observed(self):
        return self.Y != MISSING

    @cached_property
    def n_t(self):
        return self.observed.sum(axis=0)

    def I(self, t):
        """Indices of the individuals observed at timepoint ``t``."""
        return np.flatnonzero(self.observed[:, t])

    @cached_property
    def _Xt(self):
        # (T, n, p) with unobserved cells zeroed so NaNs never reach a matmul
        Xt = np.where(self.observed[:, None, :], self.X, 0.0)
        return np.ascontiguousarray(Xt.transpose(2, 0, 1))

    @cached_property
    def _codes(self):
        # (T, n) labels, contiguous for the kernels
        return np.ascontiguousarray(self.Y.T)

    @cached_property
    def _weights(self):
        # (T, n): 1/n_t on observed cells, 0 elsewhere
        nt = self.n_t
        inv = np.divide(1.0, nt, out=np.zeros(self.T), where=nt > 0)
        return self.observed.T * inv[:, None]

    @cached_property
    def _onehot(self):
        # (T, n, K-1) indicators for the non-reference classes
        Yt = self.Y.T
        return (Yt[:, :, None] == np.arange(1, self.K)[None, None, :]).astype(float)

    def subset(self, individuals):
        idx = np.asarray(individuals, dtype=np.int64)
        return PanelData(self.Y[idx], self.X[idx], self.K,
                         ids=tuple(self.ids[i] for i in idx),
                         predictor_names=self.predictor_names,
                         class_labels=self.class_labels, times=self.times)

    def class_counts(self):
        """(T, K) array of per-timepoint label counts."""
        return np.stack([(self.Y == k).sum(axis=0) for k in range(1, self.K + 1)], axis=1)


@dataclass(frozen=True, eq=False)
class Coefficients:
    beta0: np.ndarray  # (T, K-1)
    beta: np.ndarray   # (p, T, K-1)

    def __post_init__(self):
        b0 = np.array(self.beta0, dtype=float)
        b = np.array(self.beta, dtype=float)
        if b0.ndim != 2 or b.ndim != 3 or b.shape[1:] != b0.shape:
            raise InvalidArgumentError(
                f"incompatible shapes beta0 {b0.shape} and beta {b.shape}")
        b0.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "beta0", b0)
        object.__setattr__(self, "beta", b)

    @classmethod
    def zeros(cls, p, T, K):
        return cls(np.zeros((T, K - 1)), np.zeros((p, T, K - 1)))

    @classmethod
    def from_stacked(cls, arr):
        """Inverse of :meth:`stacked`: row 0 holds intercepts, rows 1.. slopes."""
        return cls(arr[0], arr[1:])

    def stacked(self):
        """(p+1, T, K-1) array in the same layout as :func:`gradient`."""
        return np.concatenate([self.beta0[None], self.beta], axis=0)

    @property
    def p(self):
        return self.beta.shape[0]

    @property
    def T(self):
        return self.beta0.shape[0]

    @property
    def K(self):
        return self.beta0.shape[1] + 1

    def __eq__(self, other):
        if not isinstance(other, Coefficients):
            return NotImplemented
        return (np.array_equal(self.beta0, other.beta0)
                and np.array_equal(self.beta, other.beta))


@dataclass(frozen=True)
class PenaltyParams:
    lam1: float = 0.0
    lam2: float = 0.0

    def __post_init__(self):
        for name in ("lam1", "lam2"):
            val = float(getattr(self, name))
            if not np.isfinite(val) or val < 0:
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {val}")
            object.__setattr__(self, name, val)


def _log1p_sum_exp(eta):
    """log(1 + sum_k exp(eta_k)) over the last axis, stabilised."""
    top = np.maximum(eta.max(axis=-1), 0.0)
    return top + np.log(np.exp(-top) + np.exp(eta - top[..., None]).sum(axis=-1))


def _linear_predictor(coeffs, Xt):
    # Xt: (T, n, p) -> (T, n, K-1)
    return Xt @ coeffs.beta.transpose(1, 0, 2) + coeffs.beta0[:, None, :]


def _check_dims(coeffs, data):
    if coeffs.beta.shape != (data.p, data.T, data.K - 1):
        raise InvalidArgumentError(
            f"coefficients {coeffs.beta.shape} do not match data "
            f"(p={data.p}, T={data.T}, K={data.K})")


def class_probabilities(coeffs, x, t):
    """Probabilities of classes 1..K for predictor vector ``x`` at timepoint ``t``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("x has non-finite entries")
    if not 0 <= t < coeffs.T:
        raise InvalidArgumentError(f"timepoint {t} outside 0..{coeffs.T - 1}")
    eta = np.append(coeffs.beta0[t] + x @ coeffs.beta[:, t, :], 0.0)
    z = np.exp(eta - eta.max())
    return z / z.sum()


def _cell_nll(coeffs, data):
    # (T, n) per-cell negative log likelihood; garbage on unobserved cells
    eta = _linear_predictor(coeffs, data._Xt)
    fit = (eta * data._onehot).sum(axis=-1)
    return _log1p_sum_exp(eta) - fit, eta


@numba.njit(cache=True, nogil=True)
def _loss_kernel(Xt, codes, w, b0, B, grad, want_grad):
    # One pass over the observed cells.  B is (T, K-1, p) and grad is
    # (T, K-1, p+1).  Summation order is fixed, so results are bit-stable.
    T, n, p = Xt.shape
    km1 = B.shape[1]
    eta = np.empty(km1)
    loss = 0.0
    for t in range(T):
        for i in range(n):
            wi = w[t, i]
            if wi == 0.0:
                continue
            x = Xt[t, i]
            top = 0.0
            for k in range(km1):
                acc = b0[t, k]
                beta = B[t, k]
                for j in range(p):
                    acc += x[j] * beta[j]
                eta[k] = acc
                if acc > top:
                    top = acc
            denom = np.exp(-top)
            for k in range(km1):
                denom += np.exp(eta[k] - top)
            y = codes[t, i]
            cell = top + np.log(denom)
            if y <= km1:
                cell -= eta[y - 1]
            loss += wi * cell
            if want_grad:
                for k in range(km1):
                    r = np.exp(eta[k] - top) / denom
                    if y == k + 1:
                        r -= 1.0
                    r *= wi
                    g = grad[t, k]
                    g[0] += r
                    for j in range(p):
                        g[j + 1] += r * x[j]
    return loss


def _run_kernel(coeffs, data, want_grad):
    _check_dims(coeffs, data)
    B = np.ascontiguousarray(coeffs.beta.transpose(1, 2, 0))
    b0 = np.ascontiguousarray(coeffs.beta0)
    grad = np.zeros((data.T, data.K - 1, data.p + 1))
    loss = _loss_kernel(data._Xt, data._codes, data._weights, b0, B, grad, want_grad)
    return loss, grad


def scaled_nll(coeffs, data):
    """Sum over t of the average negative log likelihood over I_t."""
    return _run_kernel(coeffs, data, False)[0]


def unscaled_nll(coeffs, data):
    """Plain negative log likelihood summed over every observed cell."""
    _check_dims(coeffs, data)
    cell, _ = _cell_nll(coeffs, data)
    return float(cell[data.observed.T].sum())


def loss_and_gradient(coeffs, data):
    """Scaled loss and its gradient in one pass over the data."""
    loss, grad = _run_kernel(coeffs, data, True)
    return loss, np.ascontiguousarray(grad.transpose(2, 0, 1))


def gradient(coeffs, data):
    """Gradient of :func:`scaled_nll`, shape ``(p+1, T, K-1)``; row 0 is the intercepts."""
    return loss_and_gradient(coeffs, data)[1]


def penalty_value(beta, params):
    beta = np.asarray(beta, dtype=float)
    l1 = np.abs(beta).sum()
    fuse = np.abs(np.diff(beta, axis=1)).sum()
    return float(params.lam1 * l1 + params.lam2 * fuse)


def objective(coeffs, data, params):
    return scaled_nll(coeffs, data) + penalty_value(coeffs.beta, params)


def predict(coeffs, x, t):
    """Most probable class label (1..K); ties go to the smallest label."""
    return int(np.argmax(class_probabilities(coeffs, x, t))) + 1


def predict_panel(coeffs, data):
    """(n, T) predicted labels for every cell, observed or not."""
    _check_dims(coeffs, data)
    Xt = np.ascontiguousarray(np.nan_to_num(data.X).transpose(2, 0, 1))
    eta = _linear_predictor(coeffs, Xt)
    full = np.concatenate([eta, np.zeros(eta.shape[:-1] + (1,))], axis=-1)
    return (np.argmax(full, axis=-1) + 1).T


def misclassification(coeffs, data):
    """Return (number of misclassified observed cells, number of observed cells)."""
    pred = predict_panel(coeffs, data)
    obs = data.observed
    return int((pred[obs] != data.Y[obs]).sum()), int(obs.sum())
