"""Proximal gradient descent with backtracking for the multinomial fused lasso."""
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import DivergenceError, InvalidArgumentError, StepSizeError
from .flsa import flsa_batch
from .model import (Coefficients, PanelData, PenaltyParams, loss_and_gradient,
                    penalty_value, scaled_nll)

__all__ = [
    "StopRule",
    "SolverConfig",
    "FitResult",
    "LineSearch",
    "prox_step",
    "generalized_gradient",
    "backtracking_search",
    "fit",
]


class StopRule(str, Enum):
    OBJECTIVE_RELATIVE = "obj"   # |f+ - f| / f
    ITERATE_RELATIVE = "iter"    # ||x+ - x|| / ||x||


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 80
    tau0: float = 20.0
    gamma: float = 0.6
    epsilon: float = 1e-3
    stop_rule: StopRule = StopRule.OBJECTIVE_RELATIVE
    max_backtracks: int = 50

    def __post_init__(self):
        object.__setattr__(self, "stop_rule", StopRule(self.stop_rule))
        if not (isinstance(self.max_iters, (int, np.integer)) and self.max_iters >= 1):
            raise InvalidArgumentError("max_iters must be a positive integer")
        if not self.tau0 > 0:
            raise InvalidArgumentError("tau0 must be positive")
        if not 0 < self.gamma < 1:
            raise InvalidArgumentError("gamma must lie in (0, 1)")
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be positive")
        if not self.max_backtracks >= 1:
            raise InvalidArgumentError("max_backtracks must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of :func:`fit`.

    ``objective_trace[0]`` is the objective at the initial point and
    ``objective_trace[s]`` the value after iteration ``s``; ``step_sizes[s-1]``
    is the step accepted in iteration ``s``.
    """

    coefficients: Coefficients
    objective_trace: np.ndarray
    iterations_run: int
    converged: bool
    step_sizes: np.ndarray
    final_criterion_value: float
    params: PenaltyParams = field(default_factory=PenaltyParams)
    config: SolverConfig = field(default_factory=SolverConfig)

    @property
    def objective(self):
        return float(self.objective_trace[-1])


class LineSearch(NamedTuple):
    tau: float
    shrinks: int
    coefficients: Coefficients  # the accepted prox-gradient update
    loss: float                 # scaled loss at the accepted update


def prox_step(coeffs, grad, tau, params):
    """One proximal gradient update with step ``tau``.

    Intercepts take a plain gradient step.  Each slope trajectory
    ``beta[j, :, k]`` is replaced by the FLSA solution over its
    gradient-stepped values with weights ``(tau*lam1, tau*lam2)``.
    """
    if not tau > 0:
        raise InvalidArgumentError("tau must be positive")
    grad = np.asarray(grad)
    p, T, km1 = coeffs.beta.shape
    b0 = coeffs.beta0 - tau * grad[0]
    stepped = coeffs.beta - tau * grad[1:]
    rows = stepped.transpose(0, 2, 1).reshape(p * km1, T)
    solved = flsa_batch(rows, tau * params.lam1, tau * params.lam2)
    beta = solved.reshape(p, km1, T).transpose(0, 2, 1)
    return Coefficients(b0, beta)


def generalized_gradient(coeffs, grad, tau, params, _update=None):
    update = prox_step(coeffs, grad, tau, params) if _update is None else _update
    G = (coeffs.stacked() - update.stacked()) / tau
    G[0] = grad[0]
    return G


def _sufficient_decrease(loss, grad, tau, G, new_loss):
    bound = loss - tau * np.vdot(grad, G) + 0.5 * tau * np.vdot(G, G)
    return not new_loss > bound


def backtracking_search(coeffs, data, params, config=SolverConfig(), *, loss=None, grad=None):
    """Shrink ``tau`` from ``config.tau0`` by ``gamma`` until sufficient decrease holds.

    Returns a :class:`LineSearch`; raises :class:`StepSizeError` after
    ``config.max_backtracks`` shrinks without success.
    """
    if loss is None or grad is None:
        loss, grad = loss_and_gradient(coeffs, data)
    tau = config.tau0
    shrinks = 0
    while True:
        update = prox_step(coeffs, grad, tau, params)
        G = generalized_gradient(coeffs, grad, tau, params, _update=update)
        new_loss = scaled_nll(update, data)
        if _sufficient_decrease(loss, grad, tau, G, new_loss):
            return LineSearch(tau, shrinks, update, new_loss)
        if shrinks >= config.max_backtracks:
            raise StepSizeError(
                f"no sufficient decrease after {shrinks} shrinks (last tau={tau:.3g})", tau)
        tau *= config.gamma
        shrinks += 1


def _criterion(rule, f_old, f_new, x_old, x_new):
    if rule is StopRule.OBJECTIVE_RELATIVE:
        diff = abs(f_new - f_old)
        return diff / f_old if f_old != 0 else diff
    diff = np.linalg.norm(x_new - x_old)
    norm = np.linalg.norm(x_old)
    return diff / norm if norm != 0 else diff


def fit(data: PanelData, params: PenaltyParams, config: SolverConfig = SolverConfig(),
        init: Optional[Coefficients] = None) -> FitResult:
    """Minimise scaled loss + lasso + fusion penalty by proximal gradient descent.

    Starts from all-zero coefficients unless ``init`` is given and stops
    when the configured relative-change criterion drops to ``epsilon`` or
    after ``max_iters`` iterations.
    """
    coeffs = Coefficients.zeros(data.p, data.T, data.K) if init is None else init
    if coeffs.beta.shape != (data.p, data.T, data.K - 1):
        raise InvalidArgumentError("init does not match the data dimensions")

    loss, grad = loss_and_gradient(coeffs, data)
    f = loss + penalty_value(coeffs.beta, params)
    trace = [f]
    steps = []
    crit = np.inf
    converged = False
    for _ in range(config.max_iters):
        ls = backtracking_search(coeffs, data, params, config, loss=loss, grad=grad)
        f_new = ls.loss + penalty_value(ls.coefficients.beta, params)
        if not np.isfinite(f_new):
            raise DivergenceError("objective became non-finite")
        crit = _criterion(config.stop_rule, f, f_new,
                          coeffs.stacked(), ls.coefficients.stacked())
        coeffs, f = ls.coefficients, f_new
        trace.append(f)
        steps.append(ls.tau)
        if crit <= config.epsilon:
            converged = True
            break
        loss, grad = loss_and_gradient(coeffs, data)

    return FitResult(
        coefficients=coeffs,
        objective_trace=np.array(trace),
        iterations_run=len(steps),
        converged=converged,
        step_sizes=np.array(steps),
        final_criterion_value=float(crit),
        params=params,
        config=config,
    )
