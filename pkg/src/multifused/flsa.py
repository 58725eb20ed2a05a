"""Exact 1-D fused lasso signal approximator.

Solves

    argmin_theta  1/2 ||x - theta||^2 + lam1 * sum |theta_i|
                  + lam2 * sum |theta_i - theta_{i+1}|

in O(m) time.  The fusion part is handled by Johnson's dynamic programme
(forward pass over piecewise-linear message derivatives, backward pass by
clipping); the lasso part is then applied by soft-thresholding, which is
exact for this problem.

``check_kkt`` is an independent optimality certificate that never calls
the solver.
"""
from dataclasses import dataclass

import numba
import numpy as np

from .exceptions import InvalidArgumentError

__all__ = [
    "FusionProblem",
    "KKTReport",
    "flsa_solve",
    "flsa_batch",
    "check_kkt",
    "soft_threshold",
]


@dataclass(frozen=True)
class FusionProblem:
    """A single FLSA instance: signal ``x`` with weights ``lam1``/``lam2``."""

    x: np.ndarray
    lam1: float = 0.0
    lam2: float = 0.0

    def __post_init__(self):
        x = np.array(self.x, dtype=float, ndmin=1)
        if x.ndim != 1 or x.size < 1:
            raise InvalidArgumentError("signal must be a non-empty 1-D vector")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("signal contains non-finite entries")
        for name in ("lam1", "lam2"):
            val = float(getattr(self, name))
            if not np.isfinite(val) or val < 0:
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {val}")
            object.__setattr__(self, name, val)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def m(self):
        return self.x.size


def soft_threshold(v, lam):
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


@numba.njit(cache=True, nogil=True)
def _tv_dp(y, lam, out):
    n = y.shape[0]
    if n == 1 or lam == 0.0:
        for i in range(n):
            out[i] = y[i]
        return

    # knot positions and slope/intercept increments of the message derivative
    x = np.empty(2 * n)
    a = np.empty(2 * n)
    b = np.empty(2 * n)
    # back-pointers: lower/upper clipping thresholds
    tm = np.empty(n - 1)
    tp = np.empty(n - 1)

    tm[0] = y[0] - lam
    tp[0] = y[0] + lam
    l = n - 1
    r = n
    x[l] = tm[0]
    x[r] = tp[0]
    a[l] = 1.0
    b[l] = lam - y[0]
    a[r] = -1.0
    b[r] = y[0] + lam
    afirst = 1.0
    bfirst = -y[1] - lam
    alast = -1.0
    blast = y[1] - lam

    for k in range(1, n - 1):
        alo = afirst
        blo = bfirst
        lo = l
        while lo <= r:
            if alo * x[lo] + blo > -lam:
                break
            alo += a[lo]
            blo += b[lo]
            lo += 1

        ahi = alast
        bhi = blast
        hi = r
        while hi >= lo:
            if -ahi * x[hi] - bhi < lam:
                break
            ahi += a[hi]
            bhi += b[hi]
            hi -= 1

        tm[k] = (-lam - blo) / alo
        l = lo - 1
        x[l] = tm[k]

        tp[k] = (lam + bhi) / (-ahi)
        r = hi + 1
        x[r] = tp[k]

        a[l] = alo
        b[l] = blo + lam
        a[r] = ahi
        b[r] = bhi + lam
        afirst = 1.0
        bfirst = -y[k + 1] - lam
        alast = -1.0
        blast = y[k + 1] - lam

    # last coordinate: zero of the final derivative
    alo = afirst
    blo = bfirst
    for lo in range(l, r + 1):
        if alo * x[lo] + blo > 0.0:
            break
        alo += a[lo]
        blo += b[lo]
    out[n - 1] = -blo / alo

    # ties keep the coordinate merged with its successor
    for k in range(n - 2, -1, -1):
        nxt = out[k + 1]
        if nxt > tp[k]:
            out[k] = tp[k]
        elif nxt < tm[k]:
            out[k] = tm[k]
        else:
            out[k] = nxt


@numba.njit(cache=True, nogil=True)
def _flsa_rows(v, lam1, lam2, out):
    for row in range(v.shape[0]):
        _tv_dp(v[row], lam2, out[row])
        if lam1 > 0.0:
            for i in range(v.shape[1]):
                z = out[row, i]
                if z > lam1:
                    out[row, i] = z - lam1
                elif z < -lam1:
                    out[row, i] = z + lam1
                else:
                    out[row, i] = 0.0


def flsa_batch(v, lam1, lam2):
    """Solve one FLSA problem per row of ``v`` (shape ``(r, m)``).

    No validation is done here; this is the inner-loop entry point used by
    the proximal step.
    """
    v = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty_like(v)
    if v.shape[0] and v.shape[1]:
        _flsa_rows(v, float(lam1), float(lam2), out)
    return out


def flsa_solve(problem, lam1=None, lam2=None):
    """Return the unique FLSA minimiser.

    Accepts either a :class:`FusionProblem` or a raw vector together with
    ``lam1``/``lam2``.

    >>> flsa_solve([1.0, 3.0], 0.0, 1.0)
    array([2., 2.])
    """
    if not isinstance(problem, FusionProblem):
        problem = FusionProblem(problem, 0.0 if lam1 is None else lam1,
                                0.0 if lam2 is None else lam2)
    return flsa_batch(problem.x[None, :], problem.lam1, problem.lam2)[0]


@dataclass(frozen=True)
class KKTReport:
    ok: bool
    violations: np.ndarray  # per-coordinate excess over tol, 0 where satisfied

    def __bool__(self):
        return self.ok

    @property
    def max_violation(self):
        return float(self.violations.max(initial=0.0))


def check_kkt(problem, candidate, tol=1e-6):
    """Certify ``candidate`` as the FLSA minimiser up to ``tol``.

    Stationarity reads, for every coordinate i,

        theta_i - x_i + lam1 * s_i + lam2 * (u_i - u_{i-1}) = e_i,  |e_i| <= tol

    with s_i in the subdifferential of |theta_i|, u_i in that of
    |theta_i - theta_{i+1}| and u_0 = u_m = 0.  Writing c_i = lam2 * u_i the
    equations become a scalar recursion, so the set of reachable c_i is an
    interval that can be propagated left to right.  Coordinates with
    |theta_i| <= tol are treated as zero and neighbours within tol as fused.

    A coordinate's violation is the distance between its reachable interval
    and the admissible set for c_i; after a violation the recursion resumes
    from the nearest admissible point.
    """
    if not isinstance(problem, FusionProblem):
        raise InvalidArgumentError("problem must be a FusionProblem")
    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    theta = np.asarray(candidate, dtype=float)
    x, lam1, lam2 = problem.x, problem.lam1, problem.lam2
    m = x.size
    if theta.shape != (m,):
        raise InvalidArgumentError(f"candidate must have length {m}")

    viol = np.zeros(m)
    lo = hi = 0.0  # c_0 = 0
    for i in range(m):
        base = x[i] - theta[i]
        if abs(theta[i]) <= tol:
            step_lo, step_hi = base - lam1, base + lam1
        else:
            s = np.sign(theta[i])
            step_lo = step_hi = base - lam1 * s
        lo, hi = lo + step_lo - tol, hi + step_hi + tol

        if i == m - 1:
            adm_lo = adm_hi = 0.0
        elif abs(theta[i] - theta[i + 1]) <= tol:
            adm_lo, adm_hi = -lam2, lam2
        else:
            adm_lo = adm_hi = lam2 * np.sign(theta[i] - theta[i + 1])

        if hi < adm_lo:
            viol[i] = adm_lo - hi
            lo = hi = adm_lo
        elif lo > adm_hi:
            viol[i] = lo - adm_hi
            lo = hi = adm_hi
        else:
            lo, hi = max(lo, adm_lo), min(hi, adm_hi)
    return KKTReport(ok=bool(np.all(viol == 0.0)), violations=viol)
