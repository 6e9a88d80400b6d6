"""Dense Levenberg-Marquardt for small sum-of-squares problems.

The damped normal equations ``(J'J + lam * D) step = -J'r`` use Marquardt
scaling ``D = diag(J'J)`` and are solved by Cholesky.  Only steps that
lower the sum of squares are accepted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .exceptions import NonFiniteResidual

_LAMBDA_MAX = 1e16


class LMStatus(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    SINGULAR = "singular_normal_equations"


@dataclass(frozen=True)
class LMSettings:
    max_iters: int = 200
    ftol: float = 1e-10
    xtol: float = 1e-10
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        for name in ("ftol", "xtol", "lambda0", "lambda_up", "lambda_down"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class LeastSquaresProblem:
    """Residuals ``r(x)`` (length r) with Jacobian ``dr/dx`` (r x q)."""

    residual_fn: Callable[[np.ndarray], np.ndarray]
    jacobian_fn: Callable[[np.ndarray], np.ndarray]
    q: int
    r: int

    def __post_init__(self):
        if self.q < 1 or self.r < 1:
            raise ValueError("need q >= 1 and r >= 1")


@dataclass
class LMResult:
    x: np.ndarray
    sse: float
    iters: int
    status: LMStatus
    history: list = field(default_factory=list)  # accepted SSE values, starting at x0

    @property
    def converged(self) -> bool:
        return self.status is LMStatus.CONVERGED


def _sse(r):
    return float(r @ r)


def lm_minimize(problem: LeastSquaresProblem, x0, settings: LMSettings | None = None) -> LMResult:
    """Minimise ``||r(x)||^2`` starting from ``x0``.

    After an accepted step whose actual decrease matches the quadratic model
    to within 1e-10 the next trial is undamped; an undamped step that again
    matches the model ends the run, so affine residuals are solved exactly
    after at most two accepted steps.
    """
    st = settings or LMSettings()
    x = np.array(x0, dtype=float)
    if x.shape != (problem.q,):
        raise ValueError(f"x0 must have length {problem.q}")
    r = np.asarray(problem.residual_fn(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidual("residuals are not finite at the starting point")
    sse = _sse(r)
    history = [sse]
    lam = st.lambda0
    it = 0
    while it < st.max_iters:
        it += 1
        if sse == 0.0:
            return LMResult(x, sse, it - 1, LMStatus.CONVERGED, history)
        J = np.asarray(problem.jacobian_fn(x), dtype=float)
        g = J.T @ r
        if not np.any(g):
            return LMResult(x, sse, it - 1, LMStatus.CONVERGED, history)
        A = J.T @ J
        d = np.diag(A).copy()
        dmax = d.max()
        d = np.maximum(d, 1e-12 * dmax if dmax > 0 else 1.0)
        while True:
            try:
                c = cho_factor(A + lam * np.diag(d), check_finite=False)
                step = -cho_solve(c, g, check_finite=False)
                if not np.all(np.isfinite(step)):
                    raise LinAlgError("non-finite step")
            except LinAlgError:
                lam = max(lam, st.lambda0) * st.lambda_up
                if lam > _LAMBDA_MAX:
                    return LMResult(x, sse, it, LMStatus.SINGULAR, history)
                continue
            x_new = x + step
            r_new = np.asarray(problem.residual_fn(x_new), dtype=float)
            sse_new = _sse(r_new) if np.all(np.isfinite(r_new)) else np.inf
            if sse_new < sse:
                break
            if lam == 0.0:
                lam = st.lambda0
            else:
                lam *= st.lambda_up
            if lam > _LAMBDA_MAX:
                # no descent direction left at machine precision
                return LMResult(x, sse, it, LMStatus.CONVERGED, history)
        predicted = -(2.0 * g @ step + step @ (A @ step))
        actual = sse - sse_new
        x, r, sse_old, sse = x_new, r_new, sse, sse_new
        history.append(sse)
        # the SSE difference carries rounding of order eps * SSE
        slack = 1e-10 * predicted + 64 * np.finfo(float).eps * sse_old
        exact_model = predicted > 0 and abs(actual - predicted) <= slack
        if exact_model and lam == 0.0:
            # undamped step on an exact quadratic model lands on its minimiser
            return LMResult(x, sse, it, LMStatus.CONVERGED, history)
        if exact_model:
            lam = 0.0
        else:
            lam = max(lam, st.lambda0 * 1e-6) * st.lambda_down
        small_step = np.linalg.norm(step) <= st.xtol * (1.0 + np.linalg.norm(x))
        small_drop = actual <= st.ftol * sse_old
        if small_step or small_drop:
            return LMResult(x, sse, it, LMStatus.CONVERGED, history)
    return LMResult(x, sse, it, LMStatus.MAX_ITERS, history)


def jacobian_check(problem: LeastSquaresProblem, x, h: float = 1e-6) -> float:
    """Largest absolute gap between the analytic and central-difference Jacobian."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    J = np.asarray(problem.jacobian_fn(x), dtype=float)
    fd = np.empty_like(J)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        fd[:, k] = (np.asarray(problem.residual_fn(x + e)) - np.asarray(problem.residual_fn(x - e))) / (2 * h)
    return float(np.max(np.abs(J - fd))) if J.size else 0.0
