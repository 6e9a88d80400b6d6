"""Clamped B-spline basis on equally spaced knots.

Basis functions are evaluated for whole vectors of arguments at once with
the triangular Cox-de Boor scheme, which only touches the ``s`` functions
that are nonzero on each knot span.  Arguments outside ``[a, b]`` are clamped to the
nearest endpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidBasis


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Order-``s`` basis with ``K`` functions on ``[a, b]``.

    The knot vector holds the ``K - s + 2`` equally spaced breakpoints
    ``a = tau_0 < ... < tau_{K-s+1} = b`` with each endpoint repeated ``s``
    times in total, so the basis interpolates at both ends.
    """

    a: float
    b: float
    K: int
    order: int = 4

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or not self.a < self.b:
            raise InvalidBasis(f"need a < b, got a={self.a}, b={self.b}")
        if self.order < 1 or self.K < self.order:
            raise InvalidBasis(f"need K >= s >= 1, got K={self.K}, s={self.order}")
        breaks = np.linspace(self.a, self.b, self.K - self.order + 2)
        knots = np.concatenate([np.full(self.order - 1, self.a), breaks,
                                np.full(self.order - 1, self.b)])
        knots.setflags(write=False)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "knots", knots)

    @property
    def n_spans(self) -> int:
        return self.K - self.order + 1

    @property
    def spacing(self) -> float:
        return (self.b - self.a) / self.n_spans

    def clamp(self, u):
        return np.clip(np.asarray(u, dtype=float), self.a, self.b)

    def _span(self, u):
        """Knot index ``j`` with ``t[j] <= u < t[j+1]``; ``b`` joins the last span."""
        j = np.searchsorted(self.knots, u, side="right") - 1
        return np.clip(j, self.order - 1, self.order - 2 + self.n_spans)

    def _local(self, u, j, degree):
        """The ``degree + 1`` B-splines of that degree that are nonzero on span ``j``.

        Column ``r`` is the function with knot index ``j - degree + r``.
        """
        t = self.knots
        n = u.size
        N = np.zeros((n, degree + 1))
        N[:, 0] = 1.0
        left = np.empty((n, degree + 1))
        right = np.empty((n, degree + 1))
        for k in range(1, degree + 1):
            left[:, k] = u - t[j + 1 - k]
            right[:, k] = t[j + k] - u
            saved = np.zeros(n)
            for r in range(k):
                tmp = N[:, r] / (right[:, r + 1] + left[:, k - r])
                N[:, r] = saved + right[:, r + 1] * tmp
                saved = left[:, k - r] * tmp
            N[:, k] = saved
        return N

    def _scatter(self, vals, first, width):
        out = np.zeros((vals.shape[0], width))
        cols = first[:, None] + np.arange(vals.shape[1])
        out[np.arange(vals.shape[0])[:, None], cols] = vals
        return out

    def design_matrix(self, u) -> np.ndarray:
        """Row ``t`` is ``B(u_t)``; shape ``(n, K)``."""
        u = self.clamp(np.atleast_1d(u).ravel())
        if u.size == 0:
            return np.zeros((0, self.K))
        j = self._span(u)
        deg = self.order - 1
        return self._scatter(self._local(u, j, deg), j - deg, self.K)

    def deriv_matrix(self, u) -> np.ndarray:
        """Row ``t`` is ``B'(clamp(u_t))``; shape ``(n, K)``."""
        u = self.clamp(np.atleast_1d(u).ravel())
        s = self.order
        if u.size == 0:
            return np.zeros((0, self.K))
        if s == 1:
            return np.zeros((u.size, self.K))
        j = self._span(u)
        lower = self._scatter(self._local(u, j, s - 2), j - (s - 2), self.K + 1)
        t = self.knots
        i = np.arange(self.K)
        d1 = t[i + s - 1] - t[i]
        d2 = t[i + s] - t[i + 1]
        w1 = np.divide(1.0, d1, out=np.zeros(self.K), where=d1 > 0)
        w2 = np.divide(1.0, d2, out=np.zeros(self.K), where=d2 > 0)
        return (s - 1) * (lower[:, :-1] * w1 - lower[:, 1:] * w2)

    def eval(self, u: float) -> np.ndarray:
        return self.design_matrix(np.array([u]))[0]

    def eval_deriv(self, u: float) -> np.ndarray:
        return self.deriv_matrix(np.array([u]))[0]

    def __repr__(self):
        return f"SplineBasis(a={self.a!r}, b={self.b!r}, K={self.K}, order={self.order})"


def build_basis(a: float, b: float, K: int, s: int = 4) -> SplineBasis:
    return SplineBasis(a, b, K, s)


def default_K(m: int, T: int, s: int = 4) -> int:
    """Number of basis functions growing like ``(mT)^(1/5)``."""
    return max(s + 1, int(np.floor((m * T) ** 0.2 + 0.5)) + s)


def eval(basis: SplineBasis, u: float) -> np.ndarray:
    return basis.eval(u)


def eval_deriv(basis: SplineBasis, u: float) -> np.ndarray:
    return basis.eval_deriv(u)


def design_matrix(basis: SplineBasis, u) -> np.ndarray:
    return basis.design_matrix(u)
