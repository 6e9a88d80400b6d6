"""Per-individual and partition-constrained least-squares fits.

Every individual follows ``y_it = B(X_it' beta_i)' theta_i + e_it`` with
``beta_i[0] = 1``.  Stage 1 fits each individual on its own; Stage 3 refits
the whole panel with index and spline coefficients tied across the groups
of a :class:`ConstrainedSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .bspline import SplineBasis, default_K
from .exceptions import DegenerateAnchor, SingularDesign, SpecMismatch
from .lm import LeastSquaresProblem, LMResult, LMSettings, LMStatus, lm_minimize
from .panel import IndexVector, PanelDataset, PanelFit, Partition

_N_SCREEN = 64


class EmpiricalCDF:
    """Piecewise-linear empirical CDF of a sample.

    The ``k``-th order statistic maps to ``(k - 1) / (n - 1)``; values below
    the minimum map to 0 and above the maximum to 1.
    """

    def __init__(self, sample):
        nodes = np.sort(np.asarray(sample, dtype=float).ravel())
        if nodes.size < 2 or nodes[0] == nodes[-1]:
            raise SingularDesign("empirical CDF needs at least two distinct values")
        self.nodes = nodes
        self.levels = np.linspace(0.0, 1.0, nodes.size)

    def __call__(self, u):
        return np.interp(u, self.nodes, self.levels, left=0.0, right=1.0)

    def slope(self, u):
        """Centred secant slope; zero outside the sample range."""
        u = np.asarray(u, dtype=float)
        n = self.nodes.size
        k = np.clip(np.searchsorted(self.nodes, u, side="right") - 1, 0, n - 2)
        lo = np.clip(k - 1, 0, n - 1)
        hi = np.clip(k + 2, 0, n - 1)
        width = self.nodes[hi] - self.nodes[lo]
        rise = self.levels[hi] - self.levels[lo]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(width > 0, rise / width, 0.0)
        return np.where((u < self.nodes[0]) | (u > self.nodes[-1]), 0.0, s)


class _StackedCDF:
    """Row-wise evaluation of one :class:`EmpiricalCDF` per individual.

    All CDFs must share the sample size.  Rows are located with a single
    ``searchsorted`` on the rescaled, offset node table.
    """

    def __init__(self, cdfs):
        self._setup(np.vstack([c.nodes for c in cdfs]))

    @classmethod
    def from_rows(cls, U):
        """CDFs of the rows of ``U`` (one sample per individual)."""
        U = np.sort(U, axis=1)
        if np.any(U[:, 0] == U[:, -1]):
            raise SingularDesign("empirical CDF needs at least two distinct values")
        obj = cls.__new__(cls)
        obj._setup(U)
        return obj

    def rows(self):
        return tuple(EmpiricalCDF(r) for r in self.nodes)

    def _setup(self, nodes):
        self.nodes = nodes
        m, n = self.nodes.shape
        self.levels = np.linspace(0.0, 1.0, n)
        self.lo, self.hi = self.nodes[:, :1], self.nodes[:, -1:]
        self._scale = 1.0 / (self.hi - self.lo)
        self._off = 2.0 * np.arange(m)[:, None]
        self._flat = ((self.nodes - self.lo) * self._scale + self._off).ravel()
        self._base = n * np.arange(m)[:, None]

    def _locate(self, U):
        n = self.nodes.shape[1]
        uc = np.clip(U, self.lo, self.hi)
        key = (uc - self.lo) * self._scale + self._off
        k = np.searchsorted(self._flat, key.ravel(), side="right").reshape(U.shape) - 1 - self._base
        return uc, np.clip(k, 0, n - 2)

    def __call__(self, U):
        uc, k = self._locate(U)
        x0 = np.take_along_axis(self.nodes, k, axis=1)
        x1 = np.take_along_axis(self.nodes, k + 1, axis=1)
        width = x1 - x0
        w = np.divide(uc - x0, width, out=np.zeros_like(uc), where=width > 0)
        return self.levels[k] + w * (self.levels[k + 1] - self.levels[k])

    def slope(self, U):
        n = self.nodes.shape[1]
        _, k = self._locate(U)
        lo = np.clip(k - 1, 0, n - 1)
        hi = np.clip(k + 2, 0, n - 1)
        width = np.take_along_axis(self.nodes, hi, axis=1) - np.take_along_axis(self.nodes, lo, axis=1)
        rise = self.levels[hi] - self.levels[lo]
        s = np.divide(rise, width, out=np.zeros_like(rise), where=width > 0)
        return np.where((U < self.lo) | (U > self.hi), 0.0, s)


@dataclass(frozen=True, eq=False)
class Stage1Result:
    fits: PanelFit
    basis: SplineBasis
    range: tuple
    per_individual_sse: np.ndarray
    statuses: tuple

    @property
    def betas(self):
        return self.fits.betas

    @property
    def thetas(self):
        return self.fits.thetas


@dataclass(frozen=True)
class ConstrainedSpec:
    """Slot partitions for Stage 3.

    ``beta_partition`` covers the ``m * p`` free index slots and
    ``theta_partition`` the ``m * K`` spline slots, both flattened row-major
    (individual outer, coordinate inner).
    """

    beta_partition: Partition
    theta_partition: Partition

    @classmethod
    def singletons(cls, m, p, K):
        return cls(Partition.singletons(m * p), Partition.singletons(m * K))


def _spline_slope(u, transform, basis):
    """d(spline argument)/du, zero where the basis clamps."""
    if transform is None:
        return ((u >= basis.a) & (u <= basis.b)).astype(float)
    return transform.slope(u)


def _solve_theta(y, v, basis):
    """Least-squares spline coefficients for responses ``y`` at arguments ``v``."""
    B = basis.design_matrix(v)
    G = B.T @ B
    rhs = B.T @ y
    tr = np.trace(G)
    if tr <= 0:
        return np.zeros(basis.K)
    w = np.linalg.eigvalsh(G)
    if w[0] <= 1e-10 * w[-1]:
        G = G + (1e-8 * tr / basis.K) * np.eye(basis.K)
    try:
        return np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        raise SingularDesign("spline Gram matrix is singular") from None


def _ols_start(y, X):
    if not np.any(X[:, 0]):
        raise DegenerateAnchor("the anchor covariate is identically zero")
    if not np.any(y):
        return np.zeros(X.shape[1] - 1)  # nothing to fit; any direction serves
    G = X.T @ X
    if np.linalg.matrix_rank(G) < G.shape[0]:
        raise SingularDesign("linear Gram matrix is singular")
    coef = np.linalg.solve(G, X.T @ y)
    if abs(coef[0]) < 1e-10:
        raise DegenerateAnchor("OLS coefficient of the anchor covariate is zero")
    return coef[1:] / coef[0]


def init_values(data: PanelDataset, i: int, basis: SplineBasis, transform: bool = False):
    """OLS-based start: normalised linear coefficients, then spline LS."""
    y, X = data.y[i], data.X[i]
    if data.T <= data.p + 1:
        raise SingularDesign("need T > p + 1 for the linear start")
    free = _ols_start(y, X)
    u = X[:, 0] + X[:, 1:] @ free
    theta = _solve_theta(y, EmpiricalCDF(u)(u) if transform else u, basis)
    return IndexVector(free), theta


class _IndividualProblem:
    """Objective (sum over t) for one individual in (free beta, theta).

    With ``cdf`` the spline argument is the empirical CDF of the current
    index values, rebuilt at every evaluation; its derivative is taken as
    the centred secant slope of that CDF.
    """

    def __init__(self, y, X, basis, cdf=False):
        self.y, self.X, self.basis, self.cdf = y, X, basis, cdf
        self.p = X.shape[1] - 1
        self._key = None

    def _eval(self, z):
        key = z.tobytes()
        if key != self._key:
            free, theta = z[: self.p], z[self.p:]
            u = self.X[:, 0] + self.X[:, 1:] @ free
            if self.cdf:
                self.transform = EmpiricalCDF(u)
                v = self.transform(u)
            else:
                self.transform, v = None, u
            self._B = self.basis.design_matrix(v)
            self._u, self._v, self._theta = u, v, theta
            self._key = key
        return self._B

    def residual(self, z):
        B = self._eval(z)
        return self.y - B @ self._theta

    def jacobian(self, z):
        B = self._eval(z)
        gp = (self.basis.deriv_matrix(self._v) @ self._theta) * _spline_slope(self._u, self.transform, self.basis)
        return np.hstack([-(gp[:, None] * self.X[:, 1:]), -B])

    def problem(self):
        return LeastSquaresProblem(self.residual, self.jacobian, self.p + self.basis.K, self.y.size)


def individual_problem(data: PanelDataset, i: int, basis: SplineBasis, cdf: bool = False) -> LeastSquaresProblem:
    """The Stage-1 least-squares problem for individual ``i``."""
    return _IndividualProblem(data.y[i], data.X[i], basis, cdf).problem()


def _profile_sse(y, X, free, K, s):
    u = X[:, 0] + X[:, 1:] @ free
    lo, hi = u.min(), u.max()
    if not hi > lo:
        return np.inf, None
    basis = SplineBasis(lo, hi, K, s)
    theta = _solve_theta(y, u, basis)
    r = y - basis.design_matrix(u) @ theta
    return float(r @ r), basis


def _screen_starts(p, n=_N_SCREEN):
    """Deterministic spread of free index vectors from directions on a hemisphere."""
    pts = qmc.Sobol(p + 1, scramble=True, seed=20170501).random(n)
    d = np.sqrt(2.0) * _erfinv_vec(2 * pts - 1)
    d[:, 0] = np.abs(d[:, 0])
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    d = d[d[:, 0] >= 0.25]
    return d[:, 1:] / d[:, :1]


def _erfinv_vec(x):
    from scipy.special import erfinv
    return erfinv(np.clip(x, -1 + 1e-12, 1 - 1e-12))


def _fit_one(y, X, basis, free0, theta0, settings, cdf=False):
    prob = _IndividualProblem(y, X, basis, cdf)
    z0 = np.concatenate([free0, theta0])
    res = lm_minimize(prob.problem(), z0, settings)
    return res.x[: X.shape[1] - 1], res.x[X.shape[1] - 1:], res


def _pass_one(y, X, K, s, settings, screen):
    """Own-range fit of one individual, used only to place the pooled basis."""
    free0 = _ols_start(y, X)
    best_sse, basis = _profile_sse(y, X, free0, K, s)
    if screen:
        for cand in _screen_starts(X.shape[1] - 1):
            sse, b = _profile_sse(y, X, cand, K, s)
            if sse < best_sse:
                best_sse, basis, free0 = sse, b, cand
    if basis is None:
        raise SingularDesign("index has no spread at the starting value")
    u = X[:, 0] + X[:, 1:] @ free0
    theta0 = _solve_theta(y, u, basis)
    free, _, _ = _fit_one(y, X, basis, free0, theta0, settings)
    return free


def _tag(exc, i):
    exc.individual = i
    exc.args = (f"individual {i}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
    return exc


def stage1_fit(data: PanelDataset, K: int | None = None, s: int = 4,
               settings: LMSettings | None = None, transform: str = "none",
               screen: bool = True) -> Stage1Result:
    """Fit every individual separately on a common basis.

    A first pass fits each individual on a basis over its own index range;
    the pooled range of those index values fixes the common basis, and the
    second pass refits everyone on it.  With ``screen`` the first pass
    starts from the best of the OLS start and a fixed set of index
    directions (profiled over the spline coefficients), since OLS carries
    no information about links that are even in the index.

    ``transform="cdf"`` replaces the spline argument by each individual's
    empirical CDF of its index, on a basis over ``[0, 1]``.
    """
    settings = settings or LMSettings()
    m, p = data.m, data.p
    K = default_K(m, data.T, s) if K is None else K
    if data.T <= p + 1:
        raise SingularDesign("need T > p + 1")
    frees = np.empty((m, p))
    for i in range(m):
        try:
            frees[i] = _pass_one(data.y[i], data.X[i], K, s, settings, screen)
        except (DegenerateAnchor, SingularDesign) as exc:
            raise _tag(exc, i)
    U = data.X[:, :, 0] + np.einsum("itj,ij->it", data.X[:, :, 1:], frees)
    if transform == "cdf":
        rng = (0.0, 1.0)
    elif transform == "none":
        rng = (float(U.min()), float(U.max()))
    else:
        raise ValueError(f"unknown transform {transform!r}")
    basis = SplineBasis(rng[0], rng[1], K, s)

    thetas = np.empty((m, K))
    sses = np.empty(m)
    statuses = []
    cdfs = [] if transform == "cdf" else None
    for i in range(m):
        y, X = data.y[i], data.X[i]
        free = frees[i]
        if transform == "cdf":
            free, theta, res, cdf = _fit_cdf(y, X, basis, free, settings)
            cdfs.append(cdf)
        else:
            theta0 = _solve_theta(y, U[i], basis)
            free, theta, res = _fit_one(y, X, basis, free, theta0, settings)
        frees[i], thetas[i], sses[i] = free, theta, res.sse
        statuses.append(res.status)
    betas = np.hstack([np.ones((m, 1)), frees])
    fit = PanelFit(betas, thetas, basis, tuple(cdfs) if cdfs is not None else None,
                   float(sses.sum()), tuple(statuses))
    return Stage1Result(fit, basis, rng, sses, tuple(statuses))


def _fit_cdf(y, X, basis, free, settings):
    u = X[:, 0] + X[:, 1:] @ free
    theta0 = _solve_theta(y, EmpiricalCDF(u)(u), basis)
    free, theta, res = _fit_one(y, X, basis, free, theta0, settings, cdf=True)
    return free, theta, res, EmpiricalCDF(X[:, 0] + X[:, 1:] @ free)


class _PanelProblem:
    """Pooled objective over the reduced (eta, xi) parameter vector."""

    def __init__(self, data, basis, beta_lab, theta_lab, cdf=False):
        self.data, self.basis = data, basis
        self.beta_lab, self.theta_lab = beta_lab, theta_lab
        self.cdf = cdf
        self.H2 = int(beta_lab.max()) + 1
        self.q = self.H2 + int(theta_lab.max()) + 1
        m, T = data.y.shape
        self._ii = np.arange(m)[:, None]
        self._tt = np.arange(T)[None, :]
        self._key = None

    def expand(self, z):
        eta, xi = z[: self.H2], z[self.H2:]
        return eta[self.beta_lab], xi[self.theta_lab]

    def _eval(self, z):
        key = z.tobytes()
        if key != self._key:
            frees, thetas = self.expand(z)
            X = self.data.X
            U = X[:, :, 0] + np.einsum("itj,ij->it", X[:, :, 1:], frees)
            if self.cdf:
                self._stack = _StackedCDF.from_rows(U)
                V = self._stack(U)
            else:
                V = U
            m, T = U.shape
            B = self.basis.design_matrix(V.ravel()).reshape(m, T, -1)
            self._state = (U, V, B, thetas)
            self._key = key
        return self._state

    def _slopes(self, U):
        if self.cdf:
            return self._stack.slope(U)
        return ((U >= self.basis.a) & (U <= self.basis.b)).astype(float)

    def transforms(self, z):
        """Empirical CDFs of the index values at ``z`` (None without the transform)."""
        if not self.cdf:
            return None
        self._eval(z)
        return self._stack.rows()

    def residual(self, z):
        U, V, B, thetas = self._eval(z)
        return (self.data.y - np.einsum("itk,ik->it", B, thetas)).ravel()

    def jacobian(self, z):
        U, V, B, thetas = self._eval(z)
        m, T = U.shape
        Bd = self.basis.deriv_matrix(V.ravel()).reshape(m, T, -1)
        gp = np.einsum("itk,ik->it", Bd, thetas) * self._slopes(U)
        J = np.zeros((m, T, self.q))
        X = self.data.X
        ii, tt = self._ii, self._tt
        for j in range(self.beta_lab.shape[1]):
            J[ii, tt, self.beta_lab[:, j][:, None]] -= gp * X[:, :, 1 + j]
        for k in range(self.theta_lab.shape[1]):
            J[ii, tt, self.H2 + self.theta_lab[:, k][:, None]] -= B[:, :, k]
        return J.reshape(m * T, self.q)

    def problem(self):
        return LeastSquaresProblem(self.residual, self.jacobian, self.q, self.data.y.size)


def _group_means(values, labels, n_groups):
    sums = np.bincount(labels, weights=values, minlength=n_groups)
    counts = np.bincount(labels, minlength=n_groups)
    return sums / counts


def _ridge_lstsq(A, y):
    G = A.T @ A
    tr = np.trace(G)
    if tr <= 0:
        return np.zeros(A.shape[1])
    w = np.linalg.eigvalsh(G)
    if w[0] <= 1e-10 * w[-1]:
        G = G + (1e-8 * tr / A.shape[1]) * np.eye(A.shape[1])
    return np.linalg.solve(G, A.T @ y)


def _refine_xi(prob, z, y):
    """Replace the spline part of ``z`` by its exact least-squares value given the index part.

    The objective is linear in the spline coefficients, so this can only
    lower it; it matters when a group mean averages in coefficients that
    Stage 1 could not pin down.
    """
    A = -prob.jacobian(z)[:, prob.H2:]
    cand = z.copy()
    try:
        cand[prob.H2:] = _ridge_lstsq(A, y)
    except np.linalg.LinAlgError:
        return z
    old = float(np.sum(prob.residual(z) ** 2))
    new = float(np.sum(prob.residual(cand) ** 2))
    return cand if np.isfinite(new) and new < old else z


def panel_problem(data: PanelDataset, spec: ConstrainedSpec, basis: SplineBasis, cdf: bool = False):
    """The Stage-3 problem and the expander from (eta, xi) to slot values."""
    m, p, K = data.m, data.p, basis.K
    prob = _PanelProblem(data, basis, spec.beta_partition.labels().reshape(m, p),
                         spec.theta_partition.labels().reshape(m, K), cdf)
    return prob.problem(), prob.expand


def stage3_fit(data: PanelDataset, spec: ConstrainedSpec, init: Stage1Result,
               settings: LMSettings | None = None) -> PanelFit:
    """Minimise the pooled SSE with slots tied within each partition group.

    Starts from the group means of the Stage-1 estimates, with the spline
    coefficients then moved to their least-squares values given the index
    coefficients, and reuses the Stage-1 basis.  A Stage-1 fit on CDF-transformed indices makes Stage 3
    use the transform too.
    """
    settings = settings or LMSettings()
    m, p, K = data.m, data.p, init.basis.K
    if spec.beta_partition.n != m * p or spec.theta_partition.n != m * K:
        raise SpecMismatch(
            f"spec sizes ({spec.beta_partition.n}, {spec.theta_partition.n}) do not match "
            f"m*p={m * p}, m*K={m * K}")
    if init.betas.shape != (m, p + 1):
        raise SpecMismatch("Stage-1 result does not match the data")
    beta_lab = spec.beta_partition.labels()
    theta_lab = spec.theta_partition.labels()
    H2, H1 = len(spec.beta_partition), len(spec.theta_partition)
    z = np.concatenate([_group_means(init.betas[:, 1:].ravel(), beta_lab, H2),
                        _group_means(init.thetas.ravel(), theta_lab, H1)])
    prob = _PanelProblem(data, init.basis, beta_lab.reshape(m, p), theta_lab.reshape(m, K),
                         cdf=init.fits.transforms is not None)
    z = _refine_xi(prob, z, data.y.ravel())
    res = lm_minimize(prob.problem(), z, settings)
    frees, thetas = prob.expand(res.x)
    transforms = prob.transforms(res.x)
    betas = np.hstack([np.ones((m, 1)), frees])
    return PanelFit(betas, thetas, init.basis, transforms, res.sse, (res.status,))


def link_values(fit: PanelFit, i: int, u) -> np.ndarray:
    """Fitted link ``g_i`` at index values ``u`` (clamped to the basis range)."""
    u = np.asarray(u, dtype=float)
    v = u if fit.transforms is None else fit.transforms[i](u)
    return fit.basis.design_matrix(v.ravel()) @ fit.thetas[i]


def predict(fit: PanelFit, i: int, x) -> float:
    """Prediction ``B(x' beta_i)' theta_i`` for one covariate vector."""
    if not 0 <= i < fit.m:
        raise IndexError(f"individual {i} out of range")
    return float(link_values(fit, i, np.asarray(x, dtype=float) @ fit.betas[i])[0])


def predict_panel(fit: PanelFit, X) -> np.ndarray:
    """Predictions for covariates ``X`` of shape ``(m, n, p + 1)``."""
    X = np.asarray(X, dtype=float)
    U = np.einsum("itj,ij->it", X, fit.betas)
    return np.vstack([link_values(fit, i, U[i]) for i in range(fit.m)])


def cdf_transform_fit(data: PanelDataset, K: int | None = None, s: int = 4,
                      settings: LMSettings | None = None, spec: ConstrainedSpec | None = None):
    """Stage 1 (and Stage 3 when ``spec`` is given) on CDF-transformed indices."""
    s1 = stage1_fit(data, K, s, settings, transform="cdf")
    if spec is None:
        return s1
    return stage3_fit(data, spec, s1, settings)


def non_converged(statuses) -> int:
    return sum(st is not LMStatus.CONVERGED for st in statuses)
