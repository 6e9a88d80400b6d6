import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homog.bspline import SplineBasis
from homog.exceptions import DegenerateDomain, SizeMismatch
from homog.metrics import (closed_form_singleton_nmi, cv_error, integrated_sq_error, mise_g,
                           mse_beta, nmi, trapezoid)
from homog.panel import PanelDataset, PanelFit, Partition, partition_from_labels
from homog.simgen import true_beta_partition

from oracles import nmi_naive

P = partition_from_labels
labels = st.lists(st.integers(0, 4), min_size=1, max_size=30)


def test_nmi_hand_values():
    assert nmi(P([0, 0, 1, 1]), P([0, 0, 1, 1])) == 1.0
    assert nmi(P([0, 0, 1, 1]), P([0, 1, 0, 1])) == pytest.approx(0.0, abs=1e-15)
    assert abs(nmi(P([0, 0, 1, 1]), P([0, 1, 2, 3])) - 2 / 3) < 1e-12


def test_nmi_trivial_conventions():
    assert nmi(Partition.whole(5), Partition.whole(5)) == 1.0
    assert nmi(Partition.whole(4), P([0, 0, 1, 1])) == 0.0
    with pytest.raises(SizeMismatch):
        nmi(Partition.whole(3), Partition.whole(4))


@given(st.data())
def test_nmi_symmetric_bounded_and_matches_naive(data):
    a = data.draw(labels)
    b = data.draw(st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))
    v = nmi(P(a), P(b))
    assert v == pytest.approx(nmi(P(b), P(a)), abs=1e-12)
    assert 0 <= v <= 1 + 1e-12
    assert v == pytest.approx(min(1.0, max(0.0, nmi_naive(a, b))), abs=1e-12)


@given(st.data())
def test_nmi_permutation_invariant(data):
    a = data.draw(labels)
    b = data.draw(st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))
    perm = data.draw(st.permutations(range(len(a))))
    pa = [a[k] for k in perm]
    pb = [b[k] for k in perm]
    assert nmi(P(pa), P(pb)) == pytest.approx(nmi(P(a), P(b)), abs=1e-12)


def test_singleton_nmi_against_design_truth():
    m = 30
    truth_ind = P([i % 2 for i in range(m)])
    v = nmi(Partition.singletons(m), truth_ind)
    assert v == pytest.approx(closed_form_singleton_nmi(m, [15, 15]), abs=1e-14)
    assert round(v, 3) == 0.339
    slot = nmi(Partition.singletons(2 * m), true_beta_partition(m))
    assert slot == pytest.approx(closed_form_singleton_nmi(2 * m, [15] * 4), abs=1e-14)


def fit_with(betas, K=5):
    basis = SplineBasis(0.0, 1.0, K, 4)
    return PanelFit(np.asarray(betas, float), np.zeros((len(betas), K)), basis)


def test_mse_beta_examples(rng):
    b = np.array([[1.0, 0.2, -0.3]])
    assert mse_beta(fit_with(b), b) == 0.0
    assert mse_beta(fit_with(b), b + [0, 0.01, 0]) == pytest.approx(1e-4)
    est = np.hstack([np.ones((6, 1)), rng.normal(size=(6, 2))])
    ref = np.hstack([np.ones((6, 1)), rng.normal(size=(6, 2))])
    naive = sum(sum((est[i, j] - ref[i, j]) ** 2 for j in range(3)) for i in range(6)) / 6
    assert abs(mse_beta(est, ref) - naive) < 1e-12
    with pytest.raises(SizeMismatch):
        mse_beta(est, ref[:, :2])


def test_cv_error_examples(rng):
    a = rng.normal(size=(2, 3))
    assert cv_error(a, a) == 0.0
    assert cv_error(a + 2, a) == pytest.approx(4.0)
    pred, act = rng.normal(size=(4, 7)), rng.normal(size=(4, 7))
    naive = sum((pred[i, t] - act[i, t]) ** 2 for i in range(4) for t in range(7)) / 28
    assert abs(cv_error(pred, act) - naive) < 1e-12
    with pytest.raises(SizeMismatch):
        cv_error(pred, act.T)


def test_integrated_error_closed_forms():
    assert integrated_sq_error(lambda u: u, 0.0, 1.0, 201) == pytest.approx(1 / 3, abs=1e-4)
    assert integrated_sq_error(lambda u: np.full_like(u, 0.5), -1.0, 2.0) == pytest.approx(0.75, rel=1e-14)
    with pytest.raises(ValueError):
        integrated_sq_error(lambda u: u, 0, 1, 1)


def test_trapezoid_second_order():
    exact = 1 - math.cos(2.0)  # integral of 2 sin(2u) on [0, 1]
    errs = []
    for n in (21, 41, 81, 161):
        u = np.linspace(0, 1, n)
        errs.append(abs(trapezoid(2 * np.sin(2 * u), 0, 1) - exact))
    ratios = [errs[k] / errs[k + 1] for k in range(3)]
    assert all(3.8 < r < 4.2 for r in ratios)


def test_mise_zero_for_exact_link_and_constant_offset(rng):
    m, T = 2, 200
    X = rng.uniform(-1, 1, (m, T, 2))
    betas = np.array([[1.0, 0.5], [1.0, -0.5]])
    data = PanelDataset(np.zeros((m, T)), X)
    basis = SplineBasis(-2.0, 2.0, 6, 4)
    # a cubic spline basis reproduces the linear link u -> u exactly
    u = np.linspace(-2, 2, 50)
    coef = np.linalg.lstsq(basis.design_matrix(u), u, rcond=None)[0]
    fit = PanelFit(betas, np.vstack([coef, coef]), basis)
    assert mise_g(fit, lambda i, v: v, data, betas) < 1e-20
    lengths = []
    for i in range(m):
        lo, hi = np.quantile(X[i] @ betas[i], [0.01, 0.99])
        lengths.append(hi - lo)
    fit2 = PanelFit(betas, np.vstack([coef + 0.1, coef + 0.1]), basis)
    assert mise_g(fit2, lambda i, v: v, data, betas) == pytest.approx(0.01 * np.mean(lengths), rel=1e-10)


def test_mise_degenerate_domain():
    data = PanelDataset(np.zeros((1, 5)), np.ones((1, 5, 2)))
    fit = fit_with(np.array([[1.0, 0.0]]))
    with pytest.raises(DegenerateDomain):
        mise_g(fit, lambda i, v: v, data, fit.betas)
