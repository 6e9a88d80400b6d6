"""Partition agreement and estimation-error measures."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import DegenerateDomain, SizeMismatch
from .panel import PanelDataset, PanelFit, Partition


@dataclass
class MetricReport:
    mse_beta_avg: float
    mise_g_avg: float
    nmi_beta: float
    nmi_theta_or_g: float

    def to_json(self):
        return asdict(self)


def _entropy(sizes, n):
    p = np.asarray(sizes, dtype=float) / n
    return float(-(p * np.log(p)).sum())


def nmi(C: Partition, D: Partition) -> float:
    """Normalised mutual information ``I / ((H(C) + H(D)) / 2)``, natural log.

    Two single-group partitions score 1; if exactly one side has a single
    group the mutual information is 0 and so is the score.
    """
    if C.n != D.n:
        raise SizeMismatch(f"partitions of {C.n} and {D.n} elements")
    n = C.n
    a, b = C.labels(), D.labels()
    table = np.zeros((len(C), len(D)))
    np.add.at(table, (a, b), 1.0)
    rows, cols = table.sum(axis=1), table.sum(axis=0)
    hc, hd = _entropy(rows, n), _entropy(cols, n)
    if hc == 0.0 and hd == 0.0:
        return 1.0
    nz = table > 0
    outer = np.outer(rows, cols)
    mi = float((table[nz] / n * np.log(n * table[nz] / outer[nz])).sum())
    return float(min(1.0, max(0.0, mi / ((hc + hd) / 2))))


def mse_beta(fit: PanelFit, truth) -> float:
    """Average over individuals of the squared distance between index vectors."""
    est = np.asarray(fit.betas if hasattr(fit, "betas") else fit, dtype=float)
    ref = np.asarray(truth.betas if hasattr(truth, "betas") else truth, dtype=float)
    if est.shape != ref.shape:
        raise SizeMismatch(f"shapes {est.shape} and {ref.shape}")
    return float(((est - ref) ** 2).sum(axis=1).mean())


def trapezoid(values, lo, hi):
    values = np.asarray(values, dtype=float)
    h = (hi - lo) / (values.size - 1)
    return float(h * (values.sum() - 0.5 * (values[0] + values[-1])))


def integrated_sq_error(diff_fn, lo, hi, n_quad=201):
    if n_quad < 2:
        raise ValueError("n_quad must be at least 2")
    u = np.linspace(lo, hi, n_quad)
    return trapezoid(np.asarray(diff_fn(u)) ** 2, lo, hi)


def mise_g(fit: PanelFit, truth_fns, data: PanelDataset, true_betas, n_quad: int = 201) -> float:
    """Average integrated squared link error over each individual's central index range.

    The range runs from the 1st to the 99th percentile of the true index
    values ``X_it' beta_i`` of that individual.  ``truth_fns(i, u)`` gives the
    true link of individual ``i``.
    """
    from .estimator import link_values

    if n_quad < 2:
        raise ValueError("n_quad must be at least 2")
    true_betas = np.asarray(true_betas, dtype=float)
    if true_betas.shape != fit.betas.shape or data.m != fit.m:
        raise SizeMismatch("fit, data and true index vectors disagree in shape")
    total = 0.0
    for i in range(fit.m):
        u = data.X[i] @ true_betas[i]
        lo, hi = np.quantile(u, [0.01, 0.99])
        if not hi > lo:
            raise DegenerateDomain(f"individual {i} has a degenerate index range")
        total += integrated_sq_error(lambda v: link_values(fit, i, v) - truth_fns(i, v), lo, hi, n_quad)
    return total / fit.m


def cv_error(predictions, actual) -> float:
    """Mean squared deviation over all cells."""
    pred = np.asarray(predictions, dtype=float)
    act = np.asarray(actual, dtype=float)
    if pred.shape != act.shape:
        raise SizeMismatch(f"shapes {pred.shape} and {act.shape}")
    return float(((pred - act) ** 2).mean())


def score_variant(vfit, data: PanelDataset, truth, n_quad: int = 201) -> MetricReport:
    """Metrics of a :class:`~homog.homogeneity.VariantFit` against simulation truth.

    Index-vector agreement is scored on individuals (those sharing their
    whole index vector), against the two true index vectors.
    """
    return MetricReport(
        mse_beta_avg=mse_beta(vfit.fit, truth),
        mise_g_avg=mise_g(vfit.fit, truth.g, data, truth.betas, n_quad),
        nmi_beta=nmi(vfit.beta_groups, truth.beta_individual_partition),
        nmi_theta_or_g=nmi(vfit.function_groups, truth.link_assignment),
    )


def closed_form_singleton_nmi(n: int, group_sizes) -> float:
    """NMI of the all-singleton partition against a partition with these group sizes."""
    h = _entropy(group_sizes, n)
    return 2 * h / (h + math.log(n))
