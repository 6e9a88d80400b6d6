"""Two-link, two-index simulation design and the replicate driver.

Individuals in the first half follow ``sin(pi u / 4)``, the second half
``cos(pi u / 4)``.  Odd-numbered individuals (1-based) use the index vector
``(1, -1.5 c, -0.5 c)`` and even-numbered ones ``(1, 0.5 c, 1.5 c)`` with
``c = sqrt(0.2)``.  Covariates are ``N(0, I/1.5)`` truncated to the cube
``[-1.343, 1.343]^3``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .panel import PanelDataset, Partition, partition_from_labels

log = logging.getLogger(__name__)

C = math.sqrt(0.2)
BETA_ODD = np.array([1.0, -1.5 * C, -0.5 * C])
BETA_EVEN = np.array([1.0, 0.5 * C, 1.5 * C])
TRUNCATION = 1.343
COV_SCALE = 1.0 / math.sqrt(1.5)


def _sin_link(u):
    return np.sin(np.pi * np.asarray(u) / 4)


def _cos_link(u):
    return np.cos(np.pi * np.asarray(u) / 4)


LINKS = {"sin": _sin_link, "cos": _cos_link}


@dataclass(frozen=True)
class SimConfig:
    m: int = 30
    T: int = 400
    sigma: float = 0.2
    seed: int = 0
    replicate_count: int = 1

    def __post_init__(self):
        if self.m < 2 or self.m % 2:
            raise ValueError("m must be even and at least 2")
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.replicate_count < 1:
            raise ValueError("replicate_count must be at least 1")


@dataclass(frozen=True, eq=False)
class SimTruth:
    betas: np.ndarray            # m x 3, one row per individual
    link_names: tuple            # "sin" / "cos" per individual
    link_assignment: Partition   # function groups over individuals
    beta_partition: Partition    # slot groups over the m * p free index slots
    beta_individual_partition: Partition  # individuals sharing a whole index vector

    def link(self, i):
        return LINKS[self.link_names[i]]

    def g(self, i, u):
        return self.link(i)(u)

    def to_json(self):
        return {
            "betas": self.betas.tolist(),
            "links": list(self.link_names),
            "link_groups": self.link_assignment.labels().tolist(),
            "beta_slot_groups": self.beta_partition.labels().tolist(),
            "beta_individual_groups": self.beta_individual_partition.labels().tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["betas"], dtype=float), tuple(obj["links"]),
                   partition_from_labels(obj["link_groups"]),
                   partition_from_labels(obj["beta_slot_groups"]),
                   partition_from_labels(obj["beta_individual_groups"]))


def true_betas(m: int) -> np.ndarray:
    if m % 2:
        raise ValueError("m must be even")
    return np.array([BETA_ODD if i % 2 == 0 else BETA_EVEN for i in range(m)])


def true_beta_partition(m: int, p: int = 2) -> Partition:
    """Free index slots grouped by their generating value (four groups)."""
    if m % 2 or p != 2:
        raise ValueError("the design has even m and p = 2")
    vals = true_betas(m)[:, 1:].ravel()
    codes = np.unique(vals, return_inverse=True)[1]
    return partition_from_labels(codes)


def truncated_normal_covariates(rng, n, dim=3):
    """Rows of ``COV_SCALE * N(0, I)`` kept only when inside the cube."""
    out = np.empty((0, dim))
    while out.shape[0] < n:
        need = n - out.shape[0]
        draw = COV_SCALE * rng.standard_normal((int(need / 0.7) + 16, dim))
        keep = draw[np.all(np.abs(draw) <= TRUNCATION, axis=1)]
        out = np.vstack([out, keep[:need]])
    return out


def generate(config: SimConfig, replicate: int = 0) -> tuple[PanelDataset, SimTruth]:
    """Draw one panel; replicate ``r`` uses seed ``config.seed + r``."""
    m, T = config.m, config.T
    rng = np.random.default_rng(config.seed + replicate)
    X = truncated_normal_covariates(rng, m * T).reshape(m, T, 3)
    eps = config.sigma * rng.standard_normal((m, T))
    betas = true_betas(m)
    names = tuple("sin" if i < m // 2 else "cos" for i in range(m))
    U = np.einsum("itj,ij->it", X, betas)
    y = np.vstack([LINKS[names[i]](U[i]) for i in range(m)]) + eps
    truth = SimTruth(
        betas=betas,
        link_names=names,
        link_assignment=partition_from_labels([0 if n == "sin" else 1 for n in names]),
        beta_partition=true_beta_partition(m),
        beta_individual_partition=partition_from_labels([i % 2 for i in range(m)]),
    )
    return PanelDataset(y, X), truth


_TABLE_SCALE = {"mse_beta_avg": 1e4, "mise_g_avg": 1e2}


@dataclass
class ReplicateTable:
    """Per-variant averages over the replicates that succeeded."""

    variants: tuple
    reports: dict        # variant -> list of MetricReport, one per successful replicate
    failures: dict       # variant -> number of failed replicates
    replicate_count: int

    def mean(self, variant, field):
        vals = [getattr(r, field) for r in self.reports[variant]]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def failure_rate(self) -> float:
        total = self.replicate_count * len(self.variants)
        return sum(self.failures.values()) / total if total else 0.0

    @property
    def valid(self) -> bool:
        return all(self.failures[v] < 0.05 * self.replicate_count for v in self.variants)

    def _csv(self, err_field, nmi_field, err_name, nmi_name):
        lines = [f"variant,{err_name},{nmi_name},replicates,failed"]
        for v in self.variants:
            err = self.mean(v, err_field) * _TABLE_SCALE[err_field]
            lines.append(f"{v},{err:.6g},{self.mean(v, nmi_field):.6f},"
                         f"{len(self.reports[v])},{self.failures[v]}")
        return "\n".join(lines) + "\n"

    def beta_csv(self) -> str:
        """MSE of the index vectors (times 1e4) and agreement of the index grouping."""
        return self._csv("mse_beta_avg", "nmi_beta", "mse_beta_x1e4", "nmi_beta")

    def fun_csv(self) -> str:
        """MISE of the links (times 1e2) and agreement of the link grouping."""
        return self._csv("mise_g_avg", "nmi_theta_or_g", "mise_g_x1e2", "nmi_g")


def _one_replicate(config, replicate, variants, fit_config):
    from .exceptions import HomogError
    from .homogeneity import FitterVariant, fit_variant, recipe, stage1_for
    from .metrics import score_variant
    from .tuning import default_grid, select

    data, truth = generate(config, replicate)
    fc = fit_config
    K = fc.resolve_K(data.m, data.T)
    out = {}
    try:
        s1 = stage1_for(data, fc)
        s1_cv = s1 if fc.cv_transform == fc.transform else stage1_for(data, fc, fc.cv_transform)
    except HomogError as exc:
        log.warning("replicate %d: stage 1 failed: %s", replicate, exc)
        return {v: None for v in variants}
    tuned = {}
    for name in variants:
        v = FitterVariant.parse(name)
        beta_mode, tune_theta, _ = recipe(v)
        try:
            pre = None
            if v not in (FitterVariant.OVER, FitterVariant.ORACLE, FitterVariant.CORRECT_NMI) and \
                    not (beta_mode == "shared" and tune_theta == "shared"):
                key = (beta_mode, tune_theta)
                if key not in tuned:
                    grid = fc.grid or default_grid(data.m, data.p, K)
                    tuned[key] = select(data, grid, fc, beta_mode, tune_theta)
                pre = tuned[key]
            vfit = fit_variant(data, v, fc, truth, stage1=s1, tuned=pre, stage1_cv=s1_cv)
            out[name] = score_variant(vfit, data, truth)
        except HomogError as exc:
            log.warning("replicate %d, %s failed: %s", replicate, name, exc)
            out[name] = None
    return out


def run_replicates(config: SimConfig, variants, fit_config=None, workers: int = 1) -> ReplicateTable:
    """Generate, fit and score ``config.replicate_count`` panels.

    Replicate ``r`` uses seed ``config.seed + r``.  Variants that share a
    tuning problem (same index and spline modes while tuning) are tuned once
    per replicate.  Results are reduced in replicate order, so the table does
    not depend on ``workers``.
    """
    from concurrent.futures import ProcessPoolExecutor
    from .homogeneity import FitConfig, FitterVariant

    names = tuple(FitterVariant.parse(v).value for v in variants)
    if not names:
        raise ValueError("at least one variant is required")
    fit_config = fit_config or FitConfig()
    reps = range(config.replicate_count)
    if workers > 1 and config.replicate_count > 1:
        fit_config = replace(fit_config, workers=1)  # no pools inside pool workers
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one_replicate, [config] * len(reps), reps,
                                    [names] * len(reps), [fit_config] * len(reps)))
    else:
        results = [_one_replicate(config, r, names, fit_config) for r in reps]
    reports = {v: [] for v in names}
    failures = {v: 0 for v in names}
    for res in results:
        for v in names:
            if res[v] is None:
                failures[v] += 1
            else:
                reports[v].append(res[v])
    table = ReplicateTable(names, reports, failures, config.replicate_count)
    if not table.valid:
        log.warning("more than 5%% of replicates failed for some variant: %s", failures)
    return table
