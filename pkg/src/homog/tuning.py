"""Cross-validated choice of the group counts (H1, H2).

``H1`` counts the componentwise spline-coefficient groups and ``H2`` the
index-coefficient groups.  Every fold reruns the whole pipeline on its
training part: Stage 1, segmentation of that fold's own estimates, Stage 3.
Stage 1 does not depend on the counts, so it runs once per fold and the
grid cells reuse it.  The spline argument inside the folds is
``FitConfig.cv_transform``; the empirical-CDF argument keeps held-out
predictions inside the range the training fit has seen.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimator import predict_panel, stage1_fit, stage3_fit
from .exceptions import HomogError, SelectionFailed
from .homogeneity import FitConfig, build_structure
from .metrics import cv_error
from .panel import PanelDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CVGrid:
    h1_candidates: tuple
    h2_candidates: tuple
    L: int = 5
    mode: str = "iid"  # "iid" (L folds) or "rolling" (L origins)
    shuffle: bool = False
    seed: int = 0

    def __post_init__(self):
        h1 = tuple(sorted(int(h) for h in self.h1_candidates))
        h2 = tuple(sorted(int(h) for h in self.h2_candidates))
        if not h1 or not h2 or min(h1 + h2) < 1:
            raise ValueError("candidates must be nonempty and >= 1")
        if self.mode not in ("iid", "rolling"):
            raise ValueError("mode must be 'iid' or 'rolling'")
        if self.L < (2 if self.mode == "iid" else 1):
            raise ValueError("L too small for this mode")
        object.__setattr__(self, "h1_candidates", h1)
        object.__setattr__(self, "h2_candidates", h2)


def default_grid(m: int, p: int, K: int, mode: str = "iid", L: int | None = None) -> CVGrid:
    if L is None:
        L = 5 if mode == "iid" else 30
    return CVGrid(tuple(range(1, min(8, m * K) + 1)), tuple(range(1, min(12, m * p) + 1)), L, mode)


@dataclass
class CVSurface:
    h1: tuple
    h2: tuple
    mean_err: np.ndarray  # len(h1) x len(h2)
    se_err: np.ndarray
    chosen: tuple | None = None

    def to_csv(self) -> str:
        lines = ["h1,h2,mean,se,chosen"]
        for a, h1 in enumerate(self.h1):
            for b, h2 in enumerate(self.h2):
                flag = int(self.chosen == (h1, h2))
                lines.append(f"{h1},{h2},{float(self.mean_err[a, b])!r},{float(self.se_err[a, b])!r},{flag}")
        return "\n".join(lines) + "\n"


def one_se_rule(surface: CVSurface) -> tuple:
    """Smallest H2, then smallest H1, within one SE of the minimum cell."""
    mean = np.asarray(surface.mean_err, dtype=float)
    if not np.isfinite(mean).any():
        raise SelectionFailed("no feasible cell on the CV surface")
    a, b = np.unravel_index(np.argmin(np.where(np.isfinite(mean), mean, np.inf)), mean.shape)
    bound = mean[a, b] + surface.se_err[a, b]
    ok = np.isfinite(mean) & (mean <= bound)
    for col, h2 in enumerate(surface.h2):
        rows = np.flatnonzero(ok[:, col])
        if rows.size:
            return surface.h1[rows[0]], h2
    raise AssertionError("minimum cell must be admissible")


def _axes(grid, data, config, beta_mode, theta_mode):
    K = config.resolve_K(data.m, data.T)
    h1 = (K,) if theta_mode == "shared" else grid.h1_candidates
    h2 = (data.p,) if beta_mode == "shared" else grid.h2_candidates
    return h1, h2


def _cell_errors(train: PanelDataset, X_val, y_val, h1s, h2s, config, beta_mode, theta_mode):
    """Mean squared validation error per (H1, H2) cell for one split."""
    out = np.full((len(h1s), len(h2s)), np.inf)
    K = config.resolve_K(train.m, train.T)
    try:
        s1 = stage1_fit(train, K, config.order, config.lm, config.cv_transform, config.screen)
    except HomogError as exc:
        log.warning("stage 1 failed on a fold: %s", exc)
        return out
    segs = {}
    for a, h1 in enumerate(h1s):
        for b, h2 in enumerate(h2s):
            try:
                st = build_structure(s1, beta_mode, theta_mode, h1, h2, segs, post=config.post_process)
                fit = stage3_fit(train, st.spec, s1, config.lm)
                pred = predict_panel(fit, X_val)
            except HomogError as exc:
                log.warning("cell (%d, %d) failed: %s", h1, h2, exc)
                continue
            err = cv_error(pred, y_val)
            if np.isfinite(err):
                out[a, b] = err
    return out


def _run_splits(data, splits, h1s, h2s, config, beta_mode, theta_mode):
    jobs = [(data.select_times(tr), data.X[:, va, :], data.y[:, va], h1s, h2s, config,
             beta_mode, theta_mode) for tr, va in splits]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            return list(pool.map(_cell_errors, *zip(*jobs)))
    return [_cell_errors(*job) for job in jobs]


def _surface(errs, h1s, h2s):
    errs = np.stack(errs)  # splits x h1 x h2
    L = errs.shape[0]
    with np.errstate(invalid="ignore"):
        mean = errs.mean(axis=0)
        se = errs.std(axis=0, ddof=1) / np.sqrt(L) if L > 1 else np.zeros(mean.shape)
    se = np.where(np.isfinite(mean), se, np.inf)
    surface = CVSurface(h1s, h2s, mean, se)
    surface.chosen = one_se_rule(surface)
    return surface


def iid_folds(T: int, L: int, shuffle: bool = False, seed: int = 0):
    """(train, validation) time-index pairs: contiguous blocks, or shuffled ones."""
    idx = np.arange(T)
    if shuffle:
        idx = np.random.default_rng(seed).permutation(T)
    blocks = np.array_split(idx, L)
    return [(np.sort(np.concatenate([b for k, b in enumerate(blocks) if k != f])), np.sort(blocks[f]))
            for f in range(L)]


def rolling_origins(T: int, L: int):
    """For r = L..1 train on the first T - r times, validate on time T - r."""
    return [(np.arange(T - r), np.array([T - r])) for r in range(L, 0, -1)]


def cv_select_iid(data: PanelDataset, grid: CVGrid, config: FitConfig | None = None,
                  beta_mode: str = "identified", theta_mode: str = "component") -> CVSurface:
    config = config or FitConfig()
    if data.T < 2 * grid.L:
        raise ValueError(f"need T >= 2L, got T={data.T}, L={grid.L}")
    h1s, h2s = _axes(grid, data, config, beta_mode, theta_mode)
    splits = iid_folds(data.T, grid.L, grid.shuffle, grid.seed)
    return _surface(_run_splits(data, splits, h1s, h2s, config, beta_mode, theta_mode), h1s, h2s)


def cv_select_rolling(data: PanelDataset, grid: CVGrid, config: FitConfig | None = None,
                      beta_mode: str = "identified", theta_mode: str = "component") -> CVSurface:
    config = config or FitConfig()
    if data.T <= grid.L:
        raise ValueError(f"need T > L, got T={data.T}, L={grid.L}")
    h1s, h2s = _axes(grid, data, config, beta_mode, theta_mode)
    splits = rolling_origins(data.T, grid.L)
    return _surface(_run_splits(data, splits, h1s, h2s, config, beta_mode, theta_mode), h1s, h2s)


def select(data, grid, config, beta_mode="identified", theta_mode="component"):
    """Tune by the grid's mode; returns ``((H1, H2), surface)``."""
    fn = cv_select_iid if grid.mode == "iid" else cv_select_rolling
    surface = fn(data, grid, config, beta_mode, theta_mode)
    return surface.chosen, surface
