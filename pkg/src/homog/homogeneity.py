"""From Stage-1 estimates to slot partitions, and the fitter variants.

Slots are flattened row-major: index slot ``(i, j)`` is ``i * p + j`` and
spline slot ``(i, k)`` is ``i * K + k``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .bspline import default_K
from .changepoint import SegmentationResult, exhaustive_splits, post_process, top_splits
from .estimator import ConstrainedSpec, Stage1Result, stage1_fit, stage3_fit
from .exceptions import TruthRequired
from .lm import LMSettings
from .panel import PanelDataset, PanelFit, Partition, partition_from_labels


class FitterVariant(enum.Enum):
    ORACLE = "oracle"
    CORRECT_C = "correct-c"
    CORRECT_V = "correct-v"
    CORRECT_NMI = "correct-nmi"
    OVER = "over"
    UNDER_I = "under-i"
    UNDER_F = "under-f"
    UNDER_IF = "under-i-f"

    @classmethod
    def parse(cls, name) -> FitterVariant:
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for v in cls:
            if v.value == key:
                return v
        raise ValueError(f"unknown variant {name!r}; choose from {[v.value for v in cls]}")


# (index mode, spline mode used while tuning, spline mode of the final fit)
_RECIPES = {
    FitterVariant.OVER: ("free", "free", "free"),
    FitterVariant.ORACLE: ("truth", "truth", "truth"),
    FitterVariant.CORRECT_C: ("identified", "component", "component"),
    FitterVariant.CORRECT_V: ("identified", "component", "vector"),
    FitterVariant.CORRECT_NMI: ("identified", "component", "vector"),
    FitterVariant.UNDER_I: ("shared", "component", "vector"),
    FitterVariant.UNDER_F: ("identified", "shared", "shared"),
    FitterVariant.UNDER_IF: ("shared", "shared", "shared"),
}


@dataclass(frozen=True)
class RankedSlots:
    values: np.ndarray
    order: np.ndarray  # values[order] ascending; stable
    ranks: np.ndarray  # ranks[order[l]] == l (0-based)

    @classmethod
    def from_values(cls, values) -> RankedSlots:
        values = np.asarray(values, dtype=float).ravel()
        order = np.argsort(values, kind="stable")
        ranks = np.empty_like(order)
        ranks[order] = np.arange(order.size)
        return cls(values, order, ranks)

    @property
    def sorted_values(self) -> np.ndarray:
        return self.values[self.order]


def rank_slots(fits: Stage1Result | PanelFit, which: str = "beta") -> RankedSlots:
    if which == "beta":
        return RankedSlots.from_values(fits.betas[:, 1:])
    if which == "theta":
        return RankedSlots.from_values(fits.thetas)
    raise ValueError("which must be 'beta' or 'theta'")


def partition_from_changepoints(ranked: RankedSlots, seg: SegmentationResult) -> Partition:
    """Slot with 1-based rank ``R`` joins group ``s`` when ``k_(s-1) < R <= k_(s)``."""
    cps = np.asarray(seg.change_points, dtype=int)
    labels = np.searchsorted(cps, ranked.ranks + 1, side="left")
    return partition_from_labels(labels)


def lift_vectorwise(component_partition: Partition, m: int, width: int) -> Partition:
    """Individuals grouped together iff every one of their slots is co-grouped."""
    if component_partition.n != m * width:
        raise ValueError(f"partition size {component_partition.n} != {m} * {width}")
    rows = component_partition.labels().reshape(m, width)
    _, inverse = np.unique(rows, axis=0, return_inverse=True)
    return partition_from_labels(np.asarray(inverse).ravel())


def vectorwise_theta_partition(component_partition: Partition, m: int, K: int) -> Partition:
    return lift_vectorwise(component_partition, m, K)


def expand_to_slots(individual_partition: Partition, width: int) -> Partition:
    """Slot partition giving each group of individuals one shared block of ``width``."""
    lab = individual_partition.labels()
    return partition_from_labels((lab[:, None] * width + np.arange(width)[None, :]).ravel())


def shared_slots(m: int, width: int) -> Partition:
    """Coordinate ``j`` shared by all individuals: ``width`` groups."""
    return partition_from_labels(np.tile(np.arange(width), m))


class SlotSegmenter:
    """Ranked slot values with their exhaustive split list, cut at any count."""

    def __init__(self, values, post: bool = True):
        self.ranked = RankedSlots.from_values(values)
        self.sorted = self.ranked.sorted_values
        self.splits = exhaustive_splits(self.sorted)
        self.post = post
        self._cache = {}

    @property
    def n(self) -> int:
        return self.sorted.size

    def segmentation(self, H: int) -> SegmentationResult:
        seg = top_splits(self.splits, self.n, min(H, self.n))
        if self.post:
            seg = post_process(self.sorted, seg)
        return seg

    def partition(self, H: int) -> Partition:
        if H not in self._cache:
            self._cache[H] = partition_from_changepoints(self.ranked, self.segmentation(H))
        return self._cache[H]


@dataclass
class Structure:
    """Slot partitions for Stage 3 plus individual-level groupings for scoring."""

    spec: ConstrainedSpec
    beta_groups: Partition      # individuals sharing their whole index vector
    function_groups: Partition  # individuals sharing their link


def build_structure(s1: Stage1Result, beta_mode: str, theta_mode: str, H1: int | None = None,
                    H2: int | None = None, segmenters: dict | None = None, truth=None,
                    post: bool = True) -> Structure:
    m, p, K = s1.betas.shape[0], s1.betas.shape[1] - 1, s1.basis.K
    segmenters = {} if segmenters is None else segmenters

    def seg(which):
        if which not in segmenters:
            vals = s1.betas[:, 1:] if which == "beta" else s1.thetas
            segmenters[which] = SlotSegmenter(vals, post)
        return segmenters[which]

    if beta_mode == "free":
        bpart = Partition.singletons(m * p)
    elif beta_mode == "identified":
        bpart = seg("beta").partition(H2)
    elif beta_mode == "shared":
        bpart = shared_slots(m, p)
    elif beta_mode == "truth":
        if truth is None:
            raise TruthRequired("true index partition required")
        bpart = truth.beta_partition
    else:
        raise ValueError(f"unknown index mode {beta_mode!r}")

    if theta_mode == "free":
        tpart, fgroups = Partition.singletons(m * K), Partition.singletons(m)
    elif theta_mode == "component":
        tpart = seg("theta").partition(H1)
        fgroups = lift_vectorwise(tpart, m, K)
    elif theta_mode == "vector":
        fgroups = lift_vectorwise(seg("theta").partition(H1), m, K)
        tpart = expand_to_slots(fgroups, K)
    elif theta_mode == "shared":
        tpart, fgroups = shared_slots(m, K), Partition.whole(m)
    elif theta_mode == "truth":
        if truth is None:
            raise TruthRequired("true link assignment required")
        fgroups = truth.link_assignment
        tpart = expand_to_slots(fgroups, K)
    else:
        raise ValueError(f"unknown spline mode {theta_mode!r}")
    return Structure(ConstrainedSpec(bpart, tpart), lift_vectorwise(bpart, m, p), fgroups)


@dataclass(frozen=True)
class FitConfig:
    """Basis, solver and tuning settings shared by every variant."""

    K: int | None = None
    order: int = 4
    lm: LMSettings = field(default_factory=LMSettings)
    grid: object = None  # tuning.CVGrid; None means the default grid
    post_process: bool = True
    transform: str = "cdf"       # spline argument of the final fits
    cv_transform: str = "cdf"    # spline argument while tuning and segmenting
    screen: bool = True
    workers: int = 1

    def resolve_K(self, m, T):
        return default_K(m, T, self.order) if self.K is None else self.K


@dataclass
class VariantFit:
    variant: FitterVariant
    fit: PanelFit
    stage1: Stage1Result
    structure: Structure | None
    H: tuple | None = None      # (H1, H2) used for segmentation
    surface: object = None      # tuning.CVSurface when tuned by cross-validation
    segmented: Stage1Result | None = None  # the Stage-1 fit whose estimates were segmented

    @property
    def beta_partition(self) -> Partition:
        m, p = self.fit.m, self.fit.p
        return self.structure.spec.beta_partition if self.structure else Partition.singletons(m * p)

    @property
    def theta_partition(self) -> Partition:
        m, K = self.fit.m, self.fit.basis.K
        return self.structure.spec.theta_partition if self.structure else Partition.singletons(m * K)

    @property
    def beta_groups(self) -> Partition:
        return self.structure.beta_groups if self.structure else Partition.singletons(self.fit.m)

    @property
    def function_groups(self) -> Partition:
        return self.structure.function_groups if self.structure else Partition.singletons(self.fit.m)


def recipe(variant: FitterVariant) -> tuple:
    return _RECIPES[FitterVariant.parse(variant)]


def _nmi_choice(s1, grid, truth, post):
    """Counts maximising agreement with the truth: index slots plus link groups.

    The index side is scored on slots, so merging distinct coefficient
    values is penalised even when whole vectors stay apart.
    """
    from .metrics import nmi
    best = None
    segs = {}
    for h2 in grid.h2_candidates:
        for h1 in grid.h1_candidates:
            st = build_structure(s1, "identified", "component", h1, h2, segs, post=post)
            score = nmi(st.spec.beta_partition, truth.beta_partition) + \
                nmi(st.function_groups, truth.link_assignment)
            if best is None or score > best[0] + 1e-12:
                best = (score, h1, h2)
    return best[1], best[2]


def stage1_for(data: PanelDataset, config: FitConfig, transform: str | None = None) -> Stage1Result:
    K = config.resolve_K(data.m, data.T)
    return stage1_fit(data, K, config.order, config.lm, transform or config.transform, config.screen)


def fit_variant(data: PanelDataset, variant, config: FitConfig | None = None, truth=None,
                stage1: Stage1Result | None = None, tuned: tuple | None = None,
                stage1_cv: Stage1Result | None = None) -> VariantFit:
    """Fit one of the eight variants.

    Group counts are tuned, and Stage-1 estimates segmented, with the spline
    argument ``config.cv_transform``; the final Stage 3 uses
    ``config.transform``.  Index groups and whole-vector link groups carry
    over between the two.  A componentwise spline partition does not (slot
    ``k`` means a different function under each argument), so Correct-C
    keeps the tuning transform for its final fit.

    ``stage1``/``stage1_cv`` reuse existing full-data Stage-1 fits under the
    two transforms; ``tuned`` is a precomputed ``((H1, H2), surface)`` pair
    so variants that share a tuning problem tune only once.
    """
    from .tuning import default_grid, select

    variant = FitterVariant.parse(variant)
    config = config or FitConfig()
    if variant in (FitterVariant.ORACLE, FitterVariant.CORRECT_NMI) and truth is None:
        raise TruthRequired(f"{variant.value} needs the true partitions")
    K = config.resolve_K(data.m, data.T)
    s1 = stage1 or stage1_for(data, config)
    beta_mode, tune_theta, final_theta = _RECIPES[variant]
    if variant is FitterVariant.OVER:
        return VariantFit(variant, s1.fits, s1, None)

    grid = config.grid or default_grid(data.m, data.p, K)
    surface = None
    H1 = H2 = None
    needs_h = beta_mode == "identified" or final_theta in ("component", "vector")
    seg_s1 = s1
    if needs_h and config.cv_transform != config.transform:
        seg_s1 = stage1_cv or stage1_for(data, config, config.cv_transform)
    if variant is FitterVariant.CORRECT_NMI:
        H1, H2 = _nmi_choice(seg_s1, grid, truth, config.post_process)
    elif needs_h:
        if tuned is None:
            tuned = select(data, grid, config, beta_mode, tune_theta)
        (H1, H2), surface = tuned
    st = build_structure(seg_s1, beta_mode, final_theta, H1, H2, truth=truth, post=config.post_process)
    base = seg_s1 if final_theta == "component" else s1
    fit = stage3_fit(data, st.spec, base, config.lm)
    return VariantFit(variant, fit, base, st, (H1, H2) if needs_h else None, surface,
                      seg_s1 if needs_h else None)
