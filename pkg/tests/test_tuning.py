import numpy as np
import pytest
from hypothesis import given, strategies as st

from homog.bspline import SplineBasis
from homog.exceptions import SelectionFailed
from homog.homogeneity import FitConfig
from homog.panel import PanelDataset
from homog.tuning import (CVGrid, CVSurface, cv_select_iid, cv_select_rolling, default_grid,
                          iid_folds, one_se_rule, rolling_origins)


def surface(mean, se, h1=None, h2=None):
    mean, se = np.asarray(mean, float), np.asarray(se, float)
    h1 = h1 or tuple(range(1, mean.shape[0] + 1))
    h2 = h2 or tuple(range(1, mean.shape[1] + 1))
    return CVSurface(h1, h2, mean, se)


def test_one_se_hand_example():
    s = surface([[1.0, 0.5], [0.9, 0.45]], [[0, 0], [0, 0.06]], (2, 3), (2, 3))
    assert one_se_rule(s) == (2, 3)


def test_one_se_unique_minimum_and_flat():
    assert one_se_rule(surface([[3, 2], [1, 4]], np.zeros((2, 2)))) == (2, 1)
    assert one_se_rule(surface(np.ones((3, 4)), np.full((3, 4), 0.1))) == (1, 1)


def test_one_se_all_infeasible():
    with pytest.raises(SelectionFailed):
        one_se_rule(surface(np.full((2, 2), np.inf), np.zeros((2, 2))))


@given(st.data())
def test_one_se_choice_is_admissible_and_smallest(data):
    a = data.draw(st.integers(1, 4))
    b = data.draw(st.integers(1, 4))
    mean = np.array(data.draw(st.lists(st.floats(0, 10), min_size=a * b, max_size=a * b))).reshape(a, b)
    se = np.array(data.draw(st.lists(st.floats(0, 2), min_size=a * b, max_size=a * b))).reshape(a, b)
    s = surface(mean, se)
    h1, h2 = one_se_rule(s)
    r, c = np.unravel_index(np.argmin(mean), mean.shape)
    ok = mean <= mean[r, c] + se[r, c]
    assert ok[h1 - 1, h2 - 1]
    assert not ok[:, : h2 - 1].any()
    assert not ok[: h1 - 1, h2 - 1].any()


@given(st.data())
def test_one_se_zero_se_is_ordered_argmin(data):
    a, b = data.draw(st.integers(1, 4)), data.draw(st.integers(1, 4))
    mean = np.array(data.draw(st.lists(st.integers(0, 5), min_size=a * b, max_size=a * b)), float)
    mean = mean.reshape(a, b)
    h1, h2 = one_se_rule(surface(mean, np.zeros((a, b))))
    best = min((mean[r, c], c, r) for r in range(a) for c in range(b))
    assert (h1, h2) == (best[2] + 1, best[1] + 1)


def test_grid_validation_and_default():
    g = default_grid(30, 2, 11)
    assert g.h1_candidates == tuple(range(1, 9)) and g.h2_candidates == tuple(range(1, 13))
    assert default_grid(2, 1, 3).h2_candidates == (1, 2)
    with pytest.raises(ValueError):
        CVGrid((), (1,))
    with pytest.raises(ValueError):
        CVGrid((1,), (1,), L=1)
    with pytest.raises(ValueError):
        CVGrid((1,), (1,), mode="loo")


def test_iid_folds_partition_time():
    folds = iid_folds(23, 5)
    val = np.concatenate([v for _, v in folds])
    assert sorted(val.tolist()) == list(range(23))
    for tr, va in folds:
        assert not set(tr) & set(va) and len(tr) + len(va) == 23
        assert np.all(np.diff(va) == 1)
    shuffled = iid_folds(23, 5, shuffle=True, seed=3)
    assert sorted(np.concatenate([v for _, v in shuffled]).tolist()) == list(range(23))


def test_rolling_origins_never_see_the_future():
    origins = rolling_origins(40, 7)
    assert len(origins) == 7
    for tr, va in origins:
        assert tr.max() < va.min() and va.size == 1 and tr.size == va[0]
    assert rolling_origins(10, 1)[0][1].tolist() == [9]


def two_group_panel(seed, sigma=1e-3, m=4, T=300, K=6):
    """Two index values and two spline-coefficient values, with the extreme
    design points repeated in every contiguous fold so each training fold
    sees the full index range."""
    rng = np.random.default_rng(seed)
    a = 0.6
    betas = np.array([[1, a, a], [1, -a, -a]] * (m // 2))
    thetas = np.array([[0, 0, 0, 1, 1, 1]] * (m // 2) + [[1, 1, 1, 0, 0, 0]] * (m // 2), float)
    X = rng.uniform(-1, 1, (m, T, 3))
    corners = np.array([[1, 1, 1], [-1, -1, -1], [1, -1, -1], [-1, 1, 1]], float)
    for blk in range(5):
        X[:, blk * (T // 5): blk * (T // 5) + 4] = corners
    basis = SplineBasis(-(1 + 2 * a), 1 + 2 * a, K, 4)
    y = np.stack([basis.design_matrix(X[i] @ betas[i]) @ thetas[i] for i in range(m)])
    return PanelDataset(y + sigma * rng.standard_normal((m, T)), X)


RAW = FitConfig(K=6, transform="none", cv_transform="none")


@pytest.mark.parametrize("seed", [0, 1])
def test_recovers_generating_counts(seed):
    data = two_group_panel(seed)
    s = cv_select_iid(data, CVGrid((1, 2, 3, 4), (1, 2, 3, 4)), RAW)
    assert s.chosen == (2, 2)
    assert s.mean_err.shape == (4, 4) and (s.se_err >= 0).all()


def test_single_cell_grid_and_relabeling():
    data = two_group_panel(0)
    one = cv_select_iid(data, CVGrid((3,), (1,)), RAW)
    assert one.chosen == (3, 1)
    grid = CVGrid((1, 2, 3), (1, 2, 3))
    perm = [2, 0, 3, 1]
    assert cv_select_iid(data.select_individuals(perm), grid, RAW).chosen == \
        cv_select_iid(data, grid, RAW).chosen


def test_rolling_smoke_with_thirty_origins():
    data = two_group_panel(2, sigma=0.05)
    s = cv_select_rolling(data, CVGrid((1, 2), (1, 2), L=30, mode="rolling"), FitConfig(K=6))
    assert np.isfinite(s.mean_err).all() and s.chosen in {(h1, h2) for h1 in (1, 2) for h2 in (1, 2)}


def test_fold_failures_make_cells_infeasible(monkeypatch):
    import homog.tuning as tuning
    from homog.exceptions import SingularDesign

    def broken(*args, **kwargs):
        raise SingularDesign("no fit")
    monkeypatch.setattr(tuning, "stage3_fit", broken)
    with pytest.raises(SelectionFailed):
        cv_select_iid(two_group_panel(0), CVGrid((1, 2), (1, 2)), RAW)


def test_needs_enough_time_points():
    data = two_group_panel(0, T=300)
    short = data.select_times(np.arange(9))
    with pytest.raises(ValueError):
        cv_select_iid(short, CVGrid((1,), (1,), L=5), RAW)
    with pytest.raises(ValueError):
        cv_select_rolling(short, CVGrid((1,), (1,), L=9, mode="rolling"), RAW)


def test_surface_csv():
    s = surface([[1.0, 2.0]], [[0.1, 0.1]])
    s.chosen = one_se_rule(s)
    lines = s.to_csv().splitlines()
    assert lines[0] == "h1,h2,mean,se,chosen" and lines[1].endswith(",1") and lines[2].endswith(",0")
