import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambifair.data_model import AmbiguityMask, Dataset, LevelSet, LinearModel, MetaClassifier
from ambifair.errors import ContractError, NoEligibleMembersError
from ambifair.ingest import split
from ambifair.meta_fairness import (
    boundary_covariance,
    c_grid_from_best,
    mix_weights,
    solve_p5,
    stochastic_predict,
    stochastic_predict_many,
    train_fair_baseline,
    uniform_meta,
)
from ambifair.metrics import unfairness
from ambifair.trainer import TrainConfig, accuracy_on, train_unconstrained

from conftest import make_dataset, random_level_set
from p5_oracle import grid_min_abs_mix


class TestMixWeights:
    def test_straddling_pair(self):
        w, obj = mix_weights([0.3, -0.1])
        assert np.allclose(w, [0.25, 0.75]) and obj == pytest.approx(0, abs=1e-15)
        assert grid_min_abs_mix([0.3, -0.1]) <= 1e-6

    def test_same_sign(self):
        w, obj = mix_weights([0.2, 0.5])
        assert w.tolist() == [1.0, 0.0] and obj == pytest.approx(0.2)

    def test_tie_prefers_priority_then_index(self):
        w, _ = mix_weights([0.2, 0.2, 0.5], priority=[0.8, 0.9, 0.9])
        assert w.tolist() == [0.0, 1.0, 0.0]
        w, _ = mix_weights([0.2, 0.2], priority=[0.9, 0.9])
        assert w.tolist() == [1.0, 0.0]

    def test_exact_zero_member(self):
        w, obj = mix_weights([0.4, 0.0])
        assert obj == 0.0 and w @ np.array([0.4, 0.0]) == 0.0

    def test_empty(self):
        with pytest.raises(ContractError):
            mix_weights([])


@settings(max_examples=100, deadline=None, derandomize=True)
@given(st.integers(0, 10**9))
def test_closed_form_matches_grid_search(seed):
    rng = np.random.default_rng(seed)
    delta = rng.uniform(-1, 1, size=int(rng.integers(1, 7)))
    if rng.random() < 0.3:
        delta = np.abs(delta) * rng.choice([-1, 1])
    w, obj = mix_weights(delta)
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
    assert abs(obj - grid_min_abs_mix(delta)) <= 1e-6
    assert obj <= np.min(np.abs(delta)) + 1e-15
    if delta.min() <= 0 <= delta.max():
        assert obj <= 1e-12


def _fixture_level_set(seed=0, k=5):
    rng = np.random.default_rng(seed)
    d = make_dataset(n=120, seed=seed, noise=1.0)
    ls = random_level_set(rng, k)
    mask = AmbiguityMask(rng.random(d.n) < 0.7, "test")
    return d, ls, mask


class TestSolveP5:
    def test_objective_equals_meta_unfairness(self):
        for seed in range(10):
            d, ls, mask = _fixture_level_set(seed)
            val = np.arange(60)
            meta = solve_p5(ls, d, val, mask, "fpr")
            got = unfairness(meta, d, val, mask, "fpr")
            assert abs(abs(got) - meta.report["objective"]) <= 1e-12
            gaps = [g for g in meta.report["member_gaps"] if g is not None]
            assert meta.report["objective"] <= min(abs(g) for g in gaps) + 1e-15

    def test_undefined_members_are_excluded(self):
        # rows 0-3: a single group-1 negative lives at x=5
        X = np.array([[-1.0], [1.0], [5.0], [-5.0]])
        d = Dataset(X, [-1, -1, -1, 1], [0, 0, 1, 1])
        a, b = LinearModel([1.0], 0.0), LinearModel([-1.0], 0.0)
        ls = LevelSet(a, (a, b), 1.0, [0.5, 0.5])
        mask = AmbiguityMask([True, True, False, True], "m")
        with pytest.raises(NoEligibleMembersError):
            solve_p5(ls, d, np.arange(4), mask, "fpr")

    def test_report_fields(self):
        d, ls, mask = _fixture_level_set(3)
        meta = solve_p5(ls, d, np.arange(60), mask, "fnr", rng_seed=7)
        assert set(meta.report) >= {"objective", "member_gaps", "excluded", "mask_source"}
        assert meta.rng_seed == 7 and meta.report["mask_source"] == "test"


class TestUniform:
    def test_four_members(self):
        _, ls, _ = _fixture_level_set(k=4)
        assert uniform_meta(ls).weights.tolist() == [0.25] * 4

    def test_singleton(self):
        m = LinearModel([1.0, 0.0], 0.0)
        assert uniform_meta(LevelSet(m, (m,), 0.0, [1.0])).weights.tolist() == [1.0]

    def test_expected_unfairness_is_mean(self):
        d, ls, mask = _fixture_level_set(5)
        u = unfairness(uniform_meta(ls), d, None, mask, "fpr")
        assert u == pytest.approx(np.mean([unfairness(m, d, None, mask, "fpr") for m in ls.members]), abs=1e-12)


class TestStochasticPredict:
    def test_agreeing_point(self):
        a, b = LinearModel([1.0, 0.0], 0.0), LinearModel([1.0, 0.1], 0.0)
        meta = MetaClassifier(LevelSet(a, (a, b), 1.0, [1, 1]), [0.5, 0.5])
        rng = np.random.default_rng(0)
        assert {stochastic_predict(meta, [3.0, 0.0], rng) for _ in range(50)} == {1}

    def test_degenerate_weights(self):
        a, b = LinearModel([1.0, 0.0], 0.0), LinearModel([-1.0, 0.0], 0.0)
        meta = MetaClassifier(LevelSet(a, (a, b), 1.0, [1, 1]), [1.0, 0.0])
        preds, picks = stochastic_predict_many(meta, np.ones((100, 2)))
        assert np.all(preds == 1) and np.all(picks == 0)

    def test_selection_frequencies(self):
        _, ls, _ = _fixture_level_set(k=4)
        w = np.array([0.1, 0.2, 0.3, 0.4])
        meta = MetaClassifier(ls, w, rng_seed=11)
        n = 100_000
        _, picks = stochastic_predict_many(meta, np.zeros((n, 2)))
        freq = np.bincount(picks, minlength=4)
        sigma = np.sqrt(n * w * (1 - w))
        assert np.all(np.abs(freq - n * w) <= 3 * sigma)

    def test_reproducible(self):
        _, ls, _ = _fixture_level_set(k=3)
        meta = MetaClassifier(ls, [0.2, 0.3, 0.5], rng_seed=5)
        X = np.random.default_rng(1).normal(size=(500, 2))
        a = stochastic_predict_many(meta, X)
        b = stochastic_predict_many(meta, X)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@pytest.fixture(scope="module")
def setup():
    d = make_dataset(n=400, seed=8, noise=0.5)
    z = ((d.features[:, 1] + 0.5 * np.random.default_rng(0).normal(size=400)) > 0).astype(int)
    d = Dataset(d.features, d.labels, z)
    sp = split(d, seed=2)
    best = train_unconstrained(d, sp.train_idx, TrainConfig(lam=0.1)).model
    return d, sp, best


class TestFairBaseline:
    def test_infinite_c_matches_accurate(self, setup):
        d, sp, best = setup
        fb = train_fair_baseline(d, sp, 0.1, [math.inf], "fpr")
        assert abs(fb.val_accuracy - accuracy_on(best, d, sp.val_idx)) <= 1e-3

    def test_picks_smallest_gap(self, setup):
        d, sp, best = setup
        grid = c_grid_from_best(best, d, sp.train_idx, "fpr", 0.0, 0.2, 5)
        fb = train_fair_baseline(d, sp, 0.1, grid, "fpr")
        gaps = [abs(e["val_unfairness"]) for e in fb.sweep if e.get("val_unfairness") is not None]
        assert abs(fb.val_unfairness) == min(gaps)
        assert fb.c in grid

    def test_c_grid_scaling(self, setup):
        d, sp, best = setup
        grid = c_grid_from_best(best, d, sp.train_idx, "fnr", 0.0, 0.2, 3)
        cov = boundary_covariance(best, d, sp.train_idx, "fnr")
        assert np.allclose(grid, [0.0, 0.1 * cov, 0.2 * cov])

    def test_independent_z_costs_little(self):
        d = make_dataset(n=600, seed=9, noise=0.3)
        z = np.random.default_rng(3).integers(0, 2, 600)
        d = Dataset(d.features, d.labels, z)
        sp = split(d, seed=4)
        free = train_unconstrained(d, sp.train_idx, TrainConfig(lam=0.1)).model
        fb = train_fair_baseline(d, sp, 0.1, [0.0], "fpr")
        assert accuracy_on(free, d, sp.val_idx) - fb.val_accuracy <= 0.02

    def test_bad_grid(self, setup):
        d, sp, _ = setup
        with pytest.raises(ContractError):
            train_fair_baseline(d, sp, 0.1, [], "fpr")
        with pytest.raises(ContractError):
            train_fair_baseline(d, sp, 0.1, [-1.0], "fpr")
