import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambifair.data_model import Dataset, Kernel, KernelModel, LinearModel
from ambifair.errors import ConfigError, InfeasibleError
from ambifair.trainer import (
    ConstraintSpec,
    Objective,
    PenaltySchedule,
    TrainConfig,
    accuracy_on,
    gradient,
    logistic_loss,
    select_lambda,
    train_constrained,
    train_unconstrained,
)

from conftest import make_dataset

LOG2 = math.log(2.0)


class TestLogisticLoss:
    def test_zero_model(self, small_data):
        assert logistic_loss(LinearModel([0, 0], 0), small_data, None, 0.0) == pytest.approx(LOG2, abs=1e-12)

    def test_saturated_separator(self):
        d = Dataset([[-1.0], [1.0]], [-1, 1], [0, 1])
        assert logistic_loss(LinearModel([1e6], 0), d, None, 0.0) < 1e-6

    def test_hand_value_with_penalty(self):
        d = Dataset([[0.0, 0.0]], [1], [0])
        assert logistic_loss(LinearModel([2.0, 0.0], 0.0), d, None, 1.0) == pytest.approx(LOG2 + 4, abs=1e-12)

    def test_bias_not_penalized(self):
        d = Dataset([[0.0]], [1], [0])
        a = logistic_loss(LinearModel([0.0], 3.0), d, None, 10.0)
        assert a == pytest.approx(math.log1p(math.exp(-3.0)))


class TestUnconstrained:
    def test_separable_pair(self):
        d = Dataset([[-1.0, 0.0], [1.0, 0.0]], [-1, 1], [0, 1])
        res = train_unconstrained(d, None, TrainConfig(lam=0.1))
        assert accuracy_on(res.model, d, [0, 1]) == 1.0

    def test_label_symmetric_data_gives_zero(self):
        X = np.random.default_rng(0).normal(size=(20, 2))
        d = Dataset(np.vstack([X, X]), [1] * 20 + [-1] * 20, [0] * 40)
        res = train_unconstrained(d, None, TrainConfig(lam=0.3))
        assert np.linalg.norm(res.model.params) <= 1e-4

    def test_converges_and_beats_zero(self, small_data):
        res = train_unconstrained(small_data, None, TrainConfig(lam=0.1))
        assert res.converged and res.grad_norm <= 1e-7
        assert res.loss <= logistic_loss(LinearModel([0, 0], 0), small_data, None, 0.1)

    def test_deterministic(self, small_data):
        a = train_unconstrained(small_data, None, TrainConfig(lam=0.2, init="random", seed=4))
        b = train_unconstrained(small_data, None, TrainConfig(lam=0.2, init="random", seed=4))
        assert np.array_equal(a.model.params, b.model.params)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(lam=-1)
        with pytest.raises(ConfigError):
            TrainConfig(max_iters=0)
        with pytest.raises(ConfigError):
            TrainConfig(grad_tol=0)

    def test_kernel_model(self):
        rng = np.random.default_rng(0)
        t = rng.uniform(0, np.pi, 60)
        X = np.vstack([np.c_[np.cos(t[:30]), np.sin(t[:30])], np.c_[1 - np.cos(t[30:]), 0.5 - np.sin(t[30:])]])
        d = Dataset(X, [1] * 30 + [-1] * 30, [0, 1] * 30)
        tmpl = KernelModel(np.zeros(60), X, d.labels, Kernel("rbf", bandwidth=0.5))
        res = train_unconstrained(d, None, TrainConfig(lam=1e-3), template=tmpl)
        assert isinstance(res.model, KernelModel)
        assert accuracy_on(res.model, d, np.arange(60)) >= 0.95


class TestSelectLambda:
    def test_ties_go_to_earliest(self):
        d = make_dataset(n=60, seed=3, noise=0.0)
        idx = np.arange(60)
        _, lam, _ = select_lambda(d, idx, idx, [0.1, 0.1000001, 0.1000002])
        assert lam == 0.1


class TestConstrained:
    def test_infinite_gamma_matches_unconstrained(self, small_data):
        base = train_unconstrained(small_data, None, TrainConfig(lam=0.1)).model
        spec = ConstraintSpec.agreement(base, math.inf)
        res = train_constrained(small_data, None, TrainConfig(lam=0.1), [spec])
        idx = np.arange(small_data.n)
        assert abs(accuracy_on(res.model, small_data, idx) - accuracy_on(base, small_data, idx)) <= 1e-3

    def test_flip_far_point(self, small_data):
        base = train_unconstrained(small_data, None, TrainConfig(lam=0.1)).model
        i = int(np.argmax(base.decision(small_data.features)))
        res = train_constrained(small_data, None, TrainConfig(lam=0.1), [ConstraintSpec.flip(base, i)])
        assert res.feasible
        assert res.model.decision(small_data.features[i][None, :])[0] <= -1e-3 + 1e-6

    def test_covariance_zero(self):
        d = make_dataset(n=200, seed=5)
        z = (d.features[:, 0] > 0).astype(int)
        d = Dataset(d.features, d.labels, z)
        res = train_constrained(d, None, TrainConfig(lam=0.1), [ConstraintSpec.covariance(0.0, "fpr")])
        neg = d.labels == -1
        zs = z[neg] - z[neg].mean()
        assert abs(np.mean(zs * res.model.decision(d.features[neg]))) <= 1e-6

    def test_agreement_bound_met(self, small_data):
        base = train_unconstrained(small_data, None, TrainConfig(lam=0.1)).model
        res = train_constrained(small_data, None, TrainConfig(lam=0.1), [ConstraintSpec.agreement(base, 0.05)])
        dref = base.decision(small_data.features)
        g = np.mean(np.maximum(0, res.model.decision(small_data.features) * dref))
        assert g <= 0.05 + 1e-6

    def test_violation_trace_never_grows(self, small_data):
        base = train_unconstrained(small_data, None, TrainConfig(lam=0.1)).model
        for gamma in (0.0, 0.01, 0.3):
            res = train_constrained(small_data, None, TrainConfig(lam=0.1), [ConstraintSpec.agreement(base, gamma)],
                                    raise_infeasible=False)
            tr = res.outer_violations
            assert all(b <= a + 1e-6 for a, b in zip(tr[1:], tr[2:]))

    def test_infeasible_raises_with_model(self):
        # two identical points with opposite flip requirements cannot both hold
        d = Dataset([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]], [1, 1, -1], [0, 1, 0])
        base = LinearModel([1.0, 0.0], 0.0)
        other = LinearModel([-1.0, 0.0], 0.0)
        specs = [ConstraintSpec.flip(base, 0, schedule=PenaltySchedule(max_outer=3)),
                 ConstraintSpec.flip(other, 1, schedule=PenaltySchedule(max_outer=3))]
        with pytest.raises(InfeasibleError) as exc:
            train_constrained(d, None, TrainConfig(lam=0.1, max_iters=200), specs)
        assert exc.value.model is not None and exc.value.report


# gradients -----------------------------------------------------------------

def _fd(f, theta, h=1e-5):
    g = np.zeros_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8)


@settings(max_examples=200, deadline=None, derandomize=True)
@given(st.integers(0, 10**9))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(5, 40)), int(rng.integers(1, 5))
    data = make_dataset(n=n, d=d, seed=seed)
    lam = float(rng.choice([0.0, rng.uniform(0, 2)]))
    kernel = rng.random() < 0.25
    if kernel:
        m = int(rng.integers(2, 6))
        tmpl = KernelModel(rng.normal(size=m), data.features[:m], data.labels[:m], Kernel("rbf", 1.0))
    else:
        tmpl = LinearModel(rng.normal(size=d), rng.normal())
    specs = []
    ref = LinearModel(rng.normal(size=d), rng.normal()) if not kernel else tmpl
    if rng.random() < 0.75:
        specs.append(ConstraintSpec.agreement(ref, float(rng.uniform(0, 0.5))))
        specs.append(ConstraintSpec.flip(ref, int(rng.integers(0, n))))
        if np.any(data.labels == -1):
            specs.append(ConstraintSpec.covariance(float(rng.uniform(0, 0.1)), "fpr"))
    obj = Objective(data, None, lam, template=tmpl, constraints=specs)
    if specs:
        obj.mu = float(rng.uniform(1, 100))
        obj.nu = rng.uniform(0, 1, size=len(obj.constraints))
    theta = obj.design.params(tmpl) + 0.1 * rng.normal(size=len(tmpl.params))
    assert _rel(obj.grad(theta), _fd(obj.value, theta)) <= 1e-5


def test_gradient_public_api_matches_fd(small_data):
    m = LinearModel([0.4, -1.1], 0.3)
    g = gradient(m, small_data, None, 0.7)

    def f(t):
        return logistic_loss(LinearModel.from_params(t), small_data, None, 0.7)

    assert _rel(g, _fd(f, m.params)) <= 1e-5


def test_gradient_zero_on_mirrored_points():
    X = np.array([[1.0, 2.0], [-1.0, -2.0], [0.5, -0.3], [-0.5, 0.3]])
    d = Dataset(np.vstack([X, X]), [1, -1, 1, -1, -1, 1, -1, 1], [0] * 8)
    assert np.linalg.norm(gradient(LinearModel([0, 0], 0), d, None, 0.5)) <= 1e-12


def test_penalty_gradient_is_two_lambda_w(small_data):
    m = LinearModel([0.7, -0.2], 1.5)
    diff = gradient(m, small_data, None, 0.3) - gradient(m, small_data, None, 0.0)
    assert np.allclose(diff, [2 * 0.3 * 0.7, 2 * 0.3 * -0.2, 0.0], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9))
def test_agreement_constraint_midpoint_convex(seed):
    rng = np.random.default_rng(seed)
    data = make_dataset(n=30, seed=seed)
    ref = LinearModel(rng.normal(size=2), rng.normal())
    obj = Objective(data, None, 0.0, constraints=[ConstraintSpec.agreement(ref, 0.0)])
    con = obj.constraints[0]
    t1, t2 = rng.normal(size=3), rng.normal(size=3)
    assert con.value((t1 + t2) / 2) <= (con.value(t1) + con.value(t2)) / 2 + 1e-9
