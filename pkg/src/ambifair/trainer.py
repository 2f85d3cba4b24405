"""L2-regularized logistic regression, unconstrained and constrained.

Constrained problems are solved with an augmented-Lagrangian loop: each outer
iteration minimizes loss + shifted quadratic penalty by gradient descent with
Armijo backtracking, then updates the multipliers and grows the penalty
weight geometrically. All three constraint kinds are convex in the model
parameters because the signed distance is linear in them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data_model import Dataset, KernelModel, LinearModel, Model
from .errors import ConfigError, ContractError, DivergenceError, InfeasibleError

log = logging.getLogger(__name__)

AGREEMENT = "agreement_bound"
FLIP = "flip_point"
COVARIANCE = "covariance_bound"


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    max_iters: int = 3000
    grad_tol: float = 1e-7
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    init: str = "zero"
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0", "lam")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1", "max_iters")
        if not self.grad_tol > 0:
            raise ConfigError("grad_tol must be > 0", "grad_tol")
        if self.init not in ("zero", "random"):
            raise ConfigError("init must be 'zero' or 'random'", "init")


@dataclass(frozen=True)
class PenaltySchedule:
    initial: float = 10.0
    growth: float = 10.0
    max_outer: int = 8
    tol: float = 1e-6


@dataclass(frozen=True)
class ConstraintSpec:
    """One convex constraint on the signed distances.

    ``agreement_bound``: mean over the training rows of
    ``max(0, d(x) * d_ref(x)) <= gamma``; ``reference`` is the model whose
    distances are held fixed.

    ``flip_point``: the decision on row ``target`` must be the opposite of the
    reference model's, realized as ``s * d(x_target) <= -margin``.

    ``covariance_bound``: ``|mean over D* of (z - mean z) * d(x)| <= c`` with
    D* the ground-truth negatives (``rate="fpr"``) or positives (``"fnr"``).
    """

    kind: str
    gamma: float = math.inf
    target: int = -1
    margin: float = 1e-3
    c: float = math.inf
    rate: str = "fpr"
    reference: Model | None = None
    schedule: PenaltySchedule = field(default_factory=PenaltySchedule)

    def __post_init__(self):
        if self.kind not in (AGREEMENT, FLIP, COVARIANCE):
            raise ConfigError(f"unknown constraint kind {self.kind!r}", "kind")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0", "gamma")
        if not self.margin > 0:
            raise ConfigError("margin must be > 0", "margin")
        if self.c < 0:
            raise ConfigError("c must be >= 0", "c")
        if self.rate not in ("fpr", "fnr"):
            raise ConfigError("rate must be 'fpr' or 'fnr'", "rate")
        if self.kind in (AGREEMENT, FLIP) and self.reference is None:
            raise ConfigError(f"{self.kind} needs a reference model", "reference")
        if self.kind == FLIP and self.target < 0:
            raise ConfigError("flip_point needs a target row index", "target")

    @classmethod
    def agreement(cls, reference, gamma, **kw):
        return cls(AGREEMENT, gamma=gamma, reference=reference, **kw)

    @classmethod
    def flip(cls, reference, target, margin=1e-3, **kw):
        return cls(FLIP, target=int(target), margin=margin, reference=reference, **kw)

    @classmethod
    def covariance(cls, c, rate="fpr", **kw):
        return cls(COVARIANCE, c=c, rate=rate, **kw)


@dataclass
class TrainResult:
    model: Model
    converged: bool
    iterations: int
    loss: float
    grad_norm: float
    report: list = field(default_factory=list)
    outer_violations: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return all(r["feasible"] for r in self.report)


def _as_subset(data: Dataset, subset) -> np.ndarray:
    idx = np.arange(data.n) if subset is None else np.asarray(subset, dtype=np.int64)
    if idx.size == 0:
        raise ContractError("subset must be non-empty")
    return idx


class Design:
    """Maps data rows to the linear feature space the optimizer works in.

    Linear models use ``[x, 1]`` with the bias column unpenalized; kernel
    models use the signed kernel features of a fixed anchor set.
    """

    def __init__(self, template: Model | None, dim: int):
        self.template = template
        if isinstance(template, KernelModel):
            self.n_params = len(template.alphas)
            self.penalized = np.ones(self.n_params)
        else:
            self.n_params = dim + 1
            self.penalized = np.ones(self.n_params)
            self.penalized[-1] = 0.0

    def rows(self, X: np.ndarray) -> np.ndarray:
        if isinstance(self.template, KernelModel):
            return self.template.features(X)
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def model(self, theta: np.ndarray) -> Model:
        if isinstance(self.template, KernelModel):
            return self.template.with_params(theta)
        return LinearModel.from_params(theta)

    def params(self, model: Model) -> np.ndarray:
        return np.asarray(model.params, dtype=float)


class _Constraint:
    """Compiled constraint ``g(theta) <= 0``; linear kinds store ``a, b``."""

    def __init__(self, spec, label, a=None, b=0.0, rows=None, ref=None, bound=0.0):
        self.spec = spec
        self.label = label
        self.a = a
        self.b = b
        self.rows = rows
        self.ref = ref
        self.bound = bound

    def value(self, theta, dist=None):
        if self.a is not None:
            return float(self.a @ theta + self.b)
        d = self.rows @ theta if dist is None else dist
        return float(np.mean(np.maximum(0.0, d * self.ref)) - self.bound)

    def grad(self, theta, dist=None):
        if self.a is not None:
            return self.a
        d = self.rows @ theta if dist is None else dist
        active = (d * self.ref) > 0
        return (self.ref * active) @ self.rows / len(self.ref)


class Objective:
    """Penalized logistic objective on a fixed subset of rows.

    With constraints and multipliers attached it becomes the augmented
    Lagrangian ``f + sum_k mu/2 * (max(0, g_k + nu_k/mu)^2 - (nu_k/mu)^2)``.
    """

    def __init__(self, data: Dataset, subset=None, lam: float = 0.0, template=None,
                 constraints: Sequence[ConstraintSpec] = ()):
        idx = _as_subset(data, subset)
        if lam < 0:
            raise ContractError("lambda must be >= 0")
        self.data = data
        self.idx = idx
        self.lam = float(lam)
        self.design = Design(template, data.d)
        self.A = self.design.rows(data.features[idx])
        self.y = data.labels[idx].astype(float)
        self.pen = self.design.penalized
        self.constraints = self._compile(constraints)
        self.mu = 0.0
        self.nu = np.zeros(len(self.constraints))

    def _compile(self, specs):
        out = []
        for k, spec in enumerate(specs):
            if spec.kind == AGREEMENT:
                if math.isinf(spec.gamma):
                    continue
                ref = spec.reference.decision(self.data.features[self.idx])
                out.append(_Constraint(spec, f"{k}:{AGREEMENT}", rows=self.A, ref=ref, bound=spec.gamma))
            elif spec.kind == FLIP:
                x = self.data.features[spec.target][None, :]
                s = 1.0 if spec.reference.decision(x)[0] >= 0 else -1.0
                a = s * self.design.rows(x)[0]
                out.append(_Constraint(spec, f"{k}:{FLIP}", a=a, b=spec.margin))
            else:
                if math.isinf(spec.c):
                    continue
                want = -1 if spec.rate == "fpr" else 1
                star = self.idx[self.data.labels[self.idx] == want]
                if star.size == 0:
                    raise ContractError(f"no rows with label {want} for the covariance constraint")
                z = self.data.sensitive[star].astype(float)
                a = (z - z.mean()) @ self.design.rows(self.data.features[star]) / star.size
                out.append(_Constraint(spec, f"{k}:{COVARIANCE}+", a=a, b=-spec.c))
                out.append(_Constraint(spec, f"{k}:{COVARIANCE}-", a=-a, b=-spec.c))
        return out

    # plain loss -----------------------------------------------------------
    def loss_terms(self, theta, margin=None):
        m = self.A @ theta if margin is None else margin
        data_term = np.mean(np.logaddexp(0.0, -self.y * m))
        reg = self.lam * float(np.sum(self.pen * theta * theta))
        return float(data_term + reg)

    def loss_grad(self, theta, margin=None):
        m = self.A @ theta if margin is None else margin
        # d/dm log(1 + exp(-y m)) = -y * sigmoid(-y m)
        coef = -self.y * _sigmoid(-self.y * m)
        return coef @ self.A / len(self.y) + 2.0 * self.lam * self.pen * theta

    # augmented lagrangian -------------------------------------------------
    def value(self, theta):
        m = self.A @ theta
        v = self.loss_terms(theta, m)
        if self.mu > 0:
            for k, con in enumerate(self.constraints):
                g = con.value(theta, m)
                shift = self.nu[k] / self.mu
                v += 0.5 * self.mu * (max(0.0, g + shift) ** 2 - shift**2)
        return v

    def grad(self, theta):
        m = self.A @ theta
        gr = self.loss_grad(theta, m)
        if self.mu > 0:
            for k, con in enumerate(self.constraints):
                t = max(0.0, con.value(theta, m) + self.nu[k] / self.mu)
                if t > 0:
                    gr = gr + self.mu * t * con.grad(theta, m)
        return gr

    def violations(self, theta) -> np.ndarray:
        m = self.A @ theta
        return np.array([max(0.0, c.value(theta, m)) for c in self.constraints])

    def report(self, theta, tol) -> list:
        m = self.A @ theta
        out = []
        seen = {}
        for con in self.constraints:
            g = con.value(theta, m)
            spec = con.spec
            if spec.kind == COVARIANCE:
                # the two halves of |cov| <= c are reported as one entry
                key = con.label[:-1]
                achieved = abs(float(con.a @ theta))
                if key in seen:
                    continue
                seen[key] = True
                out.append(_entry(spec, achieved, spec.c, tol))
            elif spec.kind == FLIP:
                achieved = g - spec.margin  # s * d(x_target)
                out.append(_entry(spec, achieved, -spec.margin, tol))
            else:
                out.append(_entry(spec, g + spec.gamma, spec.gamma, tol))
        return out


def _entry(spec, achieved, bound, tol):
    return {
        "kind": spec.kind,
        "achieved": float(achieved),
        "bound": float(bound),
        "residual": float(max(0.0, achieved - bound)),
        "feasible": bool(achieved - bound <= tol),
    }


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _descend(obj: Objective, theta, config: TrainConfig):
    """Gradient descent with Armijo backtracking.

    The trial step of each line search is the Barzilai-Borwein estimate from
    the previous iterate; backtracking then halves it until the sufficient
    decrease condition holds.
    """
    f = obj.value(theta)
    g = obj.grad(theta)
    trace = [f]
    step = 1.0
    prev_theta = prev_g = None
    it = 0
    for it in range(1, config.max_iters + 1):
        gn2 = float(g @ g)
        if math.sqrt(gn2) <= config.grad_tol:
            return theta, f, g, it - 1, True, trace
        if prev_theta is not None:
            s = theta - prev_theta
            yk = g - prev_g
            sy = float(s @ yk)
            if sy > 0:
                step = float(s @ s) / sy
        while True:
            cand = theta - step * g
            fc = obj.value(cand)
            if not math.isfinite(fc):
                if step < 1e-300:
                    raise DivergenceError("loss became non-finite", trace[-10:])
                step *= config.backtrack
                continue
            if fc <= f - config.armijo_c * step * gn2:
                break
            step *= config.backtrack
            if step * math.sqrt(gn2) < 1e-16 * (1.0 + np.linalg.norm(theta)):
                # no representable decrease left along -g
                return theta, f, g, it, False, trace
        prev_theta, prev_g = theta, g
        theta, f = cand, fc
        g = obj.grad(theta)
        trace.append(f)
        if not (math.isfinite(f) and np.all(np.isfinite(g))):
            raise DivergenceError(f"loss became non-finite at iteration {it}", trace[-10:])
    converged = float(np.linalg.norm(g)) <= config.grad_tol
    return theta, f, g, it, converged, trace


def _initial(design: Design, config: TrainConfig):
    if config.init == "random":
        return np.random.default_rng(config.seed).normal(scale=1e-2, size=design.n_params)
    return np.zeros(design.n_params)


def logistic_loss(model: Model, data: Dataset, subset=None, lam: float = 0.0) -> float:
    """Mean logistic loss over ``subset`` plus ``lam * ||weights||^2`` (bias unpenalized)."""
    obj = Objective(data, subset, lam, template=model)
    return obj.loss_terms(obj.design.params(model))


def gradient(model: Model, data: Dataset, subset=None, lam: float = 0.0) -> np.ndarray:
    """Analytic gradient of :func:`logistic_loss` w.r.t. ``[weights, bias]``."""
    obj = Objective(data, subset, lam, template=model)
    return obj.loss_grad(obj.design.params(model))


def train_unconstrained(data: Dataset, subset=None, config: TrainConfig | None = None,
                        template: Model | None = None) -> TrainResult:
    config = config or TrainConfig()
    obj = Objective(data, subset, config.lam, template=template)
    theta0 = _initial(obj.design, config)
    theta, f, g, it, conv, _ = _descend(obj, theta0, config)
    if not conv:
        log.debug("unconstrained training stopped after %d iterations, |g|=%.2e", it, np.linalg.norm(g))
    return TrainResult(obj.design.model(theta), conv, it, f, float(np.linalg.norm(g)))


def train_constrained(data: Dataset, subset=None, config: TrainConfig | None = None,
                      constraints: Sequence[ConstraintSpec] = (), template: Model | None = None,
                      warm_start: Model | None = None, raise_infeasible: bool = True) -> TrainResult:
    """Minimize the logistic loss subject to ``constraints``.

    Warm-starts from ``warm_start`` (or the reference model of the first
    constraint). The penalty weight starts at ``schedule.initial`` and is
    multiplied by ``schedule.growth`` after every outer iteration. Stops once
    every residual is within ``schedule.tol`` and the multipliers are
    consistent with the constraint values; raises :class:`InfeasibleError`
    otherwise unless ``raise_infeasible`` is false.
    """
    config = config or TrainConfig()
    constraints = list(constraints)
    sched = constraints[0].schedule if constraints else PenaltySchedule()
    if template is None:
        ref = warm_start or next((c.reference for c in constraints if c.reference is not None), None)
        if isinstance(ref, KernelModel):
            template = ref
    obj = Objective(data, subset, config.lam, template=template, constraints=constraints)

    start = warm_start or next((c.reference for c in constraints if c.reference is not None), None)
    theta = obj.design.params(start) if start is not None else _initial(obj.design, config)

    if not obj.constraints:
        theta, f, g, it, conv, _ = _descend(obj, theta, config)
        return TrainResult(obj.design.model(theta), conv, it, f, float(np.linalg.norm(g)), [], [])

    obj.mu = sched.initial
    viol_trace = [float(obj.violations(theta).max())]
    total_it = 0
    conv = False
    g = obj.grad(theta)
    for _outer in range(sched.max_outer):
        theta, _, g, it, conv, _ = _descend(obj, theta, config)
        total_it += it
        m = obj.A @ theta
        gvals = np.array([c.value(theta, m) for c in obj.constraints])
        viol_trace.append(float(np.maximum(gvals, 0.0).max()))
        # feasible, and no multiplier is holding a slack constraint too tight
        kkt = float(np.max(np.abs(np.maximum(gvals, -obj.nu / obj.mu))))
        obj.nu = np.maximum(0.0, obj.nu + obj.mu * gvals)
        if kkt <= sched.tol:
            break
        obj.mu *= sched.growth

    model = obj.design.model(theta)
    report = obj.report(theta, sched.tol)
    loss = obj.loss_terms(theta)
    result = TrainResult(model, conv, total_it, loss, float(np.linalg.norm(obj.loss_grad(theta))),
                         report, viol_trace)
    if not result.feasible and raise_infeasible:
        worst = max(r["residual"] for r in report)
        raise InfeasibleError(f"constraints unmet after {sched.max_outer} outer iterations "
                              f"(worst residual {worst:.3g})", model=model, report=report)
    return result


def accuracy_on(model: Model, data: Dataset, idx) -> float:
    idx = np.asarray(idx, dtype=np.int64)
    pred = np.where(model.decision(data.features[idx]) >= 0, 1, -1)
    return float(np.mean(pred == data.labels[idx]))


def lambda_grid(lo: float = 0.1, hi: float = 1.0, num: int = 100) -> np.ndarray:
    return np.linspace(lo, hi, num)


def select_lambda(data: Dataset, train_idx, val_idx, grid, config: TrainConfig | None = None,
                  template: Model | None = None):
    """Train one model per lambda; keep the best on validation accuracy.

    Ties go to the earliest grid entry. Returns ``(model, lam, val_accuracy)``.
    """
    config = config or TrainConfig()
    best = None
    for lam in grid:
        res = train_unconstrained(data, train_idx, replace(config, lam=float(lam)), template)
        acc = accuracy_on(res.model, data, val_idx)
        if best is None or acc > best[2]:
            best = (res.model, float(lam), acc)
    if best is None:
        raise ContractError("lambda grid is empty")
    return best
