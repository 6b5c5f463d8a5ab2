"""Backward-induction fitted Q-learning: VFQL, PFQL and VAFQL.

All three share one loop over ``h = H-1, ..., 0`` (0-based).  Each step
regresses bootstrapped targets ``r + V_hat_{h+1}(s')`` onto the model, then
(optionally) subtracts an elliptical bonus built from the gradient Gram
matrix at the fitted parameter and truncates to ``[0, H - h]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import gram as gram_ops
from .mdp import OfflineDataset, PolicyStack
from .models import DifferentiableModel, FeatureMap
from .regress import FitResult, OptimizerConfig, RegressionError, RegressionProblem, fit

ALGORITHMS = ("vfql", "pfql", "vafql")


class AlgorithmError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"regression failed at step h={step + 1}: {cause}")
        self.step = step


@dataclass(frozen=True, eq=False)
class VarianceEstimator:
    """Per-step moment fits ``u_h``, ``v_h`` and the clipped variance table ``(H, S, A)``."""

    u: list
    v: list
    sigma2: np.ndarray

    def __call__(self, h: int, s: int, a: int) -> float:
        return float(self.sigma2[h, s, a])


@dataclass(eq=False)
class LearnedStack:
    """Everything an algorithm run produces, tabulated on the ``S x A`` grid.

    ``f_table``, ``bonus_table`` and ``q_table`` have shape ``(H, S, A)``;
    ``v_table`` has shape ``(H + 1, S)`` with a zero last row.
    """

    algorithm: str
    model: DifferentiableModel
    featmap: FeatureMap
    ridge: float
    beta: float
    gamma0: float
    thetas: list
    grams: list
    f_table: np.ndarray
    bonus_table: np.ndarray
    q_table: np.ndarray
    v_table: np.ndarray
    policy: PolicyStack
    fits: list = field(default_factory=list)
    variance: VarianceEstimator | None = None

    @property
    def horizon(self) -> int:
        return len(self.thetas)

    def q(self, h: int, s: int, a: int) -> float:
        return float(self.q_table[h, s, a])

    def v(self, h: int, s: int) -> float:
        return float(self.v_table[h, s])

    def bonus(self, h: int, s: int, a: int) -> float:
        return float(self.bonus_table[h, s, a])

    def max_grad_norm(self) -> float:
        """Largest final optimizer gradient norm over steps (optimization quality)."""
        return max((r.grad_norm for r in self.fits), default=0.0)


def _grid_bonus(model, featmap, theta, gram, beta, gamma0):
    G = model.jacobian(theta, featmap.table)
    b = gram_ops.bonus(gram, G, beta) + gamma0
    return b.reshape(featmap.num_states, featmap.num_actions)


def _truncate_and_greedy(f_grid, bonus_grid, cap):
    q = np.clip(f_grid - bonus_grid, 0.0, cap)
    return q, q.max(axis=1), np.argmax(q, axis=1)


def _fit_step(features, targets, weights, model, ridge, cfg, h):
    problem = RegressionProblem(features, targets, model, ridge, weights)
    try:
        return fit(problem, cfg)
    except (RegressionError, ValueError) as exc:
        raise AlgorithmError(h, exc) from exc


def _effective_ridge(ridge, model, clip_ridge):
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    if clip_ridge:
        return min(ridge, 1.0 / (2.0 * model.radius ** 2))
    return ridge


def _run(name, dataset, model, featmap, ridge, beta, gamma0, cfg, pessimistic,
         dataset_moments=None):
    if beta < 0 or gamma0 < 0:
        raise ValueError("beta and gamma0 must be nonnegative")
    cfg = cfg or OptimizerConfig()
    H = dataset.horizon
    S, A = featmap.num_states, featmap.num_actions
    f_table = np.zeros((H, S, A))
    bonus_table = np.zeros((H, S, A))
    q_table = np.zeros((H, S, A))
    v_table = np.zeros((H + 1, S))
    greedy = np.zeros((H, S), dtype=int)
    thetas = [None] * H
    grams = [None] * H
    fits: list[FitResult | None] = [None] * H
    us, vs = [None] * H, [None] * H
    sigma2 = np.ones((H, S, A))

    for h in range(H - 1, -1, -1):
        cap = float(H - h)
        s, a, r, s_next = dataset.step(h)
        X = featmap.rows(s, a)
        y = r + v_table[h + 1][s_next]
        weights = None
        if dataset_moments is not None:
            sb, ab, _, sb_next = dataset_moments.step(h)
            Xb = featmap.rows(sb, ab)
            v_next = v_table[h + 1][sb_next]
            fu = _fit_step(Xb, v_next, None, model, ridge, cfg, h)
            fv = _fit_step(Xb, v_next ** 2, None, model, ridge, cfg, h)
            us[h], vs[h] = fu.theta, fv.theta
            first = np.clip(model.value(fu.theta, featmap.table), 0.0, cap)
            second = np.clip(model.value(fv.theta, featmap.table), 0.0, cap ** 2)
            sigma2[h] = np.maximum(1.0, second - first ** 2).reshape(S, A)
            weights = 1.0 / sigma2[h][s, a]
        result = _fit_step(X, y, weights, model, ridge, cfg, h)
        theta = result.theta
        f_grid = model.value(theta, featmap.table).reshape(S, A)
        if pessimistic:
            G_data = model.jacobian(theta, X)
            grams[h] = gram_ops.accumulate(G_data, weights, ridge)
            bonus_table[h] = _grid_bonus(model, featmap, theta, grams[h], beta, gamma0)
        thetas[h] = theta
        fits[h] = result
        f_table[h] = f_grid
        q_table[h], v_table[h], greedy[h] = _truncate_and_greedy(f_grid, bonus_table[h], cap)

    variance = None
    if dataset_moments is not None:
        variance = VarianceEstimator(us, vs, sigma2)
    return LearnedStack(
        algorithm=name, model=model, featmap=featmap, ridge=ridge, beta=beta, gamma0=gamma0,
        thetas=thetas, grams=grams if pessimistic else [None] * H, f_table=f_table,
        bonus_table=bonus_table, q_table=q_table, v_table=v_table,
        policy=PolicyStack.deterministic(greedy, A), fits=fits, variance=variance)


def vfql(dataset: OfflineDataset, model: DifferentiableModel, featmap: FeatureMap,
         ridge: float, cfg: OptimizerConfig | None = None) -> LearnedStack:
    """Vanilla fitted Q-learning: regression and truncation, no bonus."""
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    return _run("vfql", dataset, model, featmap, ridge, 0.0, 0.0, cfg, pessimistic=False)


def pfql(dataset: OfflineDataset, model: DifferentiableModel, featmap: FeatureMap,
         ridge: float, beta: float, gamma0: float = 0.0, cfg: OptimizerConfig | None = None,
         clip_ridge: bool = True) -> LearnedStack:
    """Pessimistic fitted Q-learning.

    With ``clip_ridge`` the ridge is lowered to ``1 / (2 C_Theta^2)`` when
    the supplied value is larger.
    """
    ridge = _effective_ridge(ridge, model, clip_ridge)
    return _run("pfql", dataset, model, featmap, ridge, beta, gamma0, cfg, pessimistic=True)


def vafql(dataset: OfflineDataset, dataset_moments: OfflineDataset, model: DifferentiableModel,
          featmap: FeatureMap, ridge: float, beta: float, gamma0: float = 0.0,
          cfg: OptimizerConfig | None = None, clip_ridge: bool = True) -> LearnedStack:
    """Variance-aware fitted Q-learning.

    ``dataset_moments`` (independent of ``dataset``, same size) feeds the
    first/second moment fits that set the per-sample weights.
    """
    if dataset.num_episodes != dataset_moments.num_episodes:
        raise ValueError("the two VAFQL datasets must contain the same number of episodes")
    if dataset.horizon != dataset_moments.horizon:
        raise ValueError("the two VAFQL datasets must share the horizon")
    ridge = _effective_ridge(ridge, model, clip_ridge)
    return _run("vafql", dataset, model, featmap, ridge, beta, gamma0, cfg, pessimistic=True,
                dataset_moments=dataset_moments)


def rebonus(stack: LearnedStack, beta: float, gamma0: float | None = None) -> LearnedStack:
    """Recompute bonuses, truncation and greedy policy with frozen fits and Gram matrices."""
    if stack.grams[0] is None:
        raise ValueError("stack has no Gram matrices (VFQL run)")
    gamma0 = stack.gamma0 if gamma0 is None else gamma0
    H = stack.horizon
    S, A = stack.featmap.num_states, stack.featmap.num_actions
    bonus_table = np.zeros((H, S, A))
    q_table = np.zeros((H, S, A))
    v_table = np.zeros((H + 1, S))
    greedy = np.zeros((H, S), dtype=int)
    for h in range(H):
        bonus_table[h] = _grid_bonus(stack.model, stack.featmap, stack.thetas[h],
                                     stack.grams[h], beta, gamma0)
        q_table[h], v_table[h], greedy[h] = _truncate_and_greedy(
            stack.f_table[h], bonus_table[h], float(H - h))
    return replace(stack, beta=beta, gamma0=gamma0, bonus_table=bonus_table, q_table=q_table,
                   v_table=v_table, policy=PolicyStack.deterministic(greedy, A))


def default_beta(d: int, H: int, K: int, mode: str = "practical", algorithm: str = "pfql",
                 c: float = 1.0, delta: float = 0.01) -> float:
    """Bonus scale.

    ``theory``: ``8 d H iota`` (PFQL) or ``8 d iota`` (VAFQL) with
    ``iota = log(2 d H K / delta)``.  ``practical``: ``c * sqrt(d) * log K``.
    """
    if mode == "theory":
        iota = math.log(2.0 * d * H * max(K, 1) / delta)
        if algorithm == "vafql":
            return 8.0 * d * iota
        return 8.0 * d * H * iota
    if mode == "practical":
        return c * math.sqrt(d) * math.log(max(K, 2))
    raise ValueError(f"unknown beta mode {mode!r}")
