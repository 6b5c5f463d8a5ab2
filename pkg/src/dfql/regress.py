"""Weighted ridge regression oracle over a differentiable model class.

Loss: ``L(theta) = sum_k w_k (f(theta, phi_k) - y_k)^2 + ridge * ||theta||^2``
minimized over the ball ``||theta|| <= C_Theta``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .models import DifferentiableModel, project, sample_ball

log = logging.getLogger(__name__)


class RegressionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    features: np.ndarray
    targets: np.ndarray
    model: DifferentiableModel
    ridge: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.targets, dtype=float)
        w = np.ones(len(y)) if self.weights is None else np.asarray(self.weights, dtype=float)
        if len(X) != len(y) or len(w) != len(y) or len(y) < 1:
            raise ValueError("features, targets and weights must have equal length >= 1")
        if self.ridge <= 0:
            raise ValueError("ridge must be positive")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "weights", w)

    # overflow is not an error here: the optimizer checks finiteness and aborts the restart
    def loss(self, theta) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            resid = self.model.value(theta, self.features) - self.targets
            return float(np.sum(self.weights * resid ** 2) + self.ridge * theta @ theta)

    def loss_and_grad(self, theta):
        with np.errstate(over="ignore", invalid="ignore"):
            resid = self.model.value(theta, self.features) - self.targets
            J = self.model.jacobian(theta, self.features)
            wr = self.weights * resid
            loss = float(np.sum(wr * resid) + self.ridge * theta @ theta)
            return loss, 2.0 * (J.T @ wr) + 2.0 * self.ridge * theta


@dataclass(frozen=True)
class OptimizerConfig:
    """Projected gradient descent settings; ``grad_tol=None`` means ``1e-8 * K``."""

    max_iters: int = 5000
    grad_tol: float | None = None
    num_restarts: int = 5
    shrink: float = 0.5
    armijo: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tol is not None and self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.num_restarts < 1:
            raise ValueError("num_restarts must be >= 1")
        if not 0 < self.shrink < 1 or not 0 < self.armijo < 1:
            raise ValueError("backtracking parameters must lie in (0, 1)")

    def tolerance(self, K: int) -> float:
        return self.grad_tol if self.grad_tol is not None else 1e-8 * K


@dataclass
class FitResult:
    theta: np.ndarray
    loss: float
    iterations: int
    grad_norm: float
    method: str
    failed_restarts: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    def dump_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("iter", "loss", "grad_norm"))
            writer.writerows(self.trace)


def closed_form_linear(features, targets, weights=None, ridge: float = 1.0) -> np.ndarray:
    """``(sum w phi phi^T + ridge I)^{-1} sum w phi y`` via a Cholesky solve."""
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    A = (X * w[:, None]).T @ X + ridge * np.eye(X.shape[1])
    b = X.T @ (w * y)
    try:
        factor = cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise RegressionError("normal equations are not positive definite") from exc
    return cho_solve(factor, b)


def _gradient_mapping(problem, theta, grad, step):
    return (theta - project(problem.model, theta - step * grad)) / step


def _descend(problem: RegressionProblem, theta0, cfg: OptimizerConfig, tol: float,
             keep_trace: bool):
    """Projected gradient descent with Barzilai-Borwein trial steps and Armijo backtracking."""
    model = problem.model
    theta = project(model, theta0)
    loss, grad = problem.loss_and_grad(theta)
    step = 1.0 / max(1.0, np.linalg.norm(grad))
    trace = []
    gnorm = np.linalg.norm(_gradient_mapping(problem, theta, grad, 1.0))
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise FloatingPointError("non-finite loss or gradient")
        if keep_trace:
            trace.append((it - 1, loss, gnorm))
        if gnorm <= tol:
            it -= 1
            break
        t = step
        while True:
            cand = project(model, theta - t * grad)
            cand_loss = problem.loss(cand)
            if np.isfinite(cand_loss) and cand_loss <= loss + cfg.armijo * grad @ (cand - theta):
                break
            t *= cfg.shrink
            if t < 1e-20:
                break
        if t < 1e-20:
            # no further decrease is representable
            break
        new_loss, new_grad = problem.loss_and_grad(cand)
        s = cand - theta
        yv = new_grad - grad
        sy = s @ yv
        step = (s @ s) / sy if sy > 1e-300 else t * 2.0
        step = float(np.clip(step, 1e-12, 1e12))
        theta, loss, grad = cand, new_loss, new_grad
        gnorm = np.linalg.norm(_gradient_mapping(problem, theta, grad, 1.0))
    return theta, loss, it, gnorm, trace


def fit(problem: RegressionProblem, cfg: OptimizerConfig | None = None,
        keep_trace: bool = False) -> FitResult:
    """Best-of-restarts minimizer of the ridge loss over the parameter ball.

    Linear models use the closed form; if that solution leaves the ball the
    (convex) constrained problem is finished by projected descent from its
    projection.
    """
    cfg = cfg or OptimizerConfig()
    model = problem.model
    K = len(problem.targets)
    tol = cfg.tolerance(K)

    if model.kind == "linear":
        theta = closed_form_linear(problem.features, problem.targets, problem.weights,
                                   problem.ridge)
        if np.linalg.norm(theta) <= model.radius:
            loss, grad = problem.loss_and_grad(theta)
            return FitResult(theta, loss, 0, float(np.linalg.norm(grad)), "closed_form")
        theta, loss, iters, gnorm, trace = _descend(problem, theta, cfg, tol, keep_trace)
        return FitResult(theta, loss, iters, float(gnorm), "projected_closed_form", trace=trace)

    rng = np.random.default_rng(cfg.seed)
    starts = [np.zeros(model.param_dim)]
    if cfg.num_restarts > 1:
        starts.extend(sample_ball(rng, model.param_dim, model.radius, cfg.num_restarts - 1))
    best = None
    failed = []
    for idx, start in enumerate(starts):
        try:
            theta, loss, iters, gnorm, trace = _descend(problem, start, cfg, tol, keep_trace)
        except FloatingPointError as exc:
            log.warning("restart %d aborted: %s", idx, exc)
            failed.append(idx)
            continue
        # strict '<' keeps the lowest restart index on ties
        if best is None or loss < best.loss:
            best = FitResult(theta, loss, iters, float(gnorm), "pgd", trace=trace)
    if best is None:
        raise RegressionError(f"all {len(starts)} restarts failed")
    best.failed_restarts = failed
    return best
