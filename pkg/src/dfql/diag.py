"""Measurements on tabular instances: gaps, pessimism validity, coverage, concentrability, rates."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import gram as gram_ops
from .algos import LearnedStack
from .mdp import EpisodicMDP, OfflineDataset, PolicyStack, exact_value, occupancy, optimal
from .models import DifferentiableModel, FeatureMap
from .regress import OptimizerConfig, RegressionProblem, fit

log = logging.getLogger(__name__)


@dataclass
class RunReport:
    algorithm: str
    K: int
    seed: int
    v_star: float
    v_hat: float
    gap: float
    validity_fraction: float
    validity_worst_excess: float
    coverage_kappa: float
    bound_main_term: float
    max_grad_norm: float
    beta: float
    wall_clock: float = 0.0
    status: str = "ok"

    # wall-clock is excluded so result tables are reproducible byte for byte
    CSV_FIELDS = ("algorithm", "K", "seed", "v_star", "v_hat", "gap", "validity_fraction",
                  "validity_worst_excess", "coverage_kappa", "bound_main_term",
                  "max_grad_norm", "beta", "status")

    def to_row(self) -> list[str]:
        out = []
        for name in self.CSV_FIELDS:
            val = getattr(self, name)
            out.append(f"{val:.17g}" if isinstance(val, float) else str(val))
        return out

    @classmethod
    def from_row(cls, row: dict) -> "RunReport":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in row:
                continue
            raw = row[f.name]
            kwargs[f.name] = int(raw) if f.type == "int" else float(raw) if f.type == "float" else raw
        return cls(**kwargs)


def suboptimality_gap(mdp: EpisodicMDP, stack_or_policy) -> float:
    """``v* - v^pi_hat`` computed by exact dynamic programming."""
    policy = stack_or_policy.policy if isinstance(stack_or_policy, LearnedStack) else stack_or_policy
    _, _, v_star = optimal(mdp)
    _, v_hat = exact_value(mdp, policy)
    return v_star - v_hat


def pessimism_validity(mdp: EpisodicMDP, stack: LearnedStack) -> tuple[float, float]:
    """Fraction of ``(h, s, a)`` with ``|P_h V_hat_{h+1} + r_h - f(theta_h)| <= Gamma_h``.

    Also returns the largest amount by which the residual exceeds the bonus
    (0 when every cell is covered).
    """
    if not isinstance(mdp, EpisodicMDP):
        raise TypeError("pessimism validity needs a tabular MDP with known transitions")
    H = mdp.horizon
    backup = mdp.rewards + np.einsum("hsat,ht->hsa", mdp.transitions, stack.v_table[1:H + 1])
    excess = np.abs(backup - stack.f_table) - stack.bonus_table
    ok = excess <= 0
    return float(ok.mean()), float(max(0.0, excess.max()))


def population_gram(model: DifferentiableModel, featmap: FeatureMap, theta,
                    weights) -> np.ndarray:
    """``E_w[grad f grad f^T]`` for state-action weights of shape ``(S, A)``."""
    G = model.jacobian(theta, featmap.table)
    w = np.asarray(weights, dtype=float).ravel()
    return (G * w[:, None]).T @ G


def coverage_kappa(mdp: EpisodicMDP, behavior: PolicyStack, model: DifferentiableModel,
                   featmap: FeatureMap, theta_probes) -> np.ndarray:
    """Per-step ``min over probes of lambda_min(E_mu,h[grad f grad f^T])``.

    This certifies the coverage constant only over the supplied probes.
    """
    d = occupancy(mdp, behavior)
    out = np.full(mdp.horizon, np.inf)
    for theta in theta_probes:
        for h in range(mdp.horizon):
            lam = gram_ops.min_eigenvalue(population_gram(model, featmap, theta, d[h]))
            out[h] = min(out[h], lam)
    return out


def concentrability(mdp: EpisodicMDP, behavior: PolicyStack, targets) -> tuple[float, tuple | None]:
    """Lower bound on C_eff from a finite list of target policies.

    Returns ``(C, None)`` or ``(inf, (h, s, a))`` naming an uncovered cell.
    """
    d_mu = occupancy(mdp, behavior)
    best = 1.0 if targets else 0.0
    for policy in targets:
        d_pi = occupancy(mdp, policy)
        uncovered = (d_mu <= 0) & (d_pi > 0)
        if np.any(uncovered):
            h, s, a = (int(i) for i in np.argwhere(uncovered)[0])
            return math.inf, (h, s, a)
        safe = np.where(d_mu > 0, d_mu, 1.0)
        ratio_sq = np.where(d_mu > 0, d_pi ** 2 / safe, 0.0)
        best = max(best, float(ratio_sq.sum(axis=(1, 2)).max()))
    return best, None


def rate_fit(K_values, gaps) -> tuple[float, float]:
    """OLS slope of ``log gap`` on ``log K`` and its standard error.

    Nonpositive gaps are dropped with a warning; at least three points must remain.
    """
    K = np.asarray(K_values, dtype=float)
    g = np.asarray(gaps, dtype=float)
    keep = g > 0
    if not np.all(keep):
        log.warning("dropping %d nonpositive gaps from rate fit", int((~keep).sum()))
    K, g = K[keep], g[keep]
    if len(K) < 3:
        raise ValueError("rate fit needs at least three positive (K, gap) pairs")
    x, y = np.log(K), np.log(g)
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean()) / (xc @ xc))
    resid = y - y.mean() - slope * xc
    dof = len(x) - 2
    se = float(np.sqrt((resid @ resid) / dof / (xc @ xc))) if dof > 0 else math.nan
    return slope, se


def theory_bound_main_term(mdp: EpisodicMDP, stack: LearnedStack, thetas=None,
                           grams=None) -> float:
    """``sum_h E_{pi*}[sqrt(g^T Sigma_h^{-1} g)]`` without the ``beta`` prefactor.

    ``g`` is the model gradient at ``stack.thetas`` unless ``thetas`` (e.g. the
    realizable ``theta*``) and matching ``grams`` are supplied.
    """
    thetas = stack.thetas if thetas is None else thetas
    grams = stack.grams if grams is None else grams
    if grams[0] is None:
        raise ValueError("no Gram matrices available")
    pi_star, _, _ = optimal(mdp)
    d_star = occupancy(mdp, pi_star)
    total = 0.0
    for h in range(mdp.horizon):
        G = stack.model.jacobian(thetas[h], stack.featmap.table)
        width = np.sqrt(gram_ops.quad_form(grams[h], G))
        total += float(d_star[h].ravel() @ width)
    return total


def fit_theta_star(mdp: EpisodicMDP, model: DifferentiableModel, featmap: FeatureMap,
                   ridge: float = 1e-10, cfg: OptimizerConfig | None = None) -> list:
    """Parameters matching the exact ``Q*_h`` on the whole grid (realizable instances)."""
    _, values, _ = optimal(mdp)
    out = []
    for h in range(mdp.horizon):
        problem = RegressionProblem(featmap.table, values.Q[h].ravel(), model, ridge)
        out.append(fit(problem, cfg).theta)
    return out


def realizability_residual(mdp: EpisodicMDP, model: DifferentiableModel, featmap: FeatureMap,
                           theta_star) -> float:
    """max over (h, s, a) of ``|f(theta*_h, phi(s, a)) - Q*_h(s, a)|``."""
    _, values, _ = optimal(mdp)
    return float(max(np.max(np.abs(model.value(theta_star[h], featmap.table) - values.Q[h].ravel()))
                     for h in range(mdp.horizon)))


def star_grams(dataset: OfflineDataset, model: DifferentiableModel, featmap: FeatureMap,
               theta_star, ridge: float, sigma2=None) -> list:
    """``Sigma*_h`` (or ``Lambda*_h`` when per-step variance tables are given) on the logged data."""
    out = []
    for h in range(dataset.horizon):
        s, a, _, _ = dataset.step(h)
        G = model.jacobian(theta_star[h], featmap.rows(s, a))
        w = None if sigma2 is None else 1.0 / np.asarray(sigma2[h])[s, a]
        out.append(gram_ops.accumulate(G, w, ridge))
    return out


def true_variance(mdp: EpisodicMDP, values) -> np.ndarray:
    """``max{1, Var_{P_h} V_{h+1}}`` as a table ``(H, S, A)`` for a value array ``(H+1, S)``."""
    V = np.asarray(values)
    H = mdp.horizon
    m1 = np.einsum("hsat,ht->hsa", mdp.transitions, V[1:H + 1])
    m2 = np.einsum("hsat,ht->hsa", mdp.transitions, V[1:H + 1] ** 2)
    return np.maximum(1.0, m2 - m1 ** 2)
