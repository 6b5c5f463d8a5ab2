"""Experiment driver: JSON configs, sweeps over (K, seed), result tables and SVG plots.

A sweep is a pure function of its config: every random draw is seeded from
``(seed, K)`` and rows are written in ``(K, seed)`` order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diag
from .algos import ALGORITHMS, LearnedStack, default_beta, pfql, vafql, vfql
from .instances import built_in_instances, instance_names
from .mdp import EpisodicMDP, Instance, OfflineDataset, PolicyStack, optimal, rollout
from .models import FeatureMap, build_model, one_hot_features, random_features
from .regress import OptimizerConfig

log = logging.getLogger(__name__)

PLOT_KINDS = ("gap_vs_K_loglog", "validity_vs_beta", "sigma_heatmap")
_PLOT_COLUMNS = {
    "gap_vs_K_loglog": ("K", "gap"),
    "validity_vs_beta": ("beta", "validity_fraction"),
    "sigma_heatmap": ("h", "s", "a", "sigma2"),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mdp: dict
    algorithm: str
    K: list
    seeds: list
    behavior: dict = field(default_factory=lambda: {"kind": "canonical"})
    model: dict = field(default_factory=lambda: {"kind": "linear"})
    features: dict = field(default_factory=lambda: {"kind": "one_hot"})
    ridge: float = 1.0
    clip_ridge: bool = True
    beta: dict = field(default_factory=lambda: {"mode": "practical", "c": 1.0})
    gamma0: float = 0.0
    optimizer: dict = field(default_factory=dict)
    output_dir: str = "results"
    workers: int = 1
    save_stacks: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
        for required in ("mdp", "algorithm", "K", "seeds"):
            if required not in doc:
                raise ConfigError(f"missing config field: {required}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if not self.K or any(int(k) < 1 for k in self.K):
            raise ConfigError("K must be a nonempty list of positive integers")
        if list(self.K) != sorted(self.K) or len(set(self.K)) != len(self.K):
            raise ConfigError("K list must be strictly ascending")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a nonempty list of distinct integers")
        if not self.ridge > 0:
            raise ConfigError("ridge must be positive")
        if self.gamma0 < 0:
            raise ConfigError("gamma0 must be nonnegative")
        mode = self.beta.get("mode")
        if mode not in ("theory", "practical", "explicit"):
            raise ConfigError("beta.mode must be theory, practical or explicit")
        if mode == "explicit" and not float(self.beta.get("value", -1)) >= 0:
            raise ConfigError("explicit beta needs a nonnegative value")
        if "name" not in self.mdp and "path" not in self.mdp:
            raise ConfigError("mdp needs a built-in 'name' or a 'path'")
        if "name" in self.mdp and self.mdp["name"] not in instance_names():
            raise ConfigError(f"unknown instance {self.mdp['name']!r}; valid names: "
                              f"{', '.join(instance_names())}")
        if self.behavior.get("kind", "canonical") not in (
                "canonical", "uniform", "epsilon_greedy", "file"):
            raise ConfigError("behavior.kind must be canonical, uniform, epsilon_greedy or file")
        try:
            OptimizerConfig(**self.optimizer)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad optimizer block: {exc}") from exc
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def load_policy(path) -> PolicyStack:
    """Read a behavior policy: JSON ``{"probs": [[[...]]]}`` with shape ``(H, S, A)``."""
    return PolicyStack(np.asarray(json.loads(Path(path).read_text())["probs"], dtype=float))


def build_instance(cfg: ExperimentConfig) -> Instance:
    if "path" in cfg.mdp:
        mdp = EpisodicMDP.load(cfg.mdp["path"])
        inst = Instance("file", mdp, PolicyStack.epsilon_greedy(optimal(mdp)[0], 0.3), {})
    else:
        inst = built_in_instances(cfg.mdp["name"], **cfg.mdp.get("params", {}))
    kind = cfg.behavior.get("kind", "canonical")
    mdp = inst.mdp
    if kind == "uniform":
        behavior = PolicyStack.uniform(mdp.horizon, mdp.num_states, mdp.num_actions)
    elif kind == "epsilon_greedy":
        behavior = PolicyStack.epsilon_greedy(optimal(mdp)[0], float(cfg.behavior.get("epsilon", 0.3)))
    elif kind == "file":
        behavior = load_policy(cfg.behavior["path"])
    else:
        behavior = inst.behavior
    return Instance(inst.name, mdp, behavior, inst.params)


def build_features(cfg: ExperimentConfig, mdp: EpisodicMDP) -> FeatureMap:
    kind = cfg.features.get("kind", "one_hot")
    if kind == "one_hot":
        return one_hot_features(mdp.num_states, mdp.num_actions)
    if kind == "random":
        return random_features(mdp.num_states, mdp.num_actions, int(cfg.features["dim"]),
                               int(cfg.features.get("seed", 0)))
    raise ConfigError(f"unknown feature kind {kind!r}")


def resolve_beta(cfg: ExperimentConfig, d: int, H: int, K: int) -> float:
    mode = cfg.beta["mode"]
    if mode == "explicit":
        return float(cfg.beta["value"])
    return default_beta(d, H, K, mode, cfg.algorithm, c=float(cfg.beta.get("c", 1.0)),
                        delta=float(cfg.beta.get("delta", 0.01)))


def generate_data(instance: Instance, K: int, seed: int, algorithm: str = "pfql"):
    """Logged data for one cell; VAFQL gets ``2K`` episodes split by parity into two halves."""
    tag = f"{instance.name}:{json.dumps(instance.params, sort_keys=True)}"
    if algorithm == "vafql":
        return rollout(instance.mdp, instance.behavior, 2 * K, [seed, K], tag).split_parity()
    return rollout(instance.mdp, instance.behavior, K, [seed, K], tag), None


def run_algorithm(cfg: ExperimentConfig, data, data_moments, model, featmap, beta, seed):
    opt = OptimizerConfig(**{**cfg.optimizer, "seed": cfg.optimizer.get("seed", 0) + seed})
    if cfg.algorithm == "vfql":
        return vfql(data, model, featmap, cfg.ridge, opt)
    if cfg.algorithm == "pfql":
        return pfql(data, model, featmap, cfg.ridge, beta, cfg.gamma0, opt, cfg.clip_ridge)
    return vafql(data, data_moments, model, featmap, cfg.ridge, beta, cfg.gamma0, opt,
                 cfg.clip_ridge)


def evaluate(instance: Instance, stack: LearnedStack, K: int, seed: int) -> diag.RunReport:
    mdp = instance.mdp
    _, _, v_star = optimal(mdp)
    gap = diag.suboptimality_gap(mdp, stack)
    validity, worst = diag.pessimism_validity(mdp, stack)
    probes = [np.zeros(stack.model.param_dim)] + list(stack.thetas)
    kappa = float(diag.coverage_kappa(mdp, instance.behavior, stack.model, stack.featmap,
                                      probes).min())
    bound = diag.theory_bound_main_term(mdp, stack) if stack.grams[0] is not None else math.nan
    return diag.RunReport(
        algorithm=stack.algorithm, K=K, seed=seed, v_star=v_star, v_hat=v_star - gap, gap=gap,
        validity_fraction=validity, validity_worst_excess=worst, coverage_kappa=kappa,
        bound_main_term=bound, max_grad_norm=stack.max_grad_norm(), beta=stack.beta)


def run_cell(cfg: ExperimentConfig, K: int, seed: int, out_dir: Path | None = None):
    """Generate data, fit, evaluate.  Failures become a report with ``status='failed: ...'``."""
    start = time.perf_counter()
    instance = build_instance(cfg)
    featmap = build_features(cfg, instance.mdp)
    model = build_model(cfg.model, featmap, instance.mdp.horizon)
    beta = resolve_beta(cfg, model.param_dim, instance.mdp.horizon, K)
    try:
        data, data_moments = generate_data(instance, K, seed, cfg.algorithm)
        stack = run_algorithm(cfg, data, data_moments, model, featmap, beta, seed)
        report = evaluate(instance, stack, K, seed)
        if out_dir is not None and cfg.save_stacks:
            save_stack(stack, out_dir / f"stack_K{K}_seed{seed}")
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        log.error("cell K=%d seed=%d failed: %s", K, seed, exc)
        nan = math.nan
        report = diag.RunReport(cfg.algorithm, K, seed, nan, nan, nan, nan, nan, nan, nan, nan,
                                beta, status=f"failed: {exc}".replace(",", ";"))
    report.wall_clock = time.perf_counter() - start
    return report


def _cell_worker(args):
    doc, K, seed, out_dir = args
    return run_cell(ExperimentConfig.from_dict(doc), K, seed, out_dir)


def sweep(cfg: ExperimentConfig, write: bool = True) -> list[diag.RunReport]:
    """Run every (K, seed) cell; write ``results.csv`` and ``timings.csv`` to ``output_dir``."""
    out_dir = Path(cfg.output_dir)
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
    cells = [(K, seed) for K in cfg.K for seed in cfg.seeds]
    dest = out_dir if write else None
    if cfg.workers > 1:
        doc = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            reports = list(pool.map(_cell_worker, [(doc, K, s, dest) for K, s in cells]))
    else:
        reports = [run_cell(cfg, K, s, dest) for K, s in cells]
    if write:
        (out_dir / "results.csv").write_text(results_to_csv(reports))
        with open(out_dir / "timings.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("K", "seed", "wall_clock"))
            writer.writerows((r.K, r.seed, f"{r.wall_clock:.6f}") for r in reports)
    return reports


def results_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(diag.RunReport.CSV_FIELDS)
    for r in reports:
        writer.writerow(r.to_row())
    return buf.getvalue()


def parse_results(text: str) -> list[diag.RunReport]:
    return [diag.RunReport.from_row(row) for row in csv.DictReader(io.StringIO(text))]


def read_results(path) -> list[diag.RunReport]:
    return parse_results(Path(path).read_text())


def summarize(reports) -> dict:
    """Mean gap and standard error per K, plus the log-log slope when it can be fit."""
    by_k: dict[int, list[float]] = {}
    for r in reports:
        if r.status == "ok":
            by_k.setdefault(r.K, []).append(r.gap)
    rows = []
    for K in sorted(by_k):
        g = np.asarray(by_k[K])
        se = float(g.std(ddof=1) / np.sqrt(len(g))) if len(g) > 1 else 0.0
        rows.append({"K": K, "n": len(g), "mean_gap": float(g.mean()), "stderr": se})
    out = {"rows": rows, "slope": None, "slope_stderr": None}
    try:
        slope, se = diag.rate_fit([r["K"] for r in rows], [r["mean_gap"] for r in rows])
        out["slope"], out["slope_stderr"] = slope, se
    except ValueError as exc:
        out["slope_error"] = str(exc)
    return out


def save_stack(stack: LearnedStack, prefix: Path) -> None:
    """Write ``*_params.csv`` (h, index, value), ``*_gram.csv`` (h, i, j, value) and ``*_policy.csv``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{prefix}_params.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("h", "index", "value"))
        for h, theta in enumerate(stack.thetas):
            w.writerows((h + 1, i, f"{v:.17g}") for i, v in enumerate(theta))
    if stack.grams[0] is not None:
        with open(f"{prefix}_gram.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("h", "i", "j", "value"))
            for h, g in enumerate(stack.grams):
                d = g.dim
                w.writerows((h + 1, i, j, f"{g.matrix[i, j]:.17g}") for i in range(d) for j in range(d))
    with open(f"{prefix}_policy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("h", "s", "action"))
        acts = stack.policy.actions()
        w.writerows((h + 1, s, int(acts[h, s])) for h in range(acts.shape[0]) for s in range(acts.shape[1]))
    if stack.variance is not None:
        with open(f"{prefix}_sigma2.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("h", "s", "a", "sigma2"))
            H, S, A = stack.variance.sigma2.shape
            w.writerows((h + 1, s, a, f"{stack.variance.sigma2[h, s, a]:.17g}")
                        for h in range(H) for s in range(S) for a in range(A))


def check_assumptions(cfg: ExperimentConfig, n_probes: int = 20) -> dict:
    """Realizability residual, coverage, concentrability and gradient checks on the config's instance."""
    from .models import check_gradient, sample_ball

    instance = build_instance(cfg)
    mdp = instance.mdp
    featmap = build_features(cfg, mdp)
    model = build_model(cfg.model, featmap, mdp.horizon)
    rng = np.random.default_rng(0)
    theta_star = diag.fit_theta_star(mdp, model, featmap)
    residual = diag.realizability_residual(mdp, model, featmap, theta_star)
    probes = [np.zeros(model.param_dim)] + list(theta_star) + list(
        sample_ball(rng, model.param_dim, model.radius, n_probes))
    kappa = diag.coverage_kappa(mdp, instance.behavior, model, featmap, probes)
    pi_star, _, _ = optimal(mdp)
    targets = [pi_star] + [PolicyStack.deterministic(
        rng.integers(0, mdp.num_actions, (mdp.horizon, mdp.num_states)), mdp.num_actions)
        for _ in range(5)]
    c_eff, where = diag.concentrability(mdp, instance.behavior, targets)
    grad_err = max(check_gradient(model, th, featmap.table[i % featmap.table.shape[0]])
                   for i, th in enumerate(sample_ball(rng, model.param_dim, model.radius, 10)))
    return {
        "instance": instance.name,
        "realizability_residual": residual,
        "coverage_kappa_per_step": [float(k) for k in kappa],
        "concentrability_lower_bound": c_eff,
        "concentrability_uncovered": where,
        "gradient_check_max_error": grad_err,
        "probe_note": "coverage is a minimum over probes only; concentrability is a lower bound "
                      "over pi* and 5 random deterministic policies",
    }


def plot(results_csv, kind: str, out_path) -> Path:
    """Render a static SVG; the slope is annotated on log-log gap plots."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(results_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    missing = [c for c in _PLOT_COLUMNS[kind] if c not in header]
    if missing:
        raise ValueError(f"results CSV is missing columns: {', '.join(missing)}")

    plt.rcParams["svg.hashsalt"] = "dfql"
    fig, ax = plt.subplots(figsize=(5, 4))
    if kind == "gap_vs_K_loglog":
        reports = [r for r in rows if r.get("status", "ok") == "ok"]
        by_k: dict[float, list[float]] = {}
        for r in reports:
            by_k.setdefault(float(r["K"]), []).append(float(r["gap"]))
        ks = sorted(by_k)
        means = [float(np.mean(by_k[k])) for k in ks]
        pos = [(k, m) for k, m in zip(ks, means) if m > 0]
        if pos:
            ax.loglog([p[0] for p in pos], [p[1] for p in pos], "o-")
        if len(pos) >= 3:
            slope, se = diag.rate_fit([p[0] for p in pos], [p[1] for p in pos])
            ax.set_title(f"slope {slope:.3f} (se {se:.3f})")
        ax.set_xlabel("K")
        ax.set_ylabel("mean gap")
    elif kind == "validity_vs_beta":
        x = [float(r["beta"]) for r in rows]
        y = [float(r["validity_fraction"]) for r in rows]
        ax.plot(x, y, "o")
        ax.set_xlabel("beta")
        ax.set_ylabel("pessimism validity fraction")
    else:
        if rows:
            h = np.array([int(r["h"]) for r in rows])
            sa = np.array([int(r["s"]) * (1 + max(int(q["a"]) for q in rows)) + int(r["a"])
                           for r in rows])
            grid = np.full((h.max(), sa.max() + 1), np.nan)
            grid[h - 1, sa] = [float(r["sigma2"]) for r in rows]
            im = ax.imshow(grid, aspect="auto", origin="lower")
            fig.colorbar(im, ax=ax, label="sigma^2")
        ax.set_xlabel("state-action index")
        ax.set_ylabel("h")
    out_path = Path(out_path)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path
