"""Feature maps and differentiable parametric models f(theta, phi).

Every model exposes batched ``value(theta, Phi)`` and ``jacobian(theta, Phi)``
(rows of ``Phi`` are feature vectors) plus the single-point ``eval``/``grad``
wrappers.  Only first derivatives are provided.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

LINKS = ("identity", "sigmoid", "tanh")


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Tabulated feature map over a finite ``S x A`` grid.

    Row ``s * A + a`` of ``table`` is ``phi(s, a)``.
    """

    table: np.ndarray
    num_states: int
    num_actions: int

    def __post_init__(self):
        t = np.array(self.table, dtype=float, copy=True)
        if t.ndim != 2 or t.shape[0] != self.num_states * self.num_actions:
            raise ValueError(f"feature table must have shape (S*A, m), got {t.shape}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def phi_max(self) -> float:
        return float(np.max(np.linalg.norm(self.table, axis=1)))

    def __call__(self, s: int, a: int) -> np.ndarray:
        return self.table[s * self.num_actions + a]

    def rows(self, states, actions) -> np.ndarray:
        """Feature matrix for paired arrays of states and actions."""
        return self.table[np.asarray(states) * self.num_actions + np.asarray(actions)]

    def gram(self, weights) -> np.ndarray:
        """``sum_{s,a} w(s,a) phi phi^T`` for weights of shape ``(S, A)``."""
        w = np.asarray(weights, dtype=float).ravel()
        return (self.table * w[:, None]).T @ self.table


def one_hot_features(num_states: int, num_actions: int) -> FeatureMap:
    return FeatureMap(np.eye(num_states * num_actions), num_states, num_actions)


def random_features(num_states: int, num_actions: int, dim: int, seed: int,
                    max_norm: float = 1.0) -> FeatureMap:
    """Gaussian features rescaled to lie on the sphere of radius ``max_norm``."""
    rng = np.random.default_rng(seed)
    t = rng.standard_normal((num_states * num_actions, dim))
    t *= max_norm / np.linalg.norm(t, axis=1, keepdims=True)
    return FeatureMap(t, num_states, num_actions)


class DifferentiableModel:
    """Base class; subclasses implement ``value`` and ``jacobian``."""

    kind = "abstract"

    def __init__(self, param_dim: int, feature_dim: int, radius: float, value_bound: float):
        if radius <= 0:
            raise ValueError("parameter radius must be positive")
        self.param_dim = int(param_dim)
        self.feature_dim = int(feature_dim)
        self.radius = float(radius)
        self.value_bound = float(value_bound)

    def _check(self, theta, Phi):
        theta = np.asarray(theta, dtype=float)
        Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
        if theta.shape != (self.param_dim,):
            raise ValueError(f"{self.kind} model expects theta of shape ({self.param_dim},), "
                             f"got {theta.shape}")
        if Phi.shape[1] != self.feature_dim:
            raise ValueError(f"{self.kind} model expects features of dim {self.feature_dim}, "
                             f"got {Phi.shape[1]}")
        if np.linalg.norm(theta) > self.radius * (1 + 1e-9):
            log.debug("theta norm %.4g exceeds radius %.4g", np.linalg.norm(theta), self.radius)
        return theta, Phi

    def value(self, theta, Phi) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, theta, Phi) -> np.ndarray:
        raise NotImplementedError

    def eval(self, theta, phi) -> float:
        return float(self.value(theta, phi)[0])

    def grad(self, theta, phi) -> np.ndarray:
        return self.jacobian(theta, phi)[0]

    def project(self, theta) -> np.ndarray:
        return project(self, theta)

    def grad_bound(self, Phi, n_probes: int = 200, seed: int = 0) -> float:
        """Sampled estimate of kappa_1 = sup ||grad f|| over the parameter ball."""
        rng = np.random.default_rng(seed)
        best = 0.0
        for theta in sample_ball(rng, self.param_dim, self.radius, n_probes):
            best = max(best, float(np.max(np.linalg.norm(self.jacobian(theta, Phi), axis=1))))
        return best

    def describe(self) -> dict:
        return {"kind": self.kind, "param_dim": self.param_dim, "feature_dim": self.feature_dim,
                "radius": self.radius, "value_bound": self.value_bound}


class LinearModel(DifferentiableModel):
    """f(theta, phi) = <theta, phi>."""

    kind = "linear"

    def __init__(self, dim: int, radius: float, phi_max: float = 1.0):
        super().__init__(dim, dim, radius, radius * phi_max)

    def value(self, theta, Phi):
        theta, Phi = self._check(theta, Phi)
        return Phi @ theta

    def jacobian(self, theta, Phi):
        theta, Phi = self._check(theta, Phi)
        return Phi.copy()


class GLMModel(DifferentiableModel):
    """f(theta, phi) = link(<theta, phi>).

    ``sigmoid``: scale * sigma(z); ``tanh``: scale * (1 + tanh z) / 2;
    ``identity``: z.  The scaled links have range ``[0, scale]``.
    """

    kind = "glm"

    def __init__(self, dim: int, radius: float, link: str = "sigmoid", scale: float = 1.0,
                 phi_max: float = 1.0):
        if link not in LINKS:
            raise ValueError(f"unknown link {link!r}; choose from {LINKS}")
        bound = radius * phi_max if link == "identity" else scale
        super().__init__(dim, dim, radius, bound)
        self.link = link
        self.scale = float(scale)

    def link_value(self, z):
        z = np.asarray(z, dtype=float)
        if self.link == "sigmoid":
            return self.scale * _sigmoid(z)
        if self.link == "tanh":
            return self.scale * 0.5 * (1.0 + np.tanh(z))
        return z

    def link_slope(self, z):
        z = np.asarray(z, dtype=float)
        if self.link == "sigmoid":
            s = _sigmoid(z)
            return self.scale * s * (1.0 - s)
        if self.link == "tanh":
            return self.scale * 0.5 / np.cosh(z) ** 2
        return np.ones_like(z)

    def value(self, theta, Phi):
        theta, Phi = self._check(theta, Phi)
        return self.link_value(Phi @ theta)

    def jacobian(self, theta, Phi):
        theta, Phi = self._check(theta, Phi)
        return self.link_slope(Phi @ theta)[:, None] * Phi

    def describe(self):
        return {**super().describe(), "link": self.link, "scale": self.scale}


def _sigmoid(z):
    # numerically stable logistic
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MLPModel(DifferentiableModel):
    """One hidden tanh layer: f = w2 . tanh(W1 phi + b1) + b2.

    theta is the concatenation ``[W1.ravel(), b1, w2, b2]`` with ``W1`` of
    shape ``(width, m)``.
    """

    kind = "mlp"

    def __init__(self, feature_dim: int, width: int, radius: float):
        self.width = int(width)
        d = self.width * feature_dim + 2 * self.width + 1
        # |f| <= ||w2||_1 + |b2| <= sqrt(width + 1) * ||theta||
        super().__init__(d, feature_dim, radius, np.sqrt(self.width + 1) * radius)

    def unpack(self, theta):
        m, w = self.feature_dim, self.width
        W1 = theta[: w * m].reshape(w, m)
        b1 = theta[w * m: w * m + w]
        w2 = theta[w * m + w: w * m + 2 * w]
        b2 = theta[-1]
        return W1, b1, w2, b2

    def value(self, theta, Phi):
        theta, Phi = self._check(theta, Phi)
        W1, b1, w2, b2 = self.unpack(theta)
        return np.tanh(Phi @ W1.T + b1) @ w2 + b2

    def jacobian(self, theta, Phi):
        theta, Phi = self._check(theta, Phi)
        W1, b1, w2, _ = self.unpack(theta)
        hidden = np.tanh(Phi @ W1.T + b1)          # (n, w)
        delta = (1.0 - hidden ** 2) * w2           # d f / d pre-activation
        n = Phi.shape[0]
        dW1 = delta[:, :, None] * Phi[:, None, :]  # (n, w, m)
        return np.concatenate(
            [dW1.reshape(n, -1), delta, hidden, np.ones((n, 1))], axis=1)

    def describe(self):
        return {**super().describe(), "width": self.width}


def sample_ball(rng: np.random.Generator, dim: int, radius: float, n: int) -> np.ndarray:
    """``n`` points drawn uniformly from the Euclidean ball of ``radius``."""
    x = rng.standard_normal((n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * (radius * rng.random(n) ** (1.0 / dim))[:, None]


def project(model: DifferentiableModel, theta) -> np.ndarray:
    """Radial projection onto ``||theta|| <= C_Theta``."""
    theta = np.asarray(theta, dtype=float)
    norm = np.linalg.norm(theta)
    if norm <= model.radius:
        return theta.copy()
    out = theta * (model.radius / norm)
    # rounding can leave the norm an ulp above the radius, which would break idempotence
    while np.linalg.norm(out) > model.radius:
        out *= 1.0 - np.finfo(float).eps
    return out


def check_gradient(model: DifferentiableModel, theta, phi, step: float = 1e-5,
                   grad_fn=None) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``grad_fn(theta, phi)`` overrides ``model.grad`` (used to test the detector).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=float)
    analytic = (grad_fn or model.grad)(theta, phi)
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        numeric[i] = (model.eval(theta + e, phi) - model.eval(theta - e, phi)) / (2 * step)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def default_radius(kind: str, param_dim: int, horizon: int = 1, num_pairs: int = 1) -> float:
    """C_Theta defaults: ``H * sqrt(S*A)`` for linear one-hot, ``10 * sqrt(d)`` otherwise."""
    if kind == "linear":
        return horizon * np.sqrt(num_pairs)
    return 10.0 * np.sqrt(param_dim)


def build_model(spec: dict, featmap: FeatureMap, horizon: int) -> DifferentiableModel:
    """Construct a model from an experiment-config model block."""
    kind = spec.get("kind", "linear")
    m = featmap.dim
    pairs = featmap.num_states * featmap.num_actions
    if kind == "linear":
        radius = spec.get("radius") or default_radius("linear", m, horizon, pairs)
        return LinearModel(m, radius, featmap.phi_max)
    if kind == "glm":
        radius = spec.get("radius") or default_radius("glm", m)
        return GLMModel(m, radius, spec.get("link", "sigmoid"), spec.get("scale", horizon),
                        featmap.phi_max)
    if kind == "mlp":
        width = int(spec.get("width", 8))
        d = width * m + 2 * width + 1
        radius = spec.get("radius") or default_radius("mlp", d)
        return MLPModel(m, width, radius)
    raise ValueError(f"unknown model kind {kind!r}; choose from linear, glm, mlp")
