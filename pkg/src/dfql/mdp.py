"""Finite tabular episodic MDPs, exact dynamic programming and logged data.

Step indices are 0-based in every array (``h = 0`` is the first step); the
CSV serialization uses 1-based steps.  Arrays carried by the value objects
are marked read-only after construction.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REWARD_NOISE_MODES = ("none", "bernoulli")
DATASET_HEADER = ("episode", "h", "s", "a", "r", "s_next")

_PROB_TOL = 1e-12


def _frozen(array, dtype=float):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class EpisodicMDP:
    """Time-inhomogeneous tabular MDP.

    ``transitions`` has shape ``(H, S, A, S)``, ``rewards`` shape ``(H, S, A)``
    with mean rewards in ``[0, 1]`` and ``initial_dist`` shape ``(S,)``.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    initial_dist: np.ndarray
    reward_noise: str = "none"

    def __post_init__(self):
        P = _frozen(self.transitions)
        r = _frozen(self.rewards)
        d1 = _frozen(self.initial_dist)
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise ValueError(f"transitions must have shape (H, S, A, S), got {P.shape}")
        if r.shape != P.shape[:3]:
            raise ValueError(f"rewards must have shape {P.shape[:3]}, got {r.shape}")
        if d1.shape != (P.shape[1],):
            raise ValueError(f"initial_dist must have shape ({P.shape[1]},), got {d1.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=-1) - 1.0)) > _PROB_TOL:
            raise ValueError("every transition row must be a probability vector")
        if np.any(d1 < 0) or abs(d1.sum() - 1.0) > _PROB_TOL:
            raise ValueError("initial_dist must be a probability vector")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("mean rewards must lie in [0, 1]")
        if self.reward_noise not in REWARD_NOISE_MODES:
            raise ValueError(f"reward_noise must be one of {REWARD_NOISE_MODES}")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "initial_dist", d1)

    @property
    def horizon(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[2]

    @property
    def is_deterministic(self) -> bool:
        """True when transitions, rewards and the start state are all non-random."""
        det_p = np.all((self.transitions == 0) | (self.transitions == 1))
        det_d = np.all((self.initial_dist == 0) | (self.initial_dist == 1))
        det_r = self.reward_noise == "none" or np.all((self.rewards == 0) | (self.rewards == 1))
        return bool(det_p and det_d and det_r)

    def to_dict(self) -> dict:
        return {
            "format": "dfql-mdp/1",
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "horizon": self.horizon,
            "reward_noise": self.reward_noise,
            "transitions": self.transitions.ravel().tolist(),
            "rewards": self.rewards.ravel().tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EpisodicMDP":
        S, A, H = int(doc["num_states"]), int(doc["num_actions"]), int(doc["horizon"])
        return cls(
            transitions=np.asarray(doc["transitions"], dtype=float).reshape(H, S, A, S),
            rewards=np.asarray(doc["rewards"], dtype=float).reshape(H, S, A),
            initial_dist=np.asarray(doc["initial_dist"], dtype=float),
            reward_noise=doc.get("reward_noise", "none"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "EpisodicMDP":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class PolicyStack:
    """Per-step stochastic policy stored as probabilities of shape ``(H, S, A)``.

    Deterministic policies are the special case of one-hot rows.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 3:
            raise ValueError(f"policy probabilities must have shape (H, S, A), got {p.shape}")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=-1) - 1.0)) > _PROB_TOL:
            raise ValueError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", p)

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "PolicyStack":
        actions = np.asarray(actions, dtype=int)
        if actions.ndim != 2:
            raise ValueError("deterministic actions must have shape (H, S)")
        if np.any(actions < 0) or np.any(actions >= num_actions):
            raise ValueError("action index out of range")
        return cls(np.eye(num_actions)[actions])

    @classmethod
    def uniform(cls, horizon: int, num_states: int, num_actions: int) -> "PolicyStack":
        return cls(np.full((horizon, num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def epsilon_greedy(cls, base: "PolicyStack", epsilon: float) -> "PolicyStack":
        """Mix ``base`` with the uniform policy: ``(1 - eps) * base + eps / A``."""
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        A = base.num_actions
        return cls((1.0 - epsilon) * base.probs + epsilon / A)

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]

    @property
    def num_states(self) -> int:
        return self.probs.shape[1]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[2]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))

    def actions(self) -> np.ndarray:
        """Greedy action table ``(H, S)``; lowest index wins ties."""
        return np.argmax(self.probs, axis=-1)


@dataclass(frozen=True, eq=False)
class ValueStack:
    """``Q`` of shape ``(H + 1, S, A)`` and ``V`` of shape ``(H + 1, S)``; the last step is zero."""

    Q: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", _frozen(self.Q))
        object.__setattr__(self, "V", _frozen(self.V))


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    """K logged episodes.

    ``states`` has shape ``(K, H + 1)`` (the last column holds the final
    next-state), ``actions`` and ``rewards`` have shape ``(K, H)``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    seed: int | None = None
    behavior_tag: str = ""

    def __post_init__(self):
        s = _frozen(self.states, dtype=np.int64)
        a = _frozen(self.actions, dtype=np.int64)
        r = _frozen(self.rewards)
        if a.ndim != 2 or s.shape != (a.shape[0], a.shape[1] + 1) or r.shape != a.shape:
            raise ValueError("inconsistent dataset shapes")
        if a.shape[0] < 1:
            raise ValueError("dataset needs at least one episode")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "rewards", r)

    @property
    def num_episodes(self) -> int:
        return self.actions.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    def step(self, h: int):
        """Return ``(s, a, r, s_next)`` arrays for 0-based step ``h``."""
        return self.states[:, h], self.actions[:, h], self.rewards[:, h], self.states[:, h + 1]

    def check_against(self, mdp: EpisodicMDP) -> None:
        if self.horizon != mdp.horizon:
            raise ValueError(f"dataset horizon {self.horizon} != MDP horizon {mdp.horizon}")
        if self.states.min() < 0 or self.states.max() >= mdp.num_states:
            raise ValueError("state index out of range")
        if self.actions.min() < 0 or self.actions.max() >= mdp.num_actions:
            raise ValueError("action index out of range")

    def subset(self, episodes) -> "OfflineDataset":
        idx = np.asarray(episodes)
        return OfflineDataset(self.states[idx], self.actions[idx], self.rewards[idx],
                              self.seed, self.behavior_tag)

    def split_parity(self) -> tuple["OfflineDataset", "OfflineDataset"]:
        """Split into (even-indexed, odd-indexed) episodes."""
        K = self.num_episodes
        return self.subset(np.arange(0, K, 2)), self.subset(np.arange(1, K, 2))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        K, H = self.actions.shape
        for k in range(K):
            for h in range(H):
                writer.writerow((k, h + 1, int(self.states[k, h]), int(self.actions[k, h]),
                                 f"{self.rewards[k, h]:.17g}", int(self.states[k, h + 1])))
        return buf.getvalue()

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, seed=None, behavior_tag: str = "") -> "OfflineDataset":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != DATASET_HEADER:
            raise ValueError(f"dataset CSV must start with header {','.join(DATASET_HEADER)}")
        body = rows[1:]
        if not body:
            raise ValueError("dataset CSV has no transitions")
        episodes = np.array([int(r[0]) for r in body])
        K = episodes.max() + 1
        H = len(body) // K
        if H * K != len(body):
            raise ValueError("every episode must have the same number of transitions")
        cur = np.zeros((K, H), dtype=np.int64)
        nxt = np.zeros((K, H), dtype=np.int64)
        actions = np.zeros((K, H), dtype=np.int64)
        rewards = np.zeros((K, H))
        seen = np.zeros((K, H), dtype=bool)
        for ep, h, s, a, r, s_next in body:
            k, h = int(ep), int(h) - 1
            if not 0 <= h < H or seen[k, h]:
                raise ValueError(f"bad step index in episode {k}")
            seen[k, h] = True
            cur[k, h], actions[k, h], rewards[k, h], nxt[k, h] = int(s), int(a), float(r), int(s_next)
        if np.any(cur[:, 1:] != nxt[:, :-1]):
            raise ValueError("episodes are not contiguous: s differs from previous s_next")
        states = np.concatenate([cur, nxt[:, -1:]], axis=1)
        return cls(states, actions, rewards, seed, behavior_tag)

    @classmethod
    def load_csv(cls, path, **kwargs) -> "OfflineDataset":
        with open(path, newline="") as fh:
            return cls.from_csv(fh.read(), **kwargs)


def _check_policy(mdp: EpisodicMDP, policy: PolicyStack) -> None:
    expected = (mdp.horizon, mdp.num_states, mdp.num_actions)
    if policy.probs.shape != expected:
        raise ValueError(f"policy shape {policy.probs.shape} does not match MDP {expected}")


def exact_value(mdp: EpisodicMDP, policy: PolicyStack) -> tuple[ValueStack, float]:
    """Backward policy evaluation; returns the value stack and ``<d1, V_1>``."""
    _check_policy(mdp, policy)
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    Q = np.zeros((H + 1, S, A))
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.rewards[h] + mdp.transitions[h] @ V[h + 1]
        V[h] = np.sum(policy.probs[h] * Q[h], axis=-1)
    return ValueStack(Q, V), float(mdp.initial_dist @ V[0])


def optimal(mdp: EpisodicMDP) -> tuple[PolicyStack, ValueStack, float]:
    """Bellman optimality recursion with lowest-index tie-breaking."""
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    Q = np.zeros((H + 1, S, A))
    V = np.zeros((H + 1, S))
    greedy = np.zeros((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.rewards[h] + mdp.transitions[h] @ V[h + 1]
        greedy[h] = np.argmax(Q[h], axis=-1)
        V[h] = Q[h].max(axis=-1)
    return PolicyStack.deterministic(greedy, A), ValueStack(Q, V), float(mdp.initial_dist @ V[0])


def bellman_residual(mdp: EpisodicMDP, values: ValueStack) -> float:
    """max over (h, s, a) of |Q_h - r_h - P_h V_{h+1}|."""
    H = mdp.horizon
    backup = mdp.rewards + np.einsum("hsat,ht->hsa", mdp.transitions, values.V[1:H + 1])
    return float(np.max(np.abs(values.Q[:H] - backup)))


def occupancy(mdp: EpisodicMDP, policy: PolicyStack) -> np.ndarray:
    """State-action marginals ``d_h(s, a)``, shape ``(H, S, A)``."""
    _check_policy(mdp, policy)
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    d = np.zeros((H, S, A))
    d[0] = mdp.initial_dist[:, None] * policy.probs[0]
    for h in range(H - 1):
        next_states = np.einsum("sa,sat->t", d[h], mdp.transitions[h])
        d[h + 1] = next_states[:, None] * policy.probs[h + 1]
    return d


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    # inverse-CDF sampling of one index per row of ``probs``
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])
    idx = np.sum(u[:, None] >= cdf, axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _simulate(mdp: EpisodicMDP, policy: PolicyStack, n: int, rng: np.random.Generator):
    H = mdp.horizon
    states = np.zeros((n, H + 1), dtype=np.int64)
    actions = np.zeros((n, H), dtype=np.int64)
    rewards = np.zeros((n, H))
    states[:, 0] = _categorical(rng, np.broadcast_to(mdp.initial_dist, (n, mdp.num_states)))
    for h in range(H):
        s = states[:, h]
        a = _categorical(rng, policy.probs[h, s])
        mean = mdp.rewards[h, s, a]
        if mdp.reward_noise == "bernoulli":
            rewards[:, h] = (rng.random(n) < mean).astype(float)
        else:
            rewards[:, h] = mean
        actions[:, h] = a
        states[:, h + 1] = _categorical(rng, mdp.transitions[h, s, a])
    return states, actions, rewards


def rollout(mdp: EpisodicMDP, behavior: PolicyStack, K: int, seed: int,
            behavior_tag: str = "") -> OfflineDataset:
    """Sample K independent episodes with ``behavior``; reproducible given ``seed``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    _check_policy(mdp, behavior)
    rng = np.random.default_rng(seed)
    states, actions, rewards = _simulate(mdp, behavior, K, rng)
    return OfflineDataset(states, actions, rewards, seed, behavior_tag)


def monte_carlo_value(mdp: EpisodicMDP, policy: PolicyStack, n: int, seed: int,
                      chunk: int = 100_000) -> tuple[float, float]:
    """Mean episodic return over ``n`` rollouts and its standard error."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_policy(mdp, policy)
    rng = np.random.default_rng(seed)
    # Chan et al. pairwise update of (count, mean, M2) across chunks
    mean, m2, done = 0.0, 0.0, 0
    while done < n:
        m = min(chunk, n - done)
        _, _, rewards = _simulate(mdp, policy, m, rng)
        returns = rewards.sum(axis=1)
        c_mean = float(returns.mean())
        c_m2 = float(np.sum((returns - c_mean) ** 2))
        delta = c_mean - mean
        total = done + m
        mean += delta * m / total
        m2 += c_m2 + delta * delta * done * m / total
        done = total
    if n == 1:
        return float(mean), 0.0
    return float(mean), float(np.sqrt(m2 / (n - 1) / n))


def empirical_occupancy(dataset: OfflineDataset, num_states: int, num_actions: int) -> np.ndarray:
    """Visit frequencies ``(H, S, A)`` of the logged (s, a) pairs."""
    H = dataset.horizon
    counts = np.zeros((H, num_states, num_actions))
    for h in range(H):
        np.add.at(counts[h], (dataset.states[:, h], dataset.actions[:, h]), 1.0)
    return counts / dataset.num_episodes


@dataclass(frozen=True)
class Instance:
    """A named MDP together with its canonical behavior policy."""

    name: str
    mdp: EpisodicMDP
    behavior: PolicyStack
    params: dict = field(default_factory=dict)
