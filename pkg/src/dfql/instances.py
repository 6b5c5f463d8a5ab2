"""Built-in tabular instances, each with a canonical behavior policy.

Behavior policies are epsilon-greedy around the optimal policy (``epsilon``
defaults to 0.3), so every (s, a) pair reachable under the behavior has
positive probability and one-hot coverage is strictly positive there.
"""

from __future__ import annotations

import numpy as np

from .mdp import EpisodicMDP, Instance, PolicyStack, optimal

EXIT, ADVANCE = 0, 1


def _with_behavior(name, mdp, epsilon, params):
    pi_star, _, _ = optimal(mdp)
    behavior = PolicyStack.epsilon_greedy(pi_star, epsilon)
    return Instance(name, mdp, behavior, {**params, "epsilon": epsilon})


def chain(S: int, H: int, goal_reward: float = 1.0, temptation: float = 0.5, decay: float = 0.5,
          slip: float = 0.0, reward_noise: str = "bernoulli", epsilon: float = 0.3) -> Instance:
    """Chain with a goal reward at the far end and graded early exits.

    States ``0 .. S-2`` form the chain and ``S-1`` is an absorbing terminal
    state with zero reward.  Episodes start in state 0.  Action 1 advances
    one state (staying put with probability ``slip``); advancing out of
    ``S-2`` enters the terminal state and pays ``goal_reward``.  Action 0
    exits to the terminal state from chain state ``s`` paying
    ``max(0, goal_reward - temptation * decay**s)``, so later exits are
    closer in value to the goal.  With ``slip = 0`` and ``H >= S - 1`` the
    goal is reachable and ``v* = goal_reward``.
    """
    if S < 2 or H < 1:
        raise ValueError("chain needs S >= 2 and H >= 1")
    A = 2
    goal = S - 1
    P = np.zeros((H, S, A, S))
    r = np.zeros((H, S, A))
    for s in range(S - 1):
        P[:, s, EXIT, goal] = 1.0
        P[:, s, ADVANCE, s + 1] = 1.0 - slip
        P[:, s, ADVANCE, s] += slip
        r[:, s, EXIT] = max(0.0, goal_reward - temptation * decay ** s)
        if s == S - 2:
            r[:, s, ADVANCE] = goal_reward
    P[:, goal, :, goal] = 1.0
    d1 = np.eye(S)[0]
    mdp = EpisodicMDP(P, r, d1, reward_noise)
    return _with_behavior("chain", mdp, epsilon, {"S": S, "H": H, "goal_reward": goal_reward,
                                                  "temptation": temptation,
                                                  "decay": decay, "slip": slip, "reward_noise": reward_noise})


def two_arm_variance(H: int = 5, epsilon: float = 0.3) -> Instance:
    """Two arms with equal means and next-step value variance 0 vs maximal.

    State 0 is the start.  Arm 0 moves to the ``mid`` state (1), arm 1 moves
    to ``high`` (2) or ``low`` (3) with probability 1/2 each.  From step 2 on
    the high state pays 1, the mid state 1/2 and the low state 0 for every
    action; all states there are absorbing.  Both arms are worth
    ``(H - 1) / 2``; the conditional variance of the next value is 0 for arm
    0 and ``((H - 1) / 2)^2`` for arm 1.
    """
    if H < 2:
        raise ValueError("two_arm_variance needs H >= 2 so that next-step values differ")
    S, A = 4, 2
    P = np.zeros((H, S, A, S))
    r = np.zeros((H, S, A))
    P[:, 0, 0, 1] = 1.0
    P[:, 0, 1, 2] = 0.5
    P[:, 0, 1, 3] = 0.5
    for s in (1, 2, 3):
        P[:, s, :, s] = 1.0
    r[1:, 1, :] = 0.5
    r[1:, 2, :] = 1.0
    mdp = EpisodicMDP(P, r, np.eye(S)[0], "none")
    return _with_behavior("two_arm_variance", mdp, epsilon, {"H": H})


def random_mdp(S: int, A: int, H: int, seed: int = 0, reward_noise: str = "none",
               epsilon: float = 0.3) -> Instance:
    """Dirichlet(1) transition rows and initial distribution, Uniform(0, 1) mean rewards."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(H, S, A))
    P /= P.sum(axis=-1, keepdims=True)
    r = rng.random((H, S, A))
    d1 = rng.dirichlet(np.ones(S))
    d1 /= d1.sum()
    mdp = EpisodicMDP(P, r, d1, reward_noise)
    return _with_behavior("random", mdp, epsilon, {"S": S, "A": A, "H": H, "seed": seed,
                                                   "reward_noise": reward_noise})


def cliff(S: int, H: int, slip: float = 0.1, safe_reward: float = 0.2,
          epsilon: float = 0.3) -> Instance:
    """Cliff walk: a risky path to a goal next to an absorbing zero-reward pit.

    States ``0 .. S-2`` are the path, ``S-1`` is the pit.  Action 0 (safe)
    stays in place and pays ``safe_reward``.  Action 1 (risky) moves right
    with probability ``1 - slip`` and falls into the pit otherwise; at the
    last path state it pays 1 and stays.  Falling forfeits all future reward.
    """
    if S < 3:
        raise ValueError("cliff needs S >= 3")
    A = 2
    pit = S - 1
    last = S - 2
    P = np.zeros((H, S, A, S))
    r = np.zeros((H, S, A))
    for s in range(last):
        P[:, s, 0, s] = 1.0
        P[:, s, 1, s + 1] = 1.0 - slip
        P[:, s, 1, pit] = slip
        r[:, s, 0] = safe_reward
    P[:, last, :, last] = 1.0
    r[:, last, 0] = safe_reward
    r[:, last, 1] = 1.0
    P[:, pit, :, pit] = 1.0
    mdp = EpisodicMDP(P, r, np.eye(S)[0], "none")
    return _with_behavior("cliff", mdp, epsilon, {"S": S, "H": H, "slip": slip,
                                                  "safe_reward": safe_reward})


def zero_reward(S: int = 3, A: int = 2, H: int = 3, seed: int = 0, epsilon: float = 0.3) -> Instance:
    """Random transitions with identically zero rewards."""
    base = random_mdp(S, A, H, seed, epsilon=epsilon).mdp
    mdp = EpisodicMDP(base.transitions, np.zeros_like(base.rewards), base.initial_dist)
    return _with_behavior("zero_reward", mdp, epsilon, {"S": S, "A": A, "H": H, "seed": seed})


_BUILDERS = {
    "chain": chain,
    "two_arm_variance": two_arm_variance,
    "random": random_mdp,
    "cliff": cliff,
    "zero_reward": zero_reward,
}


def built_in_instances(name: str, **params) -> Instance:
    """Look up a built-in instance by name and build it with ``params``."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown instance {name!r}; valid names: {', '.join(sorted(_BUILDERS))}")
    return builder(**params)


def instance_names() -> list[str]:
    return sorted(_BUILDERS)
