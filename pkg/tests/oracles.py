"""Independent reference implementations used to check the library.

Everything here is written with plain Python loops so it shares no code path
with the vectorized implementations under test.
"""

import math

import numpy as np


def naive_gram(grads, weights, ridge):
    grads = np.asarray(grads, dtype=float)
    n, d = grads.shape
    M = [[0.0] * d for _ in range(d)]
    for k in range(n):
        for i in range(d):
            for j in range(d):
                M[i][j] += weights[k] * grads[k][i] * grads[k][j]
    for i in range(d):
        M[i][i] += ridge
    return np.array(M)


def explicit_inverse_bonus(M, g, beta):
    return beta * math.sqrt(float(g @ np.linalg.inv(M) @ g))


def mlp_forward(theta, phi, width):
    m = len(phi)
    out = 0.0
    for j in range(width):
        pre = theta[m * width + j]
        for i in range(m):
            pre += theta[j * m + i] * phi[i]
        out += theta[m * width + width + j] * math.tanh(pre)
    return out + theta[-1]


def pevi_counts(dataset, S, A, ridge, beta):
    """Tabular pessimistic value iteration written with visit counts.

    For one-hot features the ridge solution is the per-pair sample mean
    shrunk by ``n / (n + ridge)`` and the bonus is ``beta / sqrt(n + ridge)``.
    Returns per-step lists of ``theta`` (length ``S*A``) and bonus tables.
    """
    H = dataset.horizon
    V_next = [0.0] * S
    thetas, bonuses = [None] * H, [None] * H
    for h in reversed(range(H)):
        count = [[0] * A for _ in range(S)]
        total = [[0.0] * A for _ in range(S)]
        for k in range(dataset.num_episodes):
            s = int(dataset.states[k, h])
            a = int(dataset.actions[k, h])
            count[s][a] += 1
            total[s][a] += float(dataset.rewards[k, h]) + V_next[int(dataset.states[k, h + 1])]
        theta = [0.0] * (S * A)
        bonus = [[0.0] * A for _ in range(S)]
        V = [0.0] * S
        for s in range(S):
            best = -math.inf
            for a in range(A):
                theta[s * A + a] = total[s][a] / (count[s][a] + ridge)
                bonus[s][a] = beta / math.sqrt(count[s][a] + ridge)
                q = min(max(theta[s * A + a] - bonus[s][a], 0.0), H - h)
                best = max(best, q)
            V[s] = best
        thetas[h] = np.array(theta)
        bonuses[h] = np.array(bonus)
        V_next = V
    return thetas, bonuses


def backward_values(P, r, policy_probs):
    """Policy evaluation with explicit loops; returns ``V[h][s]`` for h = 0..H."""
    H, S, A, _ = P.shape
    V = [[0.0] * S for _ in range(H + 1)]
    for h in reversed(range(H)):
        for s in range(S):
            acc = 0.0
            for a in range(A):
                q = r[h, s, a]
                for t in range(S):
                    q += P[h, s, a, t] * V[h + 1][t]
                acc += policy_probs[h, s, a] * q
            V[h][s] = acc
    return np.array(V)


def brute_concentrability(d_mu, d_pi_list):
    best = 1.0
    for d_pi in d_pi_list:
        H, S, A = d_pi.shape
        for h in range(H):
            tot = 0.0
            for s in range(S):
                for a in range(A):
                    if d_pi[h, s, a] > 0:
                        if d_mu[h, s, a] <= 0:
                            return math.inf
                        tot += d_pi[h, s, a] ** 2 / d_mu[h, s, a]
            best = max(best, tot)
    return best


def is_positive_definite(M):
    try:
        np.linalg.cholesky(M)
        return True
    except np.linalg.LinAlgError:
        return False
