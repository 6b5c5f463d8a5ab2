"""How large does the bonus have to be before it covers the Bellman error?

Fits PFQL once per seed, then sweeps the bonus scale with the fits frozen and
checks, against the exact Bellman backup, how many (h, s, a) cells the bonus
covers.
"""

# %%
import csv
from pathlib import Path

import numpy as np

from dfql import diag
from dfql.algos import default_beta, pfql, rebonus
from dfql.instances import random_mdp
from dfql.mdp import rollout
from dfql.models import LinearModel, one_hot_features

out = Path("demo_output/validity")
out.mkdir(parents=True, exist_ok=True)
inst = random_mdp(5, 3, 4, seed=0, reward_noise="bernoulli")
f = one_hot_features(5, 3)
model = LinearModel(f.dim, 4 * np.sqrt(f.dim))
K = 2000

# %%
betas = np.geomspace(0.01, 100, 13)
rows = []
for seed in range(5):
    stack = pfql(rollout(inst.mdp, inst.behavior, K, seed), model, f, 1.0, 0.0)
    for beta in betas:
        frac, worst = diag.pessimism_validity(inst.mdp, rebonus(stack, float(beta)))
        rows.append((seed, beta, frac, worst))

# %%
for beta in betas:
    fr = [r[2] for r in rows if r[1] == beta]
    print(f"beta {beta:8.3f}  mean covered fraction {np.mean(fr):.3f}")
print("practical beta (c=1):", round(default_beta(f.dim, 4, K), 2))
print("theory beta:", round(default_beta(f.dim, 4, K, "theory"), 1))

# %%
with open(out / "validity.csv", "w", newline="") as fh:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("seed", "beta", "validity_fraction", "validity_worst_excess"))
    w.writerows((s, f"{b:.17g}", f"{fr:.17g}", f"{wo:.17g}") for s, b, fr, wo in rows)

from dfql.harness import plot  # noqa: E402

plot(out / "validity.csv", "validity_vs_beta", out / "validity_vs_beta.svg")
print("wrote", out / "validity_vs_beta.svg")
