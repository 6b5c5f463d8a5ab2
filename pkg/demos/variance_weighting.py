"""What the variance estimates of VAFQL look like.

On the two-arm instance one arm leads to a state whose future value is
certain and the other to a coin flip between a rich and a poor state.  The
estimated conditional variance should be 1 (the floor) for the safe arm and
close to the exact value for the risky one.
"""

# %%
from pathlib import Path

import numpy as np

from dfql import harness
from dfql.algos import pfql, vafql
from dfql.diag import suboptimality_gap, true_variance
from dfql.instances import random_mdp, two_arm_variance
from dfql.mdp import rollout
from dfql.models import LinearModel, one_hot_features

out = Path("demo_output/variance")
out.mkdir(parents=True, exist_ok=True)

# %%
inst = two_arm_variance()
f = one_hot_features(4, 2)
model = LinearModel(f.dim, 5 * np.sqrt(f.dim))
D, Dprime = rollout(inst.mdp, inst.behavior, 8000, 0).split_parity()
stack = vafql(D, Dprime, model, f, 1.0, 0.0)
exact = true_variance(inst.mdp, stack.v_table)
print("estimated sigma2 at the start state:", np.round(stack.variance.sigma2[0, 0], 3))
print("exact clipped variance:            ", np.round(exact[0, 0], 3))

# %%
harness.save_stack(stack, out / "two_arm")
harness.plot(out / "two_arm_sigma2.csv", "sigma_heatmap", out / "sigma2.svg")
print("wrote", out / "sigma2.svg")

# %%
# On random(6, 3, 5) the next-step value never varies by more than 1, so the
# floor max{1, .} is active everywhere and VAFQL reduces to PFQL exactly.
inst = random_mdp(6, 3, 5, seed=0, reward_noise="bernoulli")
f = one_hot_features(6, 3)
model = LinearModel(f.dim, 5 * np.sqrt(f.dim))
D, Dprime = harness.generate_data(inst, 10_000, 0, "vafql")
va = vafql(D, Dprime, model, f, 1.0, 0.5)
pf = pfql(D, model, f, 1.0, 0.5)
print("max sigma2 on random(6,3,5):", va.variance.sigma2.max())
print("gaps PFQL / VAFQL:", suboptimality_gap(inst.mdp, pf), suboptimality_gap(inst.mdp, va))
