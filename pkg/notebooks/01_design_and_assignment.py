# %% [markdown]
# # Factorial designs and stratified assignment
#
# A 2^K design has Q = 2^K arms and Q - 1 factorial effects.  Each effect
# is a +/-1 contrast over the arms; the rows of `G` are those contrasts.

# %%
import numpy as np

from stratfact.design import AssignmentPlan, assign_treatments, build_design

design = build_design(3)
print(design.effect_labels)
print(design.G)

# %% [markdown]
# The rows are orthogonal with squared norm Q, and interaction rows are
# elementwise products of main-effect rows.

# %%
G = design.G.astype(int)
print(G @ G.T)
print(np.array_equal(G[3], G[0] * G[1]))

# %% [markdown]
# An assignment plan fixes how many units of each stratum go to each arm.
# Each stratum is shuffled with its own substream, so adding a stratum
# does not change the others.

# %%
plan = AssignmentPlan.from_counts([[2, 2, 2, 2, 1, 1, 1, 1], [1] * 8], seed=42, stratum_ids=["north", "south"])
z = assign_treatments(plan)
print(z + 1)

# %% [markdown]
# Over many seeds each unit lands in arm q with probability n_mq / n_m.

# %%
small = np.array([[1, 3]])
hits = np.zeros((4, 2))
for seed in range(20000):
    z = assign_treatments(AssignmentPlan.from_counts(small, seed))
    hits[np.arange(4), z] += 1
print(hits / 20000)
