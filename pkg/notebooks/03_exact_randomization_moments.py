# %% [markdown]
# # Exact randomization moments
#
# For a small population every admissible assignment can be listed.  The
# stratified difference in means is then exactly unbiased, and its
# covariance equals the finite-population formula.

# %%
import numpy as np

from stratfact.simulation import (arm_mean_covariance, assignment_count, enumerate_exact, oracle_moments,
                                  tiny_population)

pop = tiny_population(seed=3, K=2, sizes=(6, 5))
print("assignments:", assignment_count(pop.counts))

# %%
exact = enumerate_exact(pop, "unadj")
moments = oracle_moments(pop)
print("max |E tau_hat - tau|      ", np.max(np.abs(exact.mean - pop.tau)))
print("max |cov - scaled_cov / n|    ", np.max(np.abs(exact.cov - moments.scaled_cov / pop.n)))

# %% [markdown]
# The Neyman bound neyman_limit exceeds the true scaled_cov by the average
# within-stratum variance of unit-level effects.

# %%
print(np.linalg.eigvalsh(moments.neyman_limit - moments.scaled_cov))

# %% [markdown]
# The stratified arm means have a block covariance that can be written
# down directly.

# %%
arms = enumerate_exact(pop, "arm_means")
print(np.max(np.abs(arms.cov - arm_mean_covariance(pop))))
