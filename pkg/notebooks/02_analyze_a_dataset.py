# %% [markdown]
# # Analysing an observed experiment
#
# We draw one experiment from a simulated population, write it to CSV and
# analyse it the same way a real dataset would be analysed.

# %%
import io

from stratfact.dataset import ingest_csv, summarize, write_csv
from stratfact.estimators import estimate
from stratfact.inference import wald_intervals, wald_region
from stratfact.simulation import generate_scenario

pop = generate_scenario(1, seed=7)
observed = pop.observe(pop.assign(seed=11))
buffer = io.StringIO()
write_csv(observed, buffer)
print(buffer.getvalue()[:200])

# %%
data = ingest_csv(buffer.getvalue().encode(), pop.design)
summ = summarize(data)
print(data.n, "units,", data.M, "strata,", data.p, "covariates")

# %% [markdown]
# Twelve units per stratum and three per cell are too few for separate
# regressions in every cell, so we compare the unadjusted estimator with
# the two pooled adjustments.

# %%
for method in ("unadj", "adj", "cond"):
    est = estimate(summ, method)
    ivs = wald_intervals(est, alpha=0.05)
    region = wald_region(est, alpha=0.05, effects=[0, 1])
    print(method, [f"{iv.label}: {iv.estimate:+.3f} [{iv.lo:+.3f}, {iv.hi:+.3f}]" for iv in ivs],
          f"main-effect ellipse area {region.area:.4f}")
print("true effects", pop.tau.round(3))

# %% [markdown]
# The same analysis from the shell:
#
#     stratfact analyze --data data.csv --k 2 --method unadj,adj,cond --out result.json
