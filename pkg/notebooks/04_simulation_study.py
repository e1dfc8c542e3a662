# %% [markdown]
# # Monte Carlo comparison of the estimators
#
# Four scenarios: many small strata, two large homogeneous strata, two
# large heterogeneous strata, and strata with unequal propensities.  Set
# `REPS = 10000` for full-length runs; the default keeps this quick.

# %%
import os

from stratfact.simulation import generate_scenario, run_monte_carlo

REPS = int(os.environ.get("REPS", "500"))
SEED = 2024


def show(table):
    for row in table.rows:
        print(f"{row['label']:6s} {row['method']:6s} rmse ratio {row['rmse_ratio']:.3f}  cp {row['cp']:.3f}")
    for method, reg in table.regions.items():
        print(f"{method:6s} area ratio {reg['area_ratio']:.3f}")
    for method, reason in table.absent.items():
        print(f"{method:6s} skipped: {reason}")


# %%
for case in (1, 2, 3, 4):
    pop = generate_scenario(case, SEED)
    print(f"\ncase {case}: n={pop.n}, M={pop.M}")
    show(run_monte_carlo(pop, reps=REPS, master_seed=SEED))

# %% [markdown]
# From the shell, with per-replication draws for plotting:
#
#     stratfact simulate --case 3 --reps 10000 --seed 2024 --out case3.json --emit-draws case3.csv
