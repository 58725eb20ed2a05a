# %% [markdown]
# # Picking (lam1, lam2)
#
# Cross-validation over a log grid, the one-standard-error rule, and
# AIC/BIC with a block-counting degrees of freedom.

# %%
import numpy as np

from multifused.selection import count_df, make_grid, select, selection_table
from multifused.simulate import SimConfig, generate

train, _ = generate(SimConfig(seed=3))
grid = make_grid(train, 6, 4)
print("lambda1_max =", grid.meta["lambda1_max"])

# %%
table = selection_table(train, grid, folds=4, seed=0, threads=4)
order = np.argsort(table.cv_mean)
print(" lam1      lam2      cv      se     df")
for r in order[:8]:
    print(f"{table.lam1[r]:.4f}  {table.lam2[r]:.4f}  {table.cv_mean[r]:.3f}  "
          f"{table.cv_se[r]:.3f}  {table.df[r]:4d}")

# %%
for rule in ("cv_min", "cv_one_se", "aic", "bic", "aic_mc", "bic_mc"):
    lam1, lam2 = select(table, rule)
    r = int(np.flatnonzero((table.lam1 == lam1) & (table.lam2 == lam2))[0])
    print(f"{rule:10s} lam1={lam1:.4f} lam2={lam2:.4f} df={table.df[r]}")

# %%
# the table is plain CSV for plotting elsewhere
print(table.to_csv().splitlines()[0])
