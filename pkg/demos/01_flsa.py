# %% [markdown]
# # The fused lasso signal approximator
#
# Each slope trajectory in the solver is updated by one call to this
# routine, so it is worth seeing on its own.

# %%
import numpy as np

from multifused.flsa import FusionProblem, check_kkt, flsa_solve, soft_threshold

rng = np.random.default_rng(0)
truth = np.repeat([0.0, 2.0, -1.0, 0.0], 25)
noisy = truth + rng.normal(scale=0.6, size=truth.size)

# %%
# lam2 fuses neighbours, lam1 pulls small plateaus to zero
for lam1, lam2 in [(0, 0), (0, 2), (0.3, 2), (0.3, 20)]:
    fitted = flsa_solve(noisy, lam1, lam2)
    blocks = 1 + np.count_nonzero(np.diff(fitted))
    print(f"lam1={lam1:<4} lam2={lam2:<3} blocks={blocks:3d} "
          f"zeros={np.sum(fitted == 0):3d} rmse={np.sqrt(np.mean((fitted - truth) ** 2)):.3f}")

# %%
# the lasso part is a soft-threshold applied after fusion
fused = flsa_solve(noisy, 0, 2)
print(np.abs(flsa_solve(noisy, 0.3, 2) - soft_threshold(fused, 0.3)).max())

# %%
# every answer can be certified by its optimality conditions
prob = FusionProblem(noisy, 0.3, 2)
print(bool(check_kkt(prob, flsa_solve(prob))))
print(check_kkt(prob, truth).max_violation)   # the truth is not the optimum
