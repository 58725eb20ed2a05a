# %% [markdown]
# # Variable importance from subsamples
#
# Refit on four 75% subsamples of individuals (each choosing its own
# penalty by cross-validation) and average |beta| over replicates and time.

# %%
from multifused.simulate import SimConfig, generate
from multifused.stability import ImportanceConfig, importance

data, _ = generate(SimConfig(seed=11))
res = importance(data, ImportanceConfig(replicates=4, fraction=0.75, grid_n1=5, grid_n2=3),
                 threads=4)

# %%
for line in res.to_csv().splitlines()[:8]:
    print(line)
print("chosen per replicate:", [tuple(round(v, 4) for v in pair) for pair in res.chosen])
