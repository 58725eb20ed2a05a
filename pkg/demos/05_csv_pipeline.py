# %% [markdown]
# # From a long CSV to a fit
#
# Categorical predictors, missing values, a time-invariant covariate, and
# replaying the fitted preprocessing on new individuals.

# %%
import io
import json

import numpy as np

from multifused.data import PredictorSpec, apply_report, ingest_csv, preprocess
from multifused.model import PenaltyParams, predict_panel
from multifused.solver import fit

rng = np.random.default_rng(5)
rows = ["id,time,y,bp,smoker,sex"]
for i in range(60):
    sex = "F" if i % 2 else "M"
    base = rng.normal(120, 15)
    for t in range(1, 7):
        bp = base + 2 * t + rng.normal(0, 5)
        smoker = rng.choice(["never", "former", "current"])
        risk = 0.15 * (bp - 130) + 2.0 * (smoker == "current")
        y = "sick" if rng.random() < 1 / (1 + np.exp(-risk)) else "well"
        cells = [y, f"{bp:.1f}", smoker, sex]
        # knock out a few cells
        cells = ["NA" if rng.random() < 0.08 else c for c in cells]
        rows.append(",".join([f"p{i}", str(t), *cells]))
text = "\n".join(rows) + "\n"

schema = {"smoker": PredictorSpec("categorical", ("never", "former", "current")),
          "sex": PredictorSpec("categorical", ("F", "M"), time_invariant=True)}
raw = ingest_csv(io.StringIO(text), schema=schema, classes=("sick", "well"))
print(raw.n, "individuals,", raw.T, "times, predictors", raw.predictors)

# %%
train_raw, new_raw = raw.subset(range(45)), raw.subset(range(45, 60))
train, report = preprocess(train_raw)
print("columns after encoding:", train.predictor_names)
print("imputation counts:", report.imputation_counts)

# %%
res = fit(train, PenaltyParams(0.01, 0.05))
new = apply_report(new_raw, report)
pred = predict_panel(res.coefficients, new)
obs = new.observed
print("held-out error:", np.mean(pred[obs] != new.Y[obs]))
print("report keys:", sorted(json.loads(report.to_json())))
