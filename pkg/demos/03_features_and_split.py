"""Feature matrix, train/test split, resampling and scaling."""
# %%
import tempfile
from pathlib import Path

import numpy as np

from asthma_risk import claims, cohort, features, synth

cfg = synth.SynthConfig(n_patients=3000, seed=3)
root = Path(tempfile.mkdtemp())
synth.generate(cfg, root)
timelines, _ = claims.build_timelines(claims.parse_extract(root))
ctx = cohort.PredictionContext(cfg.as_of)
eligible = cohort.select_cohort(timelines, ctx).eligible_ids

# %% The registry: 33 windowed features in five groups
reg = features.default_registry()
print(len(reg), "features;", "problems:", features.validate_registry(reg, lag_days=ctx.lag_days))
fm = features.extract(timelines, eligible, ctx, reg)
print(fm.values.shape, "prevalence", round(fm.prevalence, 4))
print("rows with undefined AMR:", int(np.isnan(fm.values[:, fm.names.index("amr_12m")]).sum()))

# %% Split, then balance the training part only
for method in features.Resampling:
    tr, te = features.split_and_resample(fm, features.SplitPlan(seed=3, resampling=method))
    print(f"{method.value:>10}: train {len(tr)} ({tr.labels.sum()} pos), test {len(te)} ({te.labels.sum()} pos)")

# %% Scaler statistics come from training rows
tr, te = features.split_and_resample(fm, features.SplitPlan(seed=3))
sc = features.fit_scaler(tr)
z_tr = features.apply_scaler(tr, sc).values
z_te = features.apply_scaler(te, sc).values
print("train column means ~0:", np.abs(z_tr.mean(axis=0))[~sc.binary].max() < 1e-12)
print("test column means:", np.round(z_te.mean(axis=0)[:4], 3))
