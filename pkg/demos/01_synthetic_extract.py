"""Draw a small synthetic claims extract and look at what came out."""
# %%
import tempfile
from pathlib import Path

import numpy as np

from asthma_risk import synth

out = Path(tempfile.mkdtemp()) / "extract"
cfg = synth.SynthConfig(n_patients=2000, seed=1)
res = synth.generate(cfg, out)
print("prediction date:", cfg.as_of)
print("files:", sorted(p.name for p in res.paths.values()))

# %% Eligible patients vs decoys built to fail one cohort stage each
kinds, counts = np.unique(res.decoy_kind, return_counts=True)
print(dict(zip([k or "eligible" for k in kinds], counts.tolist())))

# %% The outcome rate is calibrated over eligible patients
eligible = np.array([k == "" for k in res.decoy_kind])
print(f"label prevalence {res.labels[eligible].mean():.3f} (target {cfg.target_prevalence})")

# %% Best achievable ranking: the generator's own probabilities
print(f"Bayes AUC {synth.bayes_auc((res.true_prob[eligible], res.labels[eligible])):.3f}")
for line in (out / "claims.csv").read_text().splitlines()[:4]:
    print(line)
