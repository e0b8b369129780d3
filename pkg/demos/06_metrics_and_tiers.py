"""ROC/PR areas, tiers and a side-by-side comparison."""
# %%
import numpy as np

from asthma_risk import metrics

print(metrics.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]))

rng = np.random.default_rng(6)
y = (rng.random(5000) < 0.03).astype(int)
strong = y * 1.5 + rng.normal(size=5000)
weak = y * 0.8 + rng.normal(size=5000)
ids = [f"P{i:05d}" for i in range(5000)]

# %% High tier = top 10%; those are the predicted positives
tiers = metrics.assign_tiers(strong, ids)
print({t.value: sum(a.tier is t for a in tiers) for t in metrics.Tier})
a = metrics.evaluate(strong, y, ids, model="strong")
b = metrics.evaluate(weak, y, ids, model="weak")
print(a.confusion, "recall", round(a.recall, 3), "precision", round(a.precision, 3))

# %% Comparison table with deltas
print(metrics.render_table(metrics.compare(a, b)))
