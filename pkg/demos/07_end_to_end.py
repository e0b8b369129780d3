"""Whole pipeline at reduced size, then the same through the command line."""
# %%
import json
import tempfile
from pathlib import Path

from asthma_risk import cli, pipeline

out = Path(tempfile.mkdtemp())
cfg = pipeline.RunConfig(out_dir=str(out / "api"), seed=7, n_patients=4000, epochs=20)
res = pipeline.cmd_pipeline(cfg)
print(res.funnel)
for name, r in res.reports.items():
    print(f"{name}: ROC AUC {r.roc_auc:.3f}, PR AUC {r.pr_auc:.3f}")
print("Bayes AUC on test rows", round(res.bayes_auc, 3))

# %% The first alert rows
print("\n".join((out / "api/reports/alert_lasso.csv").read_text().splitlines()[:4]))

# %% Manifest: every artifact with its hash
manifest = json.loads(res.manifest.read_text())
print(len(manifest["artifacts"]), "artifacts; config hash", manifest["config_sha256"][:12])

# %% Same run from a config file, with one flag overriding it
ini = out / "run.ini"
ini.write_text("[run]\nseed = 7\nn_patients = 4000\nepochs = 20\nmodels = both\n")
cli.main(["pipeline", "--config", str(ini), "--out", str(out / "cli"), "--models", "lasso"])
