"""Parse an extract (dirty rows included) and run the cohort funnel."""
# %%
import tempfile
from pathlib import Path

from asthma_risk import claims, cohort, synth

root = Path(tempfile.mkdtemp())
cfg = synth.SynthConfig(n_patients=1500, seed=2)
synth.generate(cfg, root)

# %% Dirty a copy: a raw "ER" literal is mapped, an impossible date is rejected
with (root / "claims.csv").open("a") as fh:
    fh.write("P0000001,2013-05-02,ER,1,E66.9\n")
    fh.write("P0000001,2013-13-02,OP,0,\n")
ext = claims.parse_extract(root, study_window=(cfg.study_start, cfg.study_end))
print("row counts:", ext.row_counts)
print("rejects:", ext.rejects)

timelines, orphans = claims.build_timelines(ext)
t = timelines["P0000001"]
print(t.patient_id, len(t.claims), "claims,", len(t.fills), "fills,", len(t.enrollment), "spans")

# %% Case definitions on one patient
print("CSTE:", cohort.cste_probable_asthma(t, cfg.as_of),
      "HEDIS:", cohort.hedis_persistent_asthma(t, cfg.as_of),
      "AMR:", cohort.amr(t, (cfg.as_of.replace(year=cfg.as_of.year - 1), cfg.as_of)))

# %% Funnel: age, then case definition, then continuous enrollment
result = cohort.select_cohort(timelines, cohort.PredictionContext(cfg.as_of))
for stage, n in result.funnel.items():
    print(f"{stage:>22}: {n}")
