from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asthma_risk import claims, cohort, synth

# computed once from the default configuration (seed 7) and frozen
DEFAULT_COHORT_BAYES_AUC = 0.9335313308277815


@pytest.fixture(scope="module")
def default_run():
    return synth.generate(synth.SynthConfig())


def _eligible(res):
    return np.array([k == "" for k in res.decoy_kind])


def test_default_prevalence_in_band(default_run):
    el = _eligible(default_run)
    assert el.sum() == 28378
    assert 0.025 <= default_run.labels[el].mean() <= 0.035


def test_default_bayes_auc_pinned(default_run):
    el = _eligible(default_run)
    got = synth.bayes_auc((default_run.true_prob[el], default_run.labels[el]))
    assert got == pytest.approx(DEFAULT_COHORT_BAYES_AUC, abs=1e-12)


def test_decoy_share(default_run):
    assert len(default_run.patient_ids) == 28378 + synth.SynthConfig().n_decoys
    assert (~_eligible(default_run)).mean() == pytest.approx(0.2, abs=1e-4)


def test_no_signal_means_flat_probability():
    res = synth.generate(synth.SynthConfig(n_patients=10000, signal_strength=0.0, seed=3))
    el = _eligible(res)
    assert np.ptp(res.true_prob[el]) == 0.0
    assert abs(synth.bayes_auc((res.true_prob[el], res.labels[el])) - 0.5) <= 0.02


def test_same_config_writes_identical_bytes(tmp_path):
    cfg = synth.SynthConfig(n_patients=400, seed=11)
    a = synth.generate(cfg, tmp_path / "a").paths
    b = synth.generate(cfg, tmp_path / "b").paths
    assert set(a) == {"patients", "claims", "fills", "enrollment", "ground_truth"}
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes()
    c = synth.generate(synth.SynthConfig(n_patients=400, seed=12), tmp_path / "c").paths
    assert a["claims"].read_bytes() != c["claims"].read_bytes()


def test_short_window_is_fatal():
    with pytest.raises(ValueError, match="too short"):
        synth.SynthConfig(study_start=date(2013, 7, 1), study_end=date(2014, 6, 30))


@pytest.mark.parametrize("kw", [{"target_prevalence": 0.0}, {"target_prevalence": 1.0},
                                {"signal_strength": -1.0}, {"decoy_fraction": 1.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        synth.SynthConfig(**kw)


def test_bayes_auc_separation_and_single_class():
    assert synth.bayes_auc(([0.0, 0.0, 1.0, 1.0], [0, 0, 1, 1])) == 1.0
    with pytest.raises(ValueError):
        synth.bayes_auc(([0.2, 0.3], [1, 1]))


@given(st.floats(0, 0.99), st.floats(0, 1), st.floats(0.01, 1))
@settings(max_examples=200, deadline=None)
def test_event_rates_rise_with_severity(s, adherence, ds):
    s2 = min(1.0, s + ds)
    lo = synth.event_rates([s], [adherence])
    hi = synth.event_rates([s2], [adherence])
    for k in lo:
        assert hi[k][0] >= lo[k][0]


def test_adherence_shifts_fill_mix():
    r = synth.event_rates([0.5, 0.5], [0.1, 0.9])
    assert r["controller"][1] > r["controller"][0]
    assert r["reliever"][1] < r["reliever"][0]


@pytest.fixture(scope="module")
def written(tmp_path_factory):
    cfg = synth.SynthConfig(n_patients=10000, seed=21)
    root = tmp_path_factory.mktemp("synth")
    res = synth.generate(cfg, root)
    ext = claims.parse_extract(root, study_window=(cfg.study_start, cfg.study_end))
    tls, orphans = claims.build_timelines(ext)
    return cfg, res, ext, tls, orphans


def test_written_extract_is_clean(written):
    _, res, ext, tls, orphans = written
    assert ext.rejects == [] and orphans == []
    assert list(tls) == res.patient_ids


def test_ed_history_rises_across_severity_quartiles(written):
    cfg, res, _, tls, _ = written
    start = cfg.as_of - timedelta(days=365)
    ed = np.array([sum(1 for c in tls[p].claims if c.setting is claims.Setting.ED
                       and c.primary_dx_asthma and start <= c.service_date < cfg.as_of)
                   for p in res.patient_ids])
    q = np.quantile(res.severity, [0.25, 0.5, 0.75])
    bucket = np.searchsorted(q, res.severity)
    means = [ed[bucket == b].mean() for b in range(4)]
    assert all(x < y for x, y in zip(means, means[1:]))


def test_generated_cohort_matches_design(written):
    cfg, res, _, tls, _ = written
    ctx = cohort.PredictionContext(cfg.as_of)
    out = cohort.select_cohort(tls, ctx)
    assert out.eligible_ids == res.eligible_ids
    assert all(cohort.cste_probable_asthma(tls[p], cfg.as_of) for p in res.eligible_ids)
    failed = {d.patient_id: d.failed_stages[0].value for d in out.decisions if not d.eligible}
    kinds = dict(zip(res.patient_ids, res.decoy_kind))
    expected = {"age": "AgeRange", "cste": "CSTE", "enrollment": "ContinuousEnrollment"}
    assert all(expected[kinds[p]] == stage for p, stage in failed.items())


def test_ground_truth_file(written, tmp_path):
    cfg, res, *_ = written
    gt = synth.read_ground_truth(res.paths["ground_truth"])
    assert len(gt) == len(res.patient_ids)
    assert synth.bayes_auc(gt, res.eligible_ids) == pytest.approx(
        synth.bayes_auc((res.true_prob[_eligible(res)], res.labels[_eligible(res)])), abs=1e-15)
