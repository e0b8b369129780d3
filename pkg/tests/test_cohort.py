from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asthma_risk import cohort
from asthma_risk.claims import EnrollmentSpan
from asthma_risk.cohort import HedisThresholds, PredictionContext, Stage
from conftest import AS_OF, CTRL, ED, IP, OCS, OP, OTHER, REL, days_before, timeline
from truth_table import CASES

WINDOW = (AS_OF - timedelta(days=365), AS_OF)
CTX = PredictionContext(AS_OF)


def test_amr_examples():
    t = timeline(fills=[(10, CTRL), (20, CTRL), (30, CTRL), (40, REL)])
    assert cohort.amr(t, WINDOW) == 0.75
    assert cohort.amr(timeline(fills=[(10, OCS)]), WINDOW) is None
    v = cohort.amr(timeline(fills=[(10, CTRL), (20, REL), (30, REL), (40, REL)]), WINDOW)
    assert v == 0.25 and cohort.amr_flag(v)
    assert not cohort.amr_flag(None) and not cohort.amr_flag(0.5)


def test_amr_window_is_half_open():
    t = timeline(fills=[(0, REL), (365, CTRL), (366, REL)])
    assert cohort.amr(t, WINDOW) == 1.0
    with pytest.raises(ValueError):
        cohort.amr(t, (AS_OF, WINDOW[0]))


fill_lists = st.lists(st.tuples(st.integers(-30, 400), st.sampled_from([CTRL, REL, OCS, OTHER])),
                      max_size=15)


@given(fill_lists, st.integers(1, 364))
@settings(max_examples=300, deadline=None)
def test_amr_bounded_and_monotone_in_controllers(fills, extra_day):
    before = cohort.amr(timeline(fills=fills), WINDOW)
    after = cohort.amr(timeline(fills=fills + [(extra_day, CTRL)]), WINDOW)
    assert after is not None and 0 <= after <= 1
    if before is not None:
        assert 0 <= before <= 1 and after >= before


@pytest.mark.parametrize("name, claims, fills, cste, hedis", CASES, ids=[c[0] for c in CASES])
def test_truth_table(name, claims, fills, cste, hedis):
    t = timeline(claims=claims, fills=fills)
    assert cohort.cste_probable_asthma(t, AS_OF) is cste
    assert cohort.hedis_persistent_asthma(t, AS_OF) is hedis


def test_truth_table_shape():
    assert len(CASES) == 40
    assert len({c[0] for c in CASES}) == 40


def test_hedis_thresholds_configurable():
    t = timeline(fills=[(10, CTRL), (20, CTRL)])
    assert not cohort.hedis_persistent_asthma(t, AS_OF)
    assert cohort.hedis_persistent_asthma(t, AS_OF, HedisThresholds(min_fills=2))


event = st.tuples(st.integers(-60, 420), st.sampled_from([ED, IP, OP]), st.booleans())


@given(st.lists(event, max_size=10), fill_lists)
@settings(max_examples=500, deadline=None)
def test_hedis_implies_cste(claims, fills):
    t = timeline(claims=claims, fills=fills)
    if cohort.hedis_persistent_asthma(t, AS_OF):
        assert cohort.cste_probable_asthma(t, AS_OF)


def _birth_for_days(n):
    return AS_OF - timedelta(days=n)


@pytest.mark.parametrize("days, ok", [(146, False), (182, False), (183, True),
                                      (6574, True), (6575, False)])
def test_age_bounds_default(days, ok):
    t = timeline(birth=_birth_for_days(days), fills=[(30, REL)],
                 spans=[(_birth_for_days(days), date(2014, 6, 30))])
    d = cohort.decide(t, CTX)
    assert d.eligible is ok
    if not ok:
        assert d.failed_stages == (Stage.AGE_RANGE,)


def test_age_bounds_inclusive_at_exact_values():
    # day counts are integers, so exact bounds are built from day counts
    lo, hi = 183 / 365.25, 6574 / 365.25
    for days in (183, 6574):
        t = timeline(birth=_birth_for_days(days), fills=[(30, REL)],
                     spans=[(_birth_for_days(days), date(2014, 6, 30))])
        assert cohort.age_years(t.demographics.birth_date, AS_OF) in (lo, hi)
        assert cohort.decide(t, CTX, (lo, hi)).eligible


def test_age_point_four_fails():
    t = timeline(birth=_birth_for_days(int(0.4 * 365.25)), fills=[(30, REL)])
    assert cohort.decide(t, CTX).failed_stages == (Stage.AGE_RANGE,)


def _spans(*ranges):
    return [(days_before(a), days_before(b)) for a, b in ranges]


@pytest.mark.parametrize("gap, ok", [(45, True), (46, False)])
def test_enrollment_gap_tolerance(gap, ok):
    # coverage up to 200 days back, then a gap of `gap` days, then through the label window
    t = timeline(fills=[(30, REL)], spans=_spans((500, 200), (200 - gap - 1, -200)))
    assert cohort.uncovered_runs(t, CTX.lookback_start, CTX.label_end) == [gap]
    assert cohort.continuously_enrolled(t, CTX) is ok


def test_enrollment_must_cover_label_window():
    t = timeline(fills=[(30, REL)], spans=_spans((500, -30)))
    assert cohort.uncovered_runs(t, CTX.lookback_start, CTX.label_end) == [61]
    assert cohort.decide(t, CTX).failed_stages == (Stage.CONTINUOUS_ENROLLMENT,)
    ok = timeline(fills=[(30, REL)], spans=_spans((500, -50)))
    assert cohort.continuously_enrolled(ok, CTX)


def test_infant_enrolled_from_birth_passes():
    birth = _birth_for_days(250)
    t = timeline(birth=birth, fills=[(30, REL)], spans=[(birth, date(2014, 6, 30))])
    assert cohort.decide(t, CTX).eligible


def test_first_failure_attribution():
    # fails age, CSTE and enrollment: charged to age only
    t = timeline(birth=_birth_for_days(100), spans=[])
    assert cohort.decide(t, CTX).failed_stages == (Stage.AGE_RANGE,)
    t = timeline(spans=[])
    assert cohort.decide(t, CTX).failed_stages == (Stage.CSTE,)


def test_context_windows():
    assert CTX.lookback_start == date(2013, 3, 31)
    assert CTX.label_end == date(2014, 6, 30)
    CTX.check_study_window(date(2012, 7, 1), date(2014, 6, 30))
    with pytest.raises(ValueError):
        CTX.check_study_window(date(2013, 7, 1), date(2014, 6, 30))
    with pytest.raises(ValueError):
        PredictionContext(AS_OF, label_scope="ip_only")


def _random_timelines(seed, n):
    rng = np.random.default_rng(seed)
    out = {}
    for i in range(n):
        pid = f"Q{i:04d}"
        birth = _birth_for_days(int(rng.integers(50, 8000)))
        claims = [(int(rng.integers(1, 420)), [ED, IP, OP][rng.integers(3)], bool(rng.random() < 0.5))
                  for _ in range(rng.integers(0, 3))]
        fills = [(int(rng.integers(1, 420)), REL) for _ in range(rng.integers(0, 2))]
        cut = int(rng.integers(-100, 400))
        spans = [(birth, days_before(cut)), (days_before(cut - int(rng.integers(1, 80))), date(2014, 6, 30))]
        out[pid] = timeline(pid, birth, claims=claims, fills=fills, spans=spans)
    return out


def test_funnel_reconciles_and_is_order_independent():
    tls = _random_timelines(5, 400)
    res = cohort.select_cohort(tls, CTX)
    f = res.funnel
    counts = [f["input"], f["AgeRange"], f["CSTE"], f["ContinuousEnrollment"]]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert f["ContinuousEnrollment"] == len(res.eligible_ids)
    first_fail = {s: sum(1 for d in res.decisions if d.failed_stages[:1] == (s,)) for s in Stage}
    assert len(res.eligible_ids) + sum(first_fail.values()) == f["input"]
    assert all(d.eligible == (d.failed_stages == ()) for d in res.decisions)
    assert min(first_fail.values()) > 0 and res.eligible_ids
    shuffled = dict(reversed(list(tls.items())))
    assert cohort.select_cohort(shuffled, CTX).decisions == res.decisions


def test_funnel_and_decisions_files(tmp_path):
    res = cohort.select_cohort(_random_timelines(6, 30), CTX)
    cohort.write_funnel(tmp_path / "f.json", res)
    cohort.write_decisions(tmp_path / "d.csv", res.decisions)
    assert (tmp_path / "f.json").read_text().startswith('{\n  "input": 30')
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "patient_id,eligible,failed_stages" and len(lines) == 31
