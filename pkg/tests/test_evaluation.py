import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frugalsense import evaluation as ev, gp
from frugalsense.errors import LengthMismatch, MissingTruth, NonPositiveVariance

positive = st.floats(1e-3, 1e3)


def _shared():
    from frugalsense import timeseries as ts
    d = ts.generate_synthetic(ts.SyntheticProfile(), 2 * 672)
    ctx = d.window(0, 672)
    off, sc = gp.standardization(ctx.features())
    p = gp.KernelParams(gp.MaternParams(40.0, 0.05, 1.5), gp.PeriodicParams(40.0, 0.15, 1.0), 0.15,
                        float(np.mean(ctx.laeq)), off, sc)
    return d, ctx, p


SHARED = _shared()


def test_rmse_identity():
    assert ev.rmse([1.0, 2.0], [1.0, 2.0]) == 0.0


def test_rmse_offset():
    assert ev.rmse(np.arange(5) + 1.0, np.arange(5)) == pytest.approx(1.0, abs=1e-15)


def test_rmse_hand_value():
    assert ev.rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5), abs=1e-15)


def test_rmse_length_mismatch():
    with pytest.raises(LengthMismatch):
        ev.rmse([1.0], [1.0, 2.0])
    with pytest.raises(LengthMismatch):
        ev.rmse([], [])


def test_fi_unit():
    assert ev.fisher_information(np.ones(7)) == 1.0


def test_fi_hand_value():
    assert ev.fisher_information([0.5, 0.25]) == 3.0


@given(st.lists(positive, min_size=1, max_size=30))
def test_fi_halving_doubles(v):
    v = np.array(v)
    assert ev.fisher_information(v / 2) == pytest.approx(2 * ev.fisher_information(v), rel=1e-12)


@given(st.lists(positive, min_size=1, max_size=30), st.randoms())
def test_fi_permutation_invariant(v, r):
    w = list(v)
    r.shuffle(w)
    assert ev.fisher_information(w) == pytest.approx(ev.fisher_information(v), rel=1e-12)


@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=30), st.randoms())
def test_rmse_paired_permutation(pairs, r):
    q = list(pairs)
    r.shuffle(q)
    a = ev.rmse([x for x, _ in pairs], [y for _, y in pairs])
    b = ev.rmse([x for x, _ in q], [y for _, y in q])
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_fi_rejects_non_positive():
    with pytest.raises(NonPositiveVariance):
        ev.fisher_information([1.0, 0.0])
    with pytest.raises(NonPositiveVariance):
        ev.fisher_information([])


def test_empty_schedule_is_prior_or_context(small_data):
    d, ctx, p = small_data
    span = (672, 768)
    r0 = ev.evaluate_schedule(d, [], p, span, None)
    prior_var = p.prior_variance  # includes the noise variance
    assert r0.fisher_information == pytest.approx(1.0 / prior_var, rel=1e-12)
    r1 = ev.evaluate_schedule(d, [700], p, span, None)
    assert r1.fisher_information > r0.fisher_information
    c0 = ev.evaluate_schedule(d, [], p, span, ctx)
    c1 = ev.evaluate_schedule(d, [700], p, span, ctx)
    assert c1.fisher_information > c0.fisher_information


@settings(max_examples=10, deadline=None)
@given(st.sets(st.integers(672, 767), max_size=12), st.sets(st.integers(672, 767), max_size=6))
def test_superset_schedule_monotone(small, extra):
    d, ctx, p = SHARED
    a = ev.evaluate_schedule(d, small, p, (672, 768), ctx)
    b = ev.evaluate_schedule(d, small | extra, p, (672, 768), ctx)
    assert b.fisher_information >= a.fisher_information - 1e-9


def test_evaluate_schedule_deterministic(small_data):
    d, ctx, p = small_data
    a = ev.evaluate_schedule(d, [680, 700, 750], p, (672, 768), ctx)
    b = ev.evaluate_schedule(d, [680, 700, 750], p, (672, 768), ctx)
    assert a == b


def test_evaluate_schedule_matches_direct_fit(small_data):
    d, ctx, p = small_data
    sched = [675, 690, 720]
    rep = ev.evaluate_schedule(d, sched, p, (672, 768), ctx)
    X = np.vstack([ctx.features(), d.select(sched).features()])
    y = np.concatenate([ctx.laeq, d.values_at(sched)])
    pred = gp.fit(X, y, p, window=None).predict(d.window(672, 768).features())
    assert rep.fisher_information == pytest.approx(np.mean(1 / pred.variance), rel=1e-12)
    assert rep.rmse == pytest.approx(np.sqrt(np.mean((pred.mean - d.window(672, 768).laeq) ** 2)), rel=1e-12)
    assert rep.num_samples_used == 3 and rep.period_span == (672, 768)


def test_missing_truth(small_data):
    d, ctx, p = small_data
    gappy = d.select([s for s in d.slots if s != 700])
    with pytest.raises(MissingTruth):
        ev.evaluate_schedule(gappy, [], p, (672, 768), ctx)


def test_report_csv(tmp_path, small_data):
    d, ctx, p = small_data
    rep = ev.evaluate_schedule(d, [680], p, (672, 768), ctx, policy="uniform")
    path = tmp_path / "c.csv"
    ev.write_reports([rep], path)
    ev.write_reports([rep], path, append=True)
    lines = path.read_text().splitlines()
    assert lines[0] == "policy,fi,rmse,samples,span_start,span_end"
    assert len(lines) == 3
    back = ev.read_reports(path)[0]
    assert back.fisher_information == rep.fisher_information and back.rmse == rep.rmse
