import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from phononcorr.analytic import AnalyticParams, cross_correlation
from phononcorr.counting import (
    ACQUISITION_BIN_NS,
    BLOCK_REPS,
    ClickModel,
    CoincidenceHistogram,
    CountingError,
    EventStream,
    build_histogram,
    click_model_from_analytic,
    extract_g2,
    simulate_clicks,
    simulate_histogram,
    subtract_crosstalk,
)

HB = int(math.ceil((26 * 12.5 + 1.536) / ACQUISITION_BIN_NS))


def _hist(counts, n_reps=1000):
    return CoincidenceHistogram(ACQUISITION_BIN_NS, np.asarray(counts, dtype=np.int64), n_reps=n_reps)


def _peaked(central, side, floor=0):
    h = _hist(np.full(2 * HB + 1, floor))
    counts = h.counts.copy()
    for m in range(-26, 27):
        mask = np.abs(h.centers - m * 12.5) <= 0.768
        counts[mask] = central if m == 0 else side
    return _hist(counts)


def test_model_validation():
    with pytest.raises(CountingError, match="infeasible"):
        ClickModel(0.1, 0.1, 0.2, 100)
    with pytest.raises(CountingError, match="infeasible"):
        ClickModel(0.9, 0.9, 0.5, 100)
    with pytest.raises(CountingError):
        ClickModel(1.5, 0.1, 0.0, 100)
    with pytest.raises(CountingError):
        ClickModel(0.1, 0.1, 0.0, 0)
    with pytest.raises(CountingError):
        ClickModel(0.1, 0.1, 0.0, 10, seed=-1)
    m = ClickModel(0.2, 0.3, 0.1, BLOCK_REPS + 1)
    assert m.n_blocks == 2
    assert m.p_active == pytest.approx(0.4)
    assert m.expected_g2 == pytest.approx(0.1 / 0.06)


def test_click_frequencies():
    m = ClickModel(0.2, 0.3, 0.1, 200_000, seed=3)
    ev = simulate_clicks(m)
    s, a = set(ev.channel_reps(0)), set(ev.channel_reps(1))
    n = m.n_reps
    for observed, p in ((len(s), 0.2), (len(a), 0.3), (len(s & a), 0.1)):
        assert abs(observed - n * p) < 5 * math.sqrt(n * p * (1 - p))


def test_sparse_path_frequencies():
    # below 5 % activity the generator switches to geometric gaps
    m = ClickModel(2e-3, 1e-3, 5e-4, 5_000_000, seed=4)
    ev = simulate_clicks(m)
    s, a = ev.channel_reps(0), ev.channel_reps(1)
    joint = np.intersect1d(s, a).size
    for observed, p in ((s.size, 2e-3), (a.size, 1e-3), (joint, 5e-4)):
        assert abs(observed - m.n_reps * p) < 5 * math.sqrt(m.n_reps * p)
    assert s.max() < m.n_reps and s.min() >= 0


def test_single_pair_lands_in_zero_bin():
    ev = EventStream(np.array([7, 7]), np.array([0, 1]), n_reps=10)
    h = build_histogram(ev)
    assert h.counts.sum() == 1
    assert h.counts[h.half_bins] == 1


def test_adjacent_repetitions():
    ev = EventStream(np.array([5, 6, 7]), np.array([1, 0, 1]), n_reps=10)
    h = build_histogram(ev)
    hit = h.centers[h.counts > 0]
    assert h.counts.sum() == 2
    assert np.allclose(np.sort(np.abs(hit)), [12.5, 12.5], atol=ACQUISITION_BIN_NS / 2)
    assert hit.min() < 0 < hit.max()


def test_independent_channels_give_unity():
    m = ClickModel(0.01, 0.01, 1e-4, 20_000_000, seed=11)
    est = extract_g2(simulate_histogram(m))
    assert abs(est.g2 - 1.0) < 3 * est.delta_g2
    assert est.delta_g2 < 0.1


def test_independent_side_peaks_are_flat():
    m = ClickModel(0.01, 0.01, 1e-4, 20_000_000, seed=12)
    est = extract_g2(simulate_histogram(m))
    areas = np.concatenate([est.side_areas, est.negative_side_areas])
    chi2 = ((areas - areas.mean()) ** 2 / areas.mean()).sum()
    assert stats.chi2.sf(chi2, areas.size - 1) > 1e-3


def test_perfect_correlation():
    m = ClickModel(0.01, 0.01, 0.01, 5_000_000, seed=2)
    est = extract_g2(simulate_histogram(m))
    assert est.g2 == pytest.approx(100.0, rel=0.1)
    assert abs(est.g2 - m.expected_g2) < 3 * est.delta_g2


def test_analytic_end_to_end():
    params = AnalyticParams(p_bar=3e-4 / 0.07, eta_a=0.07, eta_b=0.0042, q_a=1e-6, q_b=1.27e-5)
    m = click_model_from_analytic(params, 2_000_000_000, seed=1)
    assert m.expected_g2 == pytest.approx(cross_correlation(params), rel=1e-9)
    est = extract_g2(simulate_histogram(m))
    assert abs(est.g2 - m.expected_g2) < 3 * est.delta_g2


def test_streaming_matches_materialized():
    m = ClickModel(3e-3, 2e-3, 5e-4, 2 * BLOCK_REPS + 12345, seed=5)
    a = simulate_histogram(m)
    b = build_histogram(simulate_clicks(m))
    c = simulate_histogram(m, workers=3)
    assert np.array_equal(a.counts, b.counts)
    assert np.array_equal(a.counts, c.counts)
    assert (a.total_starts, a.total_stops) == (b.total_starts, b.total_stops)


def test_seed_determinism():
    m = ClickModel(3e-3, 2e-3, 5e-4, 1_000_000, seed=9)
    assert np.array_equal(simulate_histogram(m).counts, simulate_histogram(m).counts)
    assert not np.array_equal(simulate_histogram(m).counts, simulate_histogram(m.with_(seed=10)).counts)


def test_flat_histogram_gives_one():
    est = extract_g2(_hist(np.full(2 * HB + 1, 50)))
    assert est.g2 == pytest.approx(1.0, abs=1e-12)
    assert est.side_std == 0.0
    assert est.delta_g2 == pytest.approx(math.sqrt(1 / est.central_area))


def test_known_peak_ratio():
    est = extract_g2(_peaked(634, 10))
    assert est.g2 == pytest.approx(63.4)
    assert est.negative_g2 == pytest.approx(63.4)


def test_window_covers_three_bins():
    est = extract_g2(_hist(np.ones(2 * HB + 1, dtype=np.int64)))
    assert est.central_area == 3
    assert np.all(est.side_areas == 3)


def test_dark_floor_subtraction():
    est = extract_g2(_peaked(634, 10, floor=4), dark_floor_subtraction=True)
    assert est.background_per_bin == pytest.approx(4.0)
    assert est.g2 == pytest.approx((634 - 4) / (10 - 4))


def test_error_shrinks_with_statistics():
    base = ClickModel(2e-3, 2e-3, 1e-4, 25_000_000, seed=21)
    small = extract_g2(simulate_histogram(base))
    large = extract_g2(simulate_histogram(base.with_(n_reps=100_000_000)))
    assert small.delta_g2 / large.delta_g2 == pytest.approx(2.0, rel=0.25)


def test_std_convention_is_wider():
    h = simulate_histogram(ClickModel(2e-3, 2e-3, 1e-4, 25_000_000, seed=22))
    sem, std = extract_g2(h), extract_g2(h, side_error="std")
    assert sem.g2 == std.g2
    assert std.delta_g2 > sem.delta_g2
    with pytest.raises(ValueError):
        extract_g2(h, side_error="mad")


def test_span_checks():
    with pytest.raises(CountingError, match="spans"):
        extract_g2(_hist(np.ones(101)))
    ev = EventStream(np.array([0]), np.array([0]), n_reps=1)
    with pytest.raises(CountingError):
        build_histogram(ev, n_periods=3)
    with pytest.raises(CountingError):
        build_histogram(EventStream(np.array([], dtype=np.int64), np.array([], dtype=np.int8)))


def test_histogram_validation():
    with pytest.raises(CountingError):
        _hist(np.ones(4))
    with pytest.raises(CountingError):
        _hist(-np.ones(5))
    with pytest.raises(CountingError):
        EventStream(np.array([2, 1]), np.array([0, 0]))
    with pytest.raises(CountingError):
        EventStream(np.array([1]), np.array([2]))


def test_crosstalk_identical_inputs_cancel():
    h = _peaked(634, 10, floor=2)
    out = subtract_crosstalk(h, h)
    assert out.counts.sum() == 0
    assert out.metadata["crosstalk_subtracted"] == "true"
    assert int(out.metadata["crosstalk_counts_removed"]) == h.counts.sum()


def test_crosstalk_zero_is_identity():
    h = _peaked(634, 10, floor=2)
    out = subtract_crosstalk(h, _hist(np.zeros_like(h.counts)))
    assert np.array_equal(out.counts, h.counts)


def test_crosstalk_floor_removal():
    leak = 3
    h = _peaked(634, 10, floor=leak)
    both = _hist(h.counts + leak)
    cleaned = extract_g2(subtract_crosstalk(both, _hist(np.full_like(h.counts, leak))))
    raw = extract_g2(both)
    # each analysis window loses leak * analysis_bin / bin_width counts
    assert raw.central_area - cleaned.central_area == pytest.approx(leak * 1.536 / ACQUISITION_BIN_NS)
    assert cleaned.g2 == pytest.approx(extract_g2(h).g2)


def test_crosstalk_clamps_and_checks():
    a = _hist(np.full(2 * HB + 1, 1))
    b = _hist(np.full(2 * HB + 1, 5))
    assert subtract_crosstalk(a, b).counts.min() == 0
    with pytest.raises(CountingError):
        subtract_crosstalk(a, _hist(np.ones(2 * HB + 3)))
    with pytest.raises(CountingError, match="normalize"):
        subtract_crosstalk(a, _hist(b.counts, n_reps=2000))
    half = subtract_crosstalk(_hist(np.full(2 * HB + 1, 10)), _hist(b.counts, n_reps=500), normalize=True)
    assert np.all(half.counts == 0)


def test_histogram_merge():
    a, b = _hist(np.ones(2 * HB + 1)), _hist(2 * np.ones(2 * HB + 1))
    c = a + b
    assert np.all(c.counts == 3) and c.n_reps == 2000
    with pytest.raises(CountingError):
        a + _hist(np.ones(5))


def test_histogram_csv_round_trip():
    h = simulate_histogram(ClickModel(3e-3, 2e-3, 5e-4, 1_000_000, seed=9))
    back = CoincidenceHistogram.from_csv(h.to_csv())
    assert np.array_equal(back.counts, h.counts)
    assert back.bin_width == h.bin_width and back.n_reps == h.n_reps and back.seed == 9
    assert back.metadata == h.metadata
    assert back.to_csv() == h.to_csv()


@pytest.mark.parametrize("text", ["", "bin_start_ns,count\n0,1\n", "# bin_width_ns=0.5\n# rep_period_ns=12.5\n"
                                  "# n_reps=1\nbin_start_ns,count\n-0.25,x\n",
                                  "# bin_width_ns=0.5\n# rep_period_ns=12.5\n# n_reps=1\nfoo\n",
                                  "# bin_width_ns=0.5\n# rep_period_ns=12.5\n# n_reps=1\n"
                                  "bin_start_ns,count\n9.0,1\n"])
def test_histogram_csv_rejects_malformed(text):
    with pytest.raises(CountingError):
        CoincidenceHistogram.from_csv(text)


def test_event_csv_round_trip():
    ev = simulate_clicks(ClickModel(0.05, 0.05, 0.01, 2000, seed=1))
    back = EventStream.from_csv(ev.to_csv())
    assert np.array_equal(back.rep_index, ev.rep_index)
    assert np.array_equal(back.channel, ev.channel)
    with pytest.raises(CountingError):
        EventStream.from_csv("rep,channel\n")
    with pytest.raises(CountingError, match="line 2"):
        EventStream.from_csv("rep_index,channel,timestamp_ns\n1,0\n")


@settings(max_examples=12, deadline=None)
@given(st.floats(1e-3, 2e-2), st.floats(1e-3, 2e-2), st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_random_triples_recover_expected_g2(p_s, p_as, frac, seed):
    p_joint = frac * min(p_s, p_as)
    if p_joint < p_s * p_as:
        p_joint = p_s * p_as
    m = ClickModel(p_s, p_as, p_joint, 4_000_000, seed=seed)
    est = extract_g2(simulate_histogram(m))
    # a 4 sigma band keeps the false-alarm rate negligible over the examples
    assert abs(est.g2 - m.expected_g2) < 4 * est.delta_g2
