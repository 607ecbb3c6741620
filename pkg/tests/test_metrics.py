"""Set-distance metric and the two separation diagnostics."""

import numpy as np
import pytest

from mtt import metrics

import oracles


def pts(*rows):
    return np.array(rows, float).reshape(-1, 2)


def test_identical_sets_zero():
    x = pts([1.0, 2.0], [-3.0, 4.0])
    r = metrics.gospa(x, x)
    assert r.total == 0.0
    assert r.localization == 0.0
    assert r.missed == 0.0
    assert r.false == 0.0


def test_single_missed_target_costs_25():
    r = metrics.gospa(pts([10.0, 10.0]), pts())
    assert r.total == pytest.approx(25.0, abs=1e-12)
    assert r.missed == pytest.approx(25.0, abs=1e-12)
    assert r.false == 0.0 and r.localization == 0.0


def test_single_false_track_costs_25():
    r = metrics.gospa(pts(), pts([0.0, 0.0]))
    assert r.total == pytest.approx(25.0, abs=1e-12)
    assert r.false == pytest.approx(25.0, abs=1e-12)


def test_two_matched_pairs_sum_distances():
    truth = pts([0.0, 0.0], [100.0, 0.0])
    est = pts([3.0, 0.0], [100.0, 4.0])
    r = metrics.gospa(truth, est)
    assert r.localization == pytest.approx(7.0, abs=1e-12)
    assert r.total == pytest.approx(7.0, abs=1e-12)
    assert sorted(r.assignment) == [(0, 0), (1, 1)]


def test_distant_pair_reclassified_as_missed_plus_false():
    r = metrics.gospa(pts([0.0, 0.0]), pts([60.0, 0.0]))
    assert r.total == pytest.approx(50.0, abs=1e-12)
    assert r.missed == pytest.approx(25.0, abs=1e-12)
    assert r.false == pytest.approx(25.0, abs=1e-12)
    assert r.localization == 0.0
    assert r.assignment == []


def test_matches_bruteforce_small_sets(rng):
    for _ in range(300):
        n = int(rng.integers(0, 7))
        m = int(rng.integers(0, 7))
        truth = rng.uniform(-100, 100, size=(n, 2))
        est = rng.uniform(-100, 100, size=(m, 2))
        r = metrics.gospa(truth, est)
        expect = oracles.gospa_bruteforce(truth, est)
        assert r.total == pytest.approx(expect, abs=1e-9)


def test_decomposition_additivity(rng):
    for _ in range(200):
        truth = rng.uniform(-80, 80, size=(int(rng.integers(0, 5)), 2))
        est = rng.uniform(-80, 80, size=(int(rng.integers(0, 5)), 2))
        r = metrics.gospa(truth, est)
        assert r.total == pytest.approx(r.localization + r.missed + r.false, abs=1e-9)


def test_metric_axioms(rng):
    for _ in range(10_000):
        sets = [rng.uniform(-100, 100, size=(int(rng.integers(0, 5)), 2)) for _ in range(3)]
        a, b, c = sets
        dab = metrics.gospa(a, b).total
        dba = metrics.gospa(b, a).total
        assert dab == pytest.approx(dba, abs=1e-9)
        assert dab >= -1e-12
        dac = metrics.gospa(a, c).total
        dcb = metrics.gospa(c, b).total
        assert dab <= dac + dcb + 1e-9
        assert metrics.gospa(a, a).total == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------- separation diagnostics

TRUTH_PAIR = pts([0.0, 5.0], [0.0, -5.0])


def test_d_tracks_matched_separation():
    est = pts([0.0, 5.0], [0.0, -5.0])
    assert metrics.d_tracks(TRUTH_PAIR, est) == pytest.approx(10.0, abs=1e-12)


def test_d_tracks_coalesced_estimates():
    est = pts([0.0, 0.0], [0.0, 0.0])
    assert metrics.d_tracks(TRUTH_PAIR, est) == pytest.approx(0.0, abs=1e-12)


def test_d_tracks_repulsed_estimates():
    est = pts([0.0, 8.0], [0.0, -8.0])
    assert metrics.d_tracks(TRUTH_PAIR, est) == pytest.approx(16.0, abs=1e-12)


def test_d_tracks_needs_two_matches():
    with pytest.raises(metrics.UndefinedSample):
        metrics.d_tracks(TRUTH_PAIR, pts([0.0, 5.0]))
    with pytest.raises(metrics.UndefinedSample):
        metrics.d_tracks(TRUTH_PAIR, pts())
    # second estimate exists but is beyond the cutoff: only one match
    with pytest.raises(metrics.UndefinedSample):
        metrics.d_tracks(TRUTH_PAIR, pts([0.0, 5.0], [500.0, 500.0]))


def test_d_center_symmetric_pair():
    est = pts([0.0, 5.0], [0.0, -5.0])
    assert metrics.d_center(TRUTH_PAIR, est) == pytest.approx(5.0, abs=1e-12)


def test_d_center_coalesced_at_midpoint():
    est = pts([0.0, 0.0], [0.0, 0.0])
    assert metrics.d_center(TRUTH_PAIR, est) == pytest.approx(0.0, abs=1e-12)


def test_d_center_one_sided_offset():
    est = pts([0.0, 10.0], [0.0, 0.0])
    # distances from the y-centre: 10 and 0, averaged
    assert metrics.d_center(TRUTH_PAIR, est) == pytest.approx(5.0, abs=1e-12)


def test_d_center_uses_gospa_matching():
    # extra far-away estimate must not disturb the matched pair
    est = pts([0.0, 5.0], [0.0, -5.0], [600.0, 600.0])
    assert metrics.d_center(TRUTH_PAIR, est) == pytest.approx(5.0, abs=1e-12)
    assert metrics.d_tracks(TRUTH_PAIR, est) == pytest.approx(10.0, abs=1e-12)
