"""End-to-end acceptance runs at desk scale with one reported line per criterion.

The Monte Carlo fixtures here are deliberately heavy (100 runs each); they are
session-scoped so every criterion reuses the same batches.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from mtt import assoc, core, jpda, metrics, models, simgen

import oracles
from conftest import record_criterion


def seg_mean(report, tracker, lo, hi, field="d_tracks"):
    """Sample-weighted mean of a per-scan diagnostic over scans [lo, hi]."""
    if field == "d_tracks":
        m = report.d_tracks_mean[tracker][lo - 1 : hi]
        c = report.d_tracks_count[tracker][lo - 1 : hi]
    else:
        m = report.d_center_mean[tracker][lo - 1 : hi]
        c = report.d_center_count[tracker][lo - 1 : hi]
    good = c > 0
    if not good.any():
        return np.nan
    return float(np.sum(m[good] * c[good]) / np.sum(c[good]))


def gospa_mean(report, tracker, lo, hi, component="total"):
    return float(np.nanmean(report.mean_gospa[tracker][component][lo - 1 : hi]))


@pytest.fixture(scope="session")
def s1_batch():
    cfg = core.validate_config({"scenario": "s1", "known_targets": True})
    t0 = time.perf_counter()
    rep = simgen.run_monte_carlo(
        cfg, ["jpda", "mht", "bp-part", "ex-gauss", "ex-part"], runs=100, seed=7
    )
    wall = time.perf_counter() - t0
    return rep, wall


@pytest.fixture(scope="session")
def s2_batch():
    cfg = core.validate_config({"scenario": "s2"})
    return simgen.run_monte_carlo(cfg, ["jpda", "mht", "bp-part"], runs=100, seed=11)


@pytest.fixture(scope="session")
def s3_batch():
    cfg = core.validate_config({"scenario": "s3"})
    return simgen.run_monte_carlo(cfg, ["jpda", "mht", "bp-part"], runs=100, seed=13)


@pytest.fixture(scope="session")
def s4_batches():
    out = {}
    for n in (6, 7, 8, 9):
        cfg = core.validate_config({"scenario": f"s4-{n}", "known_targets": True})
        out[n] = simgen.run_monte_carlo(cfg, ["jpda", "bp-part"], runs=100, seed=17)
    return out


def test_criterion_01_coalescence_toy_exact():
    t0 = time.perf_counter()
    over = {
        "scenario": "s1",
        "p_d": 1.0,
        "mu_c": 0.0,
        "gate_threshold": 1e9,
        "sigma_u2": 0.0,
    }
    mdl = core.make_models(core.validate_config(over))
    z = np.array([[0.0, 1.0], [0.0, -1.0]])

    state = jpda.init_known(np.array([[0.0, 0.0], [0.0, 0.0]]), mdl)
    predicted = [models.predict(t.belief, mdl.motion) for t in state.tracks]
    prob = assoc.compute_betas(predicted, z, mdl.meas)
    marg = assoc.exact_marginals(prob)
    halves = (
        marg[0, 1] == 0.5 and marg[0, 2] == 0.5
        and marg[1, 1] == 0.5 and marg[1, 2] == 0.5
    )

    state = jpda.jpda_step(state, core.MeasurementFrame(time=1, z=z), mdl)
    centred = all(
        tr.belief.mean[1] == 0.0 and tr.belief.mean[3] == 0.0 for tr in state.tracks
    )
    elapsed = time.perf_counter() - t0
    ok = halves and centred and elapsed < 1.0
    record_criterion(
        1, ok,
        f"toy marginals exactly 1/2: {halves}, estimates exactly centred: {centred}, "
        f"{elapsed:.3f}s",
    )
    assert ok


def test_criterion_02_s1_repulsion_and_coalescence(s1_batch):
    rep, _ = s1_batch
    mht_m = seg_mean(rep, "mht", 101, 200)
    jpda_m = seg_mean(rep, "jpda", 101, 200)
    bp_m = seg_mean(rep, "bp-part", 101, 200)
    core_secs = sum(
        float(np.sum(rep.runtimes[t])) for t in ("jpda", "mht", "bp-part")
    ) + rep.meas_seconds
    ok = (
        mht_m >= 11.5
        and jpda_m <= 7.0
        and 7.0 <= bp_m <= 13.0
        and core_secs < 600.0
    )
    record_criterion(
        2, ok,
        f"parallel-segment mean separation: mht {mht_m:.2f} (>=11.5), "
        f"jpda {jpda_m:.2f} (<=7), bp-part {bp_m:.2f} (in [7,13]); "
        f"core runtime {core_secs:.0f}s (<600)",
    )
    assert ok


def test_criterion_03_s1_ablation_ordering(s1_batch):
    rep, _ = s1_batch
    gx = seg_mean(rep, "ex-gauss", 200, 250)
    px = seg_mean(rep, "ex-part", 200, 250)
    pb = seg_mean(rep, "bp-part", 200, 250)

    truth = simgen.build_scenario(core.validate_config({"scenario": "s1"}))
    true_sep = float(truth.positions[0, 249, 1] - truth.positions[1, 249, 1])
    at250 = rep.d_tracks_mean["bp-part"][249]
    ok = gx < px < pb and at250 >= 0.7 * true_sep
    record_criterion(
        3, ok,
        f"post-separation means: ex-gauss {gx:.1f} < ex-part {px:.1f} < bp-part {pb:.1f}; "
        f"bp-part at scan 250: {at250:.1f} vs 70% of truth {0.7 * true_sep:.1f}",
    )
    assert ok


def test_criterion_04_s2_initiation(s2_batch):
    rep = s2_batch
    j = gospa_mean(rep, "jpda", 1, 200, "missed")
    m = gospa_mean(rep, "mht", 1, 200, "missed")
    b = gospa_mean(rep, "bp-part", 1, 200, "missed")
    ok = j >= 2.0 * b and m <= 1.5 * b
    record_criterion(
        4, ok,
        f"mean missed error scans 1-200: jpda {j:.2f} (>= 2x bp {2 * b:.2f}), "
        f"mht {m:.2f} (<= 1.5x bp {1.5 * b:.2f})",
    )
    assert ok


def test_criterion_05_s3_crossing_windows(s3_batch):
    rep = s3_batch
    mht_w = gospa_mean(rep, "mht", 125, 175)
    bp_w1 = gospa_mean(rep, "bp-part", 125, 175)
    jpda_w = gospa_mean(rep, "jpda", 175, 225)
    bp_w2 = gospa_mean(rep, "bp-part", 175, 225)
    ok = mht_w >= 1.1 * bp_w1 and jpda_w >= 1.1 * bp_w2
    record_criterion(
        5, ok,
        f"crossing window: mht {mht_w:.2f} vs 1.1x bp {1.1 * bp_w1:.2f}; "
        f"post-crossing: jpda {jpda_w:.2f} vs 1.1x bp {1.1 * bp_w2:.2f}",
    )
    assert ok


def test_criterion_06_runtime_scaling(s4_batches):
    med = {
        t: {n: float(np.median(s4_batches[n].runtimes[t])) for n in (6, 9)}
        for t in ("jpda", "bp-part")
    }
    bp_ratio = med["bp-part"][9] / med["bp-part"][6]
    jpda_ratio = med["jpda"][9] / med["jpda"][6]
    ok = bp_ratio < 3.0 and jpda_ratio > 5.0
    record_criterion(
        6, ok,
        f"median runtime ratio 9/6 targets: bp-part {bp_ratio:.2f} (<3), "
        f"jpda {jpda_ratio:.1f} (>5)",
    )
    assert ok


def test_criterion_07_association_oracle_suite():
    rng = np.random.default_rng(2027)
    worst_exact = 0.0
    worst_tree = 0.0
    for i in range(1000):
        beta, xi0 = oracles.random_problem(
            rng,
            int(rng.integers(1, 5)),
            int(rng.integers(0, 6)),
            sparse=bool(rng.integers(0, 2)),
            xi0_mode="random" if i % 3 == 0 else "ones",
        )
        prob = core.AssociationProblem(beta, xi0)
        exact = assoc.exact_marginals(prob)
        om = oracles.marginals_oracle(beta, xi0)
        worst_exact = max(worst_exact, float(np.abs(exact - om).max()))
        L, M = beta.shape[0], beta.shape[1] - 1
        if L == 1 or M <= 1:
            approx, _ = assoc.bp_marginals(prob, tol=1e-12, max_iter=2000)
            worst_tree = max(worst_tree, float(np.abs(approx - exact).max()))

    converged = 0
    dense = 300
    for _ in range(dense):
        beta, xi0 = oracles.random_problem(rng, 4, 5, sparse=False)
        try:
            assoc.bp_marginals(core.AssociationProblem(beta, xi0), tol=1e-6, max_iter=200)
            converged += 1
        except assoc.NoConvergence:
            pass
    rate = converged / dense
    ok = worst_exact <= 1e-12 and worst_tree <= 1e-10 and rate >= 0.99
    record_criterion(
        7, ok,
        f"exact vs enumeration max err {worst_exact:.2e} (<=1e-12); "
        f"loopy vs exact on trees {worst_tree:.2e} (<=1e-10); "
        f"dense convergence {rate:.1%} (>=99%)",
    )
    assert ok


def test_criterion_08_filter_equivalences():
    # soft-association tracker with known target count vs the exact-marginal
    # existence variant, on full-length realistic scans
    cfg = core.validate_config({"scenario": "s1", "known_targets": True})
    mdl = core.make_models(cfg)
    truth = simgen.build_scenario(cfg)
    worst_pair = 0.0
    for run in range(3):
        frames = simgen.frames_for_run(truth, mdl, seed=99, run=run)
        rng = np.random.default_rng(0)
        tj = simgen.TRACKERS["jpda"](mdl, truth, np.random.default_rng(1))
        tg = simgen.TRACKERS["ex-gauss"](mdl, truth, rng)
        for f in frames:
            ej = dict(tj.step(f))
            eg = dict(tg.step(f))
            if ej.keys() != eg.keys():
                worst_pair = np.inf
                break
            for label in ej:
                worst_pair = max(worst_pair, float(np.abs(ej[label] - eg[label]).max()))

    single = core.validate_config(
        {"scenario": "s1", "n_targets": 1, "known_targets": True, "p_d": 1.0, "mu_c": 0.0}
    )
    mdl1 = core.make_models(single)
    truth1 = simgen.build_scenario(single)
    frames1 = simgen.frames_for_run(truth1, mdl1, seed=5, run=0)[:60]
    mean = np.array([truth1.positions[0, 0, 0], truth1.positions[0, 0, 1], 0.0, 0.0])
    cov = np.diag([100.0, 100.0, 400.0, 400.0])
    chain = []
    for f in frames1:
        mean, cov = oracles.kf_predict_plain(mean, cov, mdl1.motion.A, mdl1.motion.Q)
        mean, cov, _ = oracles.kf_update_plain(mean, cov, f.z[0], mdl1.meas.H, mdl1.meas.R)
        chain.append(mean[:2].copy())

    gauss_worst = 0.0
    part_errs = []
    for name in ("jpda", "jpda-star", "mht", "ex-gauss", "bp-gauss", "ex-part", "bp-part"):
        if name in ("ex-part", "bp-part"):
            # particle estimate carries resampling noise; judge it after the
            # velocity component has settled, averaged over a few streams
            stream_means = []
            for off in range(3):
                tracker = simgen.TRACKERS[name](mdl1, truth1, np.random.default_rng([7, off]))
                errs = []
                for f, ref in zip(frames1, chain):
                    est = dict(tracker.step(f))
                    errs.append(float(np.abs(est[0] - ref).max()))
                stream_means.append(float(np.mean(errs[15:])))
            part_errs.append(float(np.mean(stream_means)))
        else:
            tracker = simgen.TRACKERS[name](mdl1, truth1, np.random.default_rng([7, 0]))
            errs = []
            for f, ref in zip(frames1, chain):
                est = dict(tracker.step(f))
                errs.append(float(np.abs(est[0] - ref).max()))
            gauss_worst = max(gauss_worst, max(errs))

    ok = worst_pair <= 1e-9 and gauss_worst <= 1e-12 and max(part_errs) < 0.5
    record_criterion(
        8, ok,
        f"known-count equivalence max diff {worst_pair:.2e} (<=1e-9); "
        f"single-target collapse: gaussian {gauss_worst:.2e} (<=1e-12), "
        f"particle settled mean {max(part_errs):.3f} m (<0.5, statistical)",
    )
    assert ok


def test_criterion_09_metric_suite():
    rng = np.random.default_rng(31)
    ok = True
    for _ in range(10_000):
        a, b, c = (rng.uniform(-100, 100, size=(int(rng.integers(0, 5)), 2)) for _ in range(3))
        dab = metrics.gospa(a, b).total
        dba = metrics.gospa(b, a).total
        dac = metrics.gospa(a, c).total
        dcb = metrics.gospa(c, b).total
        if abs(dab - dba) > 1e-9 or dab < -1e-12 or dab > dac + dcb + 1e-9:
            ok = False
            break
    for _ in range(300):
        t = rng.uniform(-100, 100, size=(int(rng.integers(0, 7)), 2))
        e = rng.uniform(-100, 100, size=(int(rng.integers(0, 7)), 2))
        r = metrics.gospa(t, e)
        if abs(r.total - oracles.gospa_bruteforce(t, e)) > 1e-9:
            ok = False
            break
        if abs(r.total - (r.localization + r.missed + r.false)) > 1e-9:
            ok = False
            break
    unit = metrics.gospa(np.array([[0.0, 0.0]]), np.zeros((0, 2)))
    ok = ok and unit.total == pytest.approx(25.0, abs=1e-12)
    record_criterion(
        9, ok,
        "metric axioms (1e4 triples), brute-force match (<=6), additivity, "
        "missed unit cost 25",
    )
    assert ok


def test_criterion_10_rerun_determinism(tmp_path):
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps({"steps": 40}))
    blobs, manifests = [], []
    for sub in ("a", "b"):
        out = tmp_path / sub
        r = subprocess.run(
            [sys.executable, "-m", "mtt.cli", "run", "--scenario", "s3",
             "--trackers", "jpda,bp-gauss", "--runs", "2", "--seed", "21",
             "--out", str(out), "--config", str(cfgfile)],
            capture_output=True, text=True,
        )
        assert r.returncode == 0, r.stderr
        blobs.append((out / "metrics.csv").read_bytes())
        manifests.append(json.loads((out / "manifest.json").read_text())["files"])
    ok = blobs[0] == blobs[1] and manifests[0] == manifests[1]
    record_criterion(10, ok, "rerun with same seed: CSV bytes and manifest hashes identical")
    assert ok
