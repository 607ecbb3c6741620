"""Scenario trajectories, measurement synthesis, and the Monte Carlo harness.

Scenario families:

* ``s1``: two targets converge from 200 m apart to a 100-scan parallel
  segment 10 m apart, then diverge again.
* ``s2``: the parallel segment starts at scan 1 and the pair splits at
  scan 151; exercises initiation, since nothing is known at the start.
* ``s3``: the targets cross at constant speed, meeting at scan 150.
* ``s4-n``: n targets on a shrinking circle pass simultaneously through
  the origin at scan 151 and fly outward again.

Measurement synthesis and the per-run harness draw from counter-based
generators keyed on (seed, run, scan) or (seed, run, tracker), so results
are reproducible bit for bit and independent of thread count or which
other trackers share the batch.
"""

from __future__ import annotations

import os
import time
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import bp, core, jpda, metrics, mht

__all__ = [
    "Truth", "RunReport", "TRACKERS", "build_scenario",
    "generate_measurements", "frames_for_run", "run_monte_carlo",
]


@dataclass(frozen=True)
class Truth:
    """Ground-truth trajectories; scan indexing is 1-based in birth/death."""

    positions: np.ndarray  # (n_targets, steps, 2)
    birth: np.ndarray      # (n_targets,) first scan alive
    death: np.ndarray      # (n_targets,) last scan alive, inclusive


def build_scenario(cfg: core.ScenarioConfig) -> Truth:
    k = np.arange(1, cfg.steps + 1, dtype=float)
    if cfg.scenario == "s1":
        x = -600.0 + 4.0 * (k - 1)
        y = np.select(
            [k < 101, k <= 200],
            [100.0 - 0.95 * (k - 1), 5.0],
            default=5.0 + 0.95 * (k - 200),
        )
        pos = np.stack([np.stack([x, y], axis=-1), np.stack([x, -y], axis=-1)])
    elif cfg.scenario == "s2":
        x = -600.0 + 4.0 * (k - 1)
        y = np.where(k <= 150, 5.0, 5.0 + (95.0 / 150.0) * (k - 150))
        pos = np.stack([np.stack([x, y], axis=-1), np.stack([x, -y], axis=-1)])
    elif cfg.scenario == "s3":
        x = -600.0 + 4.0 * (k - 1)
        y = 0.4 * (150.0 - k)
        pos = np.stack([np.stack([x, y], axis=-1), np.stack([x, -y], axis=-1)])
    else:
        n = cfg.n_targets
        radius = 150.0 - (k - 1)  # signed: the targets fly through the origin
        angles = 2.0 * np.pi * np.arange(n) / n
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        pos = dirs[:, None, :] * radius[None, :, None]
    pos = pos[: cfg.n_targets]
    n = pos.shape[0]
    return Truth(
        positions=pos,
        birth=np.ones(n, dtype=int),
        death=np.full(n, cfg.steps, dtype=int),
    )


def alive_positions(truth: Truth, scan: int) -> np.ndarray:
    sel = (truth.birth <= scan) & (scan <= truth.death)
    return truth.positions[sel, scan - 1, :]


def generate_measurements(truth: Truth, scan: int, mdl: core.Models,
                          rng) -> core.MeasurementFrame:
    """One scan of detections plus clutter, in randomly permuted order."""
    meas = mdl.meas
    pos = alive_positions(truth, scan)
    detected = rng.random(pos.shape[0]) < meas.p_d
    dets = pos[detected]
    dets = dets + rng.normal(0.0, meas.sigma_v, size=dets.shape)
    n_clutter = rng.poisson(meas.mu_c)
    (x0, x1), (y0, y1) = meas.roi
    clutter = rng.uniform((x0, y0), (x1, y1), size=(n_clutter, 2))
    z = np.concatenate([dets.reshape(-1, 2), clutter])
    z = rng.permutation(z, axis=0)
    return core.MeasurementFrame(time=scan, z=z)


def _stream(*key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def frames_for_run(truth: Truth, mdl: core.Models, seed: int, run: int):
    """Deterministic measurement sequence for one Monte Carlo run."""
    return [
        generate_measurements(truth, scan, mdl, _stream(seed, run, scan, 0))
        for scan in range(1, mdl.cfg.steps + 1)
    ]


# ---------------------------------------------------------------- tracker registry

class _Adapter:
    """Uniform step interface over the tracker modules."""

    def __init__(self, step_fn, estimate_fn, state):
        self._step = step_fn
        self._estimate = estimate_fn
        self.state = state

    def step(self, frame):
        self.state = self._step(self.state, frame)
        return self._estimate(self.state)


def _make_jpda(mdl, truth, rng, star=False):
    if mdl.cfg.known_targets:
        state = jpda.init_known(truth.positions[:, 0, :], mdl)
    else:
        state = jpda.new_state()
    return _Adapter(
        lambda s, f: jpda.jpda_step(s, f, mdl, star=star),
        jpda.estimates, state,
    )


def _make_mht(mdl, truth, rng):
    if mdl.cfg.known_targets:
        state = mht.init_known(truth.positions[:, 0, :], mdl)
    else:
        state = mht.new_state()
    return _Adapter(
        lambda s, f: mht.mht_step(s, f, mdl),
        lambda s: mht.estimates(s, mdl), state,
    )


def _make_bp(variant):
    def make(mdl, truth, rng):
        if mdl.cfg.known_targets:
            state = bp.init_known(variant, truth.positions[:, 0, :], mdl, rng)
        else:
            state = bp.new_state(variant)
        return _Adapter(
            lambda s, f: bp.bp_step(s, f, mdl, rng),
            lambda s: bp.detect_and_estimate(s, mdl), state,
        )

    return make


TRACKERS: dict[str, Callable] = {
    "jpda": _make_jpda,
    "jpda-star": lambda mdl, truth, rng: _make_jpda(mdl, truth, rng, star=True),
    "mht": _make_mht,
    "bp-part": _make_bp("bp-part"),
    "bp-gauss": _make_bp("bp-gauss"),
    "ex-part": _make_bp("ex-part"),
    "ex-gauss": _make_bp("ex-gauss"),
}


# ---------------------------------------------------------------- monte carlo

_GOSPA_FIELDS = ("total", "localization", "missed", "false")


@dataclass
class RunReport:
    config: core.ScenarioConfig
    trackers: list
    runs: int
    seed: int
    gospa_runs: dict        # name -> field -> (runs, steps)
    mean_gospa: dict        # name -> field -> (steps,)
    d_tracks_mean: dict     # name -> (steps,)
    d_tracks_count: dict
    d_center_mean: dict
    d_center_count: dict
    runtimes: dict          # name -> (runs,) seconds
    meas_seconds: float
    failures: list          # (name, run, message)

    def to_csv_text(self) -> str:
        steps = self.config.steps
        header = ["time"]
        columns = [np.arange(1, steps + 1, dtype=float)]
        for name in self.trackers:
            for f in _GOSPA_FIELDS:
                header.append(f"{name}_gospa_{f}")
                columns.append(self.mean_gospa[name][f])
            header.append(f"{name}_d_tracks")
            columns.append(self.d_tracks_mean[name])
            header.append(f"{name}_d_center")
            columns.append(self.d_center_mean[name])
            header.append(f"{name}_d_samples")
            columns.append(self.d_tracks_count[name].astype(float))
        lines = [",".join(header)]
        for i in range(steps):
            lines.append(",".join(_fmt(col[i]) for col in columns))
        return "\n".join(lines) + "\n"

    def runtime_json(self) -> dict:
        return {
            "seed": self.seed,
            "runs": self.runs,
            "meas_seconds": self.meas_seconds,
            "tracker_seconds": {
                name: [float(v) for v in self.runtimes[name]] for name in self.trackers
            },
            "failures": [[name, run, msg] for name, run, msg in self.failures],
        }


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _run_one(cfg, truth, mdl, names, seed, run):
    """All trackers over one measurement realisation; returns per-run stats."""
    t0 = time.perf_counter()
    frames = frames_for_run(truth, mdl, seed, run)
    meas_dt = time.perf_counter() - t0
    truth_sets = [alive_positions(truth, s) for s in range(1, cfg.steps + 1)]
    pair_defined = truth.positions.shape[0] == 2

    out = {}
    for name in names:
        gos = {f: np.full(cfg.steps, np.nan) for f in _GOSPA_FIELDS}
        dt = np.full(cfg.steps, np.nan)
        dc = np.full(cfg.steps, np.nan)
        tracker = TRACKERS[name](mdl, truth, _stream(seed, run, zlib.crc32(name.encode()), 1))
        failure = None
        t1 = time.perf_counter()
        try:
            for i, frame in enumerate(frames):
                est = tracker.step(frame)
                pts = np.array([p for _, p in est], dtype=float).reshape(-1, 2)
                g = metrics.gospa(truth_sets[i], pts)
                gos["total"][i] = g.total
                gos["localization"][i] = g.localization
                gos["missed"][i] = g.missed
                gos["false"][i] = g.false
                if pair_defined:
                    try:
                        dt[i] = metrics.d_tracks(truth.positions[:, i, :], pts)
                        dc[i] = metrics.d_center(truth.positions[:, i, :], pts)
                    except metrics.UndefinedSample:
                        pass
        except Exception as exc:  # tracker fault must not poison the batch
            failure = f"{type(exc).__name__}: {exc}"
            for f in _GOSPA_FIELDS:
                gos[f][:] = np.nan
            dt[:] = np.nan
            dc[:] = np.nan
        elapsed = time.perf_counter() - t1
        out[name] = (gos, dt, dc, elapsed, failure)
    return meas_dt, out


def run_monte_carlo(cfg: core.ScenarioConfig, trackers, runs: int,
                    seed: int) -> RunReport:
    names = list(trackers)
    unknown = [n for n in names if n not in TRACKERS]
    if unknown:
        raise KeyError(f"unknown trackers: {unknown}")
    mdl = core.make_models(cfg)
    truth = build_scenario(cfg)

    workers = max(1, int(os.environ.get("MTT_THREADS", "1")))
    job = lambda run: _run_one(cfg, truth, mdl, names, seed, run)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(runs)))
    else:
        results = [job(run) for run in range(runs)]

    gospa_runs = {
        n: {f: np.full((runs, cfg.steps), np.nan) for f in _GOSPA_FIELDS} for n in names
    }
    dt_runs = {n: np.full((runs, cfg.steps), np.nan) for n in names}
    dc_runs = {n: np.full((runs, cfg.steps), np.nan) for n in names}
    runtimes = {n: np.zeros(runs) for n in names}
    failures = []
    meas_seconds = 0.0
    for run, (meas_dt, per_tracker) in enumerate(results):
        meas_seconds += meas_dt
        for name, (gos, dt, dc, elapsed, failure) in per_tracker.items():
            for f in _GOSPA_FIELDS:
                gospa_runs[name][f][run] = gos[f]
            dt_runs[name][run] = dt
            dc_runs[name][run] = dc
            runtimes[name][run] = elapsed
            if failure is not None:
                failures.append((name, run, failure))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean_gospa = {
            n: {f: np.nanmean(gospa_runs[n][f], axis=0) for f in _GOSPA_FIELDS}
            for n in names
        }
        d_tracks_mean = {n: np.nanmean(dt_runs[n], axis=0) for n in names}
        d_center_mean = {n: np.nanmean(dc_runs[n], axis=0) for n in names}
    d_tracks_count = {n: np.sum(~np.isnan(dt_runs[n]), axis=0) for n in names}
    d_center_count = {n: np.sum(~np.isnan(dc_runs[n]), axis=0) for n in names}

    return RunReport(
        config=cfg, trackers=names, runs=runs, seed=seed,
        gospa_runs=gospa_runs, mean_gospa=mean_gospa,
        d_tracks_mean=d_tracks_mean, d_tracks_count=d_tracks_count,
        d_center_mean=d_center_mean, d_center_count=d_center_count,
        runtimes=runtimes, meas_seconds=meas_seconds, failures=failures,
    )
