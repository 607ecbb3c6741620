"""Soft-association tracker.

Each track keeps a Gaussian belief; every scan it mixes the conditional
Kalman updates over the association marginals of its cluster.  The starred
variant first prunes association events down to one representative per
detection set, which breaks the symmetric averaging that drags neighbouring
estimates together.  Track initiation and termination follow an M-of-N
confirmation rule on per-scan association evidence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import assoc, core, models

logger = logging.getLogger("mtt.jpda")

# above this event-count bound a cluster is handed to the loopy solver
_EXACT_BOUND = 1e8
# star pruning walks single events, so it gets a tighter budget
_STAR_BOUND = 1e6


@dataclass
class JpdaState:
    tracks: list = field(default_factory=list)
    next_label: int = 0
    known: bool = False


def new_state() -> JpdaState:
    return JpdaState()


def birth_belief(pos, cfg: core.ScenarioConfig) -> core.GaussianBelief:
    """Two-point-free initialisation: position at the seed, zero velocity
    with variance v_max**2 per axis."""
    mean = np.array([pos[0], pos[1], 0.0, 0.0])
    cov = np.diag([cfg.sigma_v**2, cfg.sigma_v**2, cfg.v_max**2, cfg.v_max**2])
    return core.GaussianBelief(mean, cov)


def init_known(positions, mdl: core.Models) -> JpdaState:
    """Start with one confirmed track per known target; management is
    disabled for states built this way."""
    positions = np.asarray(positions, float).reshape(-1, 2)
    tracks = [
        core.PotentialTrack(label=i, belief=birth_belief(p, mdl.cfg), status="confirmed")
        for i, p in enumerate(positions)
    ]
    return JpdaState(tracks=tracks, next_label=len(tracks), known=True)


def jpda_star_prune(events):
    """Keep only the highest-weight event of every detection set (the set
    of claimed measurements); ties break toward the lexicographically
    smallest assignment.  Survivors keep first-appearance order."""
    best = {}
    order = []
    for a, w in events:
        key = frozenset(v for v in a if v > 0)
        if key not in best:
            best[key] = (a, w)
            order.append(key)
        else:
            ba, bw = best[key]
            if w > bw or (w == bw and tuple(a) < tuple(ba)):
                best[key] = (a, w)
    return [best[k] for k in order]


def _loopy_marginals(problem):
    try:
        marg, _ = assoc.bp_marginals(problem)
    except assoc.NoConvergence as err:
        marg = err.marginals
    return marg


def _star_marginals(problem):
    events = []
    for ev, w in assoc.iter_event_blocks(problem):
        events.extend(
            (tuple(int(v) for v in row), float(wi)) for row, wi in zip(ev, w)
        )
    kept = jpda_star_prune(events)
    L, M = problem.shape
    marg = np.zeros((L, M + 1))
    total = 0.0
    for a, w in kept:
        total += w
        for j, aj in enumerate(a):
            marg[j, aj] += w
    if total <= 0.0:
        raise assoc.Degenerate("no pruned event carries weight")
    return marg / total


def _cluster_marginals(problem, star):
    bound = assoc.event_size_bound(problem)
    budget = _STAR_BOUND if star else _EXACT_BOUND
    if bound > budget:
        logger.warning(
            "cluster event bound %.3g over budget; falling back to loopy marginals",
            bound,
        )
        return _loopy_marginals(problem)
    if star:
        return _star_marginals(problem)
    return assoc.exact_marginals(problem)


def association_marginals(predicted, z, mdl: core.Models, star=False):
    """Gate, build weights, and solve each cluster; returns the (L, M+1)
    marginal table and the gating mask."""
    L, M = len(predicted), z.shape[0]
    mask = assoc.gate_mask(predicted, z, mdl.meas, mdl.cfg.gate_threshold)
    prob = assoc.compute_betas(predicted, z, mdl.meas, mask=mask)
    marg = np.zeros((L, M + 1))
    for cl in assoc.cluster(prob):
        sub = _cluster_marginals(cl.problem, star)
        for i, t in enumerate(cl.tracks):
            marg[t, 0] = sub[i, 0]
            for k, m in enumerate(cl.measurements):
                marg[t, 1 + m] = sub[i, 1 + k]
    return marg, mask


def jpda_step(state: JpdaState, frame: core.MeasurementFrame, mdl: core.Models,
              star=False) -> JpdaState:
    z = frame.z
    L = len(state.tracks)
    if L == 0:
        return state if state.known else mn_manage(state, {}, z, mdl)
    predicted = [models.predict(tr.belief, mdl.motion) for tr in state.tracks]
    marg, mask = association_marginals(predicted, z, mdl, star=star)
    hits = {}
    new_tracks = []
    for j, tr in enumerate(state.tracks):
        belief = models.mixture_kalman(predicted[j], z, marg[j], mdl.meas)
        hits[tr.label] = (1.0 - marg[j, 0]) > 0.5
        new_tracks.append(replace(tr, belief=belief))
    out = JpdaState(tracks=new_tracks, next_label=state.next_label, known=state.known)
    if state.known:
        return out
    unclaimed = z[~mask.any(axis=0)] if z.shape[0] else z
    return mn_manage(out, hits, unclaimed, mdl)


def mn_manage(state: JpdaState, hits: dict, unassociated_z, mdl: core.Models) -> JpdaState:
    """M-of-N confirmation and miss-streak termination, then one tentative
    spawn per unassociated measurement."""
    cfg = mdl.cfg
    tracks = []
    for tr in state.tracks:
        h = bool(hits.get(tr.label, False))
        hist = (tr.hits + (h,))[-cfg.confirm_n:]
        streak = 0 if h else tr.miss_streak + 1
        status = tr.status
        if status == "tentative" and sum(hist) >= cfg.confirm_m:
            status = "confirmed"
        # one leash for both statuses: confirmed tracks get no extra coasting
        if streak >= cfg.tentative_term_misses:
            continue
        tracks.append(replace(tr, hits=hist, miss_streak=streak, status=status))
    label = state.next_label
    for pos in np.asarray(unassociated_z, float).reshape(-1, 2):
        tracks.append(core.PotentialTrack(label=label, belief=birth_belief(pos, cfg)))
        label += 1
    return JpdaState(tracks=tracks, next_label=label, known=state.known)


def estimates(state: JpdaState):
    """Confirmed tracks as (label, position) pairs."""
    return [
        (tr.label, tr.belief.mean[:2].copy())
        for tr in state.tracks
        if tr.status == "confirmed"
    ]
