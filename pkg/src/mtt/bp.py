"""Existence-augmented tracker with interchangeable belief and marginal
backends.

Four variants share one step routine: beliefs are either Gaussian
(moment-matched mixtures) or particle sets (reweight and resample), and
association marginals come either from loopy message passing or from exact
per-cluster enumeration.  Each track carries an existence probability that
is predicted with the survival factor, updated against the miss marginal,
and used both to weight the association problem and to decide detection.
New potential targets are seeded from every measurement with a flat
existence prior and die quickly unless the data supports them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import assoc, core, jpda, models

logger = logging.getLogger("mtt.bp")

VARIANTS = ("bp-part", "bp-gauss", "ex-part", "ex-gauss")


@dataclass
class BpTrack:
    label: int
    existence: float
    belief: object


@dataclass
class BpState:
    variant: str
    tracks: list = field(default_factory=list)
    next_label: int = 0
    known: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; pick from {VARIANTS}")


def _uses_particles(variant: str) -> bool:
    return variant.endswith("-part")


def _uses_exact(variant: str) -> bool:
    return variant.startswith("ex-")


def new_state(variant: str) -> BpState:
    return BpState(variant=variant)


def _birth_belief(pos, cfg, variant, rng):
    gauss = jpda.birth_belief(pos, cfg)
    if not _uses_particles(variant):
        return gauss
    pts = rng.multivariate_normal(gauss.mean, gauss.cov, size=cfg.particles)
    return core.ParticleBelief(pts, np.full(cfg.particles, 1.0 / cfg.particles))


def init_known(variant: str, positions, mdl: core.Models, rng) -> BpState:
    """One track per known target with existence pinned at one."""
    positions = np.asarray(positions, float).reshape(-1, 2)
    tracks = [
        BpTrack(label=i, existence=1.0, belief=_birth_belief(p, mdl.cfg, variant, rng))
        for i, p in enumerate(positions)
    ]
    return BpState(variant=variant, tracks=tracks, next_label=len(tracks), known=True)


def _approx_gaussian(belief):
    if isinstance(belief, core.ParticleBelief):
        mean, cov = models.particle_moments(belief)
        return core.GaussianBelief(mean, cov)
    return belief


def _marginals(state: BpState, problem):
    if _uses_exact(state.variant):
        marg = np.zeros((problem.beta.shape[0], problem.beta.shape[1]))
        for cl in assoc.cluster(problem):
            try:
                sub = assoc.exact_marginals(cl.problem)
            except assoc.TooLarge as err:
                logger.warning("exact marginals unavailable (%s); using loopy", err)
                sub = _loopy(cl.problem)
            for i, t in enumerate(cl.tracks):
                marg[t, 0] = sub[i, 0]
                for k, m in enumerate(cl.measurements):
                    marg[t, 1 + m] = sub[i, 1 + k]
        return marg
    return _loopy(problem)


def _loopy(problem):
    try:
        marg, _ = assoc.bp_marginals(problem)
    except assoc.NoConvergence as err:
        marg = err.marginals
    return marg


def _update_particles(belief, z, cols, q, meas, particles, rng):
    """Reweight the predicted particles against the exists-conditional
    component weights q (miss first, then one entry per gated column),
    then resample back to the configured size."""
    pts, wts = belief.points, belief.weights
    factor = np.full(pts.shape[0], q[0])
    if cols.size:
        dens = models.particle_likelihood_matrix(pts, z[cols], meas)
        norms = dens.T @ wts
        for i in range(cols.size):
            if norms[i] > 0:
                factor = factor + q[1 + i] * dens[:, i] / norms[i]
    new_w = wts * factor
    total = new_w.sum()
    if total <= 0:
        return models.resample(belief, particles, rng)
    return models.resample(core.ParticleBelief(pts, new_w / total), particles, rng)


def bp_step(state: BpState, frame: core.MeasurementFrame, mdl: core.Models,
            rng) -> BpState:
    cfg = mdl.cfg
    z = frame.z
    M = z.shape[0]
    p_d = mdl.meas.p_d

    # predict existence and belief
    predicted = []
    for tr in state.tracks:
        e = 1.0 if state.known else cfg.p_s * tr.existence
        if _uses_particles(state.variant):
            belief = models.predict_particles(tr.belief, mdl.motion, rng)
        else:
            belief = models.predict(tr.belief, mdl.motion)
        predicted.append(replace(tr, existence=e, belief=belief))

    L = len(predicted)
    marg = None
    mask = np.zeros((L, M), bool)
    if L and M:
        approx = [_approx_gaussian(tr.belief) for tr in predicted]
        mask = assoc.gate_mask(approx, z, mdl.meas, cfg.gate_threshold)
        base = assoc.compute_betas(approx, z, mdl.meas, mask=mask)
        ex = np.array([tr.existence for tr in predicted])
        beta = np.empty_like(base.beta)
        beta[:, 0] = ex * base.beta[:, 0] + (1.0 - ex)
        beta[:, 1:] = ex[:, None] * base.beta[:, 1:]
        # a row with no miss weight and nothing gated would make the problem
        # ill-posed; treat such tracks as uninformative forced misses
        dead = ~(beta.max(axis=1) > 0)
        if dead.any():
            beta[dead, 0] = 1.0
        marg = _marginals(state, core.AssociationProblem(beta, base.xi0))

    tracks = []
    for j, tr in enumerate(predicted):
        e = tr.existence
        if marg is None:
            p0, p_meas = 1.0, np.zeros(0)
            cols = np.zeros(0, np.int64)
        else:
            row = marg[j]
            cols = np.flatnonzero(row[1:] > 0)
            p0, p_meas = row[0], row[1 + cols]
        w_hit = e * (1.0 - p_d)
        w_null = 1.0 - e
        split = w_hit / (w_hit + w_null) if (w_hit + w_null) > 0 else 1.0
        new_e = 1.0 if state.known else min(1.0, float(p_meas.sum() + p0 * split))

        q = np.concatenate([[p0 * split], p_meas])
        total = q.sum()
        if total <= 0:
            belief = tr.belief
        else:
            q = q / total
            if _uses_particles(state.variant):
                belief = _update_particles(tr.belief, z, cols, q, mdl.meas,
                                           cfg.particles, rng)
            else:
                weights = np.zeros(M + 1)
                weights[0] = q[0]
                weights[1 + cols] = q[1:]
                belief = models.mixture_kalman(tr.belief, z, weights, mdl.meas)
        tracks.append(replace(tr, existence=new_e, belief=belief))

    out = BpState(variant=state.variant, tracks=tracks,
                  next_label=state.next_label, known=state.known)
    if state.known:
        return out

    # seed a potential target from every measurement, then prune
    label = out.next_label
    for pos in z:
        out.tracks.append(
            BpTrack(label=label, existence=cfg.birth_existence,
                    belief=_birth_belief(pos, cfg, state.variant, rng))
        )
        label += 1
    out.next_label = label
    return prune_tracks(out, cfg.prune_threshold)


def prune_tracks(state: BpState, threshold: float) -> BpState:
    kept = [tr for tr in state.tracks if not tr.existence < threshold]
    return BpState(variant=state.variant, tracks=kept,
                   next_label=state.next_label, known=state.known)


def detect_and_estimate(state: BpState, mdl: core.Models):
    """Tracks whose existence strictly exceeds the detection threshold,
    as (label, position) pairs."""
    out = []
    for tr in state.tracks:
        if tr.existence > mdl.cfg.p_th:
            if isinstance(tr.belief, core.ParticleBelief):
                pos = tr.belief.weights @ tr.belief.points[:, :2]
            else:
                pos = tr.belief.mean[:2].copy()
            out.append((tr.label, pos))
    return out
