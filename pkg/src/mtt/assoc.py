"""Data-association weight construction and marginal solvers.

An association event assigns each target either a measurement index (1..M)
or 0 for a miss; no measurement may be claimed twice.  Event probability is
proportional to the product of the chosen beta entries times xi0[m] for every
unclaimed measurement.  This module builds those weights from track beliefs,
splits problems into independent clusters, and computes event marginals three
ways: exact enumeration, loopy message passing, and ranked k-best assignments.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import core, models


class TooLarge(RuntimeError):
    """Exact enumeration would exceed the event budget."""


class Degenerate(ValueError):
    """No valid association event carries positive weight."""


class NoConvergence(RuntimeError):
    """Message passing hit the iteration cap.

    Carries the last iterate so callers can still use it."""

    def __init__(self, marginals, iterations):
        super().__init__(f"no convergence after {iterations} iterations")
        self.marginals = marginals
        self.iterations = iterations


# ---------------------------------------------------------------- weight construction

def compute_betas(beliefs, z, meas, mask=None) -> core.AssociationProblem:
    """Association weights for a set of track beliefs against one frame.

    Measurement entries are predictive densities normalised by the clutter
    intensity; with zero clutter, measurements cannot stay unassigned and
    xi0 is identically zero.
    """
    z = np.asarray(z, float)
    L, M = len(beliefs), z.shape[0]
    density = meas.clutter_density
    norm = meas.p_d / density if density > 0 else meas.p_d
    beta = np.zeros((L, M + 1))
    beta[:, 0] = 1.0 - meas.p_d
    if M and norm > 0:
        for j, b in enumerate(beliefs):
            if mask is not None and not mask[j].any():
                continue
            if isinstance(b, core.ParticleBelief):
                likes = models.particle_meas_likelihoods(b, z, meas)
            else:
                likes = models.gaussian_meas_likelihoods(b, z, meas)
            if mask is not None:
                likes = np.where(mask[j], likes, 0.0)
            beta[j, 1:] = norm * likes
    xi0 = np.ones(M) if density > 0 else np.zeros(M)
    return core.AssociationProblem(beta, xi0)


def gate_mask(beliefs, z, meas, threshold) -> np.ndarray:
    """Boolean (L, M) mask of measurements whose squared Mahalanobis
    innovation distance is within the threshold."""
    z = np.asarray(z, float)
    L, M = len(beliefs), z.shape[0]
    if M == 0:
        return np.zeros((L, 0), bool)
    if np.isinf(threshold):
        return np.ones((L, M), bool)
    out = np.zeros((L, M), bool)
    for j, b in enumerate(beliefs):
        if isinstance(b, core.ParticleBelief):
            mean, cov = models.particle_moments(b)
            gb = core.GaussianBelief(mean, cov)
        else:
            gb = b
        S = models.innovation_cov(gb, meas)
        innov = z - (meas.H @ gb.mean)[None, :]
        d2 = np.einsum("mi,im->m", innov, np.linalg.solve(S, innov.T))
        out[j] = d2 <= threshold
    return out


# ---------------------------------------------------------------- clustering

@dataclass(frozen=True)
class Cluster:
    tracks: tuple
    measurements: tuple
    problem: core.AssociationProblem


def _trusted_problem(beta, xi0) -> core.AssociationProblem:
    """Wrap slices of an already validated problem without re-validating."""
    sub = object.__new__(core.AssociationProblem)
    object.__setattr__(sub, "beta", beta)
    object.__setattr__(sub, "xi0", xi0)
    return sub


def cluster(problem: core.AssociationProblem):
    """Split into independent subproblems connected through shared
    measurements.  Measurements gated by no track are dropped; their xi0
    factors cancel in every per-cluster normalisation."""
    beta, xi0 = problem.beta, problem.xi0
    L, M = problem.shape
    parent = list(range(L + M))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for j in range(L):
        for m in np.flatnonzero(beta[j, 1:] > 0):
            a, b = find(j), find(L + int(m))
            if a != b:
                parent[b] = a

    groups = {}
    for j in range(L):
        groups.setdefault(find(j), ([], []))[0].append(j)
    for m in range(M):
        r = find(L + m)
        if r in groups:
            groups[r][1].append(m)

    out = []
    for tracks, meas_idx in sorted(groups.values()):
        cols = [0] + [1 + m for m in meas_idx]
        sub = _trusted_problem(beta[np.ix_(tracks, cols)], xi0[meas_idx])
        out.append(Cluster(tuple(tracks), tuple(meas_idx), sub))
    return out


# ---------------------------------------------------------------- exact enumeration

_EVENT_BUDGET = 1e8
# int64 cells per expansion block, not rows: keeps peak memory flat in L
_CHUNK = 1 << 20


def event_size_bound(problem: core.AssociationProblem) -> float:
    """Cheap upper-scale estimate of the enumeration effort."""
    L, M = problem.shape
    bound = 1.0
    for i in range(L):
        bound *= max(M + 1 - i, 1)
    return bound


def iter_event_blocks(problem: core.AssociationProblem):
    """Yield (events, weights) blocks covering every positive-weight valid
    event exactly once.  events is (n, L) int with the usual 0..M coding and
    weights already include the xi0 factors of unclaimed measurements.

    Expansion is depth-first with a per-level cell budget, so peak memory
    stays at O(L * _CHUNK) however wide the problem is."""
    if event_size_bound(problem) > _EVENT_BUDGET:
        raise TooLarge(
            f"event bound {event_size_bound(problem):.3g} exceeds {_EVENT_BUDGET:.1g}"
        )
    beta, xi0 = problem.beta, problem.xi0
    L, M = problem.shape
    cands = [np.flatnonzero(beta[j] > 0) for j in range(L)]

    def walk(prefix, w):
        depth = prefix.shape[1]
        if depth == L:
            if M:
                claimed = np.zeros((prefix.shape[0], M), bool)
                rows = np.arange(prefix.shape[0])
                for j in range(L):
                    sel = prefix[:, j] > 0
                    claimed[rows[sel], prefix[sel, j] - 1] = True
                w = w * np.where(claimed, 1.0, xi0[None, :]).prod(axis=1)
            yield prefix, w
            return
        c = cands[depth]
        k = c.shape[0]
        if k == 0:
            return
        rows_per = max(1, _CHUNK // (k * (depth + 1)))
        for s in range(0, prefix.shape[0], rows_per):
            sub, sub_w = prefix[s : s + rows_per], w[s : s + rows_per]
            ext = np.concatenate(
                [np.repeat(sub, k, axis=0), np.tile(c, sub.shape[0])[:, None]],
                axis=1,
            )
            ext_w = np.repeat(sub_w, k) * beta[depth, ext[:, -1]]
            if depth > 0:
                last = ext[:, -1]
                dup = (last > 0) & (ext[:, :-1] == last[:, None]).any(axis=1)
                if dup.any():
                    keep = ~dup
                    ext, ext_w = ext[keep], ext_w[keep]
            yield from walk(ext, ext_w)

    yield from walk(np.zeros((1, 0), np.int64), np.ones(1))


def exact_marginals(problem: core.AssociationProblem) -> np.ndarray:
    """Per-target association marginals by full event enumeration,
    rows summing to one."""
    L, M = problem.shape
    marg = np.zeros((L, M + 1))
    total = 0.0
    for ev, w in iter_event_blocks(problem):
        total += float(w.sum())
        for j in range(L):
            marg[j] += np.bincount(ev[:, j], weights=w, minlength=M + 1)
    if total <= 0.0:
        raise Degenerate("all valid events have zero weight")
    return marg / total


# ---------------------------------------------------------------- loopy marginals

def bp_marginals(problem: core.AssociationProblem, tol=1e-6, max_iter=200,
                 damping=0.0):
    """Iterative message-passing marginals.

    Returns (marginals, iterations).  The backward message keeps xi0 in the
    denominator, which makes the recursion exact on cycle-free problems.
    Raises NoConvergence (carrying the last iterate) past max_iter.
    """
    beta, xi0 = problem.beta, problem.xi0
    L, M = problem.shape
    if M == 0:
        return np.ones((L, 1)), 0
    b0 = beta[:, :1]
    bm = beta[:, 1:]
    nu = np.ones((L, M))
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        weighted = bm * nu
        denom = b0 + weighted.sum(axis=1, keepdims=True) - weighted
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.where(denom > 0, bm / denom, 0.0)
        back = xi0[None, :] + phi.sum(axis=0, keepdims=True) - phi
        with np.errstate(divide="ignore"):
            nu_new = np.where(back > 0, 1.0 / back, 1.0)
        nu_new = damping * nu + (1.0 - damping) * nu_new
        delta = float(np.abs(nu_new - nu).max())
        nu = nu_new
        if delta <= tol:
            converged = True
            break
    unnorm = np.concatenate([b0, bm * nu], axis=1)
    marg = unnorm / unnorm.sum(axis=1, keepdims=True)
    if not converged:
        raise NoConvergence(marg, it)
    return marg, it


# ---------------------------------------------------------------- ranked events

_EDGE_BIG = 1e9
_COST_STOP = 1e8
_XI_FLOOR = 1e-300


def event_weight(problem: core.AssociationProblem, a) -> float:
    """Exact unnormalised weight of one association event."""
    beta, xi0 = problem.beta, problem.xi0
    L, M = problem.shape
    w = 1.0
    claimed = set()
    for j, aj in enumerate(a):
        w *= float(beta[j, aj])
        if aj > 0:
            claimed.add(aj - 1)
    for m in range(M):
        if m not in claimed:
            w *= float(xi0[m])
    return w


def _neglog(values):
    with np.errstate(divide="ignore"):
        out = -np.log(np.maximum(values, _XI_FLOOR))
    return np.where(values > 0, out, _EDGE_BIG)


def _murty(cost):
    """Yield column assignments of the rectangular cost matrix in
    nondecreasing total-cost order, stopping at infeasible totals."""
    L = cost.shape[0]

    def solve(mat):
        r, c = linear_sum_assignment(mat)
        return c, float(mat[r, c].sum())

    cols, total = solve(cost)
    heap = [(total, 0, cost, cols)]
    counter = 1
    while heap:
        total, _, mat, cols = heapq.heappop(heap)
        if total >= _COST_STOP:
            return
        yield cols
        base = mat
        for i in range(L):
            child = base.copy()
            child[i, cols[i]] = _EDGE_BIG
            c2, t2 = solve(child)
            if t2 < _COST_STOP:
                heapq.heappush(heap, (t2, counter, child, c2))
                counter += 1
            if i < L - 1:
                forced = base.copy()
                forced[i, :] = _EDGE_BIG
                forced[i, cols[i]] = mat[i, cols[i]]
                base = forced


# below this event bound ranking by full enumeration beats the assignment
# machinery
_ENUM_KBEST = 4096.0


def kbest(problem: core.AssociationProblem, k: int):
    """The k highest-weight association events as (assignment, weight) pairs,
    sorted by weight then lexicographically; returns fewer when the problem
    has fewer positive-weight events."""
    beta, xi0 = problem.beta, problem.xi0
    L, M = problem.shape
    if event_size_bound(problem) <= _ENUM_KBEST:
        pairs = []
        for ev, w in iter_event_blocks(problem):
            pos = w > 0
            pairs.extend(
                (tuple(int(v) for v in row), float(wi))
                for row, wi in zip(ev[pos], w[pos])
            )
        pairs.sort(key=lambda pair: (-pair[1], pair[0]))
        return pairs[:k]
    cost = np.full((L, M + L), _EDGE_BIG)
    if M:
        cost[:, :M] = _neglog(beta[:, 1:]) + np.log(np.maximum(xi0, _XI_FLOOR))[None, :]
    cost[np.arange(L), M + np.arange(L)] = _neglog(beta[:, 0])
    out = []
    for cols in _murty(cost):
        a = tuple(int(c) + 1 if c < M else 0 for c in cols)
        w = event_weight(problem, a)
        if w <= 0.0:
            break
        out.append((a, w))
        if len(out) >= k + 8:
            break
    out.sort(key=lambda pair: (-pair[1], pair[0]))
    return out[:k]


# ---------------------------------------------------------------- post-processing

def confidence_scale(marginals, rho: float) -> np.ndarray:
    """Temper each marginal row by exponent rho and renormalise.
    rho > 1 sharpens toward the argmax, rho < 1 flattens over the support."""
    marg = np.asarray(marginals, float)
    mx = marg.max(axis=1, keepdims=True)
    if np.any(mx <= 0):
        raise Degenerate("cannot rescale an all-zero marginal row")
    p = (marg / mx) ** rho
    return p / p.sum(axis=1, keepdims=True)
