"""Set distance between truth and estimates, plus two separation diagnostics
for a symmetric pair of targets straddling the x axis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist


class UndefinedSample(ValueError):
    """Diagnostic needs both targets matched to distinct estimates."""


@dataclass
class GospaResult:
    total: float
    localization: float
    missed: float
    false: float
    assignment: list = field(default_factory=list)


def gospa(truth, estimates, p: float = 1.0, c: float = 50.0,
          beta: float = 2.0) -> GospaResult:
    """Optimal-subpattern set distance with cutoff c and cardinality
    penalty c**p / beta per unmatched point.

    Pairs matched at distance >= c carry no information and are reported as
    one missed plus one false instead.  Components are raw sums, so for
    p = 1 they add up to the total.
    """
    truth = np.asarray(truth, float).reshape(-1, 2)
    est = np.asarray(estimates, float).reshape(-1, 2)
    n, m = truth.shape[0], est.shape[0]
    unmatched = c**p / beta
    loc = missed = false = 0.0
    pairs = []
    if n and m:
        D = cdist(truth, est)
        big = 1e18
        C = np.zeros((n + m, n + m))
        C[:n, :m] = np.minimum(D, c) ** p
        C[:n, m:] = big
        C[:n, m:][np.arange(n), np.arange(n)] = unmatched
        C[n:, :m] = big
        C[n:, :m][np.arange(m), np.arange(m)] = unmatched
        rows, cols = linear_sum_assignment(C)
        for r, k in zip(rows, cols):
            if r < n and k < m:
                if D[r, k] < c:
                    loc += D[r, k] ** p
                    pairs.append((int(r), int(k)))
                else:
                    missed += unmatched
                    false += unmatched
            elif r < n:
                missed += unmatched
            elif k < m:
                false += unmatched
    else:
        missed = n * unmatched
        false = m * unmatched
    total = (loc + missed + false) ** (1.0 / p)
    return GospaResult(total, loc, missed, false, pairs)


def _matched_y(truth_pair, estimates):
    truth = np.asarray(truth_pair, float).reshape(-1, 2)
    est = np.asarray(estimates, float).reshape(-1, 2)
    result = gospa(truth, est)
    if len(result.assignment) < 2:
        raise UndefinedSample(
            f"only {len(result.assignment)} of {truth.shape[0]} targets matched"
        )
    match = dict(result.assignment)
    return est[match[0], 1], est[match[1], 1], float(truth[:, 1].mean())


def d_tracks(truth_pair, estimates) -> float:
    """Separation of the two matched estimates along the y axis."""
    y1, y2, _ = _matched_y(truth_pair, estimates)
    return abs(y1 - y2)


def d_center(truth_pair, estimates) -> float:
    """Mean distance of the two matched estimates from the truth y-centre."""
    y1, y2, yc = _matched_y(truth_pair, estimates)
    return (abs(y1 - yc) + abs(y2 - yc)) / 2.0
